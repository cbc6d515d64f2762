// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include <opencv2/core.hpp>

#include "chickface/dataset.hpp"
#include "chickface/labelme.hpp"

namespace chickface {

struct SynthOptions {
  std::filesystem::path out_dir;
  int ids = 40;
  int frames_per_id = 2;
  double separability = 0.5;  // 0 = identical comb distributions, 1 = disjoint
  std::uint64_t seed = 0;
  int view_size = 160;
  double max_roll_deg = 30.0;
  double yaw_fraction = 0.05;  // views with a hidden side beak point
};

struct SynthFace {
  cv::Mat image;  // BGR view_size x view_size
  FaceAnnotation annotation;
  double comb_ratio = 0.0;
};

namespace synth {

/// Comb height ratio range for a gender: female U[0.2, 0.6], male shifted
/// up by 0.4 * separability.
std::pair<double, double> comb_ratio_range(Gender g, double separability);

/// Renders one procedural face view.
SynthFace render_face(double comb_ratio, std::mt19937_64& rng, const SynthOptions& options,
                      bool hide_side_beak);

/// Writes `raw/<video>_<idx>.png` (three stacked views), per-view LabelMe
/// files `raw/<video>_<idx>_v<k>.json` and `chicks.csv`.
void generate(const SynthOptions& options);

}  // namespace synth
}  // namespace chickface
