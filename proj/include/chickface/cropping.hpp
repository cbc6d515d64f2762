// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "chickface/dataset.hpp"
#include "chickface/geometry.hpp"

namespace chickface {

struct FaceCrop {
  cv::Mat image;
  CropKind kind = CropKind::kFull;
  BoundingBox source_box;  // rasterized, in the parent image's coordinates
  KeypointSet keypoints;   // in crop coordinates
};

struct EyeExtremes {
  int left_x = 0;
  int right_x = 0;
  bool left_fallback = false;   // no foreground in the left mask
  bool right_fallback = false;  // no foreground in the right mask
};

struct CropParams {
  double margin_scale = 1.0;
  double mask_radius_factor = 0.25;
};

namespace cropping {

/// Otsu threshold over an 8-bit sample. Values <= threshold form the dark class.
int otsu_threshold(const std::vector<std::uint8_t>& values);

FaceCrop crop_full_face(const cv::Mat& aligned_image, const BoundingBox& aligned_box,
                        const KeypointSet& aligned_kps);

/// Leftmost dark pixel of the left eye and rightmost dark pixel of the right
/// eye, searched inside discs of radius `mask_radius_factor * eye_distance`.
EyeExtremes eye_extremes(const FaceCrop& full_crop, double mask_radius_factor);

/// Middle-face box in `full_crop` coordinates. `degenerate` reports a zero
/// slack sum (margin forced to 0).
BoundingBox middle_face_box(const FaceCrop& full_crop, const EyeExtremes& extremes,
                            double margin_scale, bool* degenerate = nullptr);

FaceCrop crop_middle_face(const FaceCrop& full_crop, const CropParams& params);

nlohmann::json sidecar_json(const FaceCrop& crop);

/// Writes `<stem>.png` and `<stem>.json` (kind, source_box, keypoints).
void write_crop(const FaceCrop& crop, const std::filesystem::path& stem);

}  // namespace cropping
}  // namespace chickface
