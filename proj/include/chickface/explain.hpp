// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "chickface/classifier.hpp"

namespace chickface {

struct SaliencyMap {
  cv::Mat data;  // CV_32F, input image size
  bool normalized = false;
};

struct Explanation {
  SaliencyMap map;
  Prediction prediction;
  Gender target = Gender::kMale;
  std::string layer;
};

namespace explain {

/// Grad-CAM++ on `layer` (default: the backbone's last spatial layer) for the
/// logit of `target` (default: the predicted gender; female uses -logit).
Explanation gradcam_pp(Classifier& model, const cv::Mat& image,
                       const std::optional<std::string>& layer = std::nullopt,
                       std::optional<Gender> target = std::nullopt);

/// Jet colormap (high = warm) blended over the image: (1 - alpha) image + alpha color.
cv::Mat overlay(const cv::Mat& image, const SaliencyMap& map, double alpha);

/// Writes `<stem>_cam.png`, `<stem>_overlay.png` and `<stem>.json`.
nlohmann::json write_explanation(const Explanation& e, const cv::Mat& image,
                                 const std::string& image_id, const std::filesystem::path& stem,
                                 double alpha = 0.5);

}  // namespace explain
}  // namespace chickface
