// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "chickface/geometry.hpp"
#include "chickface/nn.hpp"

namespace chickface {

/// 7 x H' x W' non-negative maps in canonical landmark order.
struct Heatmaps {
  nn::Tensor data;
  int stride = 4;
};

struct KeypointModelConfig {
  int input_width = 256;
  int input_height = 256;
  int stride = 4;
  double sigma = 2.0;  // in heatmap cells
  double visibility_floor = 0.1;
  std::string backbone_ref = "tiny";

  int grid_width() const { return input_width / stride; }
  int grid_height() const { return input_height / stride; }
  void validate() const;

  nlohmann::json to_json() const;
  static KeypointModelConfig from_json(const nlohmann::json& j);
};

class KeypointModel {
 public:
  virtual ~KeypointModel() = default;
  virtual std::string identity() const = 0;
  /// `input` is already resized to the configured input size.
  virtual Heatmaps infer(const cv::Mat& input) = 0;
};

/// Returns the same heatmaps for every input.
class StubKeypointModel final : public KeypointModel {
 public:
  explicit StubKeypointModel(Heatmaps maps) : maps_(std::move(maps)) {}
  std::string identity() const override { return "stub"; }
  Heatmaps infer(const cv::Mat&) override { return maps_; }

 private:
  Heatmaps maps_;
};

/// Renders the targets of a known keypoint set, given in the coordinates of a
/// face image of `face_size`. Oracle model for labelled or synthetic frames.
class GroundTruthKeypointModel final : public KeypointModel {
 public:
  GroundTruthKeypointModel(KeypointSet kps, cv::Size face_size, KeypointModelConfig cfg);
  std::string identity() const override { return "groundtruth"; }
  Heatmaps infer(const cv::Mat& input) override;

 private:
  KeypointSet kps_;
  cv::Size face_size_;
  KeypointModelConfig cfg_;
};

/// Small fully convolutional heatmap regressor: RGB plus two coordinate
/// channels, three 3x3 conv blocks with two 2x2 pools, then a 1x1 conv to
/// seven maps. Output stride is fixed at 4.
class TinyHeatmapModel final : public KeypointModel {
 public:
  static constexpr int kStride = 4;

  TinyHeatmapModel(const KeypointModelConfig& cfg, std::uint64_t seed);

  std::string identity() const override { return identity_; }
  Heatmaps infer(const cv::Mat& input) override;

  /// Raw (unclamped) network output for an input image.
  nn::Tensor forward(const cv::Mat& input);
  /// Backpropagates d(loss)/d(output) from the last forward().
  void backward(const nn::Tensor& grad_out) { net_.backward(grad_out); }
  std::vector<nn::ParamF*> params() { return net_.params(); }
  const KeypointModelConfig& config() const { return cfg_; }

  nn::ModelFile to_file();
  static TinyHeatmapModel from_file(const nn::ModelFile& file);
  void save(const std::filesystem::path& path);
  static TinyHeatmapModel load(const std::filesystem::path& path);

 private:
  KeypointModelConfig cfg_;
  nn::Network net_;
  std::string identity_ = "tiny_heatmap";
};

struct KeypointSample {
  cv::Mat image;      // face image, any size
  KeypointSet keypoints;  // in `image` coordinates
};

struct KeypointTrainOptions {
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

struct KeypointTrainResult {
  TinyHeatmapModel model;
  std::vector<double> loss_history;  // mean per-pixel MSE per epoch
};

namespace keypoints {

/// Resizes a face image to the model input (bilinear, no letterbox).
cv::Mat prepare_input(const cv::Mat& face, const KeypointModelConfig& cfg);

/// Keypoints in model-input pixel coordinates. Invisible points give zero maps.
Heatmaps render_targets(const KeypointSet& kps, const KeypointModelConfig& cfg);

/// Argmax plus a quarter-cell step toward the larger neighbour on each axis,
/// mapped from input coordinates to `orig_size`. A channel whose max is below
/// `visibility_floor` decodes as invisible.
KeypointSet decode(const Heatmaps& maps, cv::Size orig_size, const KeypointModelConfig& cfg);

/// Scales face-image keypoints into model-input coordinates.
KeypointSet to_input_coords(const KeypointSet& kps, cv::Size face_size,
                            const KeypointModelConfig& cfg);

KeypointSet predict_keypoints(const cv::Mat& face, KeypointModel& model,
                              const KeypointModelConfig& cfg);

double heatmap_mse(const nn::Tensor& pred, const nn::Tensor& target);

KeypointTrainResult train_keypoint_model(const std::vector<KeypointSample>& samples,
                                         const KeypointModelConfig& cfg,
                                         const KeypointTrainOptions& options);

}  // namespace keypoints
}  // namespace chickface
