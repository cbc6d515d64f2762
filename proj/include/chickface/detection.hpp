// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "chickface/geometry.hpp"

namespace chickface {

struct Detection {
  BoundingBox box;
  double confidence = 0.0;
  int class_id = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectorConfig {
  int input_size = 640;
  double conf_threshold = 0.8;
  double iou_threshold = 0.5;
  std::string model_ref;

  void validate() const;
};

/// Square-input resize: original = (letterboxed - pad) / scale.
struct Letterbox {
  cv::Mat image;
  double scale = 1.0;
  double pad_x = 0.0;
  double pad_y = 0.0;

  Point2 to_original(const Point2& p) const { return {(p.x - pad_x) / scale, (p.y - pad_y) / scale}; }
  Point2 to_letterbox(const Point2& p) const { return {p.x * scale + pad_x, p.y * scale + pad_y}; }
  BoundingBox to_original(const BoundingBox& b) const;
  BoundingBox to_letterbox(const BoundingBox& b) const;
};

/// Anything that maps a letterboxed square image to (box, confidence, class)
/// triples in letterboxed pixel coordinates. Calls on one instance must be
/// serialized; use one instance per worker.
class DetectorModel {
 public:
  virtual ~DetectorModel() = default;
  virtual std::string identity() const = 0;
  virtual std::vector<Detection> infer(const cv::Mat& letterboxed) = 0;
};

/// Returns a fixed list regardless of input.
class StubDetector final : public DetectorModel {
 public:
  explicit StubDetector(std::vector<Detection> detections, std::string name = "stub")
      : detections_(std::move(detections)), name_(std::move(name)) {}
  std::string identity() const override { return name_; }
  std::vector<Detection> infer(const cv::Mat&) override { return detections_; }

 private:
  std::vector<Detection> detections_;
  std::string name_;
};

/// Emits one known box (given in original-image coordinates) mapped into the
/// letterbox frame; the oracle detector for labelled or synthetic data.
class GroundTruthDetector final : public DetectorModel {
 public:
  GroundTruthDetector(BoundingBox box, cv::Size original_size, int input_size,
                      double confidence = 0.95);
  std::string identity() const override { return "groundtruth"; }
  std::vector<Detection> infer(const cv::Mat& letterboxed) override;

 private:
  BoundingBox box_;
  cv::Size original_size_;
  int input_size_;
  double confidence_;
};

/// YOLOv5-style ONNX export: output [1, N, 5 + classes] rows of
/// (cx, cy, w, h, objectness, class scores...).
class OnnxYoloDetector final : public DetectorModel {
 public:
  explicit OnnxYoloDetector(const std::filesystem::path& onnx_path);
  std::string identity() const override { return "onnx:" + path_.string(); }
  std::vector<Detection> infer(const cv::Mat& letterboxed) override;

  /// Decodes a raw [N, 5 + classes] prediction matrix.
  static std::vector<Detection> decode(const cv::Mat& rows, double min_confidence);

 private:
  std::filesystem::path path_;
  cv::dnn::Net net_;
};

namespace detection {

/// Letterbox padding value (114 gray).
inline constexpr int kPadValue = 114;

double iou(const BoundingBox& a, const BoundingBox& b);

/// Greedy NMS: descending confidence, stable on ties; suppresses a candidate
/// only when IoU with a kept box is strictly greater than the threshold.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

Letterbox letterbox(const cv::Mat& image, int size);

/// Letterbox, infer, confidence gate, NMS, map back; at most one face.
std::optional<Detection> detect_face(const cv::Mat& image, const DetectorConfig& cfg,
                                     DetectorModel& model);

/// `class cx cy w h`, normalized to [0,1] by the image size.
std::string training_export_line(const BoundingBox& box, cv::Size image_size, int class_id = 0);

/// Fraction of truths matched by a prediction with IoU >= threshold.
double hit_rate(std::span<const std::optional<BoundingBox>> predictions,
                std::span<const BoundingBox> truths, double iou_threshold = 0.5);

}  // namespace detection
}  // namespace chickface
