// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"

namespace chickface {

void DetectorConfig::validate() const {
  if (input_size <= 0) throw Error(ErrorCode::kConfig, "detector input_size must be positive");
  if (!(conf_threshold > 0.0 && conf_threshold <= 1.0)) {
    throw Error(ErrorCode::kConfig, "detector conf_threshold must be in (0, 1]");
  }
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw Error(ErrorCode::kConfig, "detector iou_threshold must be in (0, 1]");
  }
}

BoundingBox Letterbox::to_original(const BoundingBox& b) const {
  const Point2 tl = to_original(Point2{b.x, b.y});
  return {tl.x, tl.y, b.w / scale, b.h / scale};
}

BoundingBox Letterbox::to_letterbox(const BoundingBox& b) const {
  const Point2 tl = to_letterbox(Point2{b.x, b.y});
  return {tl.x, tl.y, b.w * scale, b.h * scale};
}

GroundTruthDetector::GroundTruthDetector(BoundingBox box, cv::Size original_size, int input_size,
                                         double confidence)
    : box_(box), original_size_(original_size), input_size_(input_size), confidence_(confidence) {}

std::vector<Detection> GroundTruthDetector::infer(const cv::Mat&) {
  const double scale = std::min(static_cast<double>(input_size_) / original_size_.width,
                                static_cast<double>(input_size_) / original_size_.height);
  Letterbox lb;
  lb.scale = scale;
  lb.pad_x = (input_size_ - static_cast<int>(std::lround(original_size_.width * scale))) / 2;
  lb.pad_y = (input_size_ - static_cast<int>(std::lround(original_size_.height * scale))) / 2;
  return {Detection{lb.to_letterbox(box_), confidence_, 0}};
}

OnnxYoloDetector::OnnxYoloDetector(const std::filesystem::path& onnx_path) : path_(onnx_path) {
  try {
    net_ = cv::dnn::readNetFromONNX(onnx_path.string());
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::kDetector, "cannot load detector onnx:" + onnx_path.string() + ": " + e.what());
  }
  if (net_.empty()) throw Error(ErrorCode::kDetector, "empty detector onnx:" + onnx_path.string());
}

std::vector<Detection> OnnxYoloDetector::decode(const cv::Mat& rows, double min_confidence) {
  std::vector<Detection> out;
  if (rows.cols < 6) return out;
  for (int r = 0; r < rows.rows; ++r) {
    const float* p = rows.ptr<float>(r);
    int best_class = 0;
    float best_score = p[5];
    for (int c = 6; c < rows.cols; ++c) {
      if (p[c] > best_score) {
        best_score = p[c];
        best_class = c - 5;
      }
    }
    const double conf = static_cast<double>(p[4]) * best_score;
    if (conf < min_confidence) continue;
    out.push_back({{p[0] - p[2] / 2.0, p[1] - p[3] / 2.0, p[2], p[3]}, conf, best_class});
  }
  return out;
}

std::vector<Detection> OnnxYoloDetector::infer(const cv::Mat& letterboxed) {
  cv::Mat blob = cv::dnn::blobFromImage(letterboxed, 1.0 / 255.0, letterboxed.size(), cv::Scalar(),
                                        /*swapRB=*/true, /*crop=*/false);
  net_.setInput(blob);
  cv::Mat out = net_.forward();
  if (out.dims != 3) throw Error(ErrorCode::kDetector, identity() + ": unexpected output rank");
  cv::Mat rows(out.size[1], out.size[2], CV_32F, out.ptr<float>());
  return decode(rows, 0.0);
}

namespace detection {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });

  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return iou(k.box, dets[idx].box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(dets[idx]);
  }
  return kept;
}

Letterbox letterbox(const cv::Mat& image, int size) {
  if (image.empty() || size <= 0) throw Error(ErrorCode::kInvalidInput, "letterbox of an empty image");
  Letterbox lb;
  lb.scale = std::min(static_cast<double>(size) / image.cols, static_cast<double>(size) / image.rows);
  const int new_w = static_cast<int>(std::lround(image.cols * lb.scale));
  const int new_h = static_cast<int>(std::lround(image.rows * lb.scale));
  const int pad_x = (size - new_w) / 2;
  const int pad_y = (size - new_h) / 2;
  lb.pad_x = pad_x;
  lb.pad_y = pad_y;

  cv::Mat resized;
  if (new_w == image.cols && new_h == image.rows) {
    resized = image;
  } else {
    cv::resize(image, resized, cv::Size(new_w, new_h), 0, 0, cv::INTER_LINEAR);
  }
  cv::copyMakeBorder(resized, lb.image, pad_y, size - new_h - pad_y, pad_x, size - new_w - pad_x,
                     cv::BORDER_CONSTANT, cv::Scalar::all(kPadValue));
  return lb;
}

std::optional<Detection> detect_face(const cv::Mat& image, const DetectorConfig& cfg,
                                     DetectorModel& model) {
  cfg.validate();
  const Letterbox lb = letterbox(image, cfg.input_size);
  std::vector<Detection> raw;
  try {
    raw = model.infer(lb.image);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kDetector, model.identity() + ": inference failed: " + e.what());
  }

  std::vector<Detection> confident;
  for (const auto& d : raw) {
    if (d.confidence >= cfg.conf_threshold) confident.push_back(d);
  }
  const auto kept = nms(confident, cfg.iou_threshold);
  if (kept.empty()) return std::nullopt;
  Detection best = kept.front();
  best.box = lb.to_original(best.box);
  return best;
}

std::string training_export_line(const BoundingBox& box, cv::Size image_size, int class_id) {
  const double w = image_size.width;
  const double h = image_size.height;
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << class_id << ' ' << (box.x + box.w / 2.0) / w << ' '
     << (box.y + box.h / 2.0) / h << ' ' << box.w / w << ' ' << box.h / h;
  return os.str();
}

double hit_rate(std::span<const std::optional<BoundingBox>> predictions,
                std::span<const BoundingBox> truths, double iou_threshold) {
  if (predictions.size() != truths.size()) {
    throw Error(ErrorCode::kInvalidInput, "hit_rate needs one prediction slot per truth");
  }
  if (truths.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (predictions[i] && iou(*predictions[i], truths[i]) >= iou_threshold) ++hits;
  }
  return static_cast<double>(hits) / truths.size();
}

}  // namespace detection
}  // namespace chickface
