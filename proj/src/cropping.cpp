// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/cropping.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"
#include "chickface/labelme.hpp"

namespace chickface::cropping {

namespace {

// Absorbs float noise from upstream transforms before rounding.
constexpr double kSnap = 1e-9;

cv::Mat to_gray(const cv::Mat& image) {
  if (image.channels() == 1) return image;
  cv::Mat gray;
  cv::cvtColor(image, gray, image.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
  return gray;
}

bool inside_closed(const Point2& p, int w, int h) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h;
}

}  // namespace

int otsu_threshold(const std::vector<std::uint8_t>& values) {
  std::array<double, 256> hist{};
  for (auto v : values) hist[v] += 1.0;
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * hist[i];

  int best = -1;
  double best_var = -1.0;
  double w0 = 0.0;
  double sum0 = 0.0;
  for (int t = 0; t < 256; ++t) {
    w0 += hist[t];
    sum0 += t * hist[t];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best_var) {
      best_var = between;
      best = t;
    }
  }
  return best;  // -1 when the sample has a single intensity
}

FaceCrop crop_full_face(const cv::Mat& aligned_image, const BoundingBox& aligned_box,
                        const KeypointSet& aligned_kps) {
  if (!aligned_box.valid()) throw Error(ErrorCode::kFlaggedFrame, "full-face box is empty");
  const int x0 = static_cast<int>(std::floor(aligned_box.x + kSnap));
  const int y0 = static_cast<int>(std::floor(aligned_box.y + kSnap));
  const int x1 = static_cast<int>(std::ceil(aligned_box.right() - kSnap));
  const int y1 = static_cast<int>(std::ceil(aligned_box.bottom() - kSnap));
  if (x0 < 0 || y0 < 0 || x1 > aligned_image.cols || y1 > aligned_image.rows || x1 <= x0 ||
      y1 <= y0) {
    throw Error(ErrorCode::kFlaggedFrame, "full-face box lies outside the aligned image");
  }

  FaceCrop crop;
  crop.kind = CropKind::kFull;
  crop.image = aligned_image(cv::Rect(x0, y0, x1 - x0, y1 - y0)).clone();
  crop.source_box = {static_cast<double>(x0), static_cast<double>(y0),
                     static_cast<double>(x1 - x0), static_cast<double>(y1 - y0)};
  crop.keypoints = aligned_kps.translated(-x0, -y0);
  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto lm = static_cast<Landmark>(i);
    if (crop.keypoints.visible(lm) &&
        !inside_closed(crop.keypoints.point(lm), crop.image.cols, crop.image.rows)) {
      throw Error(ErrorCode::kFlaggedFrame,
                  "keypoint " + std::string(landmark_name(lm)) + " outside full-face crop");
    }
  }
  return crop;
}

EyeExtremes eye_extremes(const FaceCrop& full_crop, double mask_radius_factor) {
  const KeypointSet& kps = full_crop.keypoints;
  if (!kps.visible(Landmark::kLeftEye) || !kps.visible(Landmark::kRightEye)) {
    throw Error(ErrorCode::kPoseRejected, "eye extremes need both eyes visible");
  }
  const cv::Mat gray = to_gray(full_crop.image);
  const Point2 le = kps.point(Landmark::kLeftEye);
  const Point2 re = kps.point(Landmark::kRightEye);
  const double radius = mask_radius_factor * std::hypot(re.x - le.x, re.y - le.y);
  const double r2 = radius * radius;

  struct Sample {
    int x;
    std::uint8_t v;
  };
  auto disc = [&](const Point2& c) {
    std::vector<Sample> out;
    const int ylo = std::max(0, static_cast<int>(std::floor(c.y - radius)));
    const int yhi = std::min(gray.rows - 1, static_cast<int>(std::ceil(c.y + radius)));
    const int xlo = std::max(0, static_cast<int>(std::floor(c.x - radius)));
    const int xhi = std::min(gray.cols - 1, static_cast<int>(std::ceil(c.x + radius)));
    for (int y = ylo; y <= yhi; ++y) {
      const auto* row = gray.ptr<std::uint8_t>(y);
      for (int x = xlo; x <= xhi; ++x) {
        const double dx = x - c.x;
        const double dy = y - c.y;
        if (dx * dx + dy * dy <= r2) out.push_back({x, row[x]});
      }
    }
    return out;
  };
  const auto left = disc(le);
  const auto right = disc(re);

  std::vector<std::uint8_t> values;
  values.reserve(left.size() + right.size());
  for (const auto& s : left) values.push_back(s.v);
  for (const auto& s : right) values.push_back(s.v);
  const int threshold = otsu_threshold(values);

  EyeExtremes ex;
  int lx = std::numeric_limits<int>::max();
  int rx = std::numeric_limits<int>::min();
  if (threshold >= 0) {
    for (const auto& s : left) {
      if (s.v <= threshold) lx = std::min(lx, s.x);
    }
    for (const auto& s : right) {
      if (s.v <= threshold) rx = std::max(rx, s.x);
    }
  }
  ex.left_fallback = lx == std::numeric_limits<int>::max();
  ex.right_fallback = rx == std::numeric_limits<int>::min();
  ex.left_x = ex.left_fallback ? static_cast<int>(std::lround(le.x)) : lx;
  ex.right_x = ex.right_fallback ? static_cast<int>(std::lround(re.x)) : rx;
  return ex;
}

BoundingBox middle_face_box(const FaceCrop& full_crop, const EyeExtremes& extremes,
                            double margin_scale, bool* degenerate) {
  const KeypointSet& kps = full_crop.keypoints;
  if (!kps.visible(Landmark::kUpperNose)) {
    throw Error(ErrorCode::kPoseRejected, "middle crop needs the upper nose keypoint");
  }
  double bottom = -std::numeric_limits<double>::infinity();
  for (Landmark lm : {Landmark::kMiddleBeak, Landmark::kLeftBeak, Landmark::kRightBeak}) {
    if (kps.visible(lm)) bottom = std::max(bottom, kps.point(lm).y);
  }
  if (!std::isfinite(bottom)) {
    throw Error(ErrorCode::kPoseRejected, "middle crop needs at least one beak keypoint");
  }

  const Point2 le = kps.point(Landmark::kLeftEye);
  const Point2 re = kps.point(Landmark::kRightEye);
  const double eye_distance = std::hypot(re.x - le.x, re.y - le.y);
  const double width = full_crop.image.cols;
  const double height = full_crop.image.rows;
  const double slack_left = extremes.left_x;
  const double slack_right = width - extremes.right_x;
  const double slack = 0.5 * (slack_left + slack_right);

  const double margin = slack > 0.0 ? margin_scale * eye_distance / slack : 0.0;
  if (degenerate) *degenerate = !(slack > 0.0);

  // Bounds are sample positions (pixel indices / keypoints), so clamp to the
  // last valid index.
  const double left = std::clamp(extremes.left_x - margin, 0.0, width - 1.0);
  const double right = std::clamp(extremes.right_x + margin, 0.0, width - 1.0);
  const double top = std::clamp(kps.point(Landmark::kUpperNose).y, 0.0, height - 1.0);
  bottom = std::clamp(bottom, 0.0, height - 1.0);
  if (right <= left || bottom <= top) {
    throw Error(ErrorCode::kFlaggedFrame, "middle-face box is degenerate");
  }
  return {left, top, right - left, bottom - top};
}

FaceCrop crop_middle_face(const FaceCrop& full_crop, const CropParams& params) {
  if (geometry::pose_gate(full_crop.keypoints) == PoseDecision::kReject) {
    throw Error(ErrorCode::kPoseRejected, "pose gate rejected the frame");
  }
  const EyeExtremes ex = eye_extremes(full_crop, params.mask_radius_factor);
  const BoundingBox box = middle_face_box(full_crop, ex, params.margin_scale);

  // The box edges are sample positions that must stay inside the crop, so the
  // max corner rounds to the pixel that contains it.
  const int x0 = static_cast<int>(std::floor(box.x + kSnap));
  const int y0 = static_cast<int>(std::floor(box.y + kSnap));
  const int x1 = std::min(full_crop.image.cols, static_cast<int>(std::floor(box.right() + kSnap)) + 1);
  const int y1 = std::min(full_crop.image.rows, static_cast<int>(std::floor(box.bottom() + kSnap)) + 1);

  FaceCrop crop;
  crop.kind = CropKind::kMiddle;
  crop.image = full_crop.image(cv::Rect(x0, y0, x1 - x0, y1 - y0)).clone();
  crop.source_box = {static_cast<double>(x0), static_cast<double>(y0),
                     static_cast<double>(x1 - x0), static_cast<double>(y1 - y0)};
  crop.keypoints = full_crop.keypoints.translated(-x0, -y0);

  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto lm = static_cast<Landmark>(i);
    if (!crop.keypoints.visible(lm)) continue;
    const Point2& p = crop.keypoints.point(lm);
    const bool inside = p.x >= 0.0 && p.y >= 0.0 && p.x < crop.image.cols && p.y < crop.image.rows;
    if (inside) continue;
    if (lm == Landmark::kUpperNose || lm == Landmark::kMiddleNose || lm == Landmark::kMiddleBeak) {
      throw Error(ErrorCode::kFlaggedFrame,
                  "middle crop lost keypoint " + std::string(landmark_name(lm)));
    }
    crop.keypoints.set_visible(lm, false);
  }
  return crop;
}

nlohmann::json sidecar_json(const FaceCrop& crop) {
  return {{"kind", to_string(crop.kind)},
          {"width", crop.image.cols},
          {"height", crop.image.rows},
          {"source_box", labelme::box_to_json(crop.source_box)},
          {"keypoints", labelme::keypoints_to_json(crop.keypoints)}};
}

void write_crop(const FaceCrop& crop, const std::filesystem::path& stem) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::filesystem::path png = stem;
  png += ".png";
  std::filesystem::path side = stem;
  side += ".json";
  if (!cv::imwrite(png.string(), crop.image)) {
    throw Error(ErrorCode::kIo, "cannot write crop " + png.string());
  }
  std::ofstream out(side);
  if (!out) throw Error(ErrorCode::kIo, "cannot write sidecar " + side.string());
  out << sidecar_json(crop).dump(2) << '\n';
}

}  // namespace chickface::cropping
