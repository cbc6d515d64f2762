// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"

namespace chickface {

std::string_view landmark_name(Landmark lm) {
  return kLandmarkNames[static_cast<std::size_t>(lm)];
}

std::optional<Landmark> landmark_from_name(std::string_view name) {
  for (int i = 0; i < kNumLandmarks; ++i) {
    if (kLandmarkNames[i] == name) return static_cast<Landmark>(i);
  }
  return std::nullopt;
}

bool KeypointSet::valid(std::optional<cv::Size> bounds) const {
  for (int i = 0; i < kNumLandmarks; ++i) {
    if (!visible_[i]) continue;
    const Point2& p = points_[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    if (bounds && (p.x < 0.0 || p.y < 0.0 || p.x >= bounds->width || p.y >= bounds->height)) {
      return false;
    }
  }
  return true;
}

KeypointSet KeypointSet::translated(double dx, double dy) const {
  KeypointSet out = *this;
  for (auto& p : out.points_) {
    p.x += dx;
    p.y += dy;
  }
  return out;
}

AffineTransform AffineTransform::then(const AffineTransform& next) const {
  const auto& a = next.m;
  const auto& b = m;
  return {{a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
           a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]}};
}

cv::Mat AffineTransform::to_mat() const {
  cv::Mat out(2, 3, CV_64F);
  for (int i = 0; i < 6; ++i) out.at<double>(i / 3, i % 3) = m[i];
  return out;
}

namespace geometry {

Point2 eye_midpoint(const Point2& left_eye, const Point2& right_eye) {
  return {(left_eye.x + right_eye.x) / 2.0, (left_eye.y + right_eye.y) / 2.0};
}

Point2 adjust_to_box(const Point2& midpoint, const BoundingBox& box) {
  return {midpoint.x - box.x, midpoint.y - box.y};
}

double rotation_angle(const Point2& first, const Point2& second) {
  const double dx = second.x - first.x;
  const double dy = second.y - first.y;
  if (dx == 0.0 && dy == 0.0) {
    throw Error(ErrorCode::kDegenerateGeometry, "eye points coincide; rotation angle undefined");
  }
  double deg = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
  if (deg <= -180.0) deg += 360.0;
  return deg;
}

AffineTransform rotation_matrix(const Point2& center, double angle_deg, double scale) {
  if (!(scale > 0.0)) {
    throw Error(ErrorCode::kInvalidInput, "rotation scale must be positive");
  }
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double alpha = scale * std::cos(theta);
  const double beta = scale * std::sin(theta);
  return {{alpha, beta, (1.0 - alpha) * center.x - beta * center.y,
           -beta, alpha, beta * center.x + (1.0 - alpha) * center.y}};
}

Point2 apply_to_point(const AffineTransform& t, const Point2& p) {
  const auto& m = t.m;
  return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
}

cv::Mat warp_image(const cv::Mat& image, const AffineTransform& t, cv::Size out_size) {
  if (out_size.width <= 0 || out_size.height <= 0) {
    throw Error(ErrorCode::kInvalidInput, "warp output size must be positive");
  }
  cv::Mat out;
  cv::warpAffine(image, out, t.to_mat(), out_size, cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                 cv::Scalar::all(0));
  return out;
}

BoundingBox enclosing_box(const AffineTransform& t, const BoundingBox& box) {
  const std::array<Point2, 4> corners = {Point2{box.x, box.y}, Point2{box.right(), box.y},
                                         Point2{box.x, box.bottom()},
                                         Point2{box.right(), box.bottom()}};
  double x0 = std::numeric_limits<double>::infinity();
  double y0 = x0;
  double x1 = -x0;
  double y1 = -x0;
  for (const auto& c : corners) {
    const Point2 p = apply_to_point(t, c);
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

BoundingBox intersect(const BoundingBox& a, const BoundingBox& b) {
  const double x0 = std::max(a.x, b.x);
  const double y0 = std::max(a.y, b.y);
  const double x1 = std::min(a.right(), b.right());
  const double y1 = std::min(a.bottom(), b.bottom());
  return {x0, y0, std::max(0.0, x1 - x0), std::max(0.0, y1 - y0)};
}

AlignedFace align_face(const cv::Mat& image, const BoundingBox& box, const KeypointSet& kps) {
  if (!kps.visible(Landmark::kLeftEye) || !kps.visible(Landmark::kRightEye)) {
    throw Error(ErrorCode::kPoseRejected, "alignment needs both eyes visible");
  }
  if (!box.valid()) throw Error(ErrorCode::kInvalidInput, "alignment box has non-positive extent");
  if (image.empty()) throw Error(ErrorCode::kInvalidInput, "alignment image is empty");

  const Point2& left = kps.point(Landmark::kLeftEye);
  const Point2& right = kps.point(Landmark::kRightEye);
  if (std::hypot(right.x - left.x, right.y - left.y) < kMinEyeDistance) {
    throw Error(ErrorCode::kDegenerateGeometry, "eyes closer than the minimum separation");
  }

  const Point2 pivot = adjust_to_box(eye_midpoint(left, right), box);
  const double angle = rotation_angle(left, right);
  // The pivot lives in box coordinates; conjugate by the box offset so the
  // warp can run on the full frame.
  const AffineTransform t = AffineTransform::translation(-box.x, -box.y)
                                .then(rotation_matrix(pivot, angle))
                                .then(AffineTransform::translation(box.x, box.y));

  AlignedFace out;
  out.transform = t;
  out.angle_deg = angle;
  out.image = warp_image(image, t, image.size());

  const Point2 center = apply_to_point(t, {box.x + box.w / 2.0, box.y + box.h / 2.0});
  const BoundingBox recentred{center.x - box.w / 2.0, center.y - box.h / 2.0, box.w, box.h};
  const BoundingBox frame{0.0, 0.0, static_cast<double>(image.cols),
                          static_cast<double>(image.rows)};
  out.box = intersect(intersect(enclosing_box(t, box), recentred), frame);
  if (!out.box.valid()) {
    throw Error(ErrorCode::kFlaggedFrame, "aligned face box falls outside the image");
  }

  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto lm = static_cast<Landmark>(i);
    const Point2 p = apply_to_point(t, kps.point(lm));
    out.keypoints.set(lm, p, kps.visible(lm));
    if (kps.visible(lm) && !out.box.contains(p)) {
      throw Error(ErrorCode::kFlaggedFrame,
                  "visible keypoint " + std::string(landmark_name(lm)) + " outside aligned box");
    }
  }
  return out;
}

PoseDecision pose_gate(const KeypointSet& kps) {
  for (Landmark lm : {Landmark::kLeftEye, Landmark::kRightEye, Landmark::kLeftBeak,
                      Landmark::kRightBeak}) {
    if (!kps.visible(lm)) return PoseDecision::kReject;
  }
  return PoseDecision::kAccept;
}

}  // namespace geometry
}  // namespace chickface
