// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string_view>

#include <opencv2/core.hpp>

namespace chickface {

/// Image-space point. y grows downward.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Axis-aligned box given by its top-left corner and extent.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  double area() const { return w * h; }
  bool valid() const { return w > 0.0 && h > 0.0; }
  bool contains(const Point2& p) const {
    return p.x >= x && p.x <= right() && p.y >= y && p.y <= bottom();
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// The seven facial landmarks in canonical (heatmap channel) order.
enum class Landmark : int {
  kUpperNose = 0,
  kMiddleNose,
  kRightEye,
  kRightBeak,
  kMiddleBeak,
  kLeftBeak,
  kLeftEye,
};

inline constexpr int kNumLandmarks = 7;

inline constexpr std::array<std::string_view, kNumLandmarks> kLandmarkNames = {
    "upper_nose", "middle_nose", "right_eye", "right_beak",
    "middle_beak", "left_beak", "left_eye"};

std::string_view landmark_name(Landmark lm);
std::optional<Landmark> landmark_from_name(std::string_view name);

class KeypointSet {
 public:
  KeypointSet() = default;

  const Point2& point(Landmark lm) const { return points_[index(lm)]; }
  bool visible(Landmark lm) const { return visible_[index(lm)]; }

  void set(Landmark lm, Point2 p, bool visible = true) {
    points_[index(lm)] = p;
    visible_[index(lm)] = visible;
  }
  void set_visible(Landmark lm, bool visible) { visible_[index(lm)] = visible; }

  const std::array<Point2, kNumLandmarks>& points() const { return points_; }
  const std::array<bool, kNumLandmarks>& visibility() const { return visible_; }

  // Visible points must be finite and, when bounds are given, inside them.
  bool valid(std::optional<cv::Size> bounds = std::nullopt) const;

  KeypointSet translated(double dx, double dy) const;

  friend bool operator==(const KeypointSet&, const KeypointSet&) = default;

 private:
  static std::size_t index(Landmark lm) { return static_cast<std::size_t>(lm); }

  std::array<Point2, kNumLandmarks> points_{};
  std::array<bool, kNumLandmarks> visible_{};
};

/// 2x3 row-major affine matrix.
struct AffineTransform {
  std::array<double, 6> m{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  static AffineTransform identity() { return {}; }
  static AffineTransform translation(double tx, double ty) {
    return {{1.0, 0.0, tx, 0.0, 1.0, ty}};
  }

  AffineTransform then(const AffineTransform& next) const;
  double determinant() const { return m[0] * m[4] - m[1] * m[3]; }
  cv::Mat to_mat() const;
};

enum class PoseDecision { kAccept, kReject };

struct AlignedFace {
  cv::Mat image;
  BoundingBox box;
  KeypointSet keypoints;
  AffineTransform transform;
  double angle_deg = 0.0;
};

namespace geometry {

// Eyes closer than this are treated as coincident.
inline constexpr double kMinEyeDistance = 2.0;

Point2 eye_midpoint(const Point2& left_eye, const Point2& right_eye);

/// Midpoint expressed relative to the box's top-left corner.
Point2 adjust_to_box(const Point2& midpoint, const BoundingBox& box);

/// Angle of the eye line in degrees, (-180, 180]. `first` is the image-left eye.
double rotation_angle(const Point2& first, const Point2& second);

/// Rotation by `angle_deg` with scale about `center`; `center` is a fixed point.
AffineTransform rotation_matrix(const Point2& center, double angle_deg, double scale = 1.0);

Point2 apply_to_point(const AffineTransform& t, const Point2& p);

/// Bilinear warp with black fill.
cv::Mat warp_image(const cv::Mat& image, const AffineTransform& t, cv::Size out_size);

/// Tightest axis-aligned box around the four transformed corners.
BoundingBox enclosing_box(const AffineTransform& t, const BoundingBox& box);

BoundingBox intersect(const BoundingBox& a, const BoundingBox& b);

AlignedFace align_face(const cv::Mat& image, const BoundingBox& box, const KeypointSet& kps);

/// Rejects strong yaw: both eyes and both side beak points must be visible.
PoseDecision pose_gate(const KeypointSet& kps);

}  // namespace geometry
}  // namespace chickface
