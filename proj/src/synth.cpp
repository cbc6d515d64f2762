// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"

namespace chickface::synth {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Fixed-point scale for sub-pixel drawing.
constexpr int kShift = 4;
constexpr double kOne = 1 << kShift;

cv::Point fixed(const Point2& p) {
  return {static_cast<int>(std::lround(p.x * kOne)), static_cast<int>(std::lround(p.y * kOne))};
}

}  // namespace

std::pair<double, double> comb_ratio_range(Gender g, double separability) {
  const double shift = g == Gender::kMale ? 0.4 * separability : 0.0;
  return {0.2 + shift, 0.6 + shift};
}

SynthFace render_face(double comb_ratio, std::mt19937_64& rng, const SynthOptions& o,
                      bool hide_side_beak) {
  const int v = o.view_size;
  SynthFace face;

  // Background: smooth gray with per-view tint.
  const double bg = uniform(rng, 70.0, 130.0);
  face.image = cv::Mat(v, v, CV_8UC3, cv::Scalar(bg, bg + uniform(rng, -10, 10), bg));

  const double a = uniform(rng, 0.22, 0.28) * v;  // head half-width
  const double b = 1.1 * a;                       // head half-height
  const double comb_b = comb_ratio * b;           // comb half-height
  const double theta = uniform(rng, -o.max_roll_deg, o.max_roll_deg) * std::numbers::pi / 180.0;
  const double cx = v / 2.0 + uniform(rng, -0.06, 0.06) * v;
  const double cy = v / 2.0 + 0.5 * comb_b + uniform(rng, -0.04, 0.04) * v;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  auto place = [&](double lx, double ly) {
    return Point2{cx + (c * lx - s * ly) * a, cy + (s * lx + c * ly) * a};
  };
  const double angle_deg = theta * 180.0 / std::numbers::pi;

  const cv::Scalar head_color(uniform(rng, 40, 80), uniform(rng, 185, 215), uniform(rng, 215, 240));
  const cv::Scalar comb_color(uniform(rng, 30, 50), uniform(rng, 30, 50), uniform(rng, 190, 220));
  const cv::Scalar beak_color(40, 140, 235);
  const cv::Scalar eye_color(25, 25, 25);

  const double bl = b / a;  // head half-height in units of a
  const double comb_bl = comb_b / a;
  const Point2 comb_center = place(0.0, -bl);
  cv::ellipse(face.image, fixed(comb_center),
              cv::Size(static_cast<int>(0.45 * a * kOne), static_cast<int>(comb_b * kOne)), angle_deg,
              0, 360, comb_color, cv::FILLED, cv::LINE_AA, kShift);
  cv::ellipse(face.image, fixed(place(0.0, 0.0)),
              cv::Size(static_cast<int>(a * kOne), static_cast<int>(b * kOne)), angle_deg, 0, 360,
              head_color, cv::FILLED, cv::LINE_AA, kShift);

  KeypointSet kps;
  kps.set(Landmark::kLeftEye, place(-0.4, -0.1));
  kps.set(Landmark::kRightEye, place(0.4, -0.1));
  kps.set(Landmark::kUpperNose, place(0.0, 0.05));
  kps.set(Landmark::kMiddleNose, place(0.0, 0.2));
  kps.set(Landmark::kLeftBeak, place(-0.2, 0.35));
  kps.set(Landmark::kRightBeak, place(0.2, 0.35));
  kps.set(Landmark::kMiddleBeak, place(0.0, 0.6));

  const std::vector<cv::Point> beak = {
      fixed(kps.point(Landmark::kUpperNose)), fixed(kps.point(Landmark::kRightBeak)),
      fixed(kps.point(Landmark::kMiddleBeak)), fixed(kps.point(Landmark::kLeftBeak))};
  cv::fillPoly(face.image, std::vector<std::vector<cv::Point>>{beak}, beak_color, cv::LINE_AA,
               kShift);
  const int eye_r = static_cast<int>(0.12 * a * kOne);
  cv::circle(face.image, fixed(kps.point(Landmark::kLeftEye)), eye_r, eye_color, cv::FILLED,
             cv::LINE_AA, kShift);
  cv::circle(face.image, fixed(kps.point(Landmark::kRightEye)), eye_r, eye_color, cv::FILLED,
             cv::LINE_AA, kShift);

  cv::Mat noise(face.image.size(), CV_16SC3);
  cv::RNG cv_rng(static_cast<std::uint64_t>(rng()));
  cv_rng.fill(noise, cv::RNG::NORMAL, 0.0, 4.0);
  cv::Mat img16;
  face.image.convertTo(img16, CV_16SC3);
  img16 += noise;
  img16.convertTo(face.image, CV_8UC3);

  if (hide_side_beak) {
    kps.set_visible(uniform(rng, 0.0, 1.0) < 0.5 ? Landmark::kLeftBeak : Landmark::kRightBeak, false);
  }

  // Box: tight around the head and comb outlines.
  double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
  for (int i = 0; i < 360; ++i) {
    const double t = i * std::numbers::pi / 180.0;
    for (const Point2& p : {place(std::cos(t), bl * std::sin(t)),
                            place(0.45 * std::cos(t), -bl + comb_bl * std::sin(t))}) {
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
  }
  x0 = std::max(0.0, x0);
  y0 = std::max(0.0, y0);
  x1 = std::min(static_cast<double>(v), x1);
  y1 = std::min(static_cast<double>(v), y1);

  face.annotation.image_width = v;
  face.annotation.image_height = v;
  face.annotation.box = BoundingBox{x0, y0, x1 - x0, y1 - y0};
  face.annotation.keypoints = kps;
  face.comb_ratio = comb_ratio;
  return face;
}

void generate(const SynthOptions& o) {
  if (o.ids < 2) throw Error(ErrorCode::kInvalidInput, "synth-data needs at least 2 ids");
  if (o.frames_per_id < 1) throw Error(ErrorCode::kInvalidInput, "frames_per_id must be >= 1");
  if (!(o.separability >= 0.0 && o.separability <= 1.0)) {
    throw Error(ErrorCode::kInvalidInput, "separability must be in [0, 1]");
  }
  if (o.view_size < 48) throw Error(ErrorCode::kInvalidInput, "view_size must be >= 48");

  const auto raw = o.out_dir / "raw";
  std::filesystem::create_directories(raw);
  std::ofstream csv(o.out_dir / "chicks.csv");
  if (!csv) throw Error(ErrorCode::kIo, "cannot write chicks.csv");
  csv << "video_id,chick_id,gender\n";

  std::mt19937_64 rng(o.seed);
  char name[64];
  for (int id = 0; id < o.ids; ++id) {
    const Gender g = id % 2 == 0 ? Gender::kFemale : Gender::kMale;
    const auto [lo, hi] = comb_ratio_range(g, o.separability);
    const double ratio = uniform(rng, lo, hi);
    std::snprintf(name, sizeof(name), "vid%04d", id);
    const std::string video = name;
    std::snprintf(name, sizeof(name), "chick%04d", id);
    csv << video << ',' << name << ',' << to_string(g) << '\n';

    for (int f = 0; f < o.frames_per_id; ++f) {
      const std::string stem = video + "_" + std::to_string(f);
      std::vector<cv::Mat> views;
      for (int k = 0; k < 3; ++k) {
        const bool yaw = uniform(rng, 0.0, 1.0) < o.yaw_fraction;
        SynthFace face = render_face(ratio, rng, o, yaw);
        face.annotation.image_path = stem + "_v" + std::to_string(k) + ".png";
        labelme::save(face.annotation, raw / (stem + "_v" + std::to_string(k) + ".json"));
        views.push_back(face.image);
      }
      cv::Mat stacked;
      cv::vconcat(views, stacked);
      if (!cv::imwrite((raw / (stem + ".png")).string(), stacked)) {
        throw Error(ErrorCode::kIo, "cannot write frame " + stem);
      }
    }
  }
}

}  // namespace chickface::synth
