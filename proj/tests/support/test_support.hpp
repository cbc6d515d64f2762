// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "chickface/geometry.hpp"

namespace chickface::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "chickface") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(stamp) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Face-like keypoints around `centre`: eyes `eye_dist` apart along `angle_deg`
/// (image-left eye first), the rest below the eye line within `radius`.
inline KeypointSet face_keypoints(Point2 centre, double eye_dist, double angle_deg,
                                  double radius) {
  const double t = angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(t);
  const double s = std::sin(t);
  auto place = [&](double lx, double ly) {
    return Point2{centre.x + c * lx - s * ly, centre.y + s * lx + c * ly};
  };
  const double h = eye_dist / 2.0;
  const double d = std::min(radius, 1.6 * h);
  KeypointSet k;
  k.set(Landmark::kLeftEye, place(-h, 0.0));
  k.set(Landmark::kRightEye, place(h, 0.0));
  k.set(Landmark::kUpperNose, place(0.0, 0.2 * d));
  k.set(Landmark::kMiddleNose, place(0.0, 0.4 * d));
  k.set(Landmark::kLeftBeak, place(-0.4 * h, 0.6 * d));
  k.set(Landmark::kRightBeak, place(0.4 * h, 0.6 * d));
  k.set(Landmark::kMiddleBeak, place(0.0, 0.9 * d));
  return k;
}

}  // namespace chickface::testing
