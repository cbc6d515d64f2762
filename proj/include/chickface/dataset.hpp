// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

namespace chickface {

enum class Gender { kFemale, kMale };
enum class FrameQuality { kUnreviewed, kAccepted, kRejected };
enum class CropKind { kNone, kFull, kMiddle };

std::string_view to_string(Gender g);
std::string_view to_string(FrameQuality q);
std::string_view to_string(CropKind k);
Gender gender_from_string(std::string_view s);
FrameQuality quality_from_string(std::string_view s);
CropKind crop_kind_from_string(std::string_view s);

struct ChickRecord {
  std::string chick_id;
  Gender gender = Gender::kFemale;

  friend bool operator==(const ChickRecord&, const ChickRecord&) = default;
};

struct FrameRecord {
  std::string frame_id;
  std::string chick_id;
  int view_index = 0;
  std::string image_ref;  // relative to the manifest's directory
  FrameQuality quality = FrameQuality::kUnreviewed;

  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

class DatasetManifest {
 public:
  std::vector<ChickRecord> chicks;
  std::vector<FrameRecord> frames;
  CropKind crop_kind = CropKind::kNone;

  // Throws kInvalidInput on duplicate ids, dangling chick references, or
  // out-of-range view indices.
  void validate() const;

  const ChickRecord* find_chick(std::string_view chick_id) const;
  ChickRecord* find_chick(std::string_view chick_id);
  const FrameRecord* find_frame(std::string_view frame_id) const;
  FrameRecord* find_frame(std::string_view frame_id);

  /// Frames that may enter training or evaluation.
  std::vector<FrameRecord> accepted_frames() const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& doc);

  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct FoldPlan {
  int k = 0;
  std::map<std::string, int> assignment;  // chick_id -> fold

  int fold_of(const std::string& chick_id) const;

  nlohmann::json to_json() const;
  static FoldPlan from_json(const nlohmann::json& doc);
};

namespace dataset {

/// Cuts a vertically stacked three-camera frame into top, middle, bottom.
std::array<cv::Mat, 3> split_views(const cv::Mat& stacked);

/// Shuffles ids per gender with `seed` and deals them round-robin into `k` folds.
FoldPlan assign_folds(const std::vector<ChickRecord>& chicks, int k, std::uint64_t seed);

/// Variance of the Laplacian of the grayscale image. Higher is sharper.
double blur_score(const cv::Mat& image);

/// Uniform random sample of `count` accepted-or-unreviewed frame ids, sorted.
std::vector<std::string> sample_frames(const DatasetManifest& manifest, std::size_t count,
                                       std::uint64_t seed);

struct IngestOptions {
  std::filesystem::path raw_dir;
  std::filesystem::path labels_csv;  // video_id,chick_id,gender
  std::filesystem::path out_dir;
  FrameQuality initial_quality = FrameQuality::kUnreviewed;
};

/// Reads `<video_id>_<frame_idx>.png` frames, splits their views into
/// `out_dir/views/<video_id>_<frame_idx>_v<k>.png` and writes
/// `out_dir/manifest.json`. LabelMe files found next to the raw frames as
/// `<video_id>_<frame_idx>_v<k>.json` are copied to `out_dir/annotations/`.
DatasetManifest ingest(const IngestOptions& options);

}  // namespace dataset
}  // namespace chickface
