// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"
#include "chickface/labelme.hpp"

namespace chickface {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Gender g) { return g == Gender::kMale ? "male" : "female"; }

std::string_view to_string(FrameQuality q) {
  switch (q) {
    case FrameQuality::kAccepted: return "accepted";
    case FrameQuality::kRejected: return "rejected";
    default: return "unreviewed";
  }
}

std::string_view to_string(CropKind k) {
  switch (k) {
    case CropKind::kFull: return "full";
    case CropKind::kMiddle: return "middle";
    default: return "none";
  }
}

Gender gender_from_string(std::string_view s) {
  if (s == "male") return Gender::kMale;
  if (s == "female") return Gender::kFemale;
  throw Error(ErrorCode::kInvalidInput, "unknown gender '" + std::string(s) + "'");
}

FrameQuality quality_from_string(std::string_view s) {
  if (s == "unreviewed") return FrameQuality::kUnreviewed;
  if (s == "accepted") return FrameQuality::kAccepted;
  if (s == "rejected") return FrameQuality::kRejected;
  throw Error(ErrorCode::kInvalidInput, "unknown frame quality '" + std::string(s) + "'");
}

CropKind crop_kind_from_string(std::string_view s) {
  if (s == "none") return CropKind::kNone;
  if (s == "full") return CropKind::kFull;
  if (s == "middle") return CropKind::kMiddle;
  throw Error(ErrorCode::kInvalidInput, "unknown crop kind '" + std::string(s) + "'");
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& c : chicks) {
    if (c.chick_id.empty()) throw Error(ErrorCode::kInvalidInput, "empty chick_id");
    if (!ids.insert(c.chick_id).second) {
      throw Error(ErrorCode::kInvalidInput, "duplicate chick_id '" + c.chick_id + "'");
    }
  }
  std::unordered_set<std::string> frame_ids;
  for (const auto& f : frames) {
    if (!frame_ids.insert(f.frame_id).second) {
      throw Error(ErrorCode::kInvalidInput, "duplicate frame_id '" + f.frame_id + "'");
    }
    if (!ids.contains(f.chick_id)) {
      throw Error(ErrorCode::kInvalidInput,
                  "frame '" + f.frame_id + "' references unknown chick '" + f.chick_id + "'");
    }
    if (f.view_index < 0 || f.view_index > 2) {
      throw Error(ErrorCode::kInvalidInput, "frame '" + f.frame_id + "' has view_index outside 0..2");
    }
  }
}

const ChickRecord* DatasetManifest::find_chick(std::string_view chick_id) const {
  auto it = std::find_if(chicks.begin(), chicks.end(),
                         [&](const ChickRecord& c) { return c.chick_id == chick_id; });
  return it == chicks.end() ? nullptr : &*it;
}

ChickRecord* DatasetManifest::find_chick(std::string_view chick_id) {
  return const_cast<ChickRecord*>(std::as_const(*this).find_chick(chick_id));
}

const FrameRecord* DatasetManifest::find_frame(std::string_view frame_id) const {
  auto it = std::find_if(frames.begin(), frames.end(),
                         [&](const FrameRecord& f) { return f.frame_id == frame_id; });
  return it == frames.end() ? nullptr : &*it;
}

FrameRecord* DatasetManifest::find_frame(std::string_view frame_id) {
  return const_cast<FrameRecord*>(std::as_const(*this).find_frame(frame_id));
}

std::vector<FrameRecord> DatasetManifest::accepted_frames() const {
  std::vector<FrameRecord> out;
  std::copy_if(frames.begin(), frames.end(), std::back_inserter(out),
               [](const FrameRecord& f) { return f.quality == FrameQuality::kAccepted; });
  return out;
}

json DatasetManifest::to_json() const {
  json jc = json::array();
  for (const auto& c : chicks) {
    jc.push_back({{"chick_id", c.chick_id}, {"gender", to_string(c.gender)}});
  }
  json jf = json::array();
  for (const auto& f : frames) {
    jf.push_back({{"frame_id", f.frame_id},
                  {"chick_id", f.chick_id},
                  {"view_index", f.view_index},
                  {"image_ref", f.image_ref},
                  {"quality", to_string(f.quality)}});
  }
  return {{"chicks", std::move(jc)}, {"frames", std::move(jf)}, {"crop_kind", to_string(crop_kind)}};
}

DatasetManifest DatasetManifest::from_json(const json& doc) {
  DatasetManifest m;
  try {
    for (const auto& c : doc.at("chicks")) {
      m.chicks.push_back({c.at("chick_id").get<std::string>(),
                          gender_from_string(c.at("gender").get<std::string>())});
    }
    for (const auto& f : doc.at("frames")) {
      m.frames.push_back({f.at("frame_id").get<std::string>(), f.at("chick_id").get<std::string>(),
                          f.at("view_index").get<int>(), f.at("image_ref").get<std::string>(),
                          quality_from_string(f.value("quality", "unreviewed"))});
    }
    m.crop_kind = crop_kind_from_string(doc.value("crop_kind", "none"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, std::string("malformed manifest: ") + e.what());
  }
  m.validate();
  return m;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

void DatasetManifest::save(const fs::path& path) const {
  validate();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write manifest " + path.string());
  out << to_json().dump(2) << '\n';
}

int FoldPlan::fold_of(const std::string& chick_id) const {
  auto it = assignment.find(chick_id);
  if (it == assignment.end()) {
    throw Error(ErrorCode::kProtocol, "chick '" + chick_id + "' is not in the fold plan");
  }
  return it->second;
}

json FoldPlan::to_json() const { return {{"k", k}, {"assignment", assignment}}; }

FoldPlan FoldPlan::from_json(const json& doc) {
  FoldPlan p;
  p.k = doc.at("k").get<int>();
  p.assignment = doc.at("assignment").get<std::map<std::string, int>>();
  return p;
}

namespace dataset {

std::array<cv::Mat, 3> split_views(const cv::Mat& stacked) {
  if (stacked.empty() || stacked.rows % 3 != 0) {
    throw Error(ErrorCode::kInvalidInput,
                "stacked frame height " + std::to_string(stacked.rows) + " is not divisible by 3");
  }
  const int h = stacked.rows / 3;
  return {stacked.rowRange(0, h).clone(), stacked.rowRange(h, 2 * h).clone(),
          stacked.rowRange(2 * h, 3 * h).clone()};
}

FoldPlan assign_folds(const std::vector<ChickRecord>& chicks, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::kPlanning, "fold count must be at least 2");
  std::vector<std::string> by_gender[2];
  std::unordered_set<std::string> seen;
  for (const auto& c : chicks) {
    if (!seen.insert(c.chick_id).second) {
      throw Error(ErrorCode::kPlanning, "duplicate chick_id '" + c.chick_id + "'");
    }
    by_gender[c.gender == Gender::kMale ? 1 : 0].push_back(c.chick_id);
  }

  FoldPlan plan;
  plan.k = k;
  std::mt19937_64 rng(seed);
  for (auto& ids : by_gender) {
    if (ids.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorCode::kPlanning, "need at least " + std::to_string(k) +
                                            " chick ids per gender, have " +
                                            std::to_string(ids.size()));
    }
    // Input order must not leak into the plan.
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      plan.assignment[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
  }
  return plan;
}

double blur_score(const cv::Mat& image) {
  if (image.empty()) throw Error(ErrorCode::kInvalidInput, "blur score of an empty image");
  cv::Mat gray;
  if (image.channels() == 3) {
    cv::cvtColor(image, gray, cv::COLOR_BGR2GRAY);
  } else if (image.channels() == 4) {
    cv::cvtColor(image, gray, cv::COLOR_BGRA2GRAY);
  } else {
    gray = image;
  }
  cv::Mat lap;
  cv::Laplacian(gray, lap, CV_64F);
  cv::Scalar mean, stddev;
  cv::meanStdDev(lap, mean, stddev);
  return stddev[0] * stddev[0];
}

std::vector<std::string> sample_frames(const DatasetManifest& manifest, std::size_t count,
                                       std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& f : manifest.frames) {
    if (f.quality != FrameQuality::kRejected) ids.push_back(f.frame_id);
  }
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(std::min(count, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

struct LabelRow {
  std::string chick_id;
  Gender gender;
};

std::unordered_map<std::string, LabelRow> read_labels(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorCode::kIo, "cannot open labels " + csv.string());
  std::unordered_map<std::string, LabelRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("video_id", 0) == 0) continue;
    }
    std::stringstream ss(line);
    std::string video, chick, gender;
    if (!std::getline(ss, video, ',') || !std::getline(ss, chick, ',') ||
        !std::getline(ss, gender, ',')) {
      throw Error(ErrorCode::kInvalidInput, "bad labels row: " + line);
    }
    rows[video] = {chick, gender_from_string(gender)};
  }
  return rows;
}

}  // namespace

DatasetManifest ingest(const IngestOptions& options) {
  if (!fs::is_directory(options.raw_dir)) {
    throw Error(ErrorCode::kIo, "raw frame directory not found: " + options.raw_dir.string());
  }
  const auto labels = read_labels(options.labels_csv);
  static const std::regex kFrameName(R"(^(.+)_(\d+)\.png$)");

  std::vector<fs::path> raw;
  for (const auto& entry : fs::directory_iterator(options.raw_dir)) {
    if (entry.is_regular_file() && std::regex_match(entry.path().filename().string(), kFrameName)) {
      raw.push_back(entry.path());
    }
  }
  std::sort(raw.begin(), raw.end());

  DatasetManifest m;
  std::set<std::string> chick_seen;
  fs::create_directories(options.out_dir / "views");
  for (const auto& path : raw) {
    std::smatch match;
    const std::string name = path.filename().string();
    std::regex_match(name, match, kFrameName);
    const std::string video = match[1];
    auto it = labels.find(video);
    if (it == labels.end()) {
      throw Error(ErrorCode::kInvalidInput, "video '" + video + "' has no row in the labels file");
    }
    if (chick_seen.insert(it->second.chick_id).second) {
      m.chicks.push_back({it->second.chick_id, it->second.gender});
    }
    const cv::Mat stacked = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (stacked.empty()) throw Error(ErrorCode::kIo, "cannot decode " + path.string());
    const auto views = split_views(stacked);
    const std::string stem = path.stem().string();
    for (int v = 0; v < 3; ++v) {
      const std::string frame_id = stem + "_v" + std::to_string(v);
      const std::string ref = "views/" + frame_id + ".png";
      if (!cv::imwrite((options.out_dir / ref).string(), views[v])) {
        throw Error(ErrorCode::kIo, "cannot write " + ref);
      }
      m.frames.push_back({frame_id, it->second.chick_id, v, ref, options.initial_quality});

      const fs::path ann_src = options.raw_dir / (frame_id + ".json");
      if (fs::exists(ann_src)) {
        FaceAnnotation ann = labelme::load(ann_src);
        ann.image_path = "../" + ref;
        ann.image_width = views[v].cols;
        ann.image_height = views[v].rows;
        labelme::save(ann, options.out_dir / "annotations" / (frame_id + ".json"));
      }
    }
  }
  m.save(options.out_dir / "manifest.json");
  return m;
}

}  // namespace dataset
}  // namespace chickface
