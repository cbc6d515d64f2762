// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "chickface/dataset.hpp"
#include "chickface/detection.hpp"
#include "chickface/error.hpp"
#include "chickface/geometry.hpp"
#include "chickface/keypoints.hpp"
#include "chickface/labelme.hpp"

struct sqlite3;

namespace chickface {

enum class TaskStatus { kUnlabeled, kPredicted, kRevised, kAccepted, kRejectedQuality };

std::string_view to_string(TaskStatus s);
TaskStatus task_status_from_string(std::string_view s);

struct AnnotationTask {
  std::string task_id;
  std::string frame_id;
  std::optional<BoundingBox> draft_box;
  std::optional<KeypointSet> draft_keypoints;
  std::optional<BoundingBox> revised_box;
  std::optional<KeypointSet> revised_keypoints;
  TaskStatus status = TaskStatus::kUnlabeled;
  int round = 0;  // round the task was drafted (or seeded) in
  std::optional<std::string> editor;
  std::string created_at;
  std::string updated_at;
  std::int64_t version = 1;

  nlohmann::json to_json() const;
};

struct ModelVersions {
  std::string detector;
  std::string keypoints;
};

struct RoundCounts {
  int seeded = 0;
  int predicted = 0;
  int revised = 0;
  int accepted = 0;
  int rejected = 0;
};

struct AnnotationRound {
  int round = 0;
  ModelVersions model_versions;
  RoundCounts counts;
  std::string opened_at;

  nlohmann::json to_json() const;
};

struct TaskRejection {
  std::string frame_id;
  ErrorCode code;
  std::string message;
};

struct SeedResult {
  AnnotationRound round;
  std::vector<TaskRejection> rejected;
};

/// Model output for one view. Both fields are empty when no face is found.
struct Draft {
  std::optional<BoundingBox> box;
  std::optional<KeypointSet> keypoints;
};
using Drafter = std::function<Draft(const cv::Mat& view)>;

/// Detection followed by keypoint inference on the detected face region.
/// With no keypoint model the draft carries the box alone.
Drafter make_model_drafter(DetectorConfig detector_cfg, std::shared_ptr<DetectorModel> detector,
                           std::shared_ptr<KeypointModel> keypoint_model,
                           KeypointModelConfig keypoint_cfg);

struct ProposeResult {
  std::vector<AnnotationTask> tasks;
  std::vector<TaskRejection> skipped;
};

enum class CorrectionAction { kRevise, kAccept, kRejectQuality };

struct Correction {
  CorrectionAction action = CorrectionAction::kRevise;
  std::optional<BoundingBox> box;           // falls back to the current revision, then the draft
  std::optional<KeypointSet> keypoints;
  std::optional<Gender> gender_confirmation;
  std::optional<std::int64_t> expected_version;
  std::string editor;
};

/// In-memory export: path inside the bundle -> file bytes, sorted by path.
struct ExportBundle {
  std::map<std::string, std::string> files;
  int records = 0;

  /// Store-only zip with fixed timestamps, so equal bundles give equal bytes.
  std::string to_zip() const;
};

struct AdvanceResult {
  bool advanced = false;
  AnnotationRound round;
  std::string warning;

  nlohmann::json to_json() const;
};

struct JobStatus {
  std::string state = "idle";  // idle | running | succeeded | failed
  nlohmann::json result;
  std::string error;

  nlohmann::json to_json() const;
};

struct AnnotationServiceOptions {
  std::filesystem::path db_path;
  std::filesystem::path manifest_path;
  std::filesystem::path work_dir;  // retrained models go to work_dir/models
  KeypointModelConfig keypoint_config;
  KeypointTrainOptions keypoint_training;
  std::function<std::string()> clock;  // ISO-8601 timestamps; defaults to UTC wall time
};

/// Persistent annotation cycle backed by a single SQLite file. All public
/// methods are safe to call from several threads.
class AnnotationService {
 public:
  static constexpr int kSchemaVersion = 1;

  explicit AnnotationService(AnnotationServiceOptions options);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  /// Stores valid manual annotations as accepted round-0 tasks. Frames that
  /// are already seeded are left untouched.
  SeedResult seed_round(const std::vector<std::string>& frame_ids,
                        const std::map<std::string, FaceAnnotation>& manual);

  /// Drafts unlabeled frames in the current round. Requires round >= 1,
  /// since round 0 holds manual seeds only.
  ProposeResult propose(const std::vector<std::string>& frame_ids, const Drafter& drafter);

  AnnotationTask submit_correction(const std::string& task_id, const Correction& correction);

  /// Oldest predicted task not claimed by another editor. Throws kNoTasks.
  AnnotationTask next_task(const std::string& editor);
  AnnotationTask get_task(const std::string& task_id) const;
  std::optional<AnnotationTask> task_for_frame(const std::string& frame_id) const;

  std::vector<AnnotationRound> rounds() const;
  int current_round() const;

  /// Revised and accepted tasks drafted in `rounds` (all rounds if empty).
  ExportBundle export_ground_truth(const std::set<int>& rounds = {}) const;

  /// Retrains the keypoint model on every revised/accepted task and opens the
  /// next round. No new data since the last advance is a warning, not an error.
  AdvanceResult advance_round();
  /// Runs advance_round on a background thread. Throws kJobRunning if one is active.
  void start_advance();
  JobStatus job_status() const;
  void wait_for_job();

  /// Path of the keypoint model registered for the current round, if any.
  std::optional<std::filesystem::path> current_keypoint_model() const;

  std::int64_t audit_length() const;
  /// Every audit entry in order: {seq, at, task_id, action, editor, version, snapshot}.
  nlohmann::json audit_log() const;

  const DatasetManifest& manifest() const { return manifest_; }
  std::filesystem::path frame_image_path(const std::string& frame_id) const;

 private:
  void init_schema();
  void register_frames();
  std::string now() const;
  cv::Size image_size(const std::string& frame_id) const;
  void validate_geometry(const std::string& frame_id, const BoundingBox& box,
                         const KeypointSet& kps) const;
  void save_manifest();

  AnnotationServiceOptions options_;
  DatasetManifest manifest_;
  sqlite3* db_ = nullptr;
  mutable std::recursive_mutex mu_;
  mutable std::map<std::string, cv::Size> size_cache_;

  std::mutex advance_mu_;  // at most one retraining at a time
  mutable std::mutex job_mu_;
  JobStatus job_;
  std::thread job_thread_;
};

namespace annotation {

/// Legal moves of a task's status.
bool transition_allowed(TaskStatus from, TaskStatus to);

/// Store-only zip of `files` (sorted by name, fixed DOS timestamp).
std::string zip_store(const std::map<std::string, std::string>& files);

}  // namespace annotation
}  // namespace chickface
