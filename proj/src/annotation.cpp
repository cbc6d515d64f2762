// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include <sqlite3.h>
#include <zlib.h>

#include <opencv2/imgcodecs.hpp>

#include "chickface/error.hpp"
#include "chickface/nn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace chickface {

namespace {

constexpr std::array<std::string_view, 5> kStatusNames = {"unlabeled", "predicted", "revised",
                                                          "accepted", "rejected_quality"};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Minimal RAII statement wrapper. Columns and parameters are 0-based for
// reads and 1-based for binds, as in the C API.
class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw Error(ErrorCode::kIo, std::string("sqlite prepare: ") + sqlite3_errmsg(db));
    }
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& v) {
    sqlite3_bind_text(stmt_, i, v.c_str(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(stmt_, i, v);
    return *this;
  }
  Stmt& bind(int i, int v) { return bind(i, static_cast<std::int64_t>(v)); }
  Stmt& bind(int i, const std::optional<std::string>& v) {
    if (v) return bind(i, *v);
    sqlite3_bind_null(stmt_, i);
    return *this;
  }

  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw Error(ErrorCode::kIo, std::string("sqlite: ") + sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }

  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }
  bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }
  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? std::string(reinterpret_cast<const char*>(p)) : std::string();
  }
  std::optional<std::string> opt_text(int col) const {
    if (is_null(col)) return std::nullopt;
    return text(col);
  }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown";
    sqlite3_free(err);
    throw Error(ErrorCode::kIo, "sqlite: " + msg);
  }
}

// Commits on success, rolls back if an exception escapes.
class Transaction {
 public:
  explicit Transaction(sqlite3* db) : db_(db) { exec(db_, "BEGIN IMMEDIATE"); }
  ~Transaction() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    exec(db_, "COMMIT");
    done_ = true;
  }

 private:
  sqlite3* db_;
  bool done_ = false;
};

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS tasks (
  task_id TEXT PRIMARY KEY,
  frame_id TEXT NOT NULL UNIQUE,
  status TEXT NOT NULL,
  round INTEGER NOT NULL DEFAULT 0,
  done_round INTEGER,
  seeded INTEGER NOT NULL DEFAULT 0,
  draft_box TEXT,
  draft_keypoints TEXT,
  revised_box TEXT,
  revised_keypoints TEXT,
  editor TEXT,
  claimed_by TEXT,
  created_at TEXT NOT NULL,
  updated_at TEXT NOT NULL,
  predicted_seq INTEGER,
  version INTEGER NOT NULL DEFAULT 1
);
CREATE TABLE IF NOT EXISTS audit (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  at TEXT NOT NULL,
  task_id TEXT,
  action TEXT NOT NULL,
  editor TEXT,
  version INTEGER,
  snapshot TEXT NOT NULL
);
CREATE TRIGGER IF NOT EXISTS audit_no_update BEFORE UPDATE ON audit
  BEGIN SELECT RAISE(ABORT, 'audit log is append-only'); END;
CREATE TRIGGER IF NOT EXISTS audit_no_delete BEFORE DELETE ON audit
  BEGIN SELECT RAISE(ABORT, 'audit log is append-only'); END;
CREATE TABLE IF NOT EXISTS rounds (
  round INTEGER PRIMARY KEY,
  detector_version TEXT NOT NULL DEFAULT '',
  keypoints_version TEXT NOT NULL DEFAULT '',
  keypoints_model TEXT,
  opened_at TEXT NOT NULL
);
)sql";

constexpr const char* kTaskColumns =
    "task_id, frame_id, status, round, draft_box, draft_keypoints, revised_box, revised_keypoints, "
    "editor, created_at, updated_at, version";

std::optional<std::string> dump_opt_box(const std::optional<BoundingBox>& b) {
  if (!b) return std::nullopt;
  return labelme::box_to_json(*b).dump();
}

std::optional<std::string> dump_opt_kps(const std::optional<KeypointSet>& k) {
  if (!k) return std::nullopt;
  return labelme::keypoints_to_json(*k).dump();
}

AnnotationTask read_task(const Stmt& s) {
  AnnotationTask t;
  t.task_id = s.text(0);
  t.frame_id = s.text(1);
  t.status = task_status_from_string(s.text(2));
  t.round = static_cast<int>(s.integer(3));
  if (!s.is_null(4)) t.draft_box = labelme::box_from_json(json::parse(s.text(4)));
  if (!s.is_null(5)) t.draft_keypoints = labelme::keypoints_from_json(json::parse(s.text(5)));
  if (!s.is_null(6)) t.revised_box = labelme::box_from_json(json::parse(s.text(6)));
  if (!s.is_null(7)) t.revised_keypoints = labelme::keypoints_from_json(json::parse(s.text(7)));
  t.editor = s.opt_text(8);
  t.created_at = s.text(9);
  t.updated_at = s.text(10);
  t.version = s.integer(11);
  return t;
}

void write_task(sqlite3* db, const AnnotationTask& t) {
  Stmt s(db,
         "UPDATE tasks SET status=?1, round=?2, draft_box=?3, draft_keypoints=?4, revised_box=?5, "
         "revised_keypoints=?6, editor=?7, updated_at=?8, version=?9 WHERE task_id=?10");
  s.bind(1, std::string(to_string(t.status)))
      .bind(2, t.round)
      .bind(3, dump_opt_box(t.draft_box))
      .bind(4, dump_opt_kps(t.draft_keypoints))
      .bind(5, dump_opt_box(t.revised_box))
      .bind(6, dump_opt_kps(t.revised_keypoints))
      .bind(7, t.editor)
      .bind(8, t.updated_at)
      .bind(9, t.version)
      .bind(10, t.task_id)
      .run();
}

void append_audit(sqlite3* db, const std::string& at, const std::optional<std::string>& task_id,
                  const std::string& action, const std::optional<std::string>& editor,
                  std::int64_t version, const json& snapshot) {
  Stmt s(db, "INSERT INTO audit (at, task_id, action, editor, version, snapshot) VALUES (?1,?2,?3,?4,?5,?6)");
  s.bind(1, at).bind(2, task_id).bind(3, action).bind(4, editor).bind(5, version).bind(6, snapshot.dump());
  s.run();
}

std::string task_id_for(const std::string& frame_id) { return "t_" + frame_id; }

cv::Rect face_rect(const BoundingBox& box, cv::Size size) {
  const int x0 = std::clamp(static_cast<int>(std::floor(box.x)), 0, size.width);
  const int y0 = std::clamp(static_cast<int>(std::floor(box.y)), 0, size.height);
  const int x1 = std::clamp(static_cast<int>(std::ceil(box.right())), 0, size.width);
  const int y1 = std::clamp(static_cast<int>(std::ceil(box.bottom())), 0, size.height);
  return {x0, y0, std::max(0, x1 - x0), std::max(0, y1 - y0)};
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

std::string_view to_string(TaskStatus s) { return kStatusNames[static_cast<std::size_t>(s)]; }

TaskStatus task_status_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kStatusNames.size(); ++i) {
    if (kStatusNames[i] == s) return static_cast<TaskStatus>(i);
  }
  throw Error(ErrorCode::kInvalidInput, "unknown task status '" + std::string(s) + "'");
}

json AnnotationTask::to_json() const {
  auto opt_box = [](const std::optional<BoundingBox>& b) {
    return b ? labelme::box_to_json(*b) : json(nullptr);
  };
  auto opt_kps = [](const std::optional<KeypointSet>& k) {
    return k ? labelme::keypoints_to_json(*k) : json(nullptr);
  };
  return {{"task_id", task_id},
          {"frame_id", frame_id},
          {"status", to_string(status)},
          {"round", round},
          {"draft_box", opt_box(draft_box)},
          {"draft_keypoints", opt_kps(draft_keypoints)},
          {"revised_box", opt_box(revised_box)},
          {"revised_keypoints", opt_kps(revised_keypoints)},
          {"editor", editor ? json(*editor) : json(nullptr)},
          {"created_at", created_at},
          {"updated_at", updated_at},
          {"version", version}};
}

json AnnotationRound::to_json() const {
  return {{"round", round},
          {"model_versions",
           {{"detector", model_versions.detector}, {"keypoints", model_versions.keypoints}}},
          {"counts",
           {{"seeded", counts.seeded},
            {"predicted", counts.predicted},
            {"revised", counts.revised},
            {"accepted", counts.accepted},
            {"rejected", counts.rejected}}},
          {"opened_at", opened_at}};
}

json AdvanceResult::to_json() const {
  json j = {{"advanced", advanced}, {"round", round.to_json()}};
  if (!warning.empty()) j["warning"] = warning;
  return j;
}

json JobStatus::to_json() const {
  json j = {{"state", state}};
  if (!result.is_null()) j["result"] = result;
  if (!error.empty()) j["error"] = error;
  return j;
}

namespace annotation {

bool transition_allowed(TaskStatus from, TaskStatus to) {
  switch (from) {
    case TaskStatus::kUnlabeled:
      return to == TaskStatus::kPredicted;
    case TaskStatus::kPredicted:
    case TaskStatus::kRevised:
      return to == TaskStatus::kRevised || to == TaskStatus::kAccepted ||
             to == TaskStatus::kRejectedQuality;
    case TaskStatus::kAccepted:
    case TaskStatus::kRejectedQuality:
      return false;
  }
  return false;
}

std::string zip_store(const std::map<std::string, std::string>& files) {
  constexpr std::uint16_t kDosTime = 0;
  constexpr std::uint16_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
  std::string out;
  std::string central;
  for (const auto& [name, data] : files) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
    const auto offset = static_cast<std::uint32_t>(out.size());
    const auto size = static_cast<std::uint32_t>(data.size());
    const auto name_len = static_cast<std::uint16_t>(name.size());

    put_u32(out, 0x04034b50);
    put_u16(out, 20);
    put_u16(out, 0);
    put_u16(out, 0);
    put_u16(out, kDosTime);
    put_u16(out, kDosDate);
    put_u32(out, crc);
    put_u32(out, size);
    put_u32(out, size);
    put_u16(out, name_len);
    put_u16(out, 0);
    out += name;
    out += data;

    put_u32(central, 0x02014b50);
    put_u16(central, 20);
    put_u16(central, 20);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, kDosTime);
    put_u16(central, kDosDate);
    put_u32(central, crc);
    put_u32(central, size);
    put_u32(central, size);
    put_u16(central, name_len);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u16(central, 0);
    put_u32(central, 0);
    put_u32(central, offset);
    central += name;
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  put_u32(out, 0x06054b50);
  put_u16(out, 0);
  put_u16(out, 0);
  put_u16(out, static_cast<std::uint16_t>(files.size()));
  put_u16(out, static_cast<std::uint16_t>(files.size()));
  put_u32(out, static_cast<std::uint32_t>(central.size()));
  put_u32(out, cd_offset);
  put_u16(out, 0);
  return out;
}

}  // namespace annotation

std::string ExportBundle::to_zip() const { return annotation::zip_store(files); }

Drafter make_model_drafter(DetectorConfig detector_cfg, std::shared_ptr<DetectorModel> detector,
                           std::shared_ptr<KeypointModel> keypoint_model,
                           KeypointModelConfig keypoint_cfg) {
  if (!detector) throw Error(ErrorCode::kModel, "drafter needs a detector model");
  return [=](const cv::Mat& view) {
    Draft d;
    const auto det = detection::detect_face(view, detector_cfg, *detector);
    if (!det) return d;
    d.box = det->box;
    if (keypoint_model) {
      const cv::Rect r = face_rect(det->box, view.size());
      if (r.area() > 0) {
        d.keypoints =
            keypoints::predict_keypoints(view(r), *keypoint_model, keypoint_cfg).translated(r.x, r.y);
      }
    }
    return d;
  };
}

// --- service ----------------------------------------------------------------

AnnotationService::AnnotationService(AnnotationServiceOptions options)
    : options_(std::move(options)) {
  if (!options_.clock) options_.clock = utc_now;
  manifest_ = DatasetManifest::load(options_.manifest_path);
  if (options_.db_path.has_parent_path()) fs::create_directories(options_.db_path.parent_path());
  if (sqlite3_open(options_.db_path.string().c_str(), &db_) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw Error(ErrorCode::kIo, "cannot open annotation store: " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  init_schema();
  register_frames();
}

AnnotationService::~AnnotationService() {
  if (job_thread_.joinable()) job_thread_.join();
  sqlite3_close(db_);
}

std::string AnnotationService::now() const { return options_.clock(); }

void AnnotationService::init_schema() {
  std::lock_guard lock(mu_);
  std::int64_t version = 0;
  {
    Stmt v(db_, "PRAGMA user_version");
    v.step();
    version = v.integer(0);
  }
  if (version > kSchemaVersion) {
    throw Error(ErrorCode::kIo, "annotation store schema " + std::to_string(version) +
                                    " is newer than supported " + std::to_string(kSchemaVersion));
  }
  exec(db_, "PRAGMA journal_mode=WAL");
  exec(db_, kSchema);
  exec(db_, ("PRAGMA user_version=" + std::to_string(kSchemaVersion)).c_str());
  Stmt r(db_, "INSERT OR IGNORE INTO rounds (round, opened_at) VALUES (0, ?1)");
  r.bind(1, now()).run();
}

void AnnotationService::register_frames() {
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  const std::string at = now();
  for (const auto& f : manifest_.frames) {
    Stmt s(db_,
           "INSERT OR IGNORE INTO tasks (task_id, frame_id, status, round, created_at, updated_at) "
           "VALUES (?1, ?2, 'unlabeled', 0, ?3, ?3)");
    s.bind(1, task_id_for(f.frame_id)).bind(2, f.frame_id).bind(3, at).run();
  }
  tx.commit();
}

fs::path AnnotationService::frame_image_path(const std::string& frame_id) const {
  const FrameRecord* f = manifest_.find_frame(frame_id);
  if (!f) throw Error(ErrorCode::kUnknownTask, "unknown frame '" + frame_id + "'");
  return options_.manifest_path.parent_path() / f->image_ref;
}

cv::Size AnnotationService::image_size(const std::string& frame_id) const {
  std::lock_guard lock(mu_);
  auto it = size_cache_.find(frame_id);
  if (it != size_cache_.end()) return it->second;
  const cv::Mat img = cv::imread(frame_image_path(frame_id).string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw Error(ErrorCode::kIo, "cannot decode image for frame " + frame_id);
  size_cache_[frame_id] = img.size();
  return img.size();
}

void AnnotationService::validate_geometry(const std::string& frame_id, const BoundingBox& box,
                                          const KeypointSet& kps) const {
  const cv::Size size = image_size(frame_id);
  const bool finite = std::isfinite(box.x) && std::isfinite(box.y) && std::isfinite(box.w) &&
                      std::isfinite(box.h);
  if (!finite || !box.valid() || box.x < 0.0 || box.y < 0.0 || box.right() > size.width ||
      box.bottom() > size.height) {
    throw Error(ErrorCode::kInvalidGeometry, "box must be non-empty and inside the image");
  }
  if (!kps.valid(size)) {
    throw Error(ErrorCode::kInvalidGeometry, "visible keypoints must lie inside the image");
  }
}

void AnnotationService::save_manifest() { manifest_.save(options_.manifest_path); }

SeedResult AnnotationService::seed_round(const std::vector<std::string>& frame_ids,
                                         const std::map<std::string, FaceAnnotation>& manual) {
  std::lock_guard lock(mu_);
  SeedResult result;
  Transaction tx(db_);
  std::set<std::string> seen;
  for (const auto& fid : frame_ids) {
    if (!seen.insert(fid).second) continue;
    try {
      if (!manifest_.find_frame(fid)) throw Error(ErrorCode::kUnknownTask, "unknown frame '" + fid + "'");
      auto ann = manual.find(fid);
      if (ann == manual.end()) throw Error(ErrorCode::kInvalidGeometry, "no manual annotation");
      if (!ann->second.box) throw Error(ErrorCode::kInvalidGeometry, "manual annotation has no box");
      validate_geometry(fid, *ann->second.box, ann->second.keypoints);

      AnnotationTask t = get_task(task_id_for(fid));
      if (t.status == TaskStatus::kAccepted && t.round == 0) continue;  // already seeded
      if (t.status != TaskStatus::kUnlabeled) {
        throw Error(ErrorCode::kIllegalTransition,
                    "frame already in status " + std::string(to_string(t.status)));
      }
      t.status = TaskStatus::kAccepted;
      t.round = 0;
      t.revised_box = ann->second.box;
      t.revised_keypoints = ann->second.keypoints;
      t.editor = "seed";
      t.updated_at = now();
      ++t.version;
      write_task(db_, t);
      Stmt s(db_, "UPDATE tasks SET seeded=1, done_round=0 WHERE task_id=?1");
      s.bind(1, t.task_id).run();
      append_audit(db_, t.updated_at, t.task_id, "seed", t.editor, t.version, t.to_json());
    } catch (const Error& e) {
      result.rejected.push_back({fid, e.code(), e.what()});
    }
  }
  tx.commit();
  result.round = rounds().front();
  return result;
}

ProposeResult AnnotationService::propose(const std::vector<std::string>& frame_ids,
                                         const Drafter& drafter) {
  const int round = current_round();
  if (round == 0) {
    throw Error(ErrorCode::kProtocol, "round 0 holds manual seeds only; advance before proposing");
  }
  ProposeResult result;
  std::set<std::string> seen;
  for (const auto& fid : frame_ids) {
    if (!seen.insert(fid).second) continue;
    try {
      AnnotationTask t = get_task(task_id_for(fid));
      if (t.status != TaskStatus::kUnlabeled) {
        throw Error(ErrorCode::kIllegalTransition,
                    "frame already in status " + std::string(to_string(t.status)));
      }
      const cv::Mat view = cv::imread(frame_image_path(fid).string(), cv::IMREAD_COLOR);
      if (view.empty()) throw Error(ErrorCode::kIo, "cannot decode image for frame " + fid);
      const Draft d = drafter(view);

      std::lock_guard lock(mu_);
      Transaction tx(db_);
      AnnotationTask cur = get_task(t.task_id);
      if (cur.version != t.version) throw Error(ErrorCode::kVersionConflict, "task changed while drafting");
      cur.status = TaskStatus::kPredicted;
      cur.round = round;
      cur.draft_box = d.box;
      cur.draft_keypoints = d.keypoints;
      cur.updated_at = now();
      ++cur.version;
      write_task(db_, cur);
      Stmt s(db_, "UPDATE tasks SET predicted_seq=(SELECT COALESCE(MAX(predicted_seq),0)+1 FROM tasks) "
                  "WHERE task_id=?1");
      s.bind(1, cur.task_id).run();
      append_audit(db_, cur.updated_at, cur.task_id, "propose", std::nullopt, cur.version, cur.to_json());
      tx.commit();
      result.tasks.push_back(cur);
    } catch (const Error& e) {
      result.skipped.push_back({fid, e.code(), e.what()});
    }
  }
  return result;
}

AnnotationTask AnnotationService::submit_correction(const std::string& task_id,
                                                    const Correction& c) {
  std::lock_guard lock(mu_);
  Transaction tx(db_);
  AnnotationTask t = get_task(task_id);
  if (c.expected_version && *c.expected_version != t.version) {
    throw Error(ErrorCode::kVersionConflict, "task is at version " + std::to_string(t.version) +
                                                 ", submission expected " +
                                                 std::to_string(*c.expected_version));
  }
  const TaskStatus target = c.action == CorrectionAction::kRevise   ? TaskStatus::kRevised
                            : c.action == CorrectionAction::kAccept ? TaskStatus::kAccepted
                                                                    : TaskStatus::kRejectedQuality;
  if (!annotation::transition_allowed(t.status, target)) {
    throw Error(ErrorCode::kIllegalTransition, "cannot move task from " +
                                                   std::string(to_string(t.status)) + " to " +
                                                   std::string(to_string(target)));
  }

  const std::string at = now();
  if (target == TaskStatus::kRejectedQuality) {
    t.revised_box.reset();
    t.revised_keypoints.reset();
    FrameRecord* f = manifest_.find_frame(t.frame_id);
    f->quality = FrameQuality::kRejected;
    save_manifest();
  } else {
    const auto box = c.box ? c.box : (t.revised_box ? t.revised_box : t.draft_box);
    const auto kps = c.keypoints ? c.keypoints : (t.revised_keypoints ? t.revised_keypoints : t.draft_keypoints);
    if (!box || !kps) throw Error(ErrorCode::kInvalidGeometry, "a box and seven keypoints are required");
    validate_geometry(t.frame_id, *box, *kps);
    t.revised_box = box;
    t.revised_keypoints = kps;
  }
  t.status = target;
  t.editor = c.editor.empty() ? std::nullopt : std::optional<std::string>(c.editor);
  t.updated_at = at;
  ++t.version;
  write_task(db_, t);
  if (target != TaskStatus::kRejectedQuality) {
    Stmt s(db_, "UPDATE tasks SET done_round=(SELECT MAX(round) FROM rounds) WHERE task_id=?1");
    s.bind(1, t.task_id).run();
  }
  append_audit(db_, at, t.task_id, std::string(to_string(target)), t.editor, t.version, t.to_json());

  if (c.gender_confirmation) {
    const FrameRecord* f = manifest_.find_frame(t.frame_id);
    ChickRecord* chick = manifest_.find_chick(f->chick_id);
    if (!chick) throw Error(ErrorCode::kInvalidInput, "frame has no chick record");
    const Gender before = chick->gender;
    chick->gender = *c.gender_confirmation;
    save_manifest();
    append_audit(db_, at, t.task_id, "gender_confirmation", t.editor, t.version,
                 {{"chick_id", chick->chick_id},
                  {"before", to_string(before)},
                  {"after", to_string(chick->gender)}});
  }
  tx.commit();
  return t;
}

AnnotationTask AnnotationService::next_task(const std::string& editor) {
  std::lock_guard lock(mu_);
  Stmt s(db_, (std::string("SELECT ") + kTaskColumns +
               " FROM tasks WHERE status='predicted' AND (claimed_by IS NULL OR claimed_by=?1) "
               "ORDER BY predicted_seq, task_id LIMIT 1")
                  .c_str());
  s.bind(1, editor);
  if (!s.step()) throw Error(ErrorCode::kNoTasks, "no predicted tasks left");
  AnnotationTask t = read_task(s);
  if (!editor.empty()) {
    Stmt c(db_, "UPDATE tasks SET claimed_by=?1 WHERE task_id=?2");
    c.bind(1, editor).bind(2, t.task_id).run();
  }
  return t;
}

AnnotationTask AnnotationService::get_task(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, (std::string("SELECT ") + kTaskColumns + " FROM tasks WHERE task_id=?1").c_str());
  s.bind(1, task_id);
  if (!s.step()) throw Error(ErrorCode::kUnknownTask, "unknown task '" + task_id + "'");
  return read_task(s);
}

std::optional<AnnotationTask> AnnotationService::task_for_frame(const std::string& frame_id) const {
  std::lock_guard lock(mu_);
  Stmt s(db_, (std::string("SELECT ") + kTaskColumns + " FROM tasks WHERE frame_id=?1").c_str());
  s.bind(1, frame_id);
  if (!s.step()) return std::nullopt;
  return read_task(s);
}

int AnnotationService::current_round() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT MAX(round) FROM rounds");
  s.step();
  return static_cast<int>(s.integer(0));
}

std::vector<AnnotationRound> AnnotationService::rounds() const {
  std::lock_guard lock(mu_);
  std::vector<AnnotationRound> out;
  Stmt s(db_, "SELECT round, detector_version, keypoints_version, opened_at FROM rounds ORDER BY round");
  while (s.step()) {
    AnnotationRound r;
    r.round = static_cast<int>(s.integer(0));
    r.model_versions = {s.text(1), s.text(2)};
    r.opened_at = s.text(3);
    out.push_back(r);
  }
  for (auto& r : out) {
    Stmt c(db_,
           "SELECT SUM(seeded), SUM(seeded=0 AND status<>'unlabeled'), SUM(status='revised'), "
           "SUM(status='accepted'), SUM(status='rejected_quality') FROM tasks WHERE round=?1 "
           "AND (seeded=1 OR status<>'unlabeled')");
    c.bind(1, r.round);
    c.step();
    r.counts = {static_cast<int>(c.integer(0)), static_cast<int>(c.integer(1)),
                static_cast<int>(c.integer(2)), static_cast<int>(c.integer(3)),
                static_cast<int>(c.integer(4))};
  }
  return out;
}

ExportBundle AnnotationService::export_ground_truth(const std::set<int>& rounds) const {
  std::vector<AnnotationTask> tasks;
  {
    std::lock_guard lock(mu_);
    Stmt s(db_, (std::string("SELECT ") + kTaskColumns +
                 " FROM tasks WHERE status IN ('revised','accepted') ORDER BY frame_id")
                    .c_str());
    while (s.step()) {
      AnnotationTask t = read_task(s);
      if (rounds.empty() || rounds.count(t.round)) tasks.push_back(std::move(t));
    }
  }

  ExportBundle bundle;
  DatasetManifest slice;
  std::set<std::string> chick_ids;
  for (const auto& t : tasks) {
    const FrameRecord* f = manifest_.find_frame(t.frame_id);
    const cv::Size size = image_size(t.frame_id);
    FaceAnnotation ann;
    ann.image_path = f->image_ref;
    ann.image_width = size.width;
    ann.image_height = size.height;
    ann.box = t.revised_box;
    ann.keypoints = *t.revised_keypoints;
    bundle.files["labelme/" + t.frame_id + ".json"] = labelme::to_json(ann).dump(2) + "\n";
    bundle.files["detector/" + t.frame_id + ".txt"] =
        detection::training_export_line(*t.revised_box, size) + "\n";
    slice.frames.push_back(*f);
    chick_ids.insert(f->chick_id);
    ++bundle.records;
  }
  for (const auto& c : manifest_.chicks) {
    if (chick_ids.count(c.chick_id)) slice.chicks.push_back(c);
  }
  bundle.files["manifest_slice.json"] = slice.to_json().dump(2) + "\n";
  return bundle;
}

AdvanceResult AnnotationService::advance_round() {
  std::unique_lock busy(advance_mu_, std::try_to_lock);
  if (!busy.owns_lock()) throw Error(ErrorCode::kJobRunning, "a retraining job is already running");

  const int round = current_round();
  AdvanceResult result;
  std::vector<AnnotationTask> done;
  int fresh = 0;
  {
    std::lock_guard lock(mu_);
    Stmt s(db_, "SELECT COUNT(*) FROM tasks WHERE status IN ('revised','accepted') AND done_round=?1");
    s.bind(1, round);
    s.step();
    fresh = static_cast<int>(s.integer(0));
  }
  if (fresh == 0) {
    result.round = rounds().back();
    result.warning = "no new revised or accepted tasks in round " + std::to_string(round) +
                     "; round unchanged";
    return result;
  }

  const ExportBundle all = export_ground_truth();
  std::vector<KeypointSample> samples;
  {
    std::lock_guard lock(mu_);
    Stmt s(db_, (std::string("SELECT ") + kTaskColumns +
                 " FROM tasks WHERE status IN ('revised','accepted') ORDER BY frame_id")
                    .c_str());
    while (s.step()) done.push_back(read_task(s));
  }
  for (const auto& t : done) {
    const cv::Mat view = cv::imread(frame_image_path(t.frame_id).string(), cv::IMREAD_COLOR);
    if (view.empty()) throw Error(ErrorCode::kIo, "cannot decode image for frame " + t.frame_id);
    const cv::Rect r = face_rect(*t.revised_box, view.size());
    if (r.area() == 0) continue;
    samples.push_back({view(r).clone(), t.revised_keypoints->translated(-r.x, -r.y)});
  }
  auto trained = keypoints::train_keypoint_model(samples, options_.keypoint_config,
                                                 options_.keypoint_training);
  const fs::path model_path =
      options_.work_dir / "models" / ("keypoints_round" + std::to_string(round + 1) + ".ckfm");
  trained.model.save(model_path);

  const std::string detector_version = nn::sha256_hex(all.to_zip());
  const std::string keypoints_version = nn::sha256_hex(read_file(model_path));
  {
    std::lock_guard lock(mu_);
    Transaction tx(db_);
    Stmt s(db_, "INSERT INTO rounds (round, detector_version, keypoints_version, keypoints_model, opened_at) "
                "VALUES (?1, ?2, ?3, ?4, ?5)");
    s.bind(1, round + 1).bind(2, detector_version).bind(3, keypoints_version)
        .bind(4, model_path.string()).bind(5, now()).run();
    append_audit(db_, now(), std::nullopt, "advance_round", std::nullopt, round + 1,
                 {{"round", round + 1},
                  {"training_samples", samples.size()},
                  {"detector_version", detector_version},
                  {"keypoints_version", keypoints_version}});
    tx.commit();
  }
  result.advanced = true;
  result.round = rounds().back();
  return result;
}

void AnnotationService::start_advance() {
  std::lock_guard lock(job_mu_);
  if (job_.state == "running") throw Error(ErrorCode::kJobRunning, "a retraining job is already running");
  if (job_thread_.joinable()) job_thread_.join();
  job_ = JobStatus{"running", nullptr, ""};
  job_thread_ = std::thread([this] {
    JobStatus done;
    try {
      done.result = advance_round().to_json();
      done.state = "succeeded";
    } catch (const std::exception& e) {
      done.state = "failed";
      done.error = e.what();
    }
    std::lock_guard l(job_mu_);
    job_ = std::move(done);
  });
}

JobStatus AnnotationService::job_status() const {
  std::lock_guard lock(job_mu_);
  return job_;
}

void AnnotationService::wait_for_job() {
  std::thread t;
  {
    std::lock_guard lock(job_mu_);
    t = std::move(job_thread_);
  }
  if (t.joinable()) t.join();
}

std::optional<fs::path> AnnotationService::current_keypoint_model() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT keypoints_model FROM rounds ORDER BY round DESC LIMIT 1");
  if (!s.step() || s.is_null(0)) return std::nullopt;
  return fs::path(s.text(0));
}

std::int64_t AnnotationService::audit_length() const {
  std::lock_guard lock(mu_);
  Stmt s(db_, "SELECT COUNT(*) FROM audit");
  s.step();
  return s.integer(0);
}

json AnnotationService::audit_log() const {
  std::lock_guard lock(mu_);
  json out = json::array();
  Stmt s(db_, "SELECT seq, at, task_id, action, editor, version, snapshot FROM audit ORDER BY seq");
  while (s.step()) {
    const auto task = s.opt_text(2);
    const auto editor = s.opt_text(4);
    out.push_back({{"seq", s.integer(0)},
                   {"at", s.text(1)},
                   {"task_id", task ? json(*task) : json(nullptr)},
                   {"action", s.text(3)},
                   {"editor", editor ? json(*editor) : json(nullptr)},
                   {"version", s.integer(5)},
                   {"snapshot", json::parse(s.text(6))}});
  }
  return out;
}

}  // namespace chickface
