// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include <future>
#include <random>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>
#include <sqlite3.h>

#include "chickface/annotation.hpp"
#include "annotation_fixture.hpp"

namespace chickface {
namespace {

namespace fs = std::filesystem;
using testing::Fixture;
using testing::kClock;
using S = TaskStatus;

std::string tid(const std::string& frame) { return "t_" + frame; }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidInput;
}

void expect_revised_fields_consistent(const AnnotationTask& t) {
  const bool has = t.status == S::kRevised || t.status == S::kAccepted;
  EXPECT_EQ(t.revised_box.has_value(), has) << t.task_id;
  EXPECT_EQ(t.revised_keypoints.has_value(), has) << t.task_id;
}

// Seeds the first `seeds` frames and advances to round 1.
void open_round_one(AnnotationService& svc, const Fixture& fx, std::size_t seeds = 10) {
  svc.seed_round(fx.ids(0, seeds), fx.manual(0, seeds));
  ASSERT_TRUE(svc.advance_round().advanced);
  ASSERT_EQ(svc.current_round(), 1);
}

TEST(Seed, TenValidFramesBecomeAcceptedRoundZero) {
  Fixture fx(20);
  AnnotationService svc(fx.options());
  const SeedResult r = svc.seed_round(fx.ids(0, 10), fx.manual(0, 10));
  EXPECT_TRUE(r.rejected.empty());
  EXPECT_EQ(r.round.round, 0);
  EXPECT_EQ(r.round.counts.seeded, 10);
  EXPECT_EQ(r.round.counts.accepted, 10);
  EXPECT_EQ(r.round.counts.predicted, 0);
  for (const auto& id : fx.ids(0, 10)) {
    const AnnotationTask t = svc.get_task(tid(id));
    EXPECT_EQ(t.status, S::kAccepted);
    EXPECT_EQ(t.round, 0);
    EXPECT_EQ(*t.revised_box, *fx.truth.box);
  }
  EXPECT_EQ(svc.get_task(tid(fx.frame_ids[10])).status, S::kUnlabeled);
}

TEST(Seed, InvalidAnnotationIsListedAndRoundStillCreated) {
  Fixture fx(10);
  AnnotationService svc(fx.options());
  auto manual = fx.manual(0, 10);
  manual[fx.frame_ids[3]].box = BoundingBox{150, 150, 40, 40};  // past the 160 px edge
  const SeedResult r = svc.seed_round(fx.ids(0, 10), manual);
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].frame_id, fx.frame_ids[3]);
  EXPECT_EQ(r.rejected[0].code, ErrorCode::kInvalidGeometry);
  EXPECT_EQ(r.round.counts.accepted, 9);
  EXPECT_EQ(svc.rounds().size(), 1u);
}

TEST(Seed, ReseedingIsIdempotent) {
  Fixture fx(10);
  AnnotationService svc(fx.options());
  svc.seed_round(fx.ids(0, 10), fx.manual(0, 10));
  const auto audit = svc.audit_length();
  const SeedResult again = svc.seed_round(fx.ids(0, 10), fx.manual(0, 10));
  EXPECT_TRUE(again.rejected.empty());
  EXPECT_EQ(again.round.counts.seeded, 10);
  EXPECT_EQ(svc.audit_length(), audit);
}

TEST(Propose, RoundZeroIsForSeedsOnly) {
  Fixture fx(4);
  AnnotationService svc(fx.options());
  EXPECT_EQ(code_of([&] { svc.propose(fx.ids(0, 2), fx.stub()); }), ErrorCode::kProtocol);
}

TEST(Propose, StubOutputsAreStoredVerbatim) {
  Fixture fx(20);
  AnnotationService svc(fx.options());
  open_round_one(svc, fx);
  const ProposeResult r = svc.propose(fx.ids(10, 5), fx.stub());
  ASSERT_EQ(r.tasks.size(), 5u);
  for (const auto& t : r.tasks) {
    EXPECT_EQ(t.status, S::kPredicted);
    EXPECT_EQ(t.round, 1);
    EXPECT_EQ(*t.draft_box, *fx.truth.box);
    EXPECT_EQ(*t.draft_keypoints, fx.truth.keypoints);
    EXPECT_EQ(svc.get_task(t.task_id).to_json(), t.to_json());
    expect_revised_fields_consistent(t);
  }
}

TEST(Propose, NoFaceGivesEmptyPredictedDraft) {
  Fixture fx(12);
  AnnotationService svc(fx.options());
  open_round_one(svc, fx);
  const ProposeResult r = svc.propose({fx.frame_ids[10]}, [](const cv::Mat&) { return Draft{}; });
  ASSERT_EQ(r.tasks.size(), 1u);
  EXPECT_EQ(r.tasks[0].status, S::kPredicted);
  EXPECT_FALSE(r.tasks[0].draft_box);
  EXPECT_FALSE(r.tasks[0].draft_keypoints);
}

TEST(Propose, NonUnlabeledFramesAreSkipped) {
  Fixture fx(12);
  AnnotationService svc(fx.options());
  open_round_one(svc, fx);
  svc.propose({fx.frame_ids[10]}, fx.stub());
  svc.submit_correction(tid(fx.frame_ids[10]), {CorrectionAction::kRevise});
  const ProposeResult r = svc.propose({fx.frame_ids[10], fx.frame_ids[0], "nope"}, fx.stub());
  EXPECT_TRUE(r.tasks.empty());
  ASSERT_EQ(r.skipped.size(), 3u);
  EXPECT_EQ(r.skipped[0].code, ErrorCode::kIllegalTransition);
  EXPECT_EQ(r.skipped[1].code, ErrorCode::kIllegalTransition);
  EXPECT_EQ(r.skipped[2].code, ErrorCode::kUnknownTask);
}

TEST(Propose, DeterministicStubsGiveIdenticalDrafts) {
  Fixture fx(14);
  AnnotationService a(fx.options("a.db"));
  AnnotationService b(fx.options("b.db"));
  open_round_one(a, fx);
  open_round_one(b, fx);
  const auto ra = a.propose(fx.ids(10, 4), fx.stub());
  const auto rb = b.propose(fx.ids(10, 4), fx.stub());
  ASSERT_EQ(ra.tasks.size(), rb.tasks.size());
  for (std::size_t i = 0; i < ra.tasks.size(); ++i) EXPECT_EQ(ra.tasks[i].to_json(), rb.tasks[i].to_json());
}

TEST(ModelDrafter, DetectsThenPlacesKeypointsInFrameCoordinates) {
  Fixture fx(1);
  const cv::Size size(fx.truth.image_width, fx.truth.image_height);
  const BoundingBox box = *fx.truth.box;
  KeypointModelConfig kcfg;
  kcfg.input_width = 64;
  kcfg.input_height = 64;
  const cv::Rect r(static_cast<int>(std::floor(box.x)), static_cast<int>(std::floor(box.y)),
                   static_cast<int>(std::ceil(box.right())) - static_cast<int>(std::floor(box.x)),
                   static_cast<int>(std::ceil(box.bottom())) - static_cast<int>(std::floor(box.y)));
  auto kp = std::make_shared<GroundTruthKeypointModel>(fx.truth.keypoints.translated(-r.x, -r.y),
                                                       r.size(), kcfg);
  const Drafter d = make_model_drafter({640, 0.8, 0.5, ""},
                                       std::make_shared<GroundTruthDetector>(box, size, 640), kp, kcfg);
  const cv::Mat view = cv::imread((fx.dir / "data" / "views" / "face.png").string());
  const Draft out = d(view);
  ASSERT_TRUE(out.box);
  EXPECT_NEAR(out.box->x, box.x, 1e-9);
  ASSERT_TRUE(out.keypoints);
  for (int i = 0; i < kNumLandmarks; ++i) {
    EXPECT_NEAR(out.keypoints->points()[i].x, fx.truth.keypoints.points()[i].x, 2.5) << i;
    EXPECT_NEAR(out.keypoints->points()[i].y, fx.truth.keypoints.points()[i].y, 2.5) << i;
  }
  EXPECT_THROW(make_model_drafter({}, nullptr, nullptr, kcfg), Error);
}

class Corrections : public ::testing::Test {
 protected:
  Corrections() : fx(20), svc(fx.options()) {
    open_round_one(svc, fx);
    svc.propose(fx.ids(10, 10), fx.stub());
  }
  Fixture fx;
  AnnotationService svc;
};

TEST_F(Corrections, MovingOneKeypointRevisesAndAudits) {
  const std::string id = tid(fx.frame_ids[10]);
  KeypointSet kps = fx.truth.keypoints;
  const Point2 eye = kps.point(Landmark::kLeftEye);
  kps.set(Landmark::kLeftEye, {eye.x + 5, eye.y});
  const auto before = svc.audit_length();
  Correction c;
  c.keypoints = kps;
  c.editor = "ana";
  c.expected_version = svc.get_task(id).version;
  const AnnotationTask t = svc.submit_correction(id, c);
  EXPECT_EQ(t.status, S::kRevised);
  EXPECT_EQ(*t.revised_keypoints, kps);
  EXPECT_EQ(*t.revised_box, *fx.truth.box);  // falls back to the draft
  EXPECT_EQ(t.editor, "ana");
  EXPECT_EQ(t.updated_at, kClock);
  EXPECT_EQ(svc.audit_length(), before + 1);
}

TEST_F(Corrections, ErrorsHaveDistinctCodes) {
  const std::string id = tid(fx.frame_ids[11]);
  svc.submit_correction(id, {CorrectionAction::kAccept});
  const ErrorCode illegal = code_of([&] { svc.submit_correction(id, {CorrectionAction::kRevise}); });
  const ErrorCode unknown = code_of([&] { svc.submit_correction("t_missing", {}); });
  Correction bad;
  bad.box = BoundingBox{-5, 0, 10, 10};
  const ErrorCode geometry = code_of([&] { svc.submit_correction(tid(fx.frame_ids[12]), bad); });
  Correction stale;
  stale.expected_version = 1;
  const ErrorCode conflict = code_of([&] { svc.submit_correction(tid(fx.frame_ids[13]), stale); });
  EXPECT_EQ(illegal, ErrorCode::kIllegalTransition);
  EXPECT_EQ(unknown, ErrorCode::kUnknownTask);
  EXPECT_EQ(geometry, ErrorCode::kInvalidGeometry);
  EXPECT_EQ(conflict, ErrorCode::kVersionConflict);
  // Failed submissions leave the task alone.
  EXPECT_EQ(svc.get_task(tid(fx.frame_ids[12])).status, S::kPredicted);
}

TEST_F(Corrections, KeypointOutsideImageIsInvalidGeometry) {
  KeypointSet kps = fx.truth.keypoints;
  kps.set(Landmark::kMiddleBeak, {400, 10});
  Correction c;
  c.keypoints = kps;
  EXPECT_EQ(code_of([&] { svc.submit_correction(tid(fx.frame_ids[10]), c); }),
            ErrorCode::kInvalidGeometry);
}

TEST_F(Corrections, QualityRejectFlagsManifestAndLeavesExports) {
  const std::string frame = fx.frame_ids[14];
  const auto before = svc.export_ground_truth();
  const AnnotationTask t = svc.submit_correction(tid(frame), {CorrectionAction::kRejectQuality});
  EXPECT_EQ(t.status, S::kRejectedQuality);
  expect_revised_fields_consistent(t);
  const DatasetManifest on_disk = DatasetManifest::load(fx.dir / "data" / "manifest.json");
  EXPECT_EQ(on_disk.find_frame(frame)->quality, FrameQuality::kRejected);
  const auto after = svc.export_ground_truth();
  EXPECT_EQ(after.records, before.records);
  EXPECT_FALSE(after.files.count("labelme/" + frame + ".json"));
}

TEST_F(Corrections, GenderConfirmationWritesThroughWithAudit) {
  const std::string frame = fx.frame_ids[10];  // chick c2, female
  Correction c{CorrectionAction::kAccept};
  c.gender_confirmation = Gender::kMale;
  c.editor = "bo";
  const auto before = svc.audit_length();
  svc.submit_correction(tid(frame), c);
  EXPECT_EQ(svc.audit_length(), before + 2);
  EXPECT_EQ(svc.manifest().find_chick("c2")->gender, Gender::kMale);
  EXPECT_EQ(DatasetManifest::load(fx.dir / "data" / "manifest.json").find_chick("c2")->gender,
            Gender::kMale);
  const auto last = svc.audit_log().back();
  EXPECT_EQ(last["action"], "gender_confirmation");
  EXPECT_EQ(last["snapshot"]["before"], "female");
  EXPECT_EQ(last["snapshot"]["after"], "male");
}

TEST_F(Corrections, NextTaskIsOldestPredictedPerEditor) {
  EXPECT_EQ(svc.next_task("ana").frame_id, fx.frame_ids[10]);
  EXPECT_EQ(svc.next_task("ana").frame_id, fx.frame_ids[10]);  // still hers
  EXPECT_EQ(svc.next_task("bo").frame_id, fx.frame_ids[11]);
  for (int i = 10; i < 20; ++i) svc.submit_correction(tid(fx.frame_ids[i]), {CorrectionAction::kAccept});
  EXPECT_EQ(code_of([&] { svc.next_task("ana"); }), ErrorCode::kNoTasks);
}

TEST_F(Corrections, ExportCountsRoundsAndIsByteIdentical) {
  for (int i = 10; i < 15; ++i) svc.submit_correction(tid(fx.frame_ids[i]), {CorrectionAction::kAccept});
  const ExportBundle both = svc.export_ground_truth({0, 1});
  EXPECT_EQ(both.records, 15);
  EXPECT_EQ(both.files.size(), 31u);  // LabelMe + detector line per record, one manifest slice
  EXPECT_EQ(svc.export_ground_truth({1}).records, 5);
  EXPECT_EQ(svc.export_ground_truth({0}).records, 10);
  EXPECT_EQ(svc.export_ground_truth({7}).records, 0);
  EXPECT_EQ(svc.export_ground_truth().to_zip(), svc.export_ground_truth().to_zip());

  const auto& line = both.files.at("detector/" + fx.frame_ids[12] + ".txt");
  EXPECT_EQ(line, detection::training_export_line(*fx.truth.box, {160, 160}) + "\n");
  const auto slice = DatasetManifest::from_json(nlohmann::json::parse(both.files.at("manifest_slice.json")));
  EXPECT_EQ(slice.frames.size(), 15u);
}

TEST_F(Corrections, AllRejectedRoundExportsNothing) {
  for (int i = 10; i < 20; ++i) {
    svc.submit_correction(tid(fx.frame_ids[i]), {CorrectionAction::kRejectQuality});
  }
  const ExportBundle b = svc.export_ground_truth({1});
  EXPECT_EQ(b.records, 0);
  EXPECT_EQ(b.files.size(), 1u);
}

TEST(Zip, StoreOnlyLayout) {
  const std::string z = annotation::zip_store({{"a.txt", "hello"}, {"b/c.json", "{}"}});
  EXPECT_EQ(z.substr(0, 4), std::string("PK\x03\x04", 4));
  const std::string eocd = z.substr(z.size() - 22);
  EXPECT_EQ(eocd.substr(0, 4), std::string("PK\x05\x06", 4));
  EXPECT_EQ(static_cast<unsigned char>(eocd[10]), 2);  // total entries
  EXPECT_NE(z.find("hello"), std::string::npos);
  EXPECT_EQ(annotation::zip_store({}).size(), 22u);
}

TEST(Advance, NoNewDataIsAWarning) {
  Fixture fx(4);
  AnnotationService svc(fx.options());
  const AdvanceResult r = svc.advance_round();
  EXPECT_FALSE(r.advanced);
  EXPECT_FALSE(r.warning.empty());
  EXPECT_EQ(svc.current_round(), 0);
}

TEST(Advance, NewRevisionsOpenTheNextRound) {
  Fixture fx(20);
  AnnotationService svc(fx.options());
  open_round_one(svc, fx);
  const AnnotationRound r1 = svc.rounds().back();
  EXPECT_EQ(r1.model_versions.keypoints.size(), 64u);
  ASSERT_TRUE(svc.current_keypoint_model());
  EXPECT_TRUE(fs::exists(*svc.current_keypoint_model()));

  const AdvanceResult idle = svc.advance_round();
  EXPECT_FALSE(idle.advanced);
  EXPECT_EQ(svc.current_round(), 1);

  svc.propose(fx.ids(10, 5), fx.stub());
  for (int i = 10; i < 15; ++i) {
    KeypointSet kps = fx.truth.keypoints;
    const Point2 p = kps.point(Landmark::kMiddleNose);
    kps.set(Landmark::kMiddleNose, {p.x + 1, p.y});
    Correction c;
    c.keypoints = kps;
    svc.submit_correction(tid(fx.frame_ids[i]), c);
  }
  const AdvanceResult r = svc.advance_round();
  ASSERT_TRUE(r.advanced);
  EXPECT_EQ(r.round.round, 2);
  EXPECT_NE(r.round.model_versions.detector, r1.model_versions.detector);
  EXPECT_NE(r.round.model_versions.keypoints, r1.model_versions.keypoints);
  const auto rounds = svc.rounds();
  for (std::size_t i = 1; i < rounds.size(); ++i) EXPECT_GT(rounds[i].round, rounds[i - 1].round);
}

TEST(Advance, SameDataAndSeedsGiveSameVersions) {
  Fixture fx(12);
  AnnotationService a(fx.options("a.db"));
  AnnotationService b(fx.options("b.db"));
  open_round_one(a, fx);
  open_round_one(b, fx);
  EXPECT_EQ(a.rounds().back().model_versions.detector, b.rounds().back().model_versions.detector);
  EXPECT_EQ(a.rounds().back().model_versions.keypoints, b.rounds().back().model_versions.keypoints);
}

TEST(Advance, BackgroundJobAllowsOneAtATime) {
  Fixture fx(6);
  auto opts = fx.options();
  std::promise<void> release;
  std::shared_future<void> gate = release.get_future().share();
  std::atomic<bool> armed{false};
  opts.clock = [gate, &armed] {
    if (armed) gate.wait();
    return std::string(kClock);
  };
  AnnotationService svc(opts);
  svc.seed_round(fx.ids(0, 4), fx.manual(0, 4));
  armed = true;
  svc.start_advance();
  EXPECT_EQ(svc.job_status().state, "running");
  EXPECT_EQ(code_of([&] { svc.start_advance(); }), ErrorCode::kJobRunning);
  release.set_value();
  svc.wait_for_job();
  const JobStatus done = svc.job_status();
  EXPECT_EQ(done.state, "succeeded");
  EXPECT_EQ(done.result["round"]["round"], 1);
  EXPECT_EQ(svc.current_round(), 1);
}

TEST(Persistence, ReopeningKeepsTasksAndRounds) {
  Fixture fx(12);
  nlohmann::json before;
  {
    AnnotationService svc(fx.options());
    open_round_one(svc, fx);
    svc.propose(fx.ids(10, 2), fx.stub());
    before = svc.get_task(tid(fx.frame_ids[10])).to_json();
  }
  AnnotationService svc(fx.options());
  EXPECT_EQ(svc.current_round(), 1);
  EXPECT_EQ(svc.get_task(tid(fx.frame_ids[10])).to_json(), before);
  EXPECT_EQ(svc.rounds().front().counts.seeded, 10);
}

// Independent statement of the legal moves.
bool oracle_allowed(S from, S to) {
  static const std::set<std::pair<S, S>> edges = {
      {S::kUnlabeled, S::kPredicted}, {S::kPredicted, S::kRevised},
      {S::kPredicted, S::kAccepted},  {S::kPredicted, S::kRejectedQuality},
      {S::kRevised, S::kRevised},     {S::kRevised, S::kAccepted},
      {S::kRevised, S::kRejectedQuality}};
  return edges.count({from, to}) > 0;
}

TEST(Transitions, TableMatchesOracle) {
  const S all[] = {S::kUnlabeled, S::kPredicted, S::kRevised, S::kAccepted, S::kRejectedQuality};
  for (S a : all) {
    for (S b : all) EXPECT_EQ(annotation::transition_allowed(a, b), oracle_allowed(a, b));
  }
}

TEST(Transitions, RandomSequencesOnlyFollowLegalEdges) {
  Fixture fx(1001);
  AnnotationService svc(fx.options());
  open_round_one(svc, fx, 1);
  std::mt19937_64 rng(9);
  std::int64_t audit = svc.audit_length();
  int rejected_ops = 0;
  for (int i = 1; i <= 1000; ++i) {
    const std::string frame = fx.frame_ids[i];
    S model = S::kUnlabeled;
    const int len = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int step = 0; step < len; ++step) {
      const int op = std::uniform_int_distribution<int>(0, 4)(rng);
      bool ok = false;
      S target = model;
      if (op == 0) {
        target = S::kPredicted;
        ok = svc.propose({frame}, fx.stub()).tasks.size() == 1;
      } else if (op == 4) {
        target = S::kAccepted;
        ok = svc.seed_round({frame}, {{frame, fx.truth}}).rejected.empty();
        if (ok && model == S::kAccepted) target = model;  // re-seed of a seed is a no-op
      } else {
        const CorrectionAction action = op == 1   ? CorrectionAction::kRevise
                                        : op == 2 ? CorrectionAction::kAccept
                                                  : CorrectionAction::kRejectQuality;
        target = op == 1 ? S::kRevised : op == 2 ? S::kAccepted : S::kRejectedQuality;
        try {
          svc.submit_correction(tid(frame), {action});
          ok = true;
        } catch (const Error& e) {
          ASSERT_EQ(e.code(), ErrorCode::kIllegalTransition) << frame;
        }
      }
      const bool seed_edge = op == 4 && (model == S::kUnlabeled);
      const bool reseed = op == 4 && ok && model == S::kAccepted;
      const bool expected = op == 4 ? (seed_edge || reseed) : oracle_allowed(model, target);
      ASSERT_EQ(ok, expected) << frame << " op " << op << " from " << to_string(model);
      if (ok) model = target;
      if (!ok) ++rejected_ops;
      const AnnotationTask t = svc.get_task(tid(frame));
      ASSERT_EQ(t.status, model) << frame;
      expect_revised_fields_consistent(t);
      const std::int64_t now = svc.audit_length();
      ASSERT_GE(now, audit);
      audit = now;
    }
  }
  EXPECT_GT(rejected_ops, 100);
}

TEST(Audit, AppendOnlyAndReconstructsEveryTask) {
  Fixture fx(16);
  {
    AnnotationService svc(fx.options());
    open_round_one(svc, fx);
    svc.propose(fx.ids(10, 4), fx.stub());
    svc.submit_correction(tid(fx.frame_ids[10]), {CorrectionAction::kRevise});
    svc.submit_correction(tid(fx.frame_ids[10]), {CorrectionAction::kAccept});
    svc.submit_correction(tid(fx.frame_ids[11]), {CorrectionAction::kRejectQuality});

    const nlohmann::json log = svc.audit_log();
    EXPECT_EQ(static_cast<std::int64_t>(log.size()), svc.audit_length());
    std::map<std::string, nlohmann::json> last;
    std::int64_t prev = 0;
    for (const auto& e : log) {
      EXPECT_GT(e["seq"].get<std::int64_t>(), prev);
      prev = e["seq"];
      if (e["task_id"].is_string() && e["snapshot"].contains("status")) last[e["task_id"]] = e["snapshot"];
    }
    for (const auto& [task, snap] : last) EXPECT_EQ(svc.get_task(task).to_json(), snap) << task;
    EXPECT_EQ(last.size(), 14u);  // ten seeds, four proposals
  }

  sqlite3* db = nullptr;
  ASSERT_EQ(sqlite3_open((fx.dir / "ann.db").string().c_str(), &db), SQLITE_OK);
  EXPECT_NE(sqlite3_exec(db, "UPDATE audit SET action='x'", nullptr, nullptr, nullptr), SQLITE_OK);
  EXPECT_NE(sqlite3_exec(db, "DELETE FROM audit", nullptr, nullptr, nullptr), SQLITE_OK);
  sqlite3_stmt* s = nullptr;
  sqlite3_prepare_v2(db, "SELECT COUNT(*) FROM audit WHERE action='x'", -1, &s, nullptr);
  ASSERT_EQ(sqlite3_step(s), SQLITE_ROW);
  EXPECT_EQ(sqlite3_column_int(s, 0), 0);
  sqlite3_finalize(s);
  sqlite3_close(db);
}

TEST(Concurrency, ParallelEditorsKeepVersionsConsistent) {
  Fixture fx(14);
  AnnotationService svc(fx.options());
  open_round_one(svc, fx);
  svc.propose(fx.ids(10, 4), fx.stub());
  // Four threads race to revise one task with the same expected version.
  const std::string id = tid(fx.frame_ids[10]);
  const auto v = svc.get_task(id).version;
  std::atomic<int> won{0};
  std::atomic<int> conflicts{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] {
      Correction c;
      c.expected_version = v;
      c.editor = "e" + std::to_string(i);
      try {
        svc.submit_correction(id, c);
        ++won;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kVersionConflict) ++conflicts;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(won, 1);
  EXPECT_EQ(conflicts, 3);
  EXPECT_EQ(svc.get_task(id).version, v + 1);
}

}  // namespace
}  // namespace chickface
