// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "chickface/dataset.hpp"
#include "chickface/error.hpp"
#include "chickface/labelme.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace chickface {
namespace {

using testing::TempDir;

std::vector<ChickRecord> make_chicks(int females, int males, const std::string& prefix = "c") {
  std::vector<ChickRecord> out;
  for (int i = 0; i < females; ++i) out.push_back({prefix + "f" + std::to_string(i), Gender::kFemale});
  for (int i = 0; i < males; ++i) out.push_back({prefix + "m" + std::to_string(i), Gender::kMale});
  return out;
}

// fold -> {females, males}
std::map<int, std::pair<int, int>> fold_counts(const FoldPlan& plan,
                                               const std::vector<ChickRecord>& chicks) {
  std::map<int, std::pair<int, int>> out;
  for (const auto& c : chicks) {
    auto& slot = out[plan.fold_of(c.chick_id)];
    (c.gender == Gender::kMale ? slot.second : slot.first)++;
  }
  return out;
}

TEST(SplitViews, ShapesAndBands) {
  cv::Mat stacked(2160, 1920, CV_8UC3);
  stacked.rowRange(0, 720).setTo(cv::Scalar(0, 0, 255));
  stacked.rowRange(720, 1440).setTo(cv::Scalar(0, 255, 0));
  stacked.rowRange(1440, 2160).setTo(cv::Scalar(255, 0, 0));
  const auto views = dataset::split_views(stacked);
  const std::array<cv::Scalar, 3> colors = {cv::Scalar(0, 0, 255), cv::Scalar(0, 255, 0),
                                            cv::Scalar(255, 0, 0)};
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(views[k].rows, 720);
    EXPECT_EQ(views[k].cols, 1920);
    cv::Mat diff;
    cv::absdiff(views[k], colors[k], diff);
    EXPECT_EQ(cv::norm(diff, cv::NORM_INF), 0.0);
  }
}

TEST(SplitViews, IndivisibleHeightIsAnError) {
  EXPECT_THROW(dataset::split_views(cv::Mat(2161, 1920, CV_8UC3, cv::Scalar(0))), Error);
}

TEST(SplitViews, ReconcatenationIsByteIdentical) {
  cv::Mat stacked(300, 77, CV_8UC3);
  cv::randu(stacked, 0, 256);
  const auto views = dataset::split_views(stacked);
  cv::Mat joined;
  cv::vconcat(std::vector<cv::Mat>(views.begin(), views.end()), joined);
  EXPECT_EQ(cv::norm(stacked, joined, cv::NORM_INF), 0.0);
}

TEST(AssignFolds, PublishedFoldDistribution) {
  const auto chicks = make_chicks(184, 169);
  const FoldPlan plan = dataset::assign_folds(chicks, 5, 42);
  const auto counts = fold_counts(plan, chicks);
  ASSERT_EQ(counts.size(), 5u);
  int big = 0;
  int small = 0;
  for (const auto& [fold, c] : counts) {
    if (c == std::make_pair(37, 34)) ++big;
    if (c == std::make_pair(36, 33)) ++small;
  }
  EXPECT_EQ(big, 4);
  EXPECT_EQ(small, 1);
}

TEST(AssignFolds, FiveAndFive) {
  const auto chicks = make_chicks(5, 5);
  const auto counts = fold_counts(dataset::assign_folds(chicks, 5, 9), chicks);
  for (const auto& [fold, c] : counts) EXPECT_EQ(c, std::make_pair(1, 1));
}

TEST(AssignFolds, DeterministicAndOrderIndependent) {
  auto chicks = make_chicks(23, 19);
  const FoldPlan a = dataset::assign_folds(chicks, 5, 3);
  const FoldPlan b = dataset::assign_folds(chicks, 5, 3);
  EXPECT_EQ(a.assignment, b.assignment);
  std::reverse(chicks.begin(), chicks.end());
  EXPECT_EQ(dataset::assign_folds(chicks, 5, 3).assignment, a.assignment);
}

TEST(AssignFolds, GroupingAndBalanceOnRandomIdSets) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = std::uniform_int_distribution<int>(2, 10)(rng);
    const int f = std::uniform_int_distribution<int>(k, 120)(rng);
    const int m = std::uniform_int_distribution<int>(k, 120)(rng);
    const auto chicks = make_chicks(f, m, "t" + std::to_string(trial));
    const FoldPlan plan = dataset::assign_folds(chicks, k, rng());
    ASSERT_EQ(plan.assignment.size(), chicks.size());  // one fold per id
    std::vector<int> fc(k, 0), mc(k, 0);
    for (const auto& c : chicks) {
      const int fold = plan.fold_of(c.chick_id);
      ASSERT_GE(fold, 0);
      ASSERT_LT(fold, k);
      (c.gender == Gender::kMale ? mc : fc)[fold]++;
    }
    EXPECT_LE(*std::max_element(fc.begin(), fc.end()) - *std::min_element(fc.begin(), fc.end()), 1);
    EXPECT_LE(*std::max_element(mc.begin(), mc.end()) - *std::min_element(mc.begin(), mc.end()), 1);
  }
}

TEST(AssignFolds, RejectsTooFewIdsAndDuplicates) {
  EXPECT_THROW(dataset::assign_folds(make_chicks(3, 10), 5, 0), Error);
  auto dup = make_chicks(6, 6);
  dup.push_back(dup.front());
  EXPECT_THROW(dataset::assign_folds(dup, 5, 0), Error);
}

TEST(BlurScore, ConstantImageIsZero) {
  EXPECT_EQ(dataset::blur_score(cv::Mat(32, 32, CV_8UC1, cv::Scalar(77))), 0.0);
}

TEST(BlurScore, MatchesLaplacianOracleAndRanksSharpness) {
  cv::Mat checker(64, 64, CV_8UC1);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) checker.at<std::uint8_t>(y, x) = ((x / 4 + y / 4) % 2) ? 230 : 20;
  }
  cv::Mat blurred;
  cv::blur(checker, blurred, cv::Size(5, 5));
  const double sharp = dataset::blur_score(checker);
  const double soft = dataset::blur_score(blurred);
  EXPECT_NEAR(sharp, oracle::laplacian_variance(checker), 1e-9 * sharp);
  EXPECT_NEAR(soft, oracle::laplacian_variance(blurred), 1e-9 * sharp);
  EXPECT_GT(sharp, soft);
  EXPECT_EQ(dataset::blur_score(checker), sharp);
}

TEST(Manifest, SaveLoadIsIdempotent) {
  TempDir dir;
  DatasetManifest m;
  m.chicks = make_chicks(2, 1);
  m.frames.push_back({"a_v0", "cf0", 0, "views/a_v0.png", FrameQuality::kAccepted});
  m.frames.push_back({"a_v1", "cm0", 1, "views/a_v1.png", FrameQuality::kRejected});
  m.crop_kind = CropKind::kMiddle;
  m.save(dir / "m1.json");
  const DatasetManifest loaded = DatasetManifest::load(dir / "m1.json");
  EXPECT_EQ(loaded, m);
  loaded.save(dir / "m2.json");
  EXPECT_EQ(testing::slurp(dir / "m1.json"), testing::slurp(dir / "m2.json"));
  ASSERT_EQ(loaded.accepted_frames().size(), 1u);
}

TEST(Manifest, ValidationRejectsBrokenReferences) {
  DatasetManifest m;
  m.chicks = make_chicks(1, 0);
  m.frames.push_back({"a", "nobody", 0, "a.png", FrameQuality::kAccepted});
  EXPECT_THROW(m.validate(), Error);
  m.frames[0].chick_id = "cf0";
  m.frames[0].view_index = 3;
  EXPECT_THROW(m.validate(), Error);
}

TEST(SampleFrames, UniformDeterministicSample) {
  DatasetManifest m;
  m.chicks = make_chicks(1, 0);
  for (int i = 0; i < 20; ++i) {
    m.frames.push_back({"f" + std::to_string(i), "cf0", 0, "x.png",
                        i == 3 ? FrameQuality::kRejected : FrameQuality::kUnreviewed});
  }
  const auto a = dataset::sample_frames(m, 5, 1);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(a, dataset::sample_frames(m, 5, 1));
  EXPECT_EQ(std::count(a.begin(), a.end(), "f3"), 0);
  EXPECT_EQ(dataset::sample_frames(m, 100, 1).size(), 19u);
}

TEST(Ingest, WritesViewsManifestAndAnnotations) {
  TempDir dir;
  const auto raw = dir / "raw";
  std::filesystem::create_directories(raw);
  cv::Mat stacked(90, 40, CV_8UC3, cv::Scalar(10, 20, 30));
  stacked.rowRange(30, 60).setTo(cv::Scalar(200, 0, 0));
  cv::imwrite((raw / "vidA_0.png").string(), stacked);
  cv::imwrite((raw / "vidB_3.png").string(), stacked);

  FaceAnnotation ann;
  ann.image_path = "vidA_0_v1.png";
  ann.image_width = 40;
  ann.image_height = 30;
  ann.box = BoundingBox{2, 3, 30, 20};
  ann.keypoints.set(Landmark::kLeftEye, {10, 10});
  labelme::save(ann, raw / "vidA_0_v1.json");

  std::ofstream(dir / "labels.csv") << "video_id,chick_id,gender\nvidA,chick1,male\nvidB,chick2,female\n";

  dataset::IngestOptions opts{raw, dir / "labels.csv", dir / "data", FrameQuality::kAccepted};
  const DatasetManifest m = dataset::ingest(opts);
  EXPECT_EQ(m.chicks.size(), 2u);
  ASSERT_EQ(m.frames.size(), 6u);
  const FrameRecord* f = m.find_frame("vidA_0_v1");
  ASSERT_NE(f, nullptr);
  EXPECT_EQ(f->chick_id, "chick1");
  EXPECT_EQ(f->view_index, 1);
  EXPECT_EQ(f->quality, FrameQuality::kAccepted);

  const cv::Mat view = cv::imread((dir / "data" / f->image_ref).string(), cv::IMREAD_COLOR);
  ASSERT_EQ(view.size(), cv::Size(40, 30));
  EXPECT_EQ(view.at<cv::Vec3b>(5, 5), cv::Vec3b(200, 0, 0));

  const FaceAnnotation copied = labelme::load(dir / "data" / "annotations" / "vidA_0_v1.json");
  EXPECT_EQ(copied.box, ann.box);
  EXPECT_EQ(copied.keypoints, ann.keypoints);
  EXPECT_EQ(DatasetManifest::load(dir / "data" / "manifest.json"), m);
}

TEST(Ingest, UnknownVideoIsAnError) {
  TempDir dir;
  std::filesystem::create_directories(dir / "raw");
  cv::imwrite((dir / "raw" / "vidZ_0.png").string(), cv::Mat(9, 4, CV_8UC3, cv::Scalar(0)));
  std::ofstream(dir / "labels.csv") << "vidA,chick1,male\n";
  EXPECT_THROW(dataset::ingest({dir / "raw", dir / "labels.csv", dir / "data"}), Error);
}

TEST(LabelMe, RoundTripKeepsBoxAndVisibleKeypoints) {
  FaceAnnotation a;
  a.image_path = "x.png";
  a.image_width = 100;
  a.image_height = 80;
  a.box = BoundingBox{1.5, 2.5, 50, 40};
  a.keypoints.set(Landmark::kLeftEye, {20.25, 30});
  a.keypoints.set(Landmark::kMiddleBeak, {40, 60.5});
  const nlohmann::json j = labelme::to_json(a);
  int rects = 0;
  int points = 0;
  for (const auto& s : j.at("shapes")) {
    if (s.at("shape_type") == "rectangle") ++rects;
    if (s.at("shape_type") == "point") ++points;
  }
  EXPECT_EQ(rects, 1);
  EXPECT_EQ(points, 2);
  EXPECT_EQ(labelme::from_json(j), a);
}

TEST(LabelMe, UnknownPointLabelIsInvalid) {
  nlohmann::json j = {{"imagePath", "x.png"}, {"imageWidth", 10}, {"imageHeight", 10},
                      {"shapes", {{{"label", "snout"}, {"shape_type", "point"},
                                   {"points", {{1.0, 2.0}}}}}}};
  EXPECT_THROW(labelme::from_json(j), Error);
}

}  // namespace
}  // namespace chickface
