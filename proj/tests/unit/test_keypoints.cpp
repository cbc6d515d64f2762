// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"
#include "chickface/keypoints.hpp"
#include "test_support.hpp"

namespace chickface {
namespace {

KeypointModelConfig small_config(int size = 64) {
  KeypointModelConfig cfg;
  cfg.input_width = size;
  cfg.input_height = size;
  return cfg;
}

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

TEST(RenderTargets, PeakIsOneAtCellCentre) {
  const KeypointModelConfig cfg;
  KeypointSet k;
  k.set(Landmark::kLeftEye, {(10 + 0.5) * cfg.stride, (20 + 0.5) * cfg.stride});
  const Heatmaps maps = keypoints::render_targets(k, cfg);
  ASSERT_EQ(maps.data.c, kNumLandmarks);
  ASSERT_EQ(maps.data.h, cfg.grid_height());
  ASSERT_EQ(maps.data.w, cfg.grid_width());
  const int c = static_cast<int>(Landmark::kLeftEye);
  EXPECT_FLOAT_EQ(maps.data.at(c, 20, 10), 1.0f);
  for (float v : maps.data.data) EXPECT_LE(v, 1.0f);
}

TEST(RenderTargets, InvisibleLandmarkHasZeroChannel) {
  KeypointSet k;
  k.set(Landmark::kMiddleBeak, {100, 100}, false);
  const Heatmaps maps = keypoints::render_targets(k, KeypointModelConfig{});
  for (float v : maps.data.data) EXPECT_EQ(v, 0.0f);
}

TEST(RenderTargets, Deterministic) {
  const KeypointSet k = testing::face_keypoints({128, 120}, 60, 10, 50);
  EXPECT_EQ(keypoints::render_targets(k, {}).data.data,
            keypoints::render_targets(k, {}).data.data);
}

TEST(Decode, SingleHotCellMapsToItsCentre) {
  const KeypointModelConfig cfg;
  Heatmaps maps{nn::Tensor(kNumLandmarks, cfg.grid_height(), cfg.grid_width()), cfg.stride};
  maps.data.at(2, 7, 11) = 1.0f;
  const KeypointSet k =
      keypoints::decode(maps, cv::Size(cfg.input_width, cfg.input_height), cfg);
  const Point2 p = k.point(Landmark::kRightEye);
  EXPECT_DOUBLE_EQ(p.x, (11 + 0.5) * cfg.stride);
  EXPECT_DOUBLE_EQ(p.y, (7 + 0.5) * cfg.stride);
  EXPECT_TRUE(k.visible(Landmark::kRightEye));
  EXPECT_FALSE(k.visible(Landmark::kUpperNose));  // all-zero channel
}

TEST(Decode, ScalesToOriginalSize) {
  const KeypointModelConfig cfg;
  Heatmaps maps{nn::Tensor(kNumLandmarks, cfg.grid_height(), cfg.grid_width()), cfg.stride};
  maps.data.at(0, 31, 31) = 1.0f;
  const KeypointSet k = keypoints::decode(maps, cv::Size(512, 128), cfg);
  EXPECT_DOUBLE_EQ(k.point(Landmark::kUpperNose).x, 31.5 * 4 * 2.0);
  EXPECT_DOUBLE_EQ(k.point(Landmark::kUpperNose).y, 31.5 * 4 * 0.5);
}

TEST(Decode, RenderDecodeRoundTripWithinTwoPixels) {
  const KeypointModelConfig cfg;
  const cv::Size size(cfg.input_width, cfg.input_height);
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    KeypointSet k;
    for (int c = 0; c < kNumLandmarks; ++c) {
      k.set(static_cast<Landmark>(c), {testing::uniform(rng, 0.0, cfg.input_width),
                                       testing::uniform(rng, 0.0, cfg.input_height)});
    }
    const KeypointSet back = keypoints::decode(keypoints::render_targets(k, cfg), size, cfg);
    for (int c = 0; c < kNumLandmarks; ++c) {
      const auto lm = static_cast<Landmark>(c);
      ASSERT_TRUE(back.visible(lm));
      worst = std::max(worst, distance(k.point(lm), back.point(lm)));
    }
  }
  EXPECT_LE(worst, 2.0);
}

TEST(Decode, PermutingChannelsPermutesLandmarks) {
  const KeypointModelConfig cfg;
  const cv::Size size(cfg.input_width, cfg.input_height);
  const KeypointSet k = testing::face_keypoints({128, 110}, 80, -15, 70);
  const Heatmaps maps = keypoints::render_targets(k, cfg);
  const KeypointSet base = keypoints::decode(maps, size, cfg);
  const std::array<int, kNumLandmarks> perm = {3, 6, 0, 5, 1, 4, 2};
  Heatmaps shuffled = maps;
  const int plane = maps.data.plane();
  for (int c = 0; c < kNumLandmarks; ++c) {
    std::copy_n(maps.data.data.begin() + perm[c] * plane, plane,
                shuffled.data.data.begin() + c * plane);
  }
  const KeypointSet out = keypoints::decode(shuffled, size, cfg);
  for (int c = 0; c < kNumLandmarks; ++c) {
    EXPECT_EQ(out.point(static_cast<Landmark>(c)), base.point(static_cast<Landmark>(perm[c])));
  }
}

TEST(Decode, WrongChannelCountIsModelError) {
  const KeypointModelConfig cfg;
  Heatmaps maps{nn::Tensor(3, cfg.grid_height(), cfg.grid_width()), cfg.stride};
  try {
    keypoints::decode(maps, cv::Size(256, 256), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kModel);
  }
}

TEST(Predict, StubHeatmapsGiveTheirKeypoints) {
  const KeypointModelConfig cfg;
  const KeypointSet k = testing::face_keypoints({100, 90}, 70, 5, 60);
  StubKeypointModel stub(keypoints::render_targets(k, cfg));
  const cv::Mat face(256, 256, CV_8UC3, cv::Scalar(128, 128, 128));
  const KeypointSet out = keypoints::predict_keypoints(face, stub, cfg);
  for (int c = 0; c < kNumLandmarks; ++c) {
    EXPECT_LE(distance(out.point(static_cast<Landmark>(c)), k.point(static_cast<Landmark>(c))),
              2.0);
  }
}

TEST(Predict, GroundTruthModelRescalesFromFaceSize) {
  const KeypointModelConfig cfg;
  const cv::Size face_size(400, 300);
  const KeypointSet k = testing::face_keypoints({200, 120}, 120, 0, 100);
  GroundTruthKeypointModel gt(k, face_size, cfg);
  const KeypointSet out = keypoints::predict_keypoints(cv::Mat(face_size, CV_8UC3), gt, cfg);
  for (int c = 0; c < kNumLandmarks; ++c) {
    const auto lm = static_cast<Landmark>(c);
    EXPECT_NEAR(out.point(lm).x, k.point(lm).x, 1.0 * 400 / 256 + 1e-9);
    EXPECT_NEAR(out.point(lm).y, k.point(lm).y, 1.0 * 300 / 256 + 1e-9);
  }
}

TEST(Training, OverfitsASingleSample) {
  const KeypointModelConfig cfg = small_config();
  cv::Mat face(64, 64, CV_8UC3, cv::Scalar(40, 90, 140));
  cv::circle(face, {20, 24}, 4, cv::Scalar(0, 0, 0), cv::FILLED);
  cv::circle(face, {44, 24}, 4, cv::Scalar(0, 0, 0), cv::FILLED);
  const KeypointSample sample{face, testing::face_keypoints({32, 24}, 24, 0, 30)};
  const auto result = keypoints::train_keypoint_model({sample}, cfg, {200, 2e-3, 1, 1});
  ASSERT_EQ(result.loss_history.size(), 200u);
  EXPECT_LT(result.loss_history.back(), 1e-3);
}

TEST(Training, LossIsBroadlyNonIncreasing) {
  const KeypointModelConfig cfg = small_config();
  std::mt19937_64 rng(3);
  std::vector<KeypointSample> samples;
  for (int i = 0; i < 6; ++i) {
    cv::Mat face(64, 64, CV_8UC3);
    cv::randu(face, 0, 255);
    samples.push_back({face, testing::face_keypoints({testing::uniform(rng, 24, 40), 24}, 20,
                                                     testing::uniform(rng, -10, 10), 28)});
  }
  const auto h = keypoints::train_keypoint_model(samples, cfg, {40, 1e-3, 6, 2}).loss_history;
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LE(h[i], h[i - 1] * 1.05) << "epoch " << i;
  EXPECT_LT(h.back(), h.front());
}

TEST(Training, ZeroEpochsReturnsInitialModel) {
  const KeypointModelConfig cfg = small_config();
  const KeypointSample s{cv::Mat(64, 64, CV_8UC3, cv::Scalar(1, 2, 3)),
                         testing::face_keypoints({32, 24}, 20, 0, 28)};
  auto trained = keypoints::train_keypoint_model({s}, cfg, {0, 1e-3, 1, 9});
  EXPECT_TRUE(trained.loss_history.empty());
  TinyHeatmapModel fresh(cfg, 9);
  const cv::Mat in = keypoints::prepare_input(s.image, cfg);
  EXPECT_EQ(trained.model.forward(in).data, fresh.forward(in).data);
}

TEST(Training, SeededRunsAreIdentical) {
  const KeypointModelConfig cfg = small_config();
  cv::Mat img(64, 64, CV_8UC3);
  cv::randu(img, 0, 255);
  const std::vector<KeypointSample> s = {{img, testing::face_keypoints({32, 24}, 20, 0, 28)},
                                         {img.t(), testing::face_keypoints({30, 26}, 22, 4, 28)}};
  const auto a = keypoints::train_keypoint_model(s, cfg, {5, 1e-3, 1, 4});
  const auto b = keypoints::train_keypoint_model(s, cfg, {5, 1e-3, 1, 4});
  EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Training, EmptySetAndBadOptionsAreRejected) {
  EXPECT_THROW(keypoints::train_keypoint_model({}, small_config(), {}), Error);
  const KeypointSample s{cv::Mat(64, 64, CV_8UC3), {}};
  EXPECT_THROW(keypoints::train_keypoint_model({s}, small_config(), {1, 0.0, 1, 0}), Error);
}

TEST(ModelFile, SaveLoadPreservesOutputs) {
  testing::TempDir dir;
  const KeypointModelConfig cfg = small_config();
  TinyHeatmapModel m(cfg, 11);
  m.save(dir / "k.ckfm");
  TinyHeatmapModel loaded = TinyHeatmapModel::load(dir / "k.ckfm");
  cv::Mat in(64, 64, CV_8UC3);
  cv::randu(in, 0, 255);
  EXPECT_EQ(m.forward(in).data, loaded.forward(in).data);
  EXPECT_EQ(loaded.config().to_json(), cfg.to_json());
}

}  // namespace
}  // namespace chickface
