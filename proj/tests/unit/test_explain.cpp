// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "chickface/error.hpp"
#include "chickface/explain.hpp"
#include "test_support.hpp"

namespace chickface {
namespace {

// One 1x1 conv averaging the colour channels, then ReLU. The head passes the
// pooled value straight through, so logit = mean brightness.
Classifier brightness_model(int input_size) {
  nn::Network net;
  auto conv = std::make_unique<nn::Conv2d>(3, 1, 1);
  for (auto& w : conv->weight().value) w = 1.0f / 3.0f;
  net.add("conv", std::move(conv));
  net.add("relu", std::make_unique<nn::Relu>());
  ClassifierConfig cfg;
  cfg.backbone = "tiny_test";
  cfg.head_dims = {1, 1, 1};
  cfg.tiny_input_size = input_size;
  Head head = Head::zeros(1, cfg.head_dims);
  head.w1.value = {1.0};
  head.w2.value = {1.0};
  head.w3.value = {1.0};
  return Classifier(cfg,
                    std::make_unique<TinyBackbone>(std::move(net), input_size, 1,
                                                   std::vector<std::string>{"conv", "relu"}),
                    std::move(head));
}

cv::Mat patch_image(int side, cv::Rect patch) {
  cv::Mat img(side, side, CV_8UC3, cv::Scalar::all(0));
  img(patch).setTo(cv::Scalar::all(255));
  return img;
}

ClassifierConfig tiny(std::uint64_t seed) {
  ClassifierConfig cfg;
  cfg.backbone = "tiny_test";
  cfg.head_dims = {8, 4, 1};
  cfg.tiny_input_size = 32;
  cfg.seed = seed;
  return cfg;
}

TEST(GradCamPP, NonNegativeNormalizedAndInputShaped) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Classifier model = Classifier::create(tiny(trial));
    const int h = std::uniform_int_distribution<int>(16, 120)(rng);
    const int w = std::uniform_int_distribution<int>(16, 120)(rng);
    cv::Mat img(h, w, CV_8UC3);
    cv::randu(img, 0, 256);
    for (Gender target : {Gender::kMale, Gender::kFemale}) {
      const Explanation e = explain::gradcam_pp(model, img, std::nullopt, target);
      ASSERT_EQ(e.map.data.type(), CV_32F);
      ASSERT_EQ(e.map.data.size(), img.size());
      ASSERT_TRUE(e.map.normalized);
      double lo = 0.0;
      double hi = 0.0;
      cv::minMaxLoc(e.map.data, &lo, &hi);
      ASSERT_GE(lo, 0.0);
      ASSERT_LE(hi, 1.0 + 1e-6);
      ASSERT_EQ(e.layer, "relu2");
    }
  }
}

TEST(GradCamPP, ConstantActivationGivesUniformMap) {
  Classifier model = brightness_model(16);
  const cv::Mat grey(48, 40, CV_8UC3, cv::Scalar::all(128));
  const Explanation e = explain::gradcam_pp(model, grey);
  double lo = 0.0;
  double hi = 0.0;
  cv::minMaxLoc(e.map.data, &lo, &hi);
  EXPECT_NEAR(hi - lo, 0.0, 1e-6);
  EXPECT_NEAR(hi, 1.0, 1e-6);
}

TEST(GradCamPP, ArgmaxFallsInsideTheBrightPatch) {
  for (int side : {32, 64, 96}) {
    const int s = side / 32;
    const cv::Rect patch(20 * s, 4 * s, 8 * s, 8 * s);
    Classifier model = brightness_model(32);
    const Explanation e = explain::gradcam_pp(model, patch_image(side, patch));
    EXPECT_EQ(e.prediction.gender, Gender::kMale);
    cv::Point at;
    cv::minMaxLoc(e.map.data, nullptr, nullptr, nullptr, &at);
    EXPECT_TRUE(patch.contains(at)) << side << ": " << at;
    // Far from the patch the map is dark.
    EXPECT_LT(e.map.data.at<float>(side - 1, 0), 0.05f) << side;
  }
}

TEST(GradCamPP, OpposingTargetHasNoPositiveEvidence) {
  Classifier model = brightness_model(32);
  const Explanation e =
      explain::gradcam_pp(model, patch_image(32, {4, 4, 8, 8}), std::nullopt, Gender::kFemale);
  EXPECT_EQ(e.target, Gender::kFemale);
  EXPECT_EQ(cv::countNonZero(e.map.data), 0);
}

TEST(GradCamPP, OutputBiasDoesNotMoveTheMap) {
  std::mt19937_64 rng(2);
  cv::Mat img(40, 40, CV_8UC3);
  cv::randu(img, 0, 256);
  Classifier model = Classifier::create(tiny(3));
  const Explanation a = explain::gradcam_pp(model, img, std::nullopt, Gender::kMale);
  model.head().b3.value[0] += 7.5;
  const Explanation b = explain::gradcam_pp(model, img, std::nullopt, Gender::kMale);
  EXPECT_NEAR(b.prediction.logit - a.prediction.logit, 7.5, 1e-9);
  EXPECT_LE(cv::norm(a.map.data, b.map.data, cv::NORM_INF), 1e-6);
}

TEST(GradCamPP, DeterministicAndLeavesGradientsClean) {
  cv::Mat img(36, 36, CV_8UC3);
  cv::randu(img, 0, 256);
  Classifier model = Classifier::create(tiny(4));
  const Explanation a = explain::gradcam_pp(model, img);
  const Explanation b = explain::gradcam_pp(model, img);
  EXPECT_EQ(cv::norm(a.map.data, b.map.data, cv::NORM_INF), 0.0);
  for (auto* p : model.backbone().params()) {
    for (float g : p->grad) ASSERT_EQ(g, 0.0f);
  }
  for (auto* p : model.head().params()) {
    for (double g : p->grad) ASSERT_EQ(g, 0.0);
  }
}

TEST(GradCamPP, EarlierLayersAndUnknownLayers) {
  cv::Mat img(32, 32, CV_8UC3);
  cv::randu(img, 0, 256);
  Classifier model = Classifier::create(tiny(5));
  EXPECT_EQ(explain::gradcam_pp(model, img, "conv1").map.data.size(), img.size());
  try {
    explain::gradcam_pp(model, img, "conv9");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRejectedLayer);
  }
}

TEST(Overlay, AlphaEndpoints) {
  cv::Mat img(10, 12, CV_8UC3);
  cv::randu(img, 0, 256);
  SaliencyMap map{cv::Mat(5, 6, CV_32F, cv::Scalar(1.0f)), true};
  EXPECT_EQ(cv::norm(explain::overlay(img, map, 0.0), img, cv::NORM_INF), 0.0);
  const cv::Mat full = explain::overlay(img, map, 1.0);
  ASSERT_EQ(full.size(), img.size());
  // Jet at the top of the scale is dark red.
  const cv::Vec3b px = full.at<cv::Vec3b>(3, 3);
  EXPECT_GT(px[2], 100);
  EXPECT_LT(px[0], 10);
  EXPECT_LT(px[1], 10);
}

TEST(Overlay, RejectsBadInput) {
  const cv::Mat img(4, 4, CV_8UC3, cv::Scalar::all(0));
  SaliencyMap raw{cv::Mat(4, 4, CV_32F, cv::Scalar(0.0f)), false};
  EXPECT_THROW(explain::overlay(img, raw, 0.5), Error);
  raw.normalized = true;
  EXPECT_THROW(explain::overlay(img, raw, 1.5), Error);
  EXPECT_THROW(explain::overlay(cv::Mat(4, 4, CV_8UC1), raw, 0.5), Error);
}

TEST(WriteExplanation, WritesImagesAndRecord) {
  testing::TempDir dir;
  const cv::Rect patch(20, 4, 8, 8);
  const cv::Mat img = patch_image(32, patch);
  Classifier model = brightness_model(32);
  const Explanation e = explain::gradcam_pp(model, img);
  const auto rec = explain::write_explanation(e, img, "img-7", dir / "out" / "img-7");
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "img-7_cam.png"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "img-7_overlay.png"));
  EXPECT_EQ(nlohmann::json::parse(testing::slurp(dir / "out" / "img-7.json")), rec);
  EXPECT_EQ(rec["image_id"], "img-7");
  EXPECT_EQ(rec["predicted_gender"], "male");
  EXPECT_EQ(rec["layer"], "relu");
  EXPECT_TRUE(patch.contains({rec["map"]["argmax"]["x"].get<int>(), rec["map"]["argmax"]["y"].get<int>()}));
  const cv::Mat cam = cv::imread((dir / "out" / "img-7_cam.png").string(), cv::IMREAD_GRAYSCALE);
  EXPECT_EQ(cam.size(), img.size());
}

}  // namespace
}  // namespace chickface
