// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "chickface/classifier.hpp"
#include "chickface/error.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace chickface {
namespace {

ClassifierConfig tiny_config(std::uint64_t seed = 1) {
  ClassifierConfig cfg;
  cfg.backbone = "tiny_test";
  cfg.tiny_input_size = 16;
  cfg.head_dims = {16, 8, 1};
  cfg.lr = 3e-3;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  cfg.fine_tune = FineTune::kFull;
  cfg.seed = seed;
  return cfg;
}

// Females dark, males bright, with pixel noise.
std::vector<LabeledImage> two_clusters(int n, const std::string& prefix, std::mt19937_64& rng) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < n; ++i) {
    const bool male = i % 2 == 1;
    cv::Mat img(16, 16, CV_8UC3, cv::Scalar::all(male ? 190 : 60));
    cv::Mat noise(16, 16, CV_8UC3);
    cv::RNG(rng()).fill(noise, cv::RNG::UNIFORM, 0, 30);
    img += noise;
    out.push_back({img, prefix + std::to_string(i), male ? Gender::kMale : Gender::kFemale,
                   prefix + "f" + std::to_string(i)});
  }
  return out;
}

std::vector<LabeledImage> noise_images(int n, const std::string& prefix, std::mt19937_64& rng) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < n; ++i) {
    cv::Mat img(16, 16, CV_8UC3);
    cv::RNG(rng()).fill(img, cv::RNG::UNIFORM, 0, 256);
    const bool male = std::bernoulli_distribution(0.5)(rng);
    out.push_back({img, prefix + std::to_string(i), male ? Gender::kMale : Gender::kFemale,
                   prefix + "f" + std::to_string(i)});
  }
  return out;
}

TEST(Sigmoid, ClosedForms) {
  EXPECT_DOUBLE_EQ(classifier::sigmoid(0.0), 0.5);
  EXPECT_NEAR(classifier::sigmoid(std::log(3.0)), 0.75, 1e-15);
  EXPECT_GT(classifier::sigmoid(-800.0), -1e-300);
  EXPECT_LE(classifier::sigmoid(800.0), 1.0);
  EXPECT_LT(classifier::sigmoid(1.0), classifier::sigmoid(1.5));
}

TEST(DecideGender, StrictThreshold) {
  EXPECT_EQ(classifier::decide_gender(0.5, 0.5), Gender::kFemale);
  EXPECT_EQ(classifier::decide_gender(0.7), Gender::kMale);
  EXPECT_EQ(classifier::decide_gender(0.3), Gender::kFemale);
}

TEST(BceLoss, ClosedForms) {
  EXPECT_NEAR(classifier::bce_loss(0.5, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(classifier::bce_loss(0.5, 1), 0.693147, 1e-6);
  EXPECT_LE(classifier::bce_loss(1.0, 1), 1e-6);
  EXPECT_LE(classifier::bce_loss(0.0, 0), 1e-6);
  EXPECT_NEAR(classifier::bce_loss(1.0 - classifier::kBceEps, 0), -std::log(classifier::kBceEps),
              1e-6);
  EXPECT_NEAR(classifier::bce_loss(1.0, 0), 16.118, 1e-3);
}

TEST(Head, ZeroWeightsGiveZeroLogit) {
  const Head h = Head::zeros(5, {4, 3, 1});
  EXPECT_EQ(classifier::head_forward(std::vector<double>{1, 2, 3, 4, 5}, h), 0.0);
}

TEST(Head, HandComposedChain) {
  Head h = Head::zeros(1, {1, 1, 1});
  h.w1.value = {2.0};
  h.w2.value = {2.0};
  h.w3.value = {2.0};
  EXPECT_DOUBLE_EQ(classifier::head_forward(std::vector<double>{1.0}, h), 8.0);
}

TEST(Head, DimensionMismatchIsRejected) {
  const Head h = Head::zeros(3, {2, 2, 1});
  EXPECT_THROW(classifier::head_forward(std::vector<double>{1.0}, h), Error);
}

TEST(Head, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Head h = Head::random(8, {6, 5, 1}, rng);  // 91 parameters
    // Random biases too, so no pre-activation sits exactly on a ReLU kink.
    for (auto* b : {&h.b1, &h.b2, &h.b3}) {
      for (auto& v : b->value) v = testing::uniform(rng, -0.5, 0.5);
    }
    std::vector<double> f(8);
    for (auto& v : f) v = testing::uniform(rng, -2, 2);

    h.zero_grad();
    Head::Cache cache;
    h.forward(f, &cache);
    const std::vector<double> df = h.backward(cache, 1.0);
    const oracle::HeadGradients fd = oracle::finite_difference(h, f);

    auto rel = [](double a, double b) {
      return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
    };
    double worst = 0.0;
    const auto params = h.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t i = 0; i < params[p]->grad.size(); ++i) {
        worst = std::max(worst, rel(params[p]->grad[i], fd.params[p][i]));
      }
    }
    for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, rel(df[i], fd.features[i]));
    EXPECT_LT(worst, 1e-4) << "trial " << trial;
  }
}

TEST(ExtractFeatures, ZeroImageGivesZeroVector) {
  Classifier c = Classifier::create(tiny_config());
  const auto f = c.extract_features(cv::Mat(16, 16, CV_8UC3, cv::Scalar::all(0)));
  ASSERT_EQ(static_cast<int>(f.size()), c.backbone().feature_dim());
  for (double v : f) EXPECT_EQ(v, 0.0);
}

TEST(ExtractFeatures, DeterministicAndSensitiveToOnePixel) {
  Classifier c = Classifier::create(tiny_config());
  cv::Mat img(16, 16, CV_8UC3);
  cv::randu(img, 0, 256);
  const auto a = c.extract_features(img);
  EXPECT_EQ(a, c.extract_features(img));
  cv::Mat other = img.clone();
  other.at<cv::Vec3b>(7, 7) = cv::Vec3b(255, 255, 255) - img.at<cv::Vec3b>(7, 7);
  EXPECT_NE(a, c.extract_features(other));
}

TEST(ExtractFeatures, WrongChannelCountIsRejected) {
  Classifier c = Classifier::create(tiny_config());
  EXPECT_THROW(c.extract_features(cv::Mat(16, 16, CV_8UC4)), Error);
}

TEST(Predict, GenderFollowsThreshold) {
  Classifier c = Classifier::create(tiny_config());
  const std::vector<double> f(16, 0.3);
  const Prediction p = c.predict_features(f);
  EXPECT_DOUBLE_EQ(p.p, classifier::sigmoid(p.logit));
  EXPECT_EQ(p.gender, classifier::decide_gender(p.p, 0.5));
}

TEST(Config, ValidationAndJsonRoundTrip) {
  ClassifierConfig cfg = tiny_config();
  EXPECT_EQ(ClassifierConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  cfg.threshold = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.lr = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny_config();
  cfg.backbone = "lenet";
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Train, SeparableClustersReachPerfectValidation) {
  std::mt19937_64 rng(1);
  const auto train = two_clusters(40, "tr", rng);
  const auto val = two_clusters(20, "va", rng);
  const TrainResult r = classifier::train_classifier(train, val, tiny_config());
  EXPECT_EQ(r.best_val_accuracy, 1.0);
  EXPECT_GE(r.best_epoch, 1);
  EXPECT_EQ(r.history.size(), 20u);
  EXPECT_EQ(r.best_val_scores.size(), val.size());
}

TEST(Train, ZeroEpochsKeepsUntrainedModel) {
  std::mt19937_64 rng(2);
  ClassifierConfig cfg = tiny_config();
  cfg.epochs = 0;
  const auto val = two_clusters(6, "va", rng);
  TrainResult r = classifier::train_classifier(two_clusters(6, "tr", rng), val, cfg);
  EXPECT_EQ(r.best_epoch, 0);
  EXPECT_TRUE(r.history.empty());
  Classifier fresh = Classifier::create(cfg);
  EXPECT_EQ(r.best.predict(val[0].image).logit, fresh.predict(val[0].image).logit);
}

TEST(Train, ShuffledLabelsStayNearChance) {
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 rng(seed);
    const auto train = noise_images(120, "tr", rng);
    const auto val = noise_images(200, "va", rng);
    const TrainResult r = classifier::train_classifier(train, val, tiny_config(seed));
    EXPECT_NEAR(r.best_val_accuracy, 0.5, 0.1) << "seed " << seed;
  }
}

TEST(Train, OverlappingIdsAreAProtocolError) {
  std::mt19937_64 rng(3);
  auto train = two_clusters(6, "x", rng);
  auto val = two_clusters(4, "x", rng);
  try {
    classifier::train_classifier(train, val, tiny_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocol);
  }
  EXPECT_THROW(classifier::train_classifier({}, val, tiny_config()), Error);
}

TEST(Train, SeededRunsAreIdentical) {
  std::mt19937_64 rng(4);
  const auto train = two_clusters(16, "tr", rng);
  const auto val = two_clusters(8, "va", rng);
  ClassifierConfig cfg = tiny_config();
  cfg.epochs = 4;
  const TrainResult a = classifier::train_classifier(train, val, cfg);
  const TrainResult b = classifier::train_classifier(train, val, cfg);
  EXPECT_EQ(classifier::history_csv(a.history), classifier::history_csv(b.history));
  EXPECT_EQ(a.best_val_scores, b.best_val_scores);
}

TEST(Train, BestEpochIsEarliestMaximum) {
  std::mt19937_64 rng(5);
  const TrainResult r =
      classifier::train_classifier(two_clusters(40, "tr", rng), two_clusters(20, "va", rng),
                                   tiny_config());
  double best = 0.0;
  int epoch = 0;
  for (const auto& e : r.history) {
    if (e.val_accuracy > best) {
      best = e.val_accuracy;
      epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, epoch);
  EXPECT_EQ(r.best_val_accuracy, best);
}

TEST(Classifier, SaveLoadPreservesPredictions) {
  testing::TempDir dir;
  std::mt19937_64 rng(6);
  ClassifierConfig cfg = tiny_config();
  cfg.epochs = 2;
  const auto val = two_clusters(6, "va", rng);
  TrainResult r = classifier::train_classifier(two_clusters(10, "tr", rng), val, cfg);
  r.best.save(dir / "c.ckfm");
  Classifier loaded = Classifier::load(dir / "c.ckfm");
  for (const auto& v : val) {
    EXPECT_EQ(loaded.predict(v.image).logit, r.best.predict(v.image).logit);
  }
}

TEST(Backbones, NamedBackboneWithoutWeightsIsAConfigError) {
  ClassifierConfig cfg;
  cfg.backbone = "resnet50";
  EXPECT_THROW(make_backbone(cfg), Error);
  EXPECT_EQ(backbone_input_size(cfg), 224);
  cfg.backbone = "inception_v3";
  EXPECT_EQ(backbone_input_size(cfg), 299);
}

}  // namespace
}  // namespace chickface
