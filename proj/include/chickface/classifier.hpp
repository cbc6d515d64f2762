// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "chickface/dataset.hpp"
#include "chickface/nn.hpp"

namespace chickface {

inline constexpr std::array<const char*, 7> kBackboneNames = {
    "alexnet", "efficientnet_b0", "inception_v3", "resnet50", "resnet101", "vgg16", "tiny_test"};

enum class FineTune { kAuto, kFull, kHead };

struct ClassifierConfig {
  std::string backbone = "resnet50";
  std::array<int, 3> head_dims{512, 128, 1};
  double lr = 1e-5;
  int epochs = 50;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  int batch_size = 32;
  FineTune fine_tune = FineTune::kAuto;
  std::optional<std::string> pretrained_ref;  // ONNX file for the named backbones
  int tiny_input_size = 64;                   // input side for tiny_test

  void validate() const;
  nlohmann::json to_json() const;
  static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Nominal square input side for a backbone name.
int backbone_input_size(const ClassifierConfig& cfg);

struct Prediction {
  double p = 0.0;
  Gender gender = Gender::kFemale;
  double logit = 0.0;
};

/// Feature extractor ending in a spatial map; the classifier pools it.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::string name() const = 0;
  virtual int input_size() const = 0;
  virtual bool trainable() const = 0;
  /// Channels of the final spatial map (the pooled feature length).
  virtual int feature_dim() const = 0;
  /// Resized, normalized CHW tensor for a BGR image.
  virtual nn::Tensor preprocess(const cv::Mat& bgr) const = 0;
  /// Final spatial map for a preprocessed input.
  virtual nn::Tensor forward(const nn::Tensor& x) = 0;
  /// Backpropagates d/d(final map). Only valid right after forward().
  virtual void backward(const nn::Tensor& grad_map) = 0;
  virtual std::vector<nn::ParamF*> params() = 0;

  /// Layers usable for saliency, in forward order; the last one is the default.
  virtual std::vector<std::string> spatial_layers() const = 0;
  virtual const nn::Tensor& activation(const std::string& layer) const = 0;
  virtual const nn::Tensor& activation_grad(const std::string& layer) const = 0;

  virtual std::unique_ptr<Backbone> clone() const = 0;
  virtual nlohmann::json describe() const = 0;
};

/// Two conv blocks (3->8, pool, 8->16) with bias-free start; runs natively so
/// it can be fine-tuned and explained end to end.
class TinyBackbone final : public Backbone {
 public:
  TinyBackbone(int input_size, std::uint64_t seed);
  /// Custom network; `layers` lists its spatial layer names in order.
  TinyBackbone(nn::Network net, int input_size, int feature_dim, std::vector<std::string> layers);

  std::string name() const override { return "tiny_test"; }
  int input_size() const override { return input_size_; }
  bool trainable() const override { return true; }
  int feature_dim() const override { return feature_dim_; }
  nn::Tensor preprocess(const cv::Mat& bgr) const override;
  nn::Tensor forward(const nn::Tensor& x) override;
  void backward(const nn::Tensor& grad_map) override;
  std::vector<nn::ParamF*> params() override { return net_.params(); }
  std::vector<std::string> spatial_layers() const override { return layers_; }
  const nn::Tensor& activation(const std::string& layer) const override;
  const nn::Tensor& activation_grad(const std::string& layer) const override;
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<TinyBackbone>(*this); }
  nlohmann::json describe() const override;

 private:
  nn::Network net_;
  int input_size_;
  int feature_dim_;
  std::vector<std::string> layers_;
};

/// Frozen pretrained backbone loaded from an ONNX export whose single output
/// is the last spatial feature map. Inputs use ImageNet normalization.
class OnnxBackbone final : public Backbone {
 public:
  OnnxBackbone(std::string name, const std::filesystem::path& onnx_path, int input_size);

  std::string name() const override { return name_; }
  int input_size() const override { return input_size_; }
  bool trainable() const override { return false; }
  int feature_dim() const override { return feature_dim_; }
  nn::Tensor preprocess(const cv::Mat& bgr) const override;
  nn::Tensor forward(const nn::Tensor& x) override;
  void backward(const nn::Tensor& grad_map) override { grad_ = grad_map; }
  std::vector<nn::ParamF*> params() override { return {}; }
  std::vector<std::string> spatial_layers() const override { return {"features"}; }
  const nn::Tensor& activation(const std::string& layer) const override;
  const nn::Tensor& activation_grad(const std::string& layer) const override;
  std::unique_ptr<Backbone> clone() const override { return std::make_unique<OnnxBackbone>(*this); }
  nlohmann::json describe() const override;

 private:
  std::string name_;
  std::filesystem::path path_;
  int input_size_;
  int feature_dim_ = 0;
  cv::dnn::Net net_;
  nn::Tensor map_;
  nn::Tensor grad_;
};

std::unique_ptr<Backbone> make_backbone(const ClassifierConfig& cfg);

/// Three affine layers with ReLU between them; scalar logit. Double precision
/// so gradients can be checked tightly.
struct Head {
  nn::ParamD w1, b1, w2, b2, w3, b3;  // w_k is [out][in]
  int in = 0, h1 = 0, h2 = 0;

  static Head zeros(int in_dim, const std::array<int, 3>& dims);
  static Head random(int in_dim, const std::array<int, 3>& dims, std::mt19937_64& rng);

  struct Cache {
    std::vector<double> x, z1, a1, z2, a2;
  };
  double forward(std::span<const double> f, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients for d(loss)/d(logit) = `dlogit`;
  /// returns d(loss)/d(features).
  std::vector<double> backward(const Cache& cache, double dlogit);

  std::vector<nn::ParamD*> params();
  void zero_grad();
};

namespace classifier {

double sigmoid(double logit);
Gender decide_gender(double p, double threshold = 0.5);
/// Binary cross-entropy, label 1 = male, with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(double p, int label);
inline constexpr double kBceEps = 1e-7;

double head_forward(std::span<const double> f, const Head& head);

}  // namespace classifier

class Classifier {
 public:
  Classifier(ClassifierConfig cfg, std::unique_ptr<Backbone> backbone, Head head);
  /// Fresh model per the config (random head, seeded).
  static Classifier create(const ClassifierConfig& cfg);

  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;

  const ClassifierConfig& config() const { return cfg_; }
  Backbone& backbone() { return *backbone_; }
  Head& head() { return head_; }
  const Head& head() const { return head_; }
  bool trains_backbone() const;

  /// Pooled feature vector of an image.
  std::vector<double> extract_features(const cv::Mat& bgr);
  std::vector<double> features_from_tensor(const nn::Tensor& x);
  Prediction predict(const cv::Mat& bgr);
  Prediction predict_features(std::span<const double> f) const;

  void save(const std::filesystem::path& path) const;
  static Classifier load(const std::filesystem::path& path);

 private:
  ClassifierConfig cfg_;
  std::unique_ptr<Backbone> backbone_;
  Head head_;
};

struct LabeledImage {
  cv::Mat image;
  std::string chick_id;
  Gender gender = Gender::kFemale;
  std::string frame_id;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Classifier best;
  int best_epoch = 0;  // 0 = untrained model
  double best_val_accuracy = 0.0;
  std::vector<double> best_val_scores;  // p per validation image at the best epoch
  std::vector<EpochStats> history;
};

namespace classifier {

TrainResult train_classifier(const std::vector<LabeledImage>& train,
                             const std::vector<LabeledImage>& val, const ClassifierConfig& cfg);

std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace classifier
}  // namespace chickface
