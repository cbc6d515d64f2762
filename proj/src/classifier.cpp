// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"

namespace chickface {

namespace {

constexpr std::array<float, 3> kImageNetMean = {0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kImageNetStd = {0.229f, 0.224f, 0.225f};

std::string_view fine_tune_name(FineTune f) {
  switch (f) {
    case FineTune::kAuto: return "auto";
    case FineTune::kFull: return "full";
    case FineTune::kHead: return "head";
  }
  return "auto";
}

FineTune fine_tune_from(const std::string& s) {
  if (s == "auto") return FineTune::kAuto;
  if (s == "full") return FineTune::kFull;
  if (s == "head") return FineTune::kHead;
  throw Error(ErrorCode::kConfig, "fine_tune must be auto, full or head, got '" + s + "'");
}

cv::Mat resized_bgr(const cv::Mat& image, int side) {
  if (image.empty()) throw Error(ErrorCode::kInvalidInput, "empty classifier input");
  if (image.channels() != 3) {
    throw Error(ErrorCode::kInvalidInput,
                "classifier input needs 3 channels, got " + std::to_string(image.channels()));
  }
  cv::Mat out;
  if (image.cols == side && image.rows == side) return image;
  cv::resize(image, out, cv::Size(side, side), 0, 0, cv::INTER_LINEAR);
  return out;
}

std::vector<double> pool(const nn::Tensor& map) {
  std::vector<double> f(map.c, 0.0);
  const int n = map.plane();
  for (int c = 0; c < map.c; ++c) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += map.data[static_cast<std::size_t>(c) * n + i];
    f[c] = s / n;
  }
  return f;
}

nn::Tensor unpool_grad(const nn::Tensor& map, std::span<const double> dfeat) {
  nn::Tensor g(map.c, map.h, map.w);
  const int n = map.plane();
  for (int c = 0; c < map.c; ++c) {
    std::fill_n(g.data.begin() + static_cast<std::ptrdiff_t>(c) * n, n,
                static_cast<float>(dfeat[c] / n));
  }
  return g;
}

void init_normal(nn::ParamD& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : p.value) v = dist(rng);
}

}  // namespace

// --- config ----------------------------------------------------------------

void ClassifierConfig::validate() const {
  if (std::find(kBackboneNames.begin(), kBackboneNames.end(), backbone) == kBackboneNames.end()) {
    throw Error(ErrorCode::kConfig, "unknown backbone '" + backbone + "'");
  }
  if (!(lr > 0.0)) throw Error(ErrorCode::kConfig, "lr must be positive");
  if (epochs < 0) throw Error(ErrorCode::kConfig, "epochs must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kConfig, "threshold must be in (0, 1)");
  }
  if (head_dims[0] <= 0 || head_dims[1] <= 0 || head_dims[2] != 1) {
    throw Error(ErrorCode::kConfig, "head_dims must be three positive widths ending in 1");
  }
  if (batch_size <= 0) throw Error(ErrorCode::kConfig, "batch_size must be positive");
  if (tiny_input_size < 4) throw Error(ErrorCode::kConfig, "tiny_input_size must be >= 4");
}

nlohmann::json ClassifierConfig::to_json() const {
  nlohmann::json j = {{"backbone", backbone},
                      {"head_dims", head_dims},
                      {"lr", lr},
                      {"epochs", epochs},
                      {"threshold", threshold},
                      {"seed", seed},
                      {"batch_size", batch_size},
                      {"fine_tune", fine_tune_name(fine_tune)},
                      {"tiny_input_size", tiny_input_size}};
  j["pretrained_ref"] = pretrained_ref ? nlohmann::json(*pretrained_ref) : nlohmann::json(nullptr);
  return j;
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
  ClassifierConfig c;
  c.backbone = j.value("backbone", c.backbone);
  if (j.contains("head_dims")) {
    const auto dims = j.at("head_dims").get<std::vector<int>>();
    if (dims.size() != 3) throw Error(ErrorCode::kConfig, "head_dims needs exactly three widths");
    c.head_dims = {dims[0], dims[1], dims[2]};
  }
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.threshold = j.value("threshold", c.threshold);
  c.seed = j.value("seed", c.seed);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.fine_tune = fine_tune_from(j.value("fine_tune", std::string("auto")));
  c.tiny_input_size = j.value("tiny_input_size", c.tiny_input_size);
  if (j.contains("pretrained_ref") && !j.at("pretrained_ref").is_null()) {
    c.pretrained_ref = j.at("pretrained_ref").get<std::string>();
  }
  c.validate();
  return c;
}

int backbone_input_size(const ClassifierConfig& cfg) {
  if (cfg.backbone == "tiny_test") return cfg.tiny_input_size;
  if (cfg.backbone == "inception_v3") return 299;
  return 224;
}

// --- backbones -------------------------------------------------------------

TinyBackbone::TinyBackbone(int input_size, std::uint64_t seed)
    : input_size_(input_size), feature_dim_(16),
      layers_{"conv1", "relu1", "pool1", "conv2", "relu2"} {
  net_.add("conv1", std::make_unique<nn::Conv2d>(3, 8, 3));
  net_.add("relu1", std::make_unique<nn::Relu>());
  net_.add("pool1", std::make_unique<nn::MaxPool2>());
  net_.add("conv2", std::make_unique<nn::Conv2d>(8, 16, 3));
  net_.add("relu2", std::make_unique<nn::Relu>());
  std::mt19937_64 rng(seed);
  static_cast<nn::Conv2d&>(net_.layer("conv1")).init_he(rng);
  static_cast<nn::Conv2d&>(net_.layer("conv2")).init_he(rng);
}

TinyBackbone::TinyBackbone(nn::Network net, int input_size, int feature_dim,
                           std::vector<std::string> layers)
    : net_(std::move(net)), input_size_(input_size), feature_dim_(feature_dim),
      layers_(std::move(layers)) {}

nn::Tensor TinyBackbone::preprocess(const cv::Mat& bgr) const {
  return nn::from_image(resized_bgr(bgr, input_size_));
}

nn::Tensor TinyBackbone::forward(const nn::Tensor& x) { return net_.forward(x); }

void TinyBackbone::backward(const nn::Tensor& grad_map) { net_.backward(grad_map); }

const nn::Tensor& TinyBackbone::activation(const std::string& layer) const {
  return net_.output(layer);
}

const nn::Tensor& TinyBackbone::activation_grad(const std::string& layer) const {
  return net_.output_grad(layer);
}

nlohmann::json TinyBackbone::describe() const {
  return {{"name", name()}, {"input_size", input_size_}, {"layers", net_.describe()}};
}

OnnxBackbone::OnnxBackbone(std::string name, const std::filesystem::path& onnx_path,
                           int input_size)
    : name_(std::move(name)), path_(onnx_path), input_size_(input_size) {
  try {
    net_ = cv::dnn::readNetFromONNX(onnx_path.string());
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::kModel, "cannot load backbone " + onnx_path.string() + ": " + e.what());
  }
  if (net_.empty()) throw Error(ErrorCode::kModel, "empty backbone " + onnx_path.string());
  feature_dim_ = forward(nn::Tensor(3, input_size_, input_size_)).c;
}

nn::Tensor OnnxBackbone::preprocess(const cv::Mat& bgr) const {
  return nn::from_image(resized_bgr(bgr, input_size_), kImageNetMean, kImageNetStd);
}

nn::Tensor OnnxBackbone::forward(const nn::Tensor& x) {
  const int shape[4] = {1, x.c, x.h, x.w};
  cv::Mat blob(4, shape, CV_32F, const_cast<float*>(x.data.data()));
  net_.setInput(blob);
  cv::Mat out;
  try {
    out = net_.forward();
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::kModel, name_ + ": backbone inference failed: " + e.what());
  }
  if (out.dims == 4) {
    map_ = nn::Tensor(out.size[1], out.size[2], out.size[3]);
  } else if (out.dims == 2) {
    map_ = nn::Tensor(out.size[1], 1, 1);
  } else {
    throw Error(ErrorCode::kModel, name_ + ": unexpected backbone output rank");
  }
  std::copy_n(out.ptr<float>(), map_.size(), map_.data.begin());
  return map_;
}

const nn::Tensor& OnnxBackbone::activation(const std::string& layer) const {
  if (layer != "features") throw Error(ErrorCode::kRejectedLayer, "no layer named '" + layer + "'");
  return map_;
}

const nn::Tensor& OnnxBackbone::activation_grad(const std::string& layer) const {
  if (layer != "features") throw Error(ErrorCode::kRejectedLayer, "no layer named '" + layer + "'");
  return grad_;
}

nlohmann::json OnnxBackbone::describe() const {
  return {{"name", name_}, {"input_size", input_size_}, {"onnx", path_.string()},
          {"feature_dim", feature_dim_}};
}

std::unique_ptr<Backbone> make_backbone(const ClassifierConfig& cfg) {
  cfg.validate();
  if (cfg.backbone == "tiny_test") {
    auto bb = std::make_unique<TinyBackbone>(cfg.tiny_input_size, cfg.seed);
    if (cfg.pretrained_ref) {
      const auto file = nn::ModelFile::load(*cfg.pretrained_ref);
      nn::restore_params(file, "backbone.", bb->params());
    }
    return bb;
  }
  if (!cfg.pretrained_ref) {
    throw Error(ErrorCode::kConfig,
                "backbone " + cfg.backbone + " needs pretrained_ref pointing to an ONNX export");
  }
  return std::make_unique<OnnxBackbone>(cfg.backbone, *cfg.pretrained_ref, backbone_input_size(cfg));
}

// --- head ------------------------------------------------------------------

Head Head::zeros(int in_dim, const std::array<int, 3>& dims) {
  Head h;
  h.in = in_dim;
  h.h1 = dims[0];
  h.h2 = dims[1];
  h.w1 = nn::ParamD("w1", static_cast<std::size_t>(h.h1) * in_dim);
  h.b1 = nn::ParamD("b1", h.h1);
  h.w2 = nn::ParamD("w2", static_cast<std::size_t>(h.h2) * h.h1);
  h.b2 = nn::ParamD("b2", h.h2);
  h.w3 = nn::ParamD("w3", h.h2);
  h.b3 = nn::ParamD("b3", 1);
  return h;
}

Head Head::random(int in_dim, const std::array<int, 3>& dims, std::mt19937_64& rng) {
  Head h = zeros(in_dim, dims);
  init_normal(h.w1, std::sqrt(2.0 / in_dim), rng);
  init_normal(h.w2, std::sqrt(2.0 / h.h1), rng);
  init_normal(h.w3, std::sqrt(1.0 / h.h2), rng);
  return h;
}

double Head::forward(std::span<const double> f, Cache* cache) const {
  if (static_cast<int>(f.size()) != in) {
    throw Error(ErrorCode::kInvalidInput, "head expects " + std::to_string(in) +
                                              " features, got " + std::to_string(f.size()));
  }
  std::vector<double> z1(h1), a1(h1), z2(h2), a2(h2);
  for (int o = 0; o < h1; ++o) {
    double s = b1.value[o];
    const double* w = w1.value.data() + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) s += w[i] * f[i];
    z1[o] = s;
    a1[o] = s > 0.0 ? s : 0.0;
  }
  for (int o = 0; o < h2; ++o) {
    double s = b2.value[o];
    const double* w = w2.value.data() + static_cast<std::size_t>(o) * h1;
    for (int i = 0; i < h1; ++i) s += w[i] * a1[i];
    z2[o] = s;
    a2[o] = s > 0.0 ? s : 0.0;
  }
  double logit = b3.value[0];
  for (int i = 0; i < h2; ++i) logit += w3.value[i] * a2[i];
  if (cache) {
    cache->x.assign(f.begin(), f.end());
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
    cache->z2 = std::move(z2);
    cache->a2 = std::move(a2);
  }
  return logit;
}

std::vector<double> Head::backward(const Cache& c, double dlogit) {
  b3.grad[0] += dlogit;
  std::vector<double> dz2(h2);
  for (int i = 0; i < h2; ++i) {
    w3.grad[i] += dlogit * c.a2[i];
    dz2[i] = c.z2[i] > 0.0 ? dlogit * w3.value[i] : 0.0;
  }
  std::vector<double> da1(h1, 0.0);
  for (int o = 0; o < h2; ++o) {
    b2.grad[o] += dz2[o];
    if (dz2[o] == 0.0) continue;
    double* g = w2.grad.data() + static_cast<std::size_t>(o) * h1;
    const double* w = w2.value.data() + static_cast<std::size_t>(o) * h1;
    for (int i = 0; i < h1; ++i) {
      g[i] += dz2[o] * c.a1[i];
      da1[i] += dz2[o] * w[i];
    }
  }
  std::vector<double> dx(in, 0.0);
  for (int o = 0; o < h1; ++o) {
    const double dz1 = c.z1[o] > 0.0 ? da1[o] : 0.0;
    b1.grad[o] += dz1;
    if (dz1 == 0.0) continue;
    double* g = w1.grad.data() + static_cast<std::size_t>(o) * in;
    const double* w = w1.value.data() + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) {
      g[i] += dz1 * c.x[i];
      dx[i] += dz1 * w[i];
    }
  }
  return dx;
}

std::vector<nn::ParamD*> Head::params() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

void Head::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

namespace classifier {

double sigmoid(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

Gender decide_gender(double p, double threshold) {
  return p > threshold ? Gender::kMale : Gender::kFemale;
}

double bce_loss(double p, int label) {
  const double q = std::clamp(p, kBceEps, 1.0 - kBceEps);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

double head_forward(std::span<const double> f, const Head& head) { return head.forward(f); }

}  // namespace classifier

// --- classifier ------------------------------------------------------------

Classifier::Classifier(ClassifierConfig cfg, std::unique_ptr<Backbone> backbone, Head head)
    : cfg_(std::move(cfg)), backbone_(std::move(backbone)), head_(std::move(head)) {
  if (head_.in != backbone_->feature_dim()) {
    throw Error(ErrorCode::kModel, "head input width does not match the backbone");
  }
}

Classifier Classifier::create(const ClassifierConfig& cfg) {
  auto bb = make_backbone(cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  Head head = Head::random(bb->feature_dim(), cfg.head_dims, rng);
  return Classifier(cfg, std::move(bb), std::move(head));
}

Classifier::Classifier(const Classifier& other)
    : cfg_(other.cfg_), backbone_(other.backbone_->clone()), head_(other.head_) {}

Classifier& Classifier::operator=(const Classifier& other) {
  if (this != &other) {
    cfg_ = other.cfg_;
    backbone_ = other.backbone_->clone();
    head_ = other.head_;
  }
  return *this;
}

bool Classifier::trains_backbone() const {
  switch (cfg_.fine_tune) {
    case FineTune::kFull: return true;
    case FineTune::kHead: return false;
    case FineTune::kAuto: return backbone_->trainable();
  }
  return false;
}

std::vector<double> Classifier::features_from_tensor(const nn::Tensor& x) {
  return pool(backbone_->forward(x));
}

std::vector<double> Classifier::extract_features(const cv::Mat& bgr) {
  return features_from_tensor(backbone_->preprocess(bgr));
}

Prediction Classifier::predict_features(std::span<const double> f) const {
  Prediction pr;
  pr.logit = head_.forward(f);
  pr.p = classifier::sigmoid(pr.logit);
  pr.gender = classifier::decide_gender(pr.p, cfg_.threshold);
  return pr;
}

Prediction Classifier::predict(const cv::Mat& bgr) {
  const auto f = extract_features(bgr);
  return predict_features(f);
}

void Classifier::save(const std::filesystem::path& path) const {
  nn::ModelFile file;
  file.header = {{"kind", "classifier"},
                 {"config", cfg_.to_json()},
                 {"backbone", backbone_->describe()},
                 {"feature_dim", backbone_->feature_dim()}};
  nn::store_params(file, "backbone.", backbone_->params());
  auto& head = const_cast<Head&>(head_);
  for (const auto* p : head.params()) file.add("head." + p->name, p->value);
  file.save(path);
}

Classifier Classifier::load(const std::filesystem::path& path) {
  const auto file = nn::ModelFile::load(path);
  if (file.header.value("kind", "") != "classifier") {
    throw Error(ErrorCode::kModel, path.string() + " is not a classifier model");
  }
  ClassifierConfig cfg = ClassifierConfig::from_json(file.header.at("config"));
  auto bb = make_backbone(cfg);
  nn::restore_params(file, "backbone.", bb->params());
  Head head = Head::zeros(bb->feature_dim(), cfg.head_dims);
  for (auto* p : head.params()) {
    const auto& v = file.get_f64("head." + p->name);
    if (v.size() != p->value.size()) throw Error(ErrorCode::kModel, "head shape mismatch");
    p->value = v;
  }
  return Classifier(cfg, std::move(bb), std::move(head));
}

namespace classifier {

TrainResult train_classifier(const std::vector<LabeledImage>& train,
                             const std::vector<LabeledImage>& val, const ClassifierConfig& cfg) {
  cfg.validate();
  if (train.empty() || val.empty()) {
    throw Error(ErrorCode::kInvalidInput, "training and validation splits must be non-empty");
  }
  std::set<std::string> train_ids;
  for (const auto& s : train) train_ids.insert(s.chick_id);
  for (const auto& s : val) {
    if (train_ids.count(s.chick_id)) {
      throw Error(ErrorCode::kProtocol,
                  "chick " + s.chick_id + " appears in both training and validation");
    }
  }

  Classifier model = Classifier::create(cfg);
  const bool full = model.trains_backbone();
  if (full && !model.backbone().trainable()) {
    throw Error(ErrorCode::kConfig, "backbone " + cfg.backbone + " cannot be fine-tuned");
  }

  // Full fine-tuning re-runs the backbone, so keep inputs; head-only training
  // pools features once.
  std::vector<nn::Tensor> train_x, val_x;
  std::vector<std::vector<double>> train_f, val_f;
  for (const auto& s : train) {
    nn::Tensor x = model.backbone().preprocess(s.image);
    if (full) {
      train_x.push_back(std::move(x));
    } else {
      train_f.push_back(model.features_from_tensor(x));
    }
  }
  for (const auto& s : val) {
    nn::Tensor x = model.backbone().preprocess(s.image);
    if (full) {
      val_x.push_back(std::move(x));
    } else {
      val_f.push_back(model.features_from_tensor(x));
    }
  }

  auto evaluate = [&](Classifier& m, std::vector<double>* scores) {
    std::size_t correct = 0;
    scores->clear();
    for (std::size_t i = 0; i < val.size(); ++i) {
      const Prediction pr =
          full ? m.predict_features(m.features_from_tensor(val_x[i])) : m.predict_features(val_f[i]);
      scores->push_back(pr.p);
      if (pr.gender == val[i].gender) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(val.size());
  };

  std::vector<double> scores;
  const double initial_acc = evaluate(model, &scores);
  TrainResult result{model, 0, initial_acc, scores, {}};
  if (cfg.epochs == 0) return result;

  nn::Adam adam(cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto head_params = model.head().params();
  auto bb_params = model.backbone().params();
  bool have_best = false;
  Head::Cache cache;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      model.head().zero_grad();
      if (full) {
        for (auto* p : bb_params) p->zero_grad();
      }
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const int y = train[idx].gender == Gender::kMale ? 1 : 0;
        nn::Tensor map;
        std::vector<double> f;
        if (full) {
          map = model.backbone().forward(train_x[idx]);
          f = pool(map);
        }
        const double logit = model.head().forward(full ? f : train_f[idx], &cache);
        const double p = sigmoid(logit);
        loss_sum += bce_loss(p, y);
        const auto dfeat = model.head().backward(cache, p - y);
        if (full) model.backbone().backward(unpool_grad(map, dfeat));
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      adam.begin_step();
      for (auto* p : head_params) {
        p->scale_grad(inv);
        adam.update(*p);
      }
      if (full) {
        for (auto* p : bb_params) {
          p->scale_grad(static_cast<float>(inv));
          adam.update(*p);
        }
      }
    }
    const double acc = evaluate(model, &scores);
    result.history.push_back({epoch, loss_sum / static_cast<double>(train.size()), acc});
    if (!have_best || acc > result.best_val_accuracy) {
      have_best = true;
      result.best = model;
      result.best_epoch = epoch;
      result.best_val_accuracy = acc;
      result.best_val_scores = scores;
    }
  }
  return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_accuracy\n";
  char buf[96];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_accuracy);
    os << buf;
  }
  return os.str();
}

}  // namespace classifier
}  // namespace chickface
