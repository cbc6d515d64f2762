// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"

namespace chickface {

void KeypointModelConfig::validate() const {
  if (stride <= 0 || input_width <= 0 || input_height <= 0) {
    throw Error(ErrorCode::kConfig, "keypoint input size and stride must be positive");
  }
  if (input_width % stride != 0 || input_height % stride != 0) {
    throw Error(ErrorCode::kConfig, "keypoint stride must divide the input size");
  }
  if (!(sigma > 0.0)) throw Error(ErrorCode::kConfig, "keypoint sigma must be positive");
}

nlohmann::json KeypointModelConfig::to_json() const {
  return {{"input_width", input_width}, {"input_height", input_height},
          {"stride", stride},           {"sigma", sigma},
          {"visibility_floor", visibility_floor}, {"backbone_ref", backbone_ref}};
}

KeypointModelConfig KeypointModelConfig::from_json(const nlohmann::json& j) {
  KeypointModelConfig c;
  c.input_width = j.value("input_width", c.input_width);
  c.input_height = j.value("input_height", c.input_height);
  c.stride = j.value("stride", c.stride);
  c.sigma = j.value("sigma", c.sigma);
  c.visibility_floor = j.value("visibility_floor", c.visibility_floor);
  c.backbone_ref = j.value("backbone_ref", c.backbone_ref);
  c.validate();
  return c;
}

GroundTruthKeypointModel::GroundTruthKeypointModel(KeypointSet kps, cv::Size face_size,
                                                   KeypointModelConfig cfg)
    : kps_(std::move(kps)), face_size_(face_size), cfg_(std::move(cfg)) {}

Heatmaps GroundTruthKeypointModel::infer(const cv::Mat&) {
  return keypoints::render_targets(keypoints::to_input_coords(kps_, face_size_, cfg_), cfg_);
}

namespace {

nn::Tensor input_tensor(const cv::Mat& input) {
  const nn::Tensor rgb = nn::from_image(input, {0.5f, 0.5f, 0.5f}, {0.5f, 0.5f, 0.5f});
  nn::Tensor x(5, rgb.h, rgb.w);
  std::copy(rgb.data.begin(), rgb.data.end(), x.data.begin());
  for (int y = 0; y < x.h; ++y) {
    for (int xx = 0; xx < x.w; ++xx) {
      x.at(3, y, xx) = 2.0f * (xx + 0.5f) / x.w - 1.0f;
      x.at(4, y, xx) = 2.0f * (y + 0.5f) / x.h - 1.0f;
    }
  }
  return x;
}

nn::Network build_heatmap_net() {
  nn::Network net;
  net.add("conv1", std::make_unique<nn::Conv2d>(5, 16, 3));
  net.add("relu1", std::make_unique<nn::Relu>());
  net.add("pool1", std::make_unique<nn::MaxPool2>());
  net.add("conv2", std::make_unique<nn::Conv2d>(16, 32, 3));
  net.add("relu2", std::make_unique<nn::Relu>());
  net.add("pool2", std::make_unique<nn::MaxPool2>());
  net.add("conv3", std::make_unique<nn::Conv2d>(32, 32, 3));
  net.add("relu3", std::make_unique<nn::Relu>());
  net.add("head", std::make_unique<nn::Conv2d>(32, kNumLandmarks, 1));
  return net;
}

}  // namespace

TinyHeatmapModel::TinyHeatmapModel(const KeypointModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), net_(build_heatmap_net()) {
  cfg_.validate();
  if (cfg_.stride != kStride) {
    throw Error(ErrorCode::kConfig, "tiny heatmap model has a fixed stride of 4");
  }
  std::mt19937_64 rng(seed);
  for (const char* name : {"conv1", "conv2", "conv3", "head"}) {
    static_cast<nn::Conv2d&>(net_.layer(name)).init_he(rng);
  }
  // Start the heatmap head near zero so early outputs sit close to the
  // mostly-zero targets.
  for (auto& w : static_cast<nn::Conv2d&>(net_.layer("head")).weight().value) w *= 0.01f;
}

nn::Tensor TinyHeatmapModel::forward(const cv::Mat& input) {
  if (input.cols != cfg_.input_width || input.rows != cfg_.input_height) {
    throw Error(ErrorCode::kModel, "keypoint model input has the wrong size");
  }
  return net_.forward(input_tensor(input));
}

Heatmaps TinyHeatmapModel::infer(const cv::Mat& input) {
  Heatmaps maps{forward(input), cfg_.stride};
  for (auto& v : maps.data.data) v = std::max(v, 0.0f);
  return maps;
}

nn::ModelFile TinyHeatmapModel::to_file() {
  nn::ModelFile file;
  file.header = {{"kind", "tiny_heatmap"}, {"config", cfg_.to_json()}, {"layers", net_.describe()}};
  nn::store_params(file, "", net_.params());
  return file;
}

TinyHeatmapModel TinyHeatmapModel::from_file(const nn::ModelFile& file) {
  if (file.header.value("kind", "") != "tiny_heatmap") {
    throw Error(ErrorCode::kModel, "model file does not hold a tiny heatmap model");
  }
  TinyHeatmapModel model(KeypointModelConfig::from_json(file.header.at("config")), 0);
  nn::restore_params(file, "", model.net_.params());
  return model;
}

void TinyHeatmapModel::save(const std::filesystem::path& path) { to_file().save(path); }

TinyHeatmapModel TinyHeatmapModel::load(const std::filesystem::path& path) {
  return from_file(nn::ModelFile::load(path));
}

namespace keypoints {

cv::Mat prepare_input(const cv::Mat& face, const KeypointModelConfig& cfg) {
  if (face.empty()) throw Error(ErrorCode::kInvalidInput, "empty face image");
  cv::Mat bgr = face;
  if (face.channels() == 1) cv::cvtColor(face, bgr, cv::COLOR_GRAY2BGR);
  if (bgr.cols == cfg.input_width && bgr.rows == cfg.input_height) return bgr.clone();
  cv::Mat out;
  cv::resize(bgr, out, cv::Size(cfg.input_width, cfg.input_height), 0, 0, cv::INTER_LINEAR);
  return out;
}

KeypointSet to_input_coords(const KeypointSet& kps, cv::Size face_size,
                            const KeypointModelConfig& cfg) {
  const double sx = static_cast<double>(cfg.input_width) / face_size.width;
  const double sy = static_cast<double>(cfg.input_height) / face_size.height;
  KeypointSet out;
  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto lm = static_cast<Landmark>(i);
    const Point2 p = kps.point(lm);
    out.set(lm, {p.x * sx, p.y * sy}, kps.visible(lm));
  }
  return out;
}

Heatmaps render_targets(const KeypointSet& kps, const KeypointModelConfig& cfg) {
  cfg.validate();
  const int gw = cfg.grid_width();
  const int gh = cfg.grid_height();
  Heatmaps maps{nn::Tensor(kNumLandmarks, gh, gw), cfg.stride};
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  for (int c = 0; c < kNumLandmarks; ++c) {
    const auto lm = static_cast<Landmark>(c);
    if (!kps.visible(lm)) continue;
    const double u = kps.point(lm).x / cfg.stride - 0.5;
    const double v = kps.point(lm).y / cfg.stride - 0.5;
    for (int i = 0; i < gh; ++i) {
      for (int j = 0; j < gw; ++j) {
        const double d2 = (j - u) * (j - u) + (i - v) * (i - v);
        maps.data.at(c, i, j) = static_cast<float>(std::exp(-d2 * inv));
      }
    }
  }
  return maps;
}

namespace {

// -0.25, 0 or +0.25 cells toward the larger neighbour. A neighbour outside the
// grid is extrapolated from the other one assuming a Gaussian peak of width
// `sigma`: for a Gaussian, h(-1) * h(+1) = h(0)^2 * exp(-1 / sigma^2).
double quarter_offset(std::optional<double> prev, double centre, std::optional<double> next,
                      double sigma) {
  if (!prev && !next) return 0.0;
  const double k = centre * centre * std::exp(-1.0 / (sigma * sigma));
  if (!prev) prev = *next > 0.0 ? k / *next : 0.0;
  if (!next) next = *prev > 0.0 ? k / *prev : 0.0;
  if (*next > *prev) return 0.25;
  if (*prev > *next) return -0.25;
  return 0.0;
}

}  // namespace

KeypointSet decode(const Heatmaps& maps, cv::Size orig_size, const KeypointModelConfig& cfg) {
  const nn::Tensor& t = maps.data;
  if (t.c != kNumLandmarks) throw Error(ErrorCode::kModel, "heatmaps must have 7 channels");
  const double in_w = static_cast<double>(t.w) * maps.stride;
  const double in_h = static_cast<double>(t.h) * maps.stride;
  const double sx = orig_size.width / in_w;
  const double sy = orig_size.height / in_h;

  KeypointSet out;
  for (int c = 0; c < kNumLandmarks; ++c) {
    int bi = 0;
    int bj = 0;
    float best = t.at(c, 0, 0);
    for (int i = 0; i < t.h; ++i) {
      for (int j = 0; j < t.w; ++j) {
        if (t.at(c, i, j) > best) {
          best = t.at(c, i, j);
          bi = i;
          bj = j;
        }
      }
    }
    const auto at = [&](int i, int j) -> std::optional<double> {
      if (i < 0 || j < 0 || i >= t.h || j >= t.w) return std::nullopt;
      return t.at(c, i, j);
    };
    const double dx = quarter_offset(at(bi, bj - 1), best, at(bi, bj + 1), cfg.sigma);
    const double dy = quarter_offset(at(bi - 1, bj), best, at(bi + 1, bj), cfg.sigma);
    const double x = (bj + 0.5 + dx) * maps.stride;
    const double y = (bi + 0.5 + dy) * maps.stride;
    out.set(static_cast<Landmark>(c), {x * sx, y * sy}, best >= cfg.visibility_floor);
  }
  return out;
}

KeypointSet predict_keypoints(const cv::Mat& face, KeypointModel& model,
                              const KeypointModelConfig& cfg) {
  const cv::Mat input = prepare_input(face, cfg);
  Heatmaps maps;
  try {
    maps = model.infer(input);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kModel, model.identity() + ": keypoint inference failed: " + e.what());
  }
  return decode(maps, face.size(), cfg);
}

double heatmap_mse(const nn::Tensor& pred, const nn::Tensor& target) {
  if (pred.size() != target.size() || pred.size() == 0) {
    throw Error(ErrorCode::kInvalidInput, "heatmap shapes differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data[i] - target.data[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

KeypointTrainResult train_keypoint_model(const std::vector<KeypointSample>& samples,
                                         const KeypointModelConfig& cfg,
                                         const KeypointTrainOptions& options) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidInput, "keypoint training set is empty");
  if (options.epochs < 0 || options.batch_size <= 0 || !(options.lr > 0.0)) {
    throw Error(ErrorCode::kConfig, "invalid keypoint training options");
  }
  KeypointTrainResult result{TinyHeatmapModel(cfg, options.seed), {}};
  TinyHeatmapModel& model = result.model;

  std::vector<cv::Mat> inputs;
  std::vector<nn::Tensor> targets;
  for (const auto& s : samples) {
    inputs.push_back(prepare_input(s.image, cfg));
    targets.push_back(render_targets(to_input_coords(s.keypoints, s.image.size(), cfg), cfg).data);
  }

  nn::Adam adam(options.lr);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto params = model.params();

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      for (auto* p : params) p->zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const nn::Tensor out = model.forward(inputs[idx]);
        epoch_loss += heatmap_mse(out, targets[idx]);
        nn::Tensor grad = out;
        const float scale = 2.0f / static_cast<float>(out.size());
        for (std::size_t i = 0; i < grad.size(); ++i) {
          grad.data[i] = scale * (out.data[i] - targets[idx].data[i]);
        }
        model.backward(grad);
      }
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      adam.begin_step();
      for (auto* p : params) {
        p->scale_grad(inv_batch);
        adam.update(*p);
      }
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(samples.size()));
  }
  return result;
}

}  // namespace keypoints
}  // namespace chickface
