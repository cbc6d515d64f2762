// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Minimal CPU network pieces: enough for the CI-scale backbone, the heatmap
// network and gradient-based saliency. Single-sample CHW tensors; batches are
// formed by accumulating gradients.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

namespace chickface::nn {

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, float fill = 0.0f)
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const { return data.size(); }
  int plane() const { return h * w; }
  float& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  float at(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  bool spatial() const { return h > 1 || w > 1; }
};

/// BGR uint8 image -> CHW float in RGB order: (v / 255 - mean) / std.
Tensor from_image(const cv::Mat& bgr, const std::array<float, 3>& mean = {0.f, 0.f, 0.f},
                  const std::array<float, 3>& stddev = {1.f, 1.f, 1.f});

template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> m;
  std::vector<T> v;

  Param() = default;
  Param(std::string n, std::size_t size)
      : name(std::move(n)), value(size), grad(size), m(size), v(size) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
  void scale_grad(T s) {
    for (auto& g : grad) g *= s;
  }
};

using ParamF = Param<float>;
using ParamD = Param<double>;

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Advances the step counter once; call before update().
  void begin_step() { ++t_; }

  template <typename T>
  void update(Param<T>& p) const;

  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  /// Gradient wrt the input; accumulates parameter gradients.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<ParamF*> params() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual nlohmann::json describe() const { return {{"kind", kind()}}; }
};

/// Square kernel, stride 1, zero "same" padding.
class Conv2d final : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, bool bias = true);

  std::string kind() const override { return "conv2d"; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<ParamF*> params() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  nlohmann::json describe() const override;

  void init_he(std::mt19937_64& rng);
  ParamF& weight() { return weight_; }
  ParamF& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }

 private:
  int in_, out_, k_;
  bool has_bias_;
  ParamF weight_;  // [out][in * k * k]
  ParamF bias_;
  std::vector<float> cols_;  // cached im2col of the last input
  int h_ = 0, w_ = 0;
};

class Relu final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  std::vector<std::uint8_t> mask_;
};

/// 2x2 window, stride 2; odd trailing rows/cols are dropped.
class MaxPool2 final : public Layer {
 public:
  std::string kind() const override { return "maxpool2"; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }

 private:
  std::vector<std::uint32_t> argmax_;
  int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

/// Mean over each channel plane; output is C x 1 x 1.
class GlobalAvgPool final : public Layer {
 public:
  std::string kind() const override { return "gap"; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

/// Named sequence of layers. Keeps every layer's last output and, after
/// backward(), the gradient wrt that output.
class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::string name, std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);

  std::vector<std::string> layer_names() const;
  bool has_layer(std::string_view name) const;
  Layer& layer(std::string_view name);
  const Tensor& output(std::string_view name) const;
  const Tensor& output_grad(std::string_view name) const;

  std::vector<ParamF*> params();
  void zero_grad();
  nlohmann::json describe() const;

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Tensor> outputs_;
  std::vector<Tensor> grads_;
};

/// Versioned binary container: magic, format version, JSON header, then the
/// raw little-endian blobs listed in header["tensors"] in order.
struct ModelFile {
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, std::vector<float>>> f32;
  std::vector<std::pair<std::string, std::vector<double>>> f64;

  void add(const std::string& name, const std::vector<float>& values);
  void add(const std::string& name, const std::vector<double>& values);
  const std::vector<float>& get_f32(const std::string& name) const;
  const std::vector<double>& get_f64(const std::string& name) const;

  std::string serialize() const;
  static ModelFile parse(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static ModelFile load(const std::filesystem::path& path);
};

void store_params(ModelFile& file, const std::string& prefix, std::span<ParamF* const> params);
void restore_params(const ModelFile& file, const std::string& prefix, std::span<ParamF* const> params);

/// Hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

}  // namespace chickface::nn
