// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <Eigen/Core>
#include <openssl/evp.h>

#include "chickface/error.hpp"

namespace chickface::nn {

namespace {

using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<RowMatF>;
using CMapF = Eigen::Map<const RowMatF>;

constexpr char kMagic[8] = {'C', 'K', 'F', 'M', 'O', 'D', 'E', 'L'};

}  // namespace

Tensor from_image(const cv::Mat& bgr, const std::array<float, 3>& mean,
                  const std::array<float, 3>& stddev) {
  if (bgr.type() != CV_8UC3) {
    throw Error(ErrorCode::kInvalidInput, "expected an 8-bit 3-channel image");
  }
  Tensor t(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = row[x][2 - c] / 255.0f;
        t.at(c, y, x) = (v - mean[c]) / stddev[c];
      }
    }
  }
  return t;
}

template <typename T>
void Adam::update(Param<T>& p) const {
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_);
  const T b2 = static_cast<T>(beta2_);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const T g = p.grad[i];
    p.m[i] = b1 * p.m[i] + (T(1) - b1) * g;
    p.v[i] = b2 * p.v[i] + (T(1) - b2) * g * g;
    const double mhat = p.m[i] / bc1;
    const double vhat = p.v[i] / bc2;
    p.value[i] -= static_cast<T>(lr_ * mhat / (std::sqrt(vhat) + eps_));
  }
}

template void Adam::update<float>(Param<float>&) const;
template void Adam::update<double>(Param<double>&) const;

// --- Conv2d ----------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, bool bias)
    : in_(in_channels), out_(out_channels), k_(kernel), has_bias_(bias),
      weight_("weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias_("bias", bias ? static_cast<std::size_t>(out_channels) : 0) {
  if (kernel % 2 == 0) throw Error(ErrorCode::kInvalidInput, "conv kernel must be odd");
}

void Conv2d::init_he(std::mt19937_64& rng) {
  const float stddev = std::sqrt(2.0f / static_cast<float>(in_ * k_ * k_));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& w : weight_.value) w = dist(rng);
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.c != in_) {
    throw Error(ErrorCode::kInvalidInput, "conv expects " + std::to_string(in_) +
                                              " channels, got " + std::to_string(x.c));
  }
  h_ = x.h;
  w_ = x.w;
  const int pad = k_ / 2;
  const int rows = in_ * k_ * k_;
  const int hw = h_ * w_;
  cols_.assign(static_cast<std::size_t>(rows) * hw, 0.0f);
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        float* dst = cols_.data() + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * hw;
        for (int y = 0; y < h_; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h_) continue;
          for (int xx = 0; xx < w_; ++xx) {
            const int sx = xx + kx - pad;
            if (sx < 0 || sx >= w_) continue;
            dst[y * w_ + xx] = x.at(c, sy, sx);
          }
        }
      }
    }
  }
  Tensor y(out_, h_, w_);
  MapF out(y.data.data(), out_, hw);
  out.noalias() = CMapF(weight_.value.data(), out_, rows) * CMapF(cols_.data(), rows, hw);
  if (has_bias_) {
    for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value[o];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const int pad = k_ / 2;
  const int rows = in_ * k_ * k_;
  const int hw = h_ * w_;
  CMapF dy(grad_out.data.data(), out_, hw);
  MapF(weight_.grad.data(), out_, rows).noalias() += dy * CMapF(cols_.data(), rows, hw).transpose();
  if (has_bias_) {
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dy.row(o).sum();
  }
  RowMatF dcols = CMapF(weight_.value.data(), out_, rows).transpose() * dy;

  Tensor dx(in_, h_, w_);
  for (int c = 0; c < in_; ++c) {
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        const float* src = dcols.data() + static_cast<std::size_t>((c * k_ + ky) * k_ + kx) * hw;
        for (int y = 0; y < h_; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h_) continue;
          for (int xx = 0; xx < w_; ++xx) {
            const int sx = xx + kx - pad;
            if (sx < 0 || sx >= w_) continue;
            dx.at(c, sy, sx) += src[y * w_ + xx];
          }
        }
      }
    }
  }
  return dx;
}

std::vector<ParamF*> Conv2d::params() {
  if (has_bias_) return {&weight_, &bias_};
  return {&weight_};
}

nlohmann::json Conv2d::describe() const {
  return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"kernel", k_}, {"bias", has_bias_}};
}

// --- Relu / pooling ----------------------------------------------------------

Tensor Relu::forward(const Tensor& x) {
  Tensor y = x;
  mask_.resize(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask_[i] = y.data[i] > 0.0f;
    if (!mask_[i]) y.data[i] = 0.0f;
  }
  return y;
}

Tensor Relu::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!mask_[i]) dx.data[i] = 0.0f;
  }
  return dx;
}

Tensor MaxPool2::forward(const Tensor& x) {
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  Tensor y(x.c, x.h / 2, x.w / 2);
  argmax_.resize(y.size());
  std::size_t o = 0;
  for (int c = 0; c < x.c; ++c) {
    for (int yy = 0; yy < y.h; ++yy) {
      for (int xx = 0; xx < y.w; ++xx, ++o) {
        std::uint32_t best = static_cast<std::uint32_t>((c * x.h + 2 * yy) * x.w + 2 * xx);
        float bv = x.data[best];
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const auto idx = static_cast<std::uint32_t>((c * x.h + 2 * yy + dy) * x.w + 2 * xx + dx);
            if (x.data[idx] > bv) {
              bv = x.data[idx];
              best = idx;
            }
          }
        }
        y.data[o] = bv;
        argmax_[o] = best;
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& grad_out) {
  Tensor dx(in_c_, in_h_, in_w_);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx.data[argmax_[o]] += grad_out.data[o];
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
  in_c_ = x.c;
  in_h_ = x.h;
  in_w_ = x.w;
  Tensor y(x.c, 1, 1);
  const int n = x.plane();
  for (int c = 0; c < x.c; ++c) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x.data[static_cast<std::size_t>(c) * n + i];
    y.data[c] = static_cast<float>(s / n);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(in_c_, in_h_, in_w_);
  const int n = in_h_ * in_w_;
  for (int c = 0; c < in_c_; ++c) {
    const float g = grad_out.data[c] / static_cast<float>(n);
    std::fill_n(dx.data.begin() + static_cast<std::ptrdiff_t>(c) * n, n, g);
  }
  return dx;
}

// --- Network ---------------------------------------------------------------

Network::Network(const Network& other)
    : names_(other.names_), outputs_(other.outputs_), grads_(other.grads_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

void Network::add(std::string name, std::unique_ptr<Layer> layer) {
  names_.push_back(std::move(name));
  layers_.push_back(std::move(layer));
  outputs_.emplace_back();
  grads_.emplace_back();
}

Tensor Network::forward(const Tensor& x) {
  Tensor cur = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->forward(cur);
    outputs_[i] = cur;
  }
  return cur;
}

Tensor Network::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    grads_[i] = g;
    g = layers_[i]->backward(g);
  }
  return g;
}

std::vector<std::string> Network::layer_names() const { return names_; }

bool Network::has_layer(std::string_view name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t Network::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw Error(ErrorCode::kRejectedLayer, "no layer named '" + std::string(name) + "'");
  }
  return static_cast<std::size_t>(it - names_.begin());
}

Layer& Network::layer(std::string_view name) { return *layers_[index_of(name)]; }
const Tensor& Network::output(std::string_view name) const { return outputs_[index_of(name)]; }
const Tensor& Network::output_grad(std::string_view name) const { return grads_[index_of(name)]; }

std::vector<ParamF*> Network::params() {
  std::vector<ParamF*> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (ParamF* p : layers_[i]->params()) {
      p->name = names_[i] + "." + (p == layers_[i]->params().front() ? "weight" : "bias");
      out.push_back(p);
    }
  }
  return out;
}

void Network::zero_grad() {
  for (ParamF* p : params()) p->zero_grad();
}

nlohmann::json Network::describe() const {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    nlohmann::json d = layers_[i]->describe();
    d["name"] = names_[i];
    out.push_back(std::move(d));
  }
  return out;
}

// --- ModelFile -------------------------------------------------------------

void ModelFile::add(const std::string& name, const std::vector<float>& values) {
  f32.emplace_back(name, values);
}

void ModelFile::add(const std::string& name, const std::vector<double>& values) {
  f64.emplace_back(name, values);
}

const std::vector<float>& ModelFile::get_f32(const std::string& name) const {
  for (const auto& [n, v] : f32) {
    if (n == name) return v;
  }
  throw Error(ErrorCode::kModel, "model file has no float tensor '" + name + "'");
}

const std::vector<double>& ModelFile::get_f64(const std::string& name) const {
  for (const auto& [n, v] : f64) {
    if (n == name) return v;
  }
  throw Error(ErrorCode::kModel, "model file has no double tensor '" + name + "'");
}

std::string ModelFile::serialize() const {
  nlohmann::json full = header;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [n, v] : f32) tensors.push_back({{"name", n}, {"dtype", "f32"}, {"count", v.size()}});
  for (const auto& [n, v] : f64) tensors.push_back({{"name", n}, {"dtype", "f64"}, {"count", v.size()}});
  full["tensors"] = std::move(tensors);
  const std::string head = full.dump();

  std::string out(kMagic, sizeof(kMagic));
  const std::uint32_t version = kFormatVersion;
  const std::uint64_t len = head.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof(version));
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += head;
  for (const auto& [n, v] : f32) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  }
  for (const auto& [n, v] : f64) {
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  return out;
}

ModelFile ModelFile::parse(const std::string& bytes) {
  constexpr std::size_t kPrefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kModel, "not a chickface model file");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  std::memcpy(&len, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(len));
  if (version != kFormatVersion) {
    throw Error(ErrorCode::kModel, "unsupported model format version " + std::to_string(version));
  }
  if (bytes.size() < kPrefix + len) throw Error(ErrorCode::kModel, "truncated model header");

  ModelFile file;
  file.header = nlohmann::json::parse(bytes.substr(kPrefix, len));
  std::size_t pos = kPrefix + len;
  for (const auto& t : file.header.at("tensors")) {
    const std::string name = t.at("name");
    const std::size_t count = t.at("count");
    const bool is_f32 = t.at("dtype") == "f32";
    const std::size_t nbytes = count * (is_f32 ? sizeof(float) : sizeof(double));
    if (pos + nbytes > bytes.size()) throw Error(ErrorCode::kModel, "truncated tensor " + name);
    if (is_f32) {
      std::vector<float> v(count);
      std::memcpy(v.data(), bytes.data() + pos, nbytes);
      file.f32.emplace_back(name, std::move(v));
    } else {
      std::vector<double> v(count);
      std::memcpy(v.data(), bytes.data() + pos, nbytes);
      file.f64.emplace_back(name, std::move(v));
    }
    pos += nbytes;
  }
  file.header.erase("tensors");
  return file;
}

void ModelFile::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write model " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModelFile ModelFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kModel, "cannot open model " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void store_params(ModelFile& file, const std::string& prefix, std::span<ParamF* const> params) {
  for (const ParamF* p : params) file.add(prefix + p->name, p->value);
}

void restore_params(const ModelFile& file, const std::string& prefix,
                    std::span<ParamF* const> params) {
  for (ParamF* p : params) {
    const auto& v = file.get_f32(prefix + p->name);
    if (v.size() != p->value.size()) {
      throw Error(ErrorCode::kModel, "shape mismatch for tensor " + prefix + p->name);
    }
    p->value = v;
  }
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

}  // namespace chickface::nn
