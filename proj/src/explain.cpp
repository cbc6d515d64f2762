// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "chickface/error.hpp"

namespace chickface::explain {

Explanation gradcam_pp(Classifier& model, const cv::Mat& image,
                       const std::optional<std::string>& layer, std::optional<Gender> target) {
  Backbone& bb = model.backbone();
  const auto layers = bb.spatial_layers();
  const std::string name = layer.value_or(layers.back());
  if (std::find(layers.begin(), layers.end(), name) == layers.end()) {
    throw Error(ErrorCode::kRejectedLayer, "layer '" + name + "' is not a spatial layer of " + bb.name());
  }

  const nn::Tensor map = bb.forward(bb.preprocess(image));
  std::vector<double> f(map.c, 0.0);
  const int plane = map.plane();
  for (int c = 0; c < map.c; ++c) {
    double s = 0.0;
    for (int i = 0; i < plane; ++i) s += map.data[static_cast<std::size_t>(c) * plane + i];
    f[c] = s / plane;
  }

  Explanation out;
  out.layer = name;
  out.prediction = model.predict_features(f);
  out.target = target.value_or(out.prediction.gender);
  const double sign = out.target == Gender::kMale ? 1.0 : -1.0;

  // Gradients of the (signed) logit; parameter gradients are discarded.
  Head& head = model.head();
  Head::Cache cache;
  head.forward(f, &cache);
  const auto dfeat = head.backward(cache, sign);
  head.zero_grad();
  nn::Tensor grad_map(map.c, map.h, map.w);
  for (int c = 0; c < map.c; ++c) {
    std::fill_n(grad_map.data.begin() + static_cast<std::ptrdiff_t>(c) * plane, plane,
                static_cast<float>(dfeat[c] / plane));
  }
  bb.backward(grad_map);
  for (auto* p : bb.params()) p->zero_grad();

  const nn::Tensor& act = bb.activation(name);
  const nn::Tensor& grad = bb.activation_grad(name);
  if (!act.spatial()) {
    throw Error(ErrorCode::kRejectedLayer, "layer '" + name + "' has no spatial extent");
  }

  const int n = act.plane();
  cv::Mat cam(act.h, act.w, CV_64F, cv::Scalar(0.0));
  auto* cam_data = cam.ptr<double>();
  for (int k = 0; k < act.c; ++k) {
    const float* a = act.data.data() + static_cast<std::size_t>(k) * n;
    const float* g = grad.data.data() + static_cast<std::size_t>(k) * n;
    double sum_a = 0.0;
    for (int i = 0; i < n; ++i) sum_a += a[i];
    double weight = 0.0;
    for (int i = 0; i < n; ++i) {
      const double gi = g[i];
      const double g2 = gi * gi;
      const double denom = 2.0 * g2 + sum_a * g2 * gi;
      const double alpha = denom != 0.0 ? g2 / denom : 0.0;
      weight += alpha * std::max(gi, 0.0);
    }
    for (int i = 0; i < n; ++i) cam_data[i] += weight * a[i];
  }
  for (int i = 0; i < n; ++i) cam_data[i] = std::max(cam_data[i], 0.0);

  cv::Mat up;
  cv::resize(cam, up, image.size(), 0, 0, cv::INTER_LINEAR);
  up = cv::max(up, 0.0);
  double max_v = 0.0;
  cv::minMaxLoc(up, nullptr, &max_v);
  if (max_v > 0.0) up /= max_v;
  up.convertTo(out.map.data, CV_32F);
  out.map.normalized = true;
  return out;
}

cv::Mat overlay(const cv::Mat& image, const SaliencyMap& map, double alpha) {
  if (image.type() != CV_8UC3) throw Error(ErrorCode::kInvalidInput, "overlay needs an 8-bit BGR image");
  if (!map.normalized) throw Error(ErrorCode::kInvalidInput, "overlay needs a normalized map");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidInput, "alpha must be in [0, 1]");
  cv::Mat m = map.data;
  if (m.size() != image.size()) cv::resize(m, m, image.size(), 0, 0, cv::INTER_LINEAR);
  cv::Mat u8;
  m.convertTo(u8, CV_8U, 255.0);
  cv::Mat color;
  cv::applyColorMap(u8, color, cv::COLORMAP_JET);
  cv::Mat out;
  cv::addWeighted(image, 1.0 - alpha, color, alpha, 0.0, out);
  return out;
}

nlohmann::json write_explanation(const Explanation& e, const cv::Mat& image,
                                 const std::string& image_id, const std::filesystem::path& stem,
                                 double alpha) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto with_suffix = [&](const char* suffix) {
    std::filesystem::path p = stem;
    p += suffix;
    return p;
  };
  cv::Mat u8;
  e.map.data.convertTo(u8, CV_8U, 255.0);
  if (!cv::imwrite(with_suffix("_cam.png").string(), u8) ||
      !cv::imwrite(with_suffix("_overlay.png").string(), overlay(image, e.map, alpha))) {
    throw Error(ErrorCode::kIo, "cannot write saliency images for " + stem.string());
  }
  double min_v = 0.0;
  double max_v = 0.0;
  cv::Point max_loc;
  cv::minMaxLoc(e.map.data, &min_v, &max_v, nullptr, &max_loc);
  nlohmann::json rec = {{"image_id", image_id},
                        {"predicted_gender", to_string(e.prediction.gender)},
                        {"p", e.prediction.p},
                        {"logit", e.prediction.logit},
                        {"target", to_string(e.target)},
                        {"layer", e.layer},
                        {"map", {{"min", min_v},
                                 {"max", max_v},
                                 {"mean", cv::mean(e.map.data)[0]},
                                 {"argmax", {{"x", max_loc.x}, {"y", max_loc.y}}}}}};
  std::ofstream out(with_suffix(".json"));
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + with_suffix(".json").string());
  out << rec.dump(2) << '\n';
  return rec;
}

}  // namespace chickface::explain
