// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/labelme.hpp"

#include <algorithm>
#include <fstream>

#include "chickface/error.hpp"

namespace chickface::labelme {

using nlohmann::json;

namespace {

json shape(const std::string& label, const std::string& type, json points) {
  return {{"label", label},           {"points", std::move(points)}, {"group_id", nullptr},
          {"description", ""},        {"shape_type", type},          {"flags", json::object()}};
}

}  // namespace

json to_json(const FaceAnnotation& ann) {
  json shapes = json::array();
  if (ann.box) {
    const BoundingBox& b = *ann.box;
    shapes.push_back(shape(kFaceLabel, "rectangle",
                           json::array({json::array({b.x, b.y}),
                                        json::array({b.right(), b.bottom()})})));
  }
  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto lm = static_cast<Landmark>(i);
    if (!ann.keypoints.visible(lm)) continue;
    const Point2& p = ann.keypoints.point(lm);
    shapes.push_back(shape(std::string(landmark_name(lm)), "point",
                           json::array({json::array({p.x, p.y})})));
  }
  return {{"version", "5.2.1"},
          {"flags", json::object()},
          {"shapes", std::move(shapes)},
          {"imagePath", ann.image_path},
          {"imageData", nullptr},
          {"imageHeight", ann.image_height},
          {"imageWidth", ann.image_width}};
}

FaceAnnotation from_json(const json& doc) {
  FaceAnnotation ann;
  try {
    ann.image_path = doc.value("imagePath", "");
    ann.image_width = doc.value("imageWidth", 0);
    ann.image_height = doc.value("imageHeight", 0);
    for (const auto& s : doc.at("shapes")) {
      const std::string type = s.value("shape_type", "polygon");
      const std::string label = s.at("label").get<std::string>();
      const auto& pts = s.at("points");
      if (type == "rectangle") {
        if (pts.size() != 2) throw Error(ErrorCode::kInvalidInput, "rectangle needs 2 points");
        const double x0 = pts[0][0], y0 = pts[0][1], x1 = pts[1][0], y1 = pts[1][1];
        ann.box = BoundingBox{std::min(x0, x1), std::min(y0, y1), std::abs(x1 - x0),
                              std::abs(y1 - y0)};
      } else if (type == "point") {
        auto lm = landmark_from_name(label);
        if (!lm) throw Error(ErrorCode::kInvalidInput, "unknown keypoint label '" + label + "'");
        if (pts.size() != 1) throw Error(ErrorCode::kInvalidInput, "point shape needs 1 point");
        ann.keypoints.set(*lm, {pts[0][0].get<double>(), pts[0][1].get<double>()}, true);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, std::string("malformed LabelMe document: ") + e.what());
  }
  return ann;
}

FaceAnnotation load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open annotation " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, path.string() + ": " + e.what());
  }
  return from_json(doc);
}

void save(const FaceAnnotation& ann, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write annotation " + path.string());
  out << to_json(ann).dump(2) << '\n';
}

json box_to_json(const BoundingBox& box) {
  return {{"x", box.x}, {"y", box.y}, {"w", box.w}, {"h", box.h}};
}

BoundingBox box_from_json(const json& j) {
  try {
    return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
            j.at("h").get<double>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidGeometry, std::string("malformed box: ") + e.what());
  }
}

json keypoints_to_json(const KeypointSet& kps) {
  json out = json::object();
  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto lm = static_cast<Landmark>(i);
    const Point2& p = kps.point(lm);
    out[std::string(landmark_name(lm))] = {{"x", p.x}, {"y", p.y}, {"visible", kps.visible(lm)}};
  }
  return out;
}

KeypointSet keypoints_from_json(const json& j) {
  if (!j.is_object() || j.size() != kNumLandmarks) {
    throw Error(ErrorCode::kInvalidGeometry, "keypoints must name exactly the 7 landmarks");
  }
  KeypointSet kps;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto lm = landmark_from_name(it.key());
    if (!lm) throw Error(ErrorCode::kInvalidGeometry, "unknown keypoint '" + it.key() + "'");
    try {
      kps.set(*lm, {it->at("x").get<double>(), it->at("y").get<double>()},
              it->value("visible", true));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kInvalidGeometry, std::string("malformed keypoint: ") + e.what());
    }
  }
  return kps;
}

}  // namespace chickface::labelme
