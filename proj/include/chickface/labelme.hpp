// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "chickface/geometry.hpp"

namespace chickface {

/// One frame's face annotation in LabelMe form: a `rectangle` shape labelled
/// "face" and one `point` shape per visible landmark. Invisible landmarks
/// have no shape.
struct FaceAnnotation {
  std::string image_path;
  int image_width = 0;
  int image_height = 0;
  std::optional<BoundingBox> box;
  KeypointSet keypoints;

  friend bool operator==(const FaceAnnotation&, const FaceAnnotation&) = default;
};

namespace labelme {

inline constexpr const char* kFaceLabel = "face";

nlohmann::json to_json(const FaceAnnotation& ann);
FaceAnnotation from_json(const nlohmann::json& doc);

FaceAnnotation load(const std::filesystem::path& path);
void save(const FaceAnnotation& ann, const std::filesystem::path& path);

// Shared JSON forms for boxes and keypoint sets (used by sidecars and the
// annotation service). Keypoints serialize as an object keyed by landmark
// name: {"x":..,"y":..,"visible":..}.
nlohmann::json box_to_json(const BoundingBox& box);
BoundingBox box_from_json(const nlohmann::json& j);
nlohmann::json keypoints_to_json(const KeypointSet& kps);
KeypointSet keypoints_from_json(const nlohmann::json& j);

}  // namespace labelme
}  // namespace chickface
