// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chickface/classifier.hpp"
#include "chickface/cropping.hpp"
#include "chickface/dataset.hpp"
#include "chickface/detection.hpp"
#include "chickface/evaluation.hpp"
#include "chickface/keypoints.hpp"

namespace chickface {

/// Everything a pipeline stage needs. Model references:
///  - detector.model_ref: "groundtruth" (boxes from the LabelMe annotations)
///    or "onnx:PATH";
///  - keypoint_model_ref: "groundtruth" or a path to a trained heatmap model.
struct PipelineConfig {
  std::filesystem::path data_root;    // dataset directory holding manifest.json
  std::filesystem::path output_root;  // stage outputs
  DetectorConfig detector{640, 0.8, 0.5, "groundtruth"};
  KeypointModelConfig keypoints;
  std::string keypoint_model_ref = "groundtruth";
  ClassifierConfig classifier;
  CropParams cropping;
  std::uint64_t seed = 0;
  int folds = 5;

  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
};

/// Per-stage outcome: how many frames were processed, written, or flagged.
struct StageSummary {
  std::string stage;
  int processed = 0;
  int written = 0;
  nlohmann::json flagged = nlohmann::json::object();  // frame_id -> {code, message}
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
};

namespace pipeline {

std::filesystem::path manifest_path(const PipelineConfig& cfg);
std::filesystem::path crops_dir(const PipelineConfig& cfg, CropKind kind);

StageSummary detect(const PipelineConfig& cfg);
/// Keypoint inference on the detected faces, then alignment.
StageSummary align(const PipelineConfig& cfg);
StageSummary crop(const PipelineConfig& cfg, CropKind kind);
StageSummary train_keypoints(const PipelineConfig& cfg, const KeypointTrainOptions& options);

/// Crops of `kind` for accepted frames, labelled from the manifest.
std::vector<LabeledImage> load_crops(const PipelineConfig& cfg, CropKind kind);

/// Trains on every fold but `val_fold` and saves the best-epoch model.
StageSummary train_classifier(const PipelineConfig& cfg, CropKind kind, int val_fold,
                              const std::filesystem::path& model_out);
CVResult evaluate(const PipelineConfig& cfg, CropKind kind);
/// Combines every saved CV result into the per-fold and averaged tables.
ReportDocuments report(const PipelineConfig& cfg);
StageSummary explain(const PipelineConfig& cfg, CropKind kind,
                     const std::filesystem::path& model_path, int limit,
                     const std::optional<std::string>& layer);

}  // namespace pipeline
}  // namespace chickface
