// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "chickface/error.hpp"
#include "chickface/explain.hpp"
#include "chickface/labelme.hpp"

namespace fs = std::filesystem;

namespace chickface {

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidInput, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

cv::Mat read_image(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw Error(ErrorCode::kIo, "cannot decode image " + path.string());
  return img;
}

nlohmann::json flag(const Error& e) { return {{"code", to_string(e.code())}, {"message", e.what()}}; }

fs::path annotation_path(const PipelineConfig& cfg, const std::string& frame_id) {
  return cfg.data_root / "annotations" / (frame_id + ".json");
}

/// Integer pixel rectangle covering `box`, clipped to the image.
cv::Rect pixel_rect(const BoundingBox& box, cv::Size size) {
  const int x0 = std::clamp(static_cast<int>(std::floor(box.x)), 0, size.width);
  const int y0 = std::clamp(static_cast<int>(std::floor(box.y)), 0, size.height);
  const int x1 = std::clamp(static_cast<int>(std::ceil(box.right())), 0, size.width);
  const int y1 = std::clamp(static_cast<int>(std::ceil(box.bottom())), 0, size.height);
  if (x1 <= x0 || y1 <= y0) throw Error(ErrorCode::kFlaggedFrame, "detected box lies outside the image");
  return {x0, y0, x1 - x0, y1 - y0};
}

std::string csv_history(const std::vector<double>& losses) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i + 1 << ',' << losses[i] << '\n';
  return os.str();
}

std::string result_stem(const CVResult& r) {
  return r.config.backbone + "_" + std::string(to_string(r.crop_kind));
}

}  // namespace

// --- config ----------------------------------------------------------------

void PipelineConfig::validate() const {
  detector.validate();
  keypoints.validate();
  classifier.validate();
  if (folds < 2) throw Error(ErrorCode::kConfig, "folds must be >= 2");
  if (cropping.margin_scale < 0.0) throw Error(ErrorCode::kConfig, "margin_scale must be >= 0");
  if (!(cropping.mask_radius_factor > 0.0)) {
    throw Error(ErrorCode::kConfig, "mask_radius_factor must be positive");
  }
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"data_root", data_root.string()},
          {"output_root", output_root.string()},
          {"detector",
           {{"input_size", detector.input_size},
            {"conf_threshold", detector.conf_threshold},
            {"iou_threshold", detector.iou_threshold},
            {"model_ref", detector.model_ref}}},
          {"keypoints", keypoints.to_json()},
          {"keypoint_model_ref", keypoint_model_ref},
          {"classifier", classifier.to_json()},
          {"cropping",
           {{"margin_scale", cropping.margin_scale},
            {"mask_radius_factor", cropping.mask_radius_factor}}},
          {"seed", seed},
          {"folds", folds}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.data_root = j.value("data_root", std::string());
    c.output_root = j.value("output_root", std::string());
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
    c.detector.model_ref = "groundtruth";
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      c.detector.input_size = d.value("input_size", c.detector.input_size);
      c.detector.conf_threshold = d.value("conf_threshold", c.detector.conf_threshold);
      c.detector.iou_threshold = d.value("iou_threshold", c.detector.iou_threshold);
      c.detector.model_ref = d.value("model_ref", c.detector.model_ref);
    }
    if (j.contains("keypoints")) c.keypoints = KeypointModelConfig::from_json(j.at("keypoints"));
    c.keypoint_model_ref = j.value("keypoint_model_ref", c.keypoint_model_ref);
    nlohmann::json cls = j.value("classifier", nlohmann::json::object());
    if (!cls.contains("seed")) cls["seed"] = c.seed;
    c.classifier = ClassifierConfig::from_json(cls);
    if (j.contains("cropping")) {
      const auto& cr = j.at("cropping");
      c.cropping.margin_scale = cr.value("margin_scale", c.cropping.margin_scale);
      c.cropping.mask_radius_factor = cr.value("mask_radius_factor", c.cropping.mask_radius_factor);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("invalid pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json StageSummary::to_json() const {
  return {{"stage", stage}, {"processed", processed}, {"written", written},
          {"flagged", flagged}, {"details", details}};
}

namespace pipeline {

fs::path manifest_path(const PipelineConfig& cfg) { return cfg.data_root / "manifest.json"; }

fs::path crops_dir(const PipelineConfig& cfg, CropKind kind) {
  return cfg.output_root / "crops" / std::string(to_string(kind));
}

StageSummary detect(const PipelineConfig& cfg) {
  const DatasetManifest manifest = DatasetManifest::load(manifest_path(cfg));
  StageSummary summary{"detect"};
  std::unique_ptr<DetectorModel> shared;
  const std::string& ref = cfg.detector.model_ref;
  if (ref.rfind("onnx:", 0) == 0) {
    shared = std::make_unique<OnnxYoloDetector>(ref.substr(5));
  } else if (ref != "groundtruth") {
    throw Error(ErrorCode::kConfig, "detector model_ref must be 'groundtruth' or 'onnx:PATH'");
  }

  nlohmann::json frames = nlohmann::json::object();
  for (const auto& f : manifest.frames) {
    if (f.quality == FrameQuality::kRejected) continue;
    ++summary.processed;
    try {
      const cv::Mat view = read_image(cfg.data_root / f.image_ref);
      std::unique_ptr<DetectorModel> local;
      DetectorModel* model = shared.get();
      if (!model) {
        const auto ann = labelme::load(annotation_path(cfg, f.frame_id));
        if (!ann.box) throw Error(ErrorCode::kDetector, "groundtruth detector: annotation has no box");
        local = std::make_unique<GroundTruthDetector>(*ann.box, view.size(), cfg.detector.input_size);
        model = local.get();
      }
      const auto det = detection::detect_face(view, cfg.detector, *model);
      if (det) {
        frames[f.frame_id] = {{"box", labelme::box_to_json(det->box)}, {"confidence", det->confidence}};
        ++summary.written;
      } else {
        frames[f.frame_id] = nullptr;
      }
    } catch (const Error& e) {
      summary.flagged[f.frame_id] = flag(e);
    }
  }
  write_json(cfg.output_root / "detections.json", {{"model", ref}, {"frames", frames}});
  return summary;
}

StageSummary align(const PipelineConfig& cfg) {
  const DatasetManifest manifest = DatasetManifest::load(manifest_path(cfg));
  const nlohmann::json dets = read_json(cfg.output_root / "detections.json").at("frames");
  StageSummary summary{"align"};
  std::optional<TinyHeatmapModel> trained;
  if (cfg.keypoint_model_ref != "groundtruth") {
    trained = TinyHeatmapModel::load(cfg.keypoint_model_ref);
  }
  const fs::path out_dir = cfg.output_root / "aligned";
  fs::create_directories(out_dir);

  for (const auto& f : manifest.frames) {
    auto it = dets.find(f.frame_id);
    if (it == dets.end() || it->is_null()) continue;
    ++summary.processed;
    try {
      const cv::Mat view = read_image(cfg.data_root / f.image_ref);
      const BoundingBox box = labelme::box_from_json(it->at("box"));
      const cv::Rect rect = pixel_rect(box, view.size());
      const cv::Mat face = view(rect);

      KeypointSet kps;
      if (trained) {
        kps = keypoints::predict_keypoints(face, *trained, trained->config());
      } else {
        const auto ann = labelme::load(annotation_path(cfg, f.frame_id));
        GroundTruthKeypointModel gt(ann.keypoints.translated(-rect.x, -rect.y), face.size(),
                                    cfg.keypoints);
        kps = keypoints::predict_keypoints(face, gt, cfg.keypoints);
      }
      kps = kps.translated(rect.x, rect.y);
      if (geometry::pose_gate(kps) == PoseDecision::kReject) {
        throw Error(ErrorCode::kPoseRejected, "side keypoints hidden (yaw)");
      }
      const AlignedFace aligned = geometry::align_face(view, box, kps);
      if (!cv::imwrite((out_dir / (f.frame_id + ".png")).string(), aligned.image)) {
        throw Error(ErrorCode::kIo, "cannot write aligned image for " + f.frame_id);
      }
      write_json(out_dir / (f.frame_id + ".json"),
                 {{"frame_id", f.frame_id},
                  {"detected_box", labelme::box_to_json(box)},
                  {"box", labelme::box_to_json(aligned.box)},
                  {"keypoints", labelme::keypoints_to_json(aligned.keypoints)},
                  {"angle_deg", aligned.angle_deg},
                  {"transform", aligned.transform.m}});
      ++summary.written;
    } catch (const Error& e) {
      summary.flagged[f.frame_id] = flag(e);
    }
  }
  write_json(out_dir / "summary.json", summary.to_json());
  return summary;
}

StageSummary crop(const PipelineConfig& cfg, CropKind kind) {
  if (kind != CropKind::kFull && kind != CropKind::kMiddle) {
    throw Error(ErrorCode::kConfig, "crop kind must be full or middle");
  }
  const DatasetManifest manifest = DatasetManifest::load(manifest_path(cfg));
  const fs::path in_dir = cfg.output_root / "aligned";
  const fs::path out_dir = crops_dir(cfg, kind);
  fs::create_directories(out_dir);
  StageSummary summary{"crop"};
  summary.details["kind"] = to_string(kind);

  DatasetManifest cropped;
  cropped.chicks = manifest.chicks;
  cropped.crop_kind = kind;
  for (const auto& f : manifest.frames) {
    const fs::path side = in_dir / (f.frame_id + ".json");
    if (!fs::exists(side)) continue;
    ++summary.processed;
    try {
      const nlohmann::json rec = read_json(side);
      const cv::Mat aligned = read_image(in_dir / (f.frame_id + ".png"));
      const FaceCrop full = cropping::crop_full_face(aligned, labelme::box_from_json(rec.at("box")),
                                                     labelme::keypoints_from_json(rec.at("keypoints")));
      FaceCrop out = full;
      if (kind == CropKind::kMiddle) out = cropping::crop_middle_face(full, cfg.cropping);
      cropping::write_crop(out, out_dir / f.frame_id);
      if (kind == CropKind::kMiddle) {
        nlohmann::json sc = cropping::sidecar_json(out);
        sc["parent"] = {{"width", full.image.cols}, {"height", full.image.rows}};
        write_json(out_dir / (f.frame_id + ".json"), sc);
      }
      FrameRecord fr = f;
      fr.image_ref = f.frame_id + ".png";
      cropped.frames.push_back(fr);
      ++summary.written;
    } catch (const Error& e) {
      summary.flagged[f.frame_id] = flag(e);
    }
  }
  cropped.save(out_dir / "manifest.json");
  write_json(out_dir / "summary.json", summary.to_json());
  return summary;
}

StageSummary train_keypoints(const PipelineConfig& cfg, const KeypointTrainOptions& options) {
  const DatasetManifest manifest = DatasetManifest::load(manifest_path(cfg));
  std::vector<KeypointSample> samples;
  for (const auto& f : manifest.accepted_frames()) {
    const fs::path ann_path = annotation_path(cfg, f.frame_id);
    if (!fs::exists(ann_path)) continue;
    const auto ann = labelme::load(ann_path);
    if (!ann.box) continue;
    const cv::Mat view = read_image(cfg.data_root / f.image_ref);
    const cv::Rect rect = pixel_rect(*ann.box, view.size());
    samples.push_back({view(rect).clone(), ann.keypoints.translated(-rect.x, -rect.y)});
  }
  auto result = keypoints::train_keypoint_model(samples, cfg.keypoints, options);
  const fs::path model_path = cfg.output_root / "models" / "keypoints.ckfm";
  result.model.save(model_path);
  write_text(cfg.output_root / "models" / "keypoints_history.csv", csv_history(result.loss_history));

  StageSummary summary{"train-keypoints"};
  summary.processed = static_cast<int>(samples.size());
  summary.written = 1;
  summary.details = {{"model", model_path.string()},
                     {"final_loss", result.loss_history.empty() ? nlohmann::json(nullptr)
                                                                : nlohmann::json(result.loss_history.back())}};
  return summary;
}

std::vector<LabeledImage> load_crops(const PipelineConfig& cfg, CropKind kind) {
  const fs::path dir = crops_dir(cfg, kind);
  const DatasetManifest m = DatasetManifest::load(dir / "manifest.json");
  std::vector<LabeledImage> out;
  for (const auto& f : m.accepted_frames()) {
    const ChickRecord* chick = m.find_chick(f.chick_id);
    out.push_back({read_image(dir / f.image_ref), f.chick_id, chick->gender, f.frame_id});
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidInput, "no accepted crops in " + dir.string());
  return out;
}

namespace {

FoldPlan plan_for(const PipelineConfig& cfg, CropKind kind) {
  const DatasetManifest m = DatasetManifest::load(crops_dir(cfg, kind) / "manifest.json");
  std::set<std::string> used;
  for (const auto& f : m.accepted_frames()) used.insert(f.chick_id);
  std::vector<ChickRecord> chicks;
  for (const auto& c : m.chicks) {
    if (used.count(c.chick_id)) chicks.push_back(c);
  }
  return dataset::assign_folds(chicks, cfg.folds, cfg.seed);
}

}  // namespace

StageSummary train_classifier(const PipelineConfig& cfg, CropKind kind, int val_fold,
                              const fs::path& model_out) {
  if (val_fold < 0 || val_fold >= cfg.folds) {
    throw Error(ErrorCode::kConfig, "validation fold must be in [0, folds)");
  }
  const auto samples = load_crops(cfg, kind);
  const FoldPlan plan = plan_for(cfg, kind);
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  for (const auto& s : samples) (plan.fold_of(s.chick_id) == val_fold ? val : train).push_back(s);
  const TrainResult tr = classifier::train_classifier(train, val, cfg.classifier);
  tr.best.save(model_out);
  fs::path hist = model_out;
  hist += ".history.csv";
  write_text(hist, classifier::history_csv(tr.history));

  StageSummary summary{"train-classifier"};
  summary.processed = static_cast<int>(samples.size());
  summary.written = 1;
  summary.details = {{"model", model_out.string()},
                     {"best_epoch", tr.best_epoch},
                     {"best_val_accuracy", tr.best_val_accuracy},
                     {"train_images", train.size()},
                     {"val_images", val.size()}};
  return summary;
}

CVResult evaluate(const PipelineConfig& cfg, CropKind kind) {
  const auto samples = load_crops(cfg, kind);
  const FoldPlan plan = plan_for(cfg, kind);
  CVResult r = evaluation::run_cross_validation(
      samples, plan, cfg.classifier, kind, [](int fold, const TrainResult& tr) {
        std::cerr << "fold " << fold << ": best epoch " << tr.best_epoch << ", val accuracy "
                  << tr.best_val_accuracy << '\n';
      });
  const fs::path dir = cfg.output_root / "results";
  const std::string stem = result_stem(r);
  write_json(dir / (stem + ".json"), r.to_json());
  const ReportDocuments docs = evaluation::render_report({r});
  write_text(dir / (stem + "_per_fold.csv"), docs.per_fold_csv);
  write_text(dir / (stem + "_per_fold.txt"), docs.per_fold_text);
  for (std::size_t i = 0; i < r.histories.size(); ++i) {
    write_text(dir / "histories" / (stem + "_fold" + std::to_string(i) + ".csv"),
               classifier::history_csv(r.histories[i]));
  }
  return r;
}

ReportDocuments report(const PipelineConfig& cfg) {
  const fs::path dir = cfg.output_root / "results";
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
  }
  if (files.empty()) throw Error(ErrorCode::kInvalidInput, "no evaluation results in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<CVResult> results;
  for (const auto& p : files) results.push_back(CVResult::from_json(read_json(p)));
  const ReportDocuments docs = evaluation::render_report(results);
  const fs::path out = cfg.output_root / "report";
  write_text(out / "per_fold.csv", docs.per_fold_csv);
  write_text(out / "averages.csv", docs.averages_csv);
  write_text(out / "per_fold.txt", docs.per_fold_text);
  write_text(out / "averages.txt", docs.averages_text);
  return docs;
}

StageSummary explain(const PipelineConfig& cfg, CropKind kind, const fs::path& model_path,
                     int limit, const std::optional<std::string>& layer) {
  Classifier model = Classifier::load(model_path);
  auto samples = load_crops(cfg, kind);
  std::sort(samples.begin(), samples.end(),
            [](const LabeledImage& a, const LabeledImage& b) { return a.frame_id < b.frame_id; });
  if (limit > 0 && static_cast<std::size_t>(limit) < samples.size()) samples.resize(limit);

  const fs::path out_dir = cfg.output_root / "explain" / std::string(to_string(kind));
  StageSummary summary{"explain"};
  nlohmann::json index = nlohmann::json::array();
  for (const auto& s : samples) {
    ++summary.processed;
    const Explanation e = explain::gradcam_pp(model, s.image, layer);
    nlohmann::json rec = explain::write_explanation(e, s.image, s.frame_id, out_dir / s.frame_id);
    rec["label"] = to_string(s.gender);
    index.push_back(std::move(rec));
    ++summary.written;
  }
  write_json(out_dir / "index.json", index);
  return summary;
}

}  // namespace pipeline
}  // namespace chickface
