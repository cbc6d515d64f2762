// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: one subcommand per pipeline stage.

#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "chickface/annotation.hpp"
#include "chickface/annotation_server.hpp"
#include "chickface/dataset.hpp"
#include "chickface/error.hpp"
#include "chickface/pipeline.hpp"
#include "chickface/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace chickface;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStage = 1;
constexpr int kExitUsage = 2;

// Flag values that override the config file. Unset options leave the file alone.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_root;
  std::optional<std::string> output_root;
  std::optional<std::string> backbone;
  std::optional<std::string> pretrained;
  std::optional<std::string> fine_tune;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<int> tiny_input_size;
  std::optional<double> threshold;
  std::optional<double> margin_scale;
  std::optional<double> mask_radius_factor;
  std::optional<std::string> detector_model;
  std::optional<std::string> keypoint_model;
  std::optional<int> folds;
};

void print_error(ErrorCode code, const std::string& message) {
  std::cerr << json{{"error", {{"code", to_string(code)}, {"message", message}}}}.dump() << '\n';
}

void add_pipeline_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--data-root", o.data_root, "Dataset directory holding manifest.json");
  cmd->add_option("--output-root", o.output_root, "Directory for stage outputs");
}

void add_classifier_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--backbone", o.backbone, "Backbone name (e.g. resnet50, tiny_test)");
  cmd->add_option("--pretrained", o.pretrained, "ONNX file for a named backbone");
  cmd->add_option("--fine-tune", o.fine_tune, "auto, full or head")
      ->check(CLI::IsMember({"auto", "full", "head"}));
  cmd->add_option("--epochs", o.epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  cmd->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", o.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--tiny-input-size", o.tiny_input_size, "Input side for the tiny_test backbone");
  cmd->add_option("--threshold", o.threshold, "Decision threshold on p(male)");
}

PipelineConfig resolve_config(const Overrides& o) {
  json j = json::object();
  std::string path = o.config;
  if (path.empty()) {
    if (const char* env = std::getenv("PIPELINE_CONFIG")) path = env;
  }
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kConfig, "cannot open config " + path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kConfig, path + ": " + e.what());
    }
  }
  if (o.data_root) j["data_root"] = *o.data_root;
  if (o.output_root) j["output_root"] = *o.output_root;
  if (o.seed) {
    j["seed"] = *o.seed;
    j["classifier"]["seed"] = *o.seed;
  }
  if (o.folds) j["folds"] = *o.folds;
  if (o.backbone) j["classifier"]["backbone"] = *o.backbone;
  if (o.pretrained) j["classifier"]["pretrained_ref"] = *o.pretrained;
  if (o.fine_tune) j["classifier"]["fine_tune"] = *o.fine_tune;
  if (o.epochs) j["classifier"]["epochs"] = *o.epochs;
  if (o.lr) j["classifier"]["lr"] = *o.lr;
  if (o.batch_size) j["classifier"]["batch_size"] = *o.batch_size;
  if (o.tiny_input_size) j["classifier"]["tiny_input_size"] = *o.tiny_input_size;
  if (o.threshold) j["classifier"]["threshold"] = *o.threshold;
  if (o.margin_scale) j["cropping"]["margin_scale"] = *o.margin_scale;
  if (o.mask_radius_factor) j["cropping"]["mask_radius_factor"] = *o.mask_radius_factor;
  if (o.detector_model) j["detector"]["model_ref"] = *o.detector_model;
  if (o.keypoint_model) j["keypoint_model_ref"] = *o.keypoint_model;

  PipelineConfig cfg = PipelineConfig::from_json(j);
  if (cfg.data_root.empty()) throw Error(ErrorCode::kConfig, "data_root is not set");
  if (!fs::is_directory(cfg.data_root)) {
    throw Error(ErrorCode::kConfig, "data_root does not exist: " + cfg.data_root.string());
  }
  if (cfg.output_root.empty()) cfg.output_root = cfg.data_root / "out";
  return cfg;
}

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chickface: facial chick-sexing pipeline"};
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  app.require_subcommand(1);

  Overrides o;
  app.add_option("--config", o.config, "PipelineConfig JSON file (default: $PIPELINE_CONFIG)");
  app.add_option("--seed", o.seed, "Seed for every stochastic stage");
  app.fallthrough();

  // ingest
  dataset::IngestOptions ingest_opts;
  std::string ingest_quality = "unreviewed";
  auto* ingest = app.add_subcommand("ingest", "Split stacked raw frames into views and write a manifest");
  ingest->add_option("--raw", ingest_opts.raw_dir, "Directory of <video>_<idx>.png stacked frames")->required();
  ingest->add_option("--labels", ingest_opts.labels_csv, "CSV of video_id,chick_id,gender")->required();
  ingest->add_option("--out", ingest_opts.out_dir, "Dataset directory to create")->required();
  ingest->add_option("--quality", ingest_quality, "Initial frame quality")
      ->check(CLI::IsMember({"unreviewed", "accepted"}));

  // split-views
  std::string split_input;
  std::string split_out;
  auto* split = app.add_subcommand("split-views", "Cut one stacked frame into three view images");
  split->add_option("--input", split_input, "Stacked frame image")->required();
  split->add_option("--out-dir", split_out, "Output directory")->required();

  // serve-annotations
  std::string serve_db;
  std::string serve_manifest;
  std::string serve_work;
  std::string serve_static;
  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;
  int serve_kp_epochs = 30;
  auto* serve = app.add_subcommand("serve-annotations", "Run the annotation service and static UI");
  add_pipeline_flags(serve, o);
  serve->add_option("--db", serve_db, "SQLite store (default: <output-root>/annotation/annotations.db)");
  serve->add_option("--manifest", serve_manifest, "Manifest to annotate (default: <data-root>/manifest.json)");
  serve->add_option("--work-dir", serve_work, "Directory for retrained models");
  serve->add_option("--static-dir", serve_static, "UI bundle served at /");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Bind port")->check(CLI::Range(0, 65535));
  serve->add_option("--keypoint-epochs", serve_kp_epochs, "Epochs per retraining round");

  // train-keypoints
  KeypointTrainOptions kp_train;
  auto* train_kp = app.add_subcommand("train-keypoints", "Train the heatmap keypoint model on annotations");
  add_pipeline_flags(train_kp, o);
  train_kp->add_option("--epochs", kp_train.epochs, "Training epochs")->check(CLI::PositiveNumber);
  train_kp->add_option("--lr", kp_train.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train_kp->add_option("--batch-size", kp_train.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);

  // detect / align
  auto* detect = app.add_subcommand("detect", "Detect one face box per view");
  add_pipeline_flags(detect, o);
  detect->add_option("--detector-model", o.detector_model, "'groundtruth' or onnx:PATH");
  auto* align = app.add_subcommand("align", "Predict keypoints and rotate faces level");
  add_pipeline_flags(align, o);
  align->add_option("--keypoint-model", o.keypoint_model, "'groundtruth' or a trained model file");

  // crop
  std::string crop_kind;
  auto* crop = app.add_subcommand("crop", "Write full or middle face crops");
  add_pipeline_flags(crop, o);
  crop->add_option("--kind", crop_kind, "full or middle")->required()->check(CLI::IsMember({"full", "middle"}));
  crop->add_option("--margin-scale", o.margin_scale, "Middle-crop margin as a multiple of the eye spacing")
      ->check(CLI::NonNegativeNumber);
  crop->add_option("--mask-radius-factor", o.mask_radius_factor, "Eye search radius relative to the box")
      ->check(CLI::PositiveNumber);

  // train-classifier
  std::string tc_crop = "full";
  int tc_fold = 0;
  std::string tc_out;
  auto* train_cls = app.add_subcommand("train-classifier", "Train one classifier with a held-out fold");
  add_pipeline_flags(train_cls, o);
  add_classifier_flags(train_cls, o);
  train_cls->add_option("--crop", tc_crop, "full or middle")->check(CLI::IsMember({"full", "middle"}));
  train_cls->add_option("--val-fold", tc_fold, "Fold used for validation");
  train_cls->add_option("--k", o.folds, "Number of folds")->check(CLI::Range(2, 100));
  train_cls->add_option("--out", tc_out, "Model file (default: <output-root>/models/<backbone>_<crop>.ckfm)");

  // evaluate
  std::string ev_crop = "full";
  auto* evaluate = app.add_subcommand("evaluate", "k-fold cross-validation with ID-grouped folds");
  add_pipeline_flags(evaluate, o);
  add_classifier_flags(evaluate, o);
  evaluate->add_option("--crop", ev_crop, "full or middle")->check(CLI::IsMember({"full", "middle"}));
  evaluate->add_option("--k", o.folds, "Number of folds")->check(CLI::Range(2, 100));

  // explain
  std::string ex_crop = "full";
  std::string ex_model;
  int ex_limit = 0;
  std::optional<std::string> ex_layer;
  auto* explain = app.add_subcommand("explain", "Grad-CAM++ saliency maps for crops");
  add_pipeline_flags(explain, o);
  explain->add_option("--crop", ex_crop, "full or middle")->check(CLI::IsMember({"full", "middle"}));
  explain->add_option("--model", ex_model, "Trained classifier file")->required();
  explain->add_option("--limit", ex_limit, "Explain at most this many crops (0 = all)");
  explain->add_option("--layer", ex_layer, "Target layer (default: last spatial layer)");

  // report
  auto* report = app.add_subcommand("report", "Combine evaluation results into tables");
  add_pipeline_flags(report, o);

  // synth-data
  SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("synth-data", "Generate a synthetic raw dataset");
  synth_cmd->add_option("--out", synth_opts.out_dir, "Output directory")->required();
  synth_cmd->add_option("--ids", synth_opts.ids, "Number of chick ids")->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--frames-per-id", synth_opts.frames_per_id, "Stacked frames per id")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--separability", synth_opts.separability, "0 = indistinguishable, 1 = disjoint")
      ->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--view-size", synth_opts.view_size, "Side of each square view");
  synth_cmd->add_option("--yaw-fraction", synth_opts.yaw_fraction, "Share of views with a hidden side point")
      ->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(ErrorCode::kConfig, e.what());
    std::cerr << "Run with --help for usage.\n";
    return kExitUsage;
  }

  // Config and usage problems exit 2; anything raised by a stage exits 1.
  PipelineConfig cfg;
  auto needs_config = [&] {
    for (auto* cmd : {ingest, split, synth_cmd}) {
      if (cmd->parsed()) return false;
    }
    return true;
  };
  try {
    if (needs_config()) cfg = resolve_config(o);
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return kExitUsage;
  }

  try {
    if (ingest->parsed()) {
      ingest_opts.initial_quality = quality_from_string(ingest_quality);
      const DatasetManifest m = dataset::ingest(ingest_opts);
      emit({{"stage", "ingest"}, {"chicks", m.chicks.size()}, {"frames", m.frames.size()},
            {"manifest", (ingest_opts.out_dir / "manifest.json").string()}});
    } else if (split->parsed()) {
      const cv::Mat img = cv::imread(split_input, cv::IMREAD_COLOR);
      if (img.empty()) throw Error(ErrorCode::kIo, "cannot decode " + split_input);
      const auto views = dataset::split_views(img);
      fs::create_directories(split_out);
      const std::string stem = fs::path(split_input).stem().string();
      json written = json::array();
      for (int k = 0; k < 3; ++k) {
        const fs::path p = fs::path(split_out) / (stem + "_v" + std::to_string(k) + ".png");
        if (!cv::imwrite(p.string(), views[k])) throw Error(ErrorCode::kIo, "cannot write " + p.string());
        written.push_back(p.string());
      }
      emit({{"stage", "split-views"}, {"written", written}});
    } else if (synth_cmd->parsed()) {
      if (o.seed) synth_opts.seed = *o.seed;
      synth::generate(synth_opts);
      emit({{"stage", "synth-data"}, {"ids", synth_opts.ids}, {"out", synth_opts.out_dir.string()}});
    } else if (serve->parsed()) {
      AnnotationServiceOptions so;
      so.manifest_path = serve_manifest.empty() ? pipeline::manifest_path(cfg) : fs::path(serve_manifest);
      so.db_path = serve_db.empty() ? cfg.output_root / "annotation" / "annotations.db" : fs::path(serve_db);
      so.work_dir = serve_work.empty() ? cfg.output_root / "annotation" : fs::path(serve_work);
      so.keypoint_config = cfg.keypoints;
      so.keypoint_training.epochs = serve_kp_epochs;
      so.keypoint_training.seed = cfg.seed;
      AnnotationService service(so);
      httplib::Server server;
      annotation::ServerOptions opts;
      opts.detector = cfg.detector;
      if (!serve_static.empty()) opts.static_dir = serve_static;
      annotation::mount_routes(server, service, opts);
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::cerr << "annotation service listening on http://" << serve_host << ':' << serve_port << '\n';
      if (!server.listen(serve_host, serve_port)) {
        throw Error(ErrorCode::kIo, "cannot bind " + serve_host + ":" + std::to_string(serve_port));
      }
      service.wait_for_job();
    } else if (train_kp->parsed()) {
      kp_train.seed = cfg.seed;
      emit(pipeline::train_keypoints(cfg, kp_train).to_json());
    } else if (detect->parsed()) {
      emit(pipeline::detect(cfg).to_json());
    } else if (align->parsed()) {
      emit(pipeline::align(cfg).to_json());
    } else if (crop->parsed()) {
      emit(pipeline::crop(cfg, crop_kind_from_string(crop_kind)).to_json());
    } else if (train_cls->parsed()) {
      const fs::path out = tc_out.empty() ? cfg.output_root / "models" /
                                                (cfg.classifier.backbone + "_" + tc_crop + ".ckfm")
                                          : fs::path(tc_out);
      emit(pipeline::train_classifier(cfg, crop_kind_from_string(tc_crop), tc_fold, out).to_json());
    } else if (evaluate->parsed()) {
      const auto t0 = std::chrono::steady_clock::now();
      const CVResult r = pipeline::evaluate(cfg, crop_kind_from_string(ev_crop));
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const auto& avg = r.report.averages;
      emit({{"stage", "evaluate"},
            {"backbone", r.config.backbone},
            {"crop", to_string(r.crop_kind)},
            {"folds", r.report.per_fold.size()},
            {"accuracy", avg.accuracy},
            {"precision", avg.precision},
            {"recall", avg.recall},
            {"f1", avg.f1},
            {"auc", avg.auc},
            {"seconds", secs}});
    } else if (explain->parsed()) {
      emit(pipeline::explain(cfg, crop_kind_from_string(ex_crop), ex_model, ex_limit, ex_layer).to_json());
    } else if (report->parsed()) {
      const ReportDocuments docs = pipeline::report(cfg);
      std::cout << docs.averages_text;
    }
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return e.code() == ErrorCode::kConfig ? kExitUsage : kExitStage;
  } catch (const std::exception& e) {
    print_error(ErrorCode::kIo, e.what());
    return kExitStage;
  }
  return kExitOk;
}
