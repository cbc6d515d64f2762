// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/annotation_server.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>

#include "chickface/error.hpp"

using nlohmann::json;

namespace chickface::annotation {

namespace {

json error_body(ErrorCode code, const std::string& message) {
  return {{"code", to_string(code)}, {"message", message}};
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs `fn`, turning module errors and malformed JSON into {code, message}.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_json(res, error_body(e.code(), e.what()), http_status(e.code()));
  } catch (const json::exception& e) {
    send_json(res, error_body(ErrorCode::kInvalidInput, e.what()), 400);
  } catch (const std::exception& e) {
    send_json(res, error_body(ErrorCode::kIo, e.what()), 500);
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

json rejection_json(const TaskRejection& r) {
  return {{"frame_id", r.frame_id}, {"code", to_string(r.code)}, {"message", r.message}};
}

json task_json(const AnnotationTask& t) {
  json j = t.to_json();
  j["image_url"] = "/images/" + t.frame_id;
  return j;
}

FaceAnnotation manual_annotation(const json& j) {
  if (j.contains("shapes")) return labelme::from_json(j);
  FaceAnnotation a;
  a.box = labelme::box_from_json(j.at("box"));
  a.keypoints = labelme::keypoints_from_json(j.at("keypoints"));
  return a;
}

CorrectionAction parse_action(const json& body) {
  if (body.value("quality", std::string()) == "rejected") return CorrectionAction::kRejectQuality;
  const std::string action = body.value("action", std::string("revise"));
  if (action == "revise") return CorrectionAction::kRevise;
  if (action == "accept") return CorrectionAction::kAccept;
  if (action == "reject_quality") return CorrectionAction::kRejectQuality;
  throw Error(ErrorCode::kInvalidInput, "action must be revise, accept or reject_quality");
}

Drafter drafter_for(AnnotationService& service, const ServerOptions& options,
                    const std::string& detector_ref, const std::string& keypoint_ref) {
  std::shared_ptr<KeypointModel> kp;
  KeypointModelConfig kp_cfg;
  if (keypoint_ref == "current") {
    const auto path = service.current_keypoint_model();
    if (!path) throw Error(ErrorCode::kModel, "no keypoint model registered yet");
    auto m = std::make_shared<TinyHeatmapModel>(TinyHeatmapModel::load(*path));
    kp_cfg = m->config();
    kp = m;
  } else if (keypoint_ref != "none") {
    auto m = std::make_shared<TinyHeatmapModel>(TinyHeatmapModel::load(keypoint_ref));
    kp_cfg = m->config();
    kp = m;
  }

  if (detector_ref == "whole") {
    return [kp, kp_cfg](const cv::Mat& view) {
      Draft d;
      d.box = BoundingBox{0.0, 0.0, static_cast<double>(view.cols), static_cast<double>(view.rows)};
      if (kp) d.keypoints = keypoints::predict_keypoints(view, *kp, kp_cfg);
      return d;
    };
  }
  if (detector_ref.rfind("onnx:", 0) == 0) {
    auto det = std::make_shared<OnnxYoloDetector>(detector_ref.substr(5));
    return make_model_drafter(options.detector, det, kp, kp_cfg);
  }
  throw Error(ErrorCode::kConfig, "detector_ref must be 'whole' or 'onnx:PATH'");
}

}  // namespace

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput:
    case ErrorCode::kConfig:
      return 400;
    case ErrorCode::kUnknownTask:
    case ErrorCode::kNoTasks:
      return 404;
    case ErrorCode::kVersionConflict:
      return 409;
    case ErrorCode::kJobRunning:
      return 423;
    case ErrorCode::kInvalidGeometry:
    case ErrorCode::kIllegalTransition:
    case ErrorCode::kProtocol:
      return 422;
    default:
      return 500;
  }
}

json openapi_document() {
  const json error_ref = {{"$ref", "#/components/schemas/Error"}};
  auto op = [&](const std::string& summary) {
    return json{{"summary", summary},
                {"responses",
                 {{"200", {{"description", "OK"}}},
                  {"default", {{"description", "Error"},
                               {"content", {{"application/json", {{"schema", error_ref}}}}}}}}}};
  };
  json doc = {{"openapi", "3.0.3"},
              {"info", {{"title", "chickface annotation service"}, {"version", "1"}}},
              {"paths", json::object()}};
  auto& p = doc["paths"];
  p["/api/rounds"]["get"] = op("List annotation rounds with counts and model versions");
  p["/api/rounds/seed"]["post"] = op("Seed round 0 with manual annotations");
  p["/api/rounds/seed"]["post"]["requestBody"] = {
      {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/SeedRequest"}}}}}}}};
  p["/api/rounds/advance"]["post"] = op("Start retraining and open the next round");
  p["/api/jobs/current"]["get"] = op("State of the retraining job");
  p["/api/propose"]["post"] = op("Draft unlabeled frames with the current models");
  p["/api/tasks/next"]["get"] = op("Claim the oldest predicted task");
  p["/api/tasks/next"]["get"]["parameters"] = {
      {{"name", "editor"}, {"in", "query"}, {"schema", {{"type", "string"}}}}};
  p["/api/tasks/{id}"]["get"] = op("Task with image URL");
  p["/api/tasks/{id}/correction"]["post"] = op("Submit a revision, acceptance or quality rejection");
  p["/api/tasks/{id}/correction"]["post"]["requestBody"] = {
      {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/Correction"}}}}}}}};
  p["/api/export"]["get"] = op("Ground-truth bundle as a zip");
  p["/api/export"]["get"]["parameters"] = {
      {{"name", "rounds"}, {"in", "query"}, {"schema", {{"type", "string"}}},
       {"description", "comma-separated round numbers; all rounds when absent"}}};
  p["/images/{frame_id}"]["get"] = op("Frame image bytes");

  json point = {{"type", "object"},
                {"required", {"x", "y", "visible"}},
                {"properties",
                 {{"x", {{"type", "number"}}}, {"y", {{"type", "number"}}}, {"visible", {{"type", "boolean"}}}}}};
  json kp_props = json::object();
  for (auto name : kLandmarkNames) kp_props[std::string(name)] = point;
  json kp_required = json::array();
  for (auto name : kLandmarkNames) kp_required.push_back(std::string(name));
  doc["components"]["schemas"] = {
      {"Error",
       {{"type", "object"},
        {"properties", {{"code", {{"type", "string"}}}, {"message", {{"type", "string"}}}}}}},
      {"Box",
       {{"type", "object"},
        {"required", {"x", "y", "w", "h"}},
        {"properties",
         {{"x", {{"type", "number"}}}, {"y", {{"type", "number"}}},
          {"w", {{"type", "number"}}}, {"h", {{"type", "number"}}}}}}},
      {"Keypoints",
       {{"type", "object"}, {"properties", kp_props}, {"required", kp_required},
        {"additionalProperties", false}}},
      {"SeedRequest",
       {{"type", "object"},
        {"properties",
         {{"frame_ids", {{"type", "array"}, {"items", {{"type", "string"}}}}},
          {"annotations", {{"type", "object"}}}}}}},
      {"Correction",
       {{"type", "object"},
        {"properties",
         {{"revised_box", {{"$ref", "#/components/schemas/Box"}}},
          {"revised_keypoints", {{"$ref", "#/components/schemas/Keypoints"}}},
          {"action", {{"type", "string"}, {"enum", {"revise", "accept", "reject_quality"}}}},
          {"quality", {{"type", "string"}, {"enum", {"ok", "rejected"}}}},
          {"gender_confirmation", {{"type", "string"}, {"enum", {"female", "male"}}}},
          {"version", {{"type", "integer"}}},
          {"editor", {{"type", "string"}}}}}}}};
  return doc;
}

void mount_routes(httplib::Server& server, AnnotationService& service, const ServerOptions& options) {
  server.Get("/api/openapi.json", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, openapi_document());
  });

  server.Get("/api/rounds", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json out = json::array();
      for (const auto& r : service.rounds()) out.push_back(r.to_json());
      send_json(res, out);
    });
  });

  server.Post("/api/rounds/seed", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      const auto ids = body.at("frame_ids").get<std::vector<std::string>>();
      std::map<std::string, FaceAnnotation> manual;
      std::vector<TaskRejection> bad;
      const json anns = body.value("annotations", json::object());
      for (const auto& id : ids) {
        if (!anns.contains(id)) continue;
        try {
          manual[id] = manual_annotation(anns.at(id));
        } catch (const Error& e) {
          bad.push_back({id, e.code(), e.what()});
        } catch (const json::exception& e) {
          bad.push_back({id, ErrorCode::kInvalidGeometry, e.what()});
        }
      }
      std::vector<std::string> to_seed;
      for (const auto& id : ids) {
        if (std::none_of(bad.begin(), bad.end(), [&](const auto& b) { return b.frame_id == id; })) {
          to_seed.push_back(id);
        }
      }
      const SeedResult r = service.seed_round(to_seed, manual);
      json rejected = json::array();
      for (const auto& b : bad) rejected.push_back(rejection_json(b));
      for (const auto& b : r.rejected) rejected.push_back(rejection_json(b));
      send_json(res, {{"round", r.round.to_json()}, {"rejected", rejected}});
    });
  });

  server.Post("/api/rounds/advance", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      service.start_advance();
      send_json(res, service.job_status().to_json(), 202);
    });
  });

  server.Get("/api/jobs/current", [&service](const httplib::Request&, httplib::Response& res) {
    send_json(res, service.job_status().to_json());
  });

  server.Post("/api/propose",
              [&service, options](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                  const json body = parse_body(req);
                  const auto ids = body.at("frame_ids").get<std::vector<std::string>>();
                  const Drafter drafter =
                      drafter_for(service, options, body.value("detector_ref", std::string("whole")),
                                  body.value("keypoint_ref", std::string("current")));
                  const ProposeResult r = service.propose(ids, drafter);
                  json tasks = json::array();
                  for (const auto& t : r.tasks) tasks.push_back(task_json(t));
                  json skipped = json::array();
                  for (const auto& s : r.skipped) skipped.push_back(rejection_json(s));
                  send_json(res, {{"tasks", tasks}, {"skipped", skipped}});
                });
              });

  server.Get("/api/tasks/next", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::string editor = req.get_param_value("editor");
      if (editor.empty()) editor = req.get_header_value("X-Editor");
      send_json(res, task_json(service.next_task(editor)));
    });
  });

  server.Get(R"(/api/tasks/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, task_json(service.get_task(req.matches[1]))); });
  });

  server.Post(R"(/api/tasks/([^/]+)/correction)",
              [&service](const httplib::Request& req, httplib::Response& res) {
                guarded(res, [&] {
                  const json body = parse_body(req);
                  Correction c;
                  c.action = parse_action(body);
                  if (body.contains("revised_box") && !body["revised_box"].is_null()) {
                    c.box = labelme::box_from_json(body["revised_box"]);
                  }
                  if (body.contains("revised_keypoints") && !body["revised_keypoints"].is_null()) {
                    c.keypoints = labelme::keypoints_from_json(body["revised_keypoints"]);
                  }
                  if (body.contains("gender_confirmation") && !body["gender_confirmation"].is_null()) {
                    c.gender_confirmation =
                        gender_from_string(body["gender_confirmation"].get<std::string>());
                  }
                  if (body.contains("version")) c.expected_version = body["version"].get<std::int64_t>();
                  c.editor = body.value("editor", req.get_header_value("X-Editor"));
                  send_json(res, task_json(service.submit_correction(req.matches[1], c)));
                });
              });

  server.Get("/api/export", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::set<int> rounds;
      if (req.has_param("rounds")) {
        std::stringstream ss(req.get_param_value("rounds"));
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (item.empty()) continue;
          try {
            rounds.insert(std::stoi(item));
          } catch (const std::exception&) {
            throw Error(ErrorCode::kInvalidInput, "rounds must be comma-separated integers");
          }
        }
      }
      const ExportBundle b = service.export_ground_truth(rounds);
      res.set_header("Content-Disposition", "attachment; filename=\"ground_truth.zip\"");
      res.set_header("X-Record-Count", std::to_string(b.records));
      res.set_content(b.to_zip(), "application/zip");
    });
  });

  server.Get(R"(/images/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto path = service.frame_image_path(req.matches[1]);
      std::ifstream in(path, std::ios::binary);
      if (!in) throw Error(ErrorCode::kIo, "cannot read image " + path.string());
      std::ostringstream os;
      os << in.rdbuf();
      const std::string ext = path.extension().string();
      res.set_content(os.str(), ext == ".jpg" || ext == ".jpeg" ? "image/jpeg" : "image/png");
    });
  });

  if (options.static_dir) server.set_mount_point("/", options.static_dir->string());
}

}  // namespace chickface::annotation
