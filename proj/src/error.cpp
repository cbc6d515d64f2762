// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#include "chickface/error.hpp"

namespace chickface {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid_input";
    case ErrorCode::kDegenerateGeometry: return "degenerate_geometry";
    case ErrorCode::kPoseRejected: return "pose_rejected";
    case ErrorCode::kFlaggedFrame: return "flagged_frame";
    case ErrorCode::kPlanning: return "planning_error";
    case ErrorCode::kDetector: return "detector_error";
    case ErrorCode::kModel: return "model_error";
    case ErrorCode::kProtocol: return "protocol_error";
    case ErrorCode::kUndefinedMetric: return "undefined_metric";
    case ErrorCode::kRejectedLayer: return "rejected_layer";
    case ErrorCode::kUnknownTask: return "unknown_task";
    case ErrorCode::kInvalidGeometry: return "invalid_geometry";
    case ErrorCode::kIllegalTransition: return "illegal_transition";
    case ErrorCode::kVersionConflict: return "version_conflict";
    case ErrorCode::kNoTasks: return "no_tasks";
    case ErrorCode::kJobRunning: return "job_running";
    case ErrorCode::kConfig: return "config_error";
    case ErrorCode::kIo: return "io_error";
  }
  return "unknown";
}

}  // namespace chickface
