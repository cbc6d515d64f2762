// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chickface {

enum class ErrorCode {
  kInvalidInput,
  kDegenerateGeometry,
  kPoseRejected,
  kFlaggedFrame,
  kPlanning,
  kDetector,
  kModel,
  kProtocol,
  kUndefinedMetric,
  kRejectedLayer,
  kUnknownTask,
  kInvalidGeometry,
  kIllegalTransition,
  kVersionConflict,
  kNoTasks,
  kJobRunning,
  kConfig,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Every module reports failures through this type; `code()` is what the CLI
// and the HTTP layer map to exit codes and `{code, message}` bodies.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace chickface
