// Copyright 2026 The chickface Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "chickface/annotation.hpp"

namespace httplib {
class Server;
}

namespace chickface::annotation {

struct ServerOptions {
  std::optional<std::filesystem::path> static_dir;  // UI bundle mounted at "/"
  DetectorConfig detector;                          // used by POST /api/propose
};

/// HTTP status for an error code. Version conflicts get 409.
int http_status(ErrorCode code);

/// OpenAPI 3 description of every route.
nlohmann::json openapi_document();

void mount_routes(httplib::Server& server, AnnotationService& service, const ServerOptions& options);

}  // namespace chickface::annotation
