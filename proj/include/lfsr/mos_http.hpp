#pragma once

// HTTP front end for mos::Service.
//
//   POST /api/sessions                  {"rater": str, "seed": int?}
//        -> 201 {"session_id", "progress": {"rated", "total"}}
//   GET  /api/sessions/{id}             -> {"session_id", "rater", "progress", "complete"}
//   GET  /api/sessions/{id}/next        -> {"complete": false, "item_id", "image_png_base64", "progress"}
//                                        | {"complete": true, "progress"}
//   POST /api/sessions/{id}/scores      {"item_id", "score": 0..4, "flags": "SAUN" subset}
//        -> {"progress", "complete"}
//   GET  /api/sessions/{id}/report      -> 409 until complete, then the aggregated report
//   GET  /api/scale                     -> score labels and flag alphabet
//
// Errors are {"error": message} with 400 (malformed body), 404, 409 or 422.

#include "lfsr/mos.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>

namespace lfsr::mos {

nlohmann::json to_json(const SessionReport& r);

/// Registers the API routes on `server`; optionally serves static files.
void install_routes(httplib::Server& server, Service& service,
                    const std::optional<std::filesystem::path>& ui_dir = std::nullopt);

}  // namespace lfsr::mos
