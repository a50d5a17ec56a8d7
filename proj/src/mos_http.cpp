#include "lfsr/mos_http.hpp"

#include "lfsr/errors.hpp"

#include <random>

namespace lfsr::mos {

using nlohmann::json;

namespace {

json progress_json(const Progress& p) { return {{"rated", p.rated}, {"total", p.total}}; }

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

/// Runs `f`, mapping service and parse failures onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    reply(res, e.status(), {{"error", e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

json body_of(const httplib::Request& req) {
  const json j = json::parse(req.body);
  if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
  return j;
}

}  // namespace

json to_json(const SessionReport& r) {
  json j = {{"aggregation", r.aggregation}, {"n_records", r.records.size()}, {"methods", r.summaries}};
  j["records"] = r.records;
  return j;
}

void install_routes(httplib::Server& server, Service& service, const std::optional<std::filesystem::path>& ui_dir) {
  server.Get("/api/scale", [](const httplib::Request&, httplib::Response& res) {
    json flags = json::array();
    for (char c : metrics::kFlagAlphabet) flags.push_back(std::string(1, c));
    reply(res, 200, {{"scores", metrics::kScoreLabels}, {"flags", flags}});
  });

  server.Post("/api/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json b = body_of(req);
      if (!b.contains("rater") || !b["rater"].is_string()) throw ServiceError(422, "'rater' must be a string");
      std::uint64_t seed;
      if (b.contains("seed")) {
        if (!b["seed"].is_number_unsigned()) throw ServiceError(422, "'seed' must be a non-negative integer");
        seed = b["seed"].get<std::uint64_t>();
      } else {
        seed = std::random_device{}();
      }
      const Session s = service.create_session(b["rater"].get<std::string>(), seed);
      reply(res, 201, {{"session_id", s.id}, {"progress", progress_json(s.progress())}});
    });
  });

  server.Get(R"(/api/sessions/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const Session s = service.session(req.matches[1]);
      reply(res, 200,
            {{"session_id", s.id}, {"rater", s.rater}, {"progress", progress_json(s.progress())},
             {"complete", s.complete()}});
    });
  });

  server.Get(R"(/api/sessions/([^/]+)/next)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const NextItem n = service.next_item(req.matches[1]);
      if (n.complete) return reply(res, 200, {{"complete", true}, {"progress", progress_json(n.progress)}});
      reply(res, 200,
            {{"complete", false},
             {"item_id", n.item_id},
             {"image_png_base64", httplib::detail::base64_encode(std::string(n.png.begin(), n.png.end()))},
             {"progress", progress_json(n.progress)}});
    });
  });

  server.Post(R"(/api/sessions/([^/]+)/scores)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json b = body_of(req);
      if (!b.contains("item_id") || !b["item_id"].is_string()) throw ServiceError(422, "'item_id' must be a string");
      if (!b.contains("score") || !b["score"].is_number_integer()) throw ServiceError(422, "'score' must be an integer");
      std::string flags;
      if (b.contains("flags")) {
        if (b["flags"].is_string()) {
          flags = b["flags"].get<std::string>();
        } else if (b["flags"].is_array()) {
          for (const auto& f : b["flags"]) {
            if (!f.is_string()) throw ServiceError(422, "'flags' entries must be strings");
            flags += f.get<std::string>();
          }
        } else {
          throw ServiceError(422, "'flags' must be a string or an array");
        }
      }
      const std::string id = req.matches[1];
      const Progress p = service.submit_score(id, b["item_id"].get<std::string>(), b["score"].get<int>(), flags);
      reply(res, 200, {{"progress", progress_json(p)}, {"complete", p.rated == p.total}});
    });
  });

  server.Get(R"(/api/sessions/([^/]+)/report)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, to_json(service.report(req.matches[1]))); });
  });

  if (ui_dir) server.set_mount_point("/", ui_dir->string());
}

}  // namespace lfsr::mos
