#include <doctest.h>

#include <lfsr/data.hpp>
#include <lfsr/metrics.hpp>
#include <lfsr/mos.hpp>
#include <lfsr/mos_http.hpp>

#include "support/fixtures.hpp"

#include <fstream>
#include <set>
#include <thread>

using namespace lfsr;
using namespace lfsr::mos;
using namespace lfsr::testing;
using nlohmann::json;

namespace {

const std::vector<std::string> kLabels{"bilinear", "blurred", kGroundTruthLabel};

std::vector<Method> two_methods() {
  return {{"bilinear", [](const RoiPair& p) { return metrics::bilinear_upsample(p.lr, p.scale); }},
          {"blurred", [](const RoiPair& p) {
             Pixels q = p.hr.pixels;
             for (int i = 1; i + 1 < q.rows(); ++i)
               for (int j = 1; j + 1 < q.cols(); ++j) q(i, j) = p.hr.pixels.block(i - 1, j - 1, 3, 3).mean();
             return p.hr.with_pixels(q);
           }}};
}

/// Fails when `text` mentions a method label or the key file.
void check_blind(const std::string& text) {
  for (const auto& l : kLabels) CHECK_MESSAGE(text.find(l) == std::string::npos, "leaked '" << l << "'");
  CHECK(text.find("sealed") == std::string::npos);
  CHECK(text.find("image_id") == std::string::npos);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("bundle: 2 methods plus ground truth over 5 images gives 15 keyed items") {
  TempDir dir("mos_bundle");
  const auto pairs = phantom_pairs(8, 3);
  const auto b = prepare_bundle(pairs, two_methods(), 5, 11, dir.path);
  CHECK(b.image_ids.size() == 5);
  CHECK(b.item_ids.size() == 15);
  CHECK(std::set<std::string>(b.item_ids.begin(), b.item_ids.end()).size() == 15);
  std::set<std::pair<std::string, std::string>> cells;
  for (const auto& id : b.item_ids) cells.insert({b.key.at(id).image_id, b.key.at(id).method});
  CHECK(cells.size() == 15);  // every (image, method) exactly once
  const auto key = load_sealed_key(dir.path);
  CHECK(key.size() == 15);
  for (const auto& [id, e] : key) CHECK(e.method == b.key.at(id).method);

  // rater-visible index carries no labels
  check_blind(slurp(dir.path / "bundle.json"));
  for (const auto& entry : std::filesystem::directory_iterator(dir.path / "items"))
    check_blind(entry.path().filename().string());

  // blind order is not grouped by image
  bool interleaved = false;
  for (std::size_t i = 0; i + 2 < b.item_ids.size(); i += 3) {
    const auto& a = b.key.at(b.item_ids[i]).image_id;
    if (b.key.at(b.item_ids[i + 1]).image_id != a || b.key.at(b.item_ids[i + 2]).image_id != a) interleaved = true;
  }
  CHECK(interleaved);

  // identical inputs reproduce the bundle byte for byte
  TempDir again("mos_bundle_again");
  prepare_bundle(pairs, two_methods(), 5, 11, again.path);
  CHECK(slurp(dir.path / "key.sealed.json") == slurp(again.path / "key.sealed.json"));
  CHECK(slurp(dir.path / "items/item-0007.png") == slurp(again.path / "items/item-0007.png"));

  CHECK_THROWS_AS(prepare_bundle(pairs, two_methods(), 9, 1, dir.path / "x"), ConfigError);
}

TEST_CASE("windowing is shared by every render of an image") {
  const auto pairs = phantom_pairs(1, 5);
  const auto& p = pairs[0];
  const Window w = Window::of(p.hr);
  const Pixels gt = w.apply(p.hr);
  CHECK(gt.minCoeff() == doctest::Approx(0.0));
  CHECK(gt.maxCoeff() == doctest::Approx(255.0));
  const Pixels shifted = w.apply(p.hr.with_pixels(p.hr.pixels + 0.01));
  CHECK(((shifted - gt).maxCoeff()) <= 255.0 * 0.01 * p.hr.norm_std / (w.hi - w.lo) + 1e-9);
}

TEST_CASE("a 3-item session takes exactly 3 scores, then reports") {
  TempDir dir("mos_three");
  const auto pairs = phantom_pairs(2, 4);
  prepare_bundle(pairs, two_methods(), 1, 2, dir.path / "bundle");
  Service svc(dir.path / "bundle", dir.path / "state");
  const Session s = svc.create_session("r1", 42);
  REQUIRE(s.order.size() == 3);

  CHECK_THROWS_AS(svc.report(s.id), ServiceError);
  std::vector<int> scores{2, 4, 3};
  for (int k = 0; k < 3; ++k) {
    const NextItem n = svc.next_item(s.id);
    REQUIRE_FALSE(n.complete);
    CHECK(n.progress.rated == static_cast<std::size_t>(k));
    CHECK(n.png.size() > 8);
    if (k == 0) {
      try {
        svc.submit_score(s.id, n.item_id, 5, "");
        FAIL("score 5 accepted");
      } catch (const ServiceError& e) {
        CHECK(e.status() == 422);
      }
      try {
        svc.submit_score(s.id, n.item_id, 1, "X");
        FAIL("flag X accepted");
      } catch (const ServiceError& e) {
        CHECK(e.status() == 422);
      }
    }
    svc.submit_score(s.id, n.item_id, scores[static_cast<std::size_t>(k)], k == 1 ? "SA" : "");
    try {
      svc.submit_score(s.id, n.item_id, 1, "");
      FAIL("duplicate accepted");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 409);
    }
  }
  CHECK(svc.next_item(s.id).complete);
  CHECK(svc.session(s.id).complete());

  // report equals mos_aggregate over what the log holds
  const auto rep = svc.report(s.id);
  CHECK(rep.records.size() == 3);
  const auto key = load_sealed_key(dir.path / "bundle");
  std::vector<metrics::MosRecord> manual;
  std::ifstream log(svc.log_path());
  std::string line;
  while (std::getline(log, line)) {
    const json j = json::parse(line);
    if (j["kind"] != "score") continue;
    manual.push_back({key.at(j["item"]).image_id, key.at(j["item"]).method, j["score"].get<int>(),
                      metrics::parse_flags(j["flags"]), "r1", ""});
  }
  const auto expect = metrics::mos_aggregate(manual);
  REQUIRE(rep.summaries.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    CHECK(rep.summaries[i].method == expect[i].method);
    CHECK(rep.summaries[i].mean == expect[i].mean);
    CHECK(rep.summaries[i].histogram == expect[i].histogram);
    CHECK(rep.summaries[i].flags == expect[i].flags);
  }
  CHECK_THROWS_AS(svc.next_item("nope"), ServiceError);
}

TEST_CASE("different seeds give different orders over the same items") {
  TempDir dir("mos_seeds");
  prepare_bundle(phantom_pairs(6, 1), two_methods(), 5, 1, dir.path / "bundle");
  Service svc(dir.path / "bundle", dir.path / "state");
  const Session a = svc.create_session("alice", 1);
  const Session b = svc.create_session("bob", 2);
  CHECK(a.order != b.order);
  CHECK(std::multiset<std::string>(a.order.begin(), a.order.end()) ==
        std::multiset<std::string>(b.order.begin(), b.order.end()));
  CHECK(svc.create_session("carol", 1).order == a.order);
}

TEST_CASE("replaying the log rebuilds session state, tolerating a torn tail") {
  TempDir dir("mos_replay");
  prepare_bundle(phantom_pairs(4, 2), two_methods(), 2, 9, dir.path / "bundle");
  std::string sid;
  std::vector<std::string> order;
  {
    Service svc(dir.path / "bundle", dir.path / "state");
    const Session s = svc.create_session("r", 7);
    sid = s.id;
    order = s.order;
    svc.create_session("other", 8);
    for (int k = 0; k < 4; ++k) svc.submit_score(sid, svc.next_item(sid).item_id, k % 5, k % 2 ? "N" : "");
  }
  {
    std::ofstream(dir.path / "state/records.jsonl", std::ios::app) << R"({"kind":"score","sess)";
  }
  Service back(dir.path / "bundle", dir.path / "state");
  const Session s = back.session(sid);
  CHECK(s.order == order);
  CHECK(s.cursor == 4);
  CHECK(s.records.size() == 4);
  CHECK(s.records[3].flags == std::set<char>{'N'});
  CHECK(back.session_ids().size() == 2);
  back.submit_score(sid, back.next_item(sid).item_id, 3, "U");
  Service again(dir.path / "bundle", dir.path / "state");
  CHECK(again.session(sid).cursor == 5);
}

TEST_CASE("http api: blinded payloads, status codes, full session") {
  TempDir dir("mos_http");
  prepare_bundle(phantom_pairs(4, 8), two_methods(), 1, 3, dir.path / "bundle");
  Service svc(dir.path / "bundle", dir.path / "state");
  httplib::Server server;
  install_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto post = [&](const std::string& path, const json& body) {
    auto r = cli.Post(path, body.dump(), "application/json");
    REQUIRE(r);
    return r;
  };

  auto r = post("/api/sessions", {{"rater", "dr-x"}, {"seed", 5}});
  CHECK(r->status == 201);
  check_blind(r->body);
  const std::string sid = json::parse(r->body)["session_id"];
  CHECK(post("/api/sessions", {{"seed", 5}})->status == 422);
  CHECK(post("/api/sessions", json::array())->status == 400);
  CHECK(cli.Get("/api/sessions/zzz/next")->status == 404);

  auto scale = cli.Get("/api/scale");
  CHECK(json::parse(scale->body)["scores"][0] == "non-diagnostic");

  CHECK(cli.Get("/api/sessions/" + sid + "/report")->status == 409);
  for (int k = 0; k < 3; ++k) {
    auto nx = cli.Get("/api/sessions/" + sid + "/next");
    REQUIRE(nx->status == 200);
    check_blind(nx->body);
    const json j = json::parse(nx->body);
    CHECK(j["complete"] == false);
    CHECK(j["progress"]["total"] == 3);
    const std::string png = j["image_png_base64"];
    CHECK(png.rfind("iVBORw0KGgo", 0) == 0);  // PNG signature
    auto st = cli.Get("/api/sessions/" + sid);
    check_blind(st->body);

    const std::string item = j["item_id"];
    CHECK(post("/api/sessions/" + sid + "/scores", {{"item_id", item}, {"score", 5}})->status == 422);
    CHECK(post("/api/sessions/" + sid + "/scores", {{"item_id", item}, {"score", 1.5}})->status == 422);
    auto ok = post("/api/sessions/" + sid + "/scores", {{"item_id", item}, {"score", 2 * (k % 2) + 2}, {"flags", {"S"}}});
    CHECK(ok->status == 200);
    check_blind(ok->body);
    auto dup = post("/api/sessions/" + sid + "/scores", {{"item_id", item}, {"score", 1}});
    CHECK(dup->status == 409);
    check_blind(dup->body);
  }
  auto done = cli.Get("/api/sessions/" + sid + "/next");
  CHECK(json::parse(done->body)["complete"] == true);
  auto rep = cli.Get("/api/sessions/" + sid + "/report");
  REQUIRE(rep->status == 200);
  const json report = json::parse(rep->body);
  CHECK(report["n_records"] == 3);
  CHECK(report["methods"].size() == 3);

  server.stop();
  th.join();
}
