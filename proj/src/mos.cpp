#include "lfsr/mos.hpp"

#include "lfsr/errors.hpp"
#include "lfsr/png_io.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <unistd.h>

namespace lfsr::mos {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ParseError(path.string(), "cannot open");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path.string(), e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw ParseError(path.string(), "cannot write");
  os << j.dump(2) << '\n';
}

std::string blinded_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "item-%04zu", i + 1);
  return buf;
}

template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
}

}  // namespace

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

Window Window::of(const ImageSlice& reference) {
  const Pixels raw = reference.denormalized();
  Window w{raw.minCoeff(), raw.maxCoeff()};
  if (!(w.hi > w.lo)) w.hi = w.lo + 1;
  return w;
}

Pixels Window::apply(const ImageSlice& s) const {
  return ((s.denormalized() - lo) * (255.0 / (hi - lo))).max(0.0).min(255.0);
}

BundleSummary prepare_bundle(const std::vector<RoiPair>& pairs, const std::vector<Method>& methods, int n_images,
                             std::uint64_t seed, const fs::path& out) {
  if (n_images < 1) throw ConfigError("n_images must be at least 1");
  if (static_cast<std::size_t>(n_images) > pairs.size())
    throw ConfigError("n_images " + std::to_string(n_images) + " exceeds the " + std::to_string(pairs.size()) +
                      " available slices");
  std::set<std::string> labels{kGroundTruthLabel};
  for (const auto& m : methods)
    if (!labels.insert(m.label).second) throw ConfigError("duplicate method label '" + m.label + "'");

  std::vector<std::size_t> pick(pairs.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  seeded_shuffle(pick, seed);
  pick.resize(static_cast<std::size_t>(n_images));
  std::sort(pick.begin(), pick.end());

  struct Render {
    KeyEntry key;
    Pixels pixels;
  };
  std::vector<Render> renders;
  BundleSummary summary;
  for (std::size_t i : pick) {
    const RoiPair& p = pairs[i];
    summary.image_ids.push_back(p.id);
    const Window w = Window::of(p.hr);
    renders.push_back({{p.id, kGroundTruthLabel}, w.apply(p.hr)});
    for (const auto& m : methods) {
      const ImageSlice s = m.render(p);
      if (!s.same_dims(p.hr))
        throw ShapeError("method '" + m.label + "' rendered " + s.dims() + " for " + p.id + ", expected " +
                         p.hr.dims());
      renders.push_back({{p.id, m.label}, w.apply(s)});
    }
  }
  // Separate stream from the image selection.
  seeded_shuffle(renders, seed ^ 0x9E3779B97F4A7C15ull);

  fs::create_directories(out / "items");
  json index = {{"format", "lfsr-mos-bundle"}, {"version", 1}, {"items", json::array()}};
  json key = json::object();
  for (std::size_t i = 0; i < renders.size(); ++i) {
    const std::string id = blinded_id(i);
    const std::string file = "items/" + id + ".png";
    png::write8(out / file, renders[i].pixels);
    index["items"].push_back({{"id", id}, {"file", file}});
    key[id] = {{"image_id", renders[i].key.image_id}, {"method", renders[i].key.method}};
    summary.item_ids.push_back(id);
    summary.key[id] = renders[i].key;
  }
  write_json(out / "bundle.json", index);
  write_json(out / "key.sealed.json", {{"format", "lfsr-mos-key"}, {"version", 1}, {"items", key}});
  return summary;
}

BundleIndex BundleIndex::load(const fs::path& dir) {
  const json j = read_json(dir / "bundle.json");
  BundleIndex b;
  b.dir = dir;
  try {
    if (j.at("format") != "lfsr-mos-bundle") throw ParseError((dir / "bundle.json").string(), "unknown format tag");
    for (const auto& item : j.at("items")) {
      const auto id = item.at("id").get<std::string>();
      if (b.files.contains(id)) throw ParseError((dir / "bundle.json").string(), "duplicate item " + id);
      b.items.push_back(id);
      b.files[id] = item.at("file").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ParseError((dir / "bundle.json").string(), e.what());
  }
  if (b.items.empty()) throw ParseError((dir / "bundle.json").string(), "bundle has no items");
  return b;
}

std::vector<unsigned char> BundleIndex::image_bytes(const std::string& item_id) const {
  const fs::path path = dir / files.at(item_id);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(path.string(), "cannot open");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::map<std::string, KeyEntry> load_sealed_key(const fs::path& bundle_dir) {
  const fs::path path = bundle_dir / "key.sealed.json";
  const json j = read_json(path);
  std::map<std::string, KeyEntry> key;
  try {
    for (const auto& [id, e] : j.at("items").items())
      key[id] = {e.at("image_id").get<std::string>(), e.at("method").get<std::string>()};
  } catch (const json::exception& e) {
    throw ParseError(path.string(), e.what());
  }
  return key;
}

// ---------------------------------------------------------------------------

Service::Service(const fs::path& bundle_dir, const fs::path& state_dir)
    : bundle_(BundleIndex::load(bundle_dir)), log_path_(state_dir / "records.jsonl") {
  fs::create_directories(state_dir);
  std::ifstream is(log_path_);
  std::string line;
  std::size_t n = 0;
  std::uintmax_t good = 0;
  bool torn = false;
  while (std::getline(is, line)) {
    ++n;
    const bool last = is.eof();
    if (!line.empty()) {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        // A torn final line from an interrupted append is cut off; anything
        // earlier is corruption.
        if (!last && is.peek() != std::char_traits<char>::eof())
          throw ParseError(log_path_.string(), "line " + std::to_string(n) + " is not JSON");
        torn = true;
        break;
      }
      if (last) {
        // complete JSON but no newline: keep it and terminate the line
        apply(j);
        is.close();
        std::ofstream(log_path_, std::ios::app) << '\n';
        return;
      }
      apply(j);
    }
    good += line.size() + 1;
  }
  is.close();
  if (torn) fs::resize_file(log_path_, good);
}

std::vector<std::string> Service::shuffled_items(std::uint64_t seed) const {
  std::vector<std::string> order = bundle_.items;
  seeded_shuffle(order, seed);
  return order;
}

void Service::append(const json& line) {
  std::FILE* f = std::fopen(log_path_.c_str(), "a");
  if (!f) throw std::runtime_error("cannot open " + log_path_.string());
  const std::string s = line.dump() + "\n";
  const bool ok = std::fwrite(s.data(), 1, s.size(), f) == s.size() && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw std::runtime_error("write to " + log_path_.string() + " failed");
}

void Service::apply(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "session") {
    Session s;
    s.id = j.at("session").get<std::string>();
    s.rater = j.at("rater").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.order = j.at("order").get<std::vector<std::string>>();
    sessions_[s.id] = std::move(s);
  } else if (kind == "score") {
    Session& s = sessions_.at(j.at("session").get<std::string>());
    metrics::MosRecord r;
    r.image_id = j.at("item").get<std::string>();
    r.score = j.at("score").get<int>();
    r.flags = metrics::parse_flags(j.at("flags").get<std::string>());
    r.rater = s.rater;
    r.timestamp = j.at("timestamp").get<std::string>();
    s.records.push_back(std::move(r));
    ++s.cursor;
  } else {
    throw ParseError(log_path_.string(), "unknown record kind '" + kind + "'");
  }
}

Session Service::create_session(const std::string& rater, std::uint64_t seed) {
  if (rater.empty()) throw ServiceError(422, "rater id must not be empty");
  std::lock_guard lock(mutex_);
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%05zu", sessions_.size() + 1);
  const json line = {{"kind", "session"}, {"session", buf},  {"rater", rater},
                     {"seed", seed},      {"order", shuffled_items(seed)}, {"timestamp", utc_now()}};
  append(line);
  apply(line);
  return sessions_.at(buf);
}

Session Service::session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
  return it->second;
}

NextItem Service::next_item(const std::string& session_id) const {
  const Session s = session(session_id);
  NextItem n;
  n.progress = s.progress();
  if (s.complete()) {
    n.complete = true;
    return n;
  }
  n.item_id = s.order[s.cursor];
  n.png = bundle_.image_bytes(n.item_id);
  return n;
}

Progress Service::submit_score(const std::string& session_id, const std::string& item_id, int score,
                               const std::string& flags) {
  metrics::MosRecord r;
  r.image_id = item_id;
  r.score = score;
  try {
    r.flags = metrics::parse_flags(flags);
    r.validate();
  } catch (const InvalidInputError& e) {
    throw ServiceError(422, e.what());
  }
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + session_id + "'");
  Session& s = it->second;
  if (std::find(s.order.begin(), s.order.end(), item_id) == s.order.end())
    throw ServiceError(404, "item '" + item_id + "' is not part of session " + session_id);
  for (const auto& done : s.records)
    if (done.image_id == item_id) throw ServiceError(409, "item '" + item_id + "' already rated");
  if (s.complete()) throw ServiceError(409, "session " + session_id + " is complete");
  if (s.order[s.cursor] != item_id)
    throw ServiceError(409, "item '" + item_id + "' is not the current item (expected '" + s.order[s.cursor] + "')");
  const json line = {{"kind", "score"},          {"session", session_id}, {"item", item_id}, {"score", score},
                     {"flags", metrics::flags_string(r.flags)}, {"timestamp", utc_now()}};
  append(line);
  apply(line);
  return s.progress();
}

namespace {

SessionReport join_and_aggregate(const std::map<std::string, KeyEntry>& key, std::vector<metrics::MosRecord> rs) {
  SessionReport out;
  for (auto& r : rs) {
    const auto it = key.find(r.image_id);
    if (it == key.end()) throw ParseError("key.sealed.json", "no key entry for item " + r.image_id);
    r.method = it->second.method;
    r.image_id = it->second.image_id;
  }
  if (!rs.empty()) out.summaries = metrics::mos_aggregate(rs);
  out.records = std::move(rs);
  return out;
}

}  // namespace

SessionReport Service::report(const std::string& session_id) const {
  const Session s = session(session_id);
  if (!s.complete())
    throw ServiceError(409, "session " + session_id + " has " + std::to_string(s.order.size() - s.cursor) +
                                " unrated items");
  return join_and_aggregate(load_sealed_key(bundle_.dir), s.records);
}

std::vector<std::string> Service::session_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : sessions_) ids.push_back(id);
  return ids;
}

SessionReport report_log(const fs::path& bundle_dir, const fs::path& log_path) {
  if (!fs::exists(log_path)) throw ParseError(log_path.string(), "no rating log");
  const Service svc(bundle_dir, log_path.parent_path());
  std::vector<metrics::MosRecord> all;
  for (const auto& id : svc.session_ids()) {
    const Session s = svc.session(id);
    all.insert(all.end(), s.records.begin(), s.records.end());
  }
  if (all.empty()) throw ParseError(log_path.string(), "log holds no scores");
  return join_and_aggregate(load_sealed_key(bundle_dir), std::move(all));
}

}  // namespace lfsr::mos
