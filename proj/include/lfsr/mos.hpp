#pragma once

// Blinded rating bundles and the rating-session service behind the HTTP API.
//
// Bundle layout:
//   bundle.json        item ids and image files, in blinded order
//   items/<id>.png     8-bit renders
//   key.sealed.json    id -> (image, method); read only by report code
//
// The service appends to <state_dir>/records.jsonl; every line is either a
// session header or one score. Replaying the log rebuilds all sessions.

#include "lfsr/image.hpp"
#include "lfsr/metrics.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace lfsr::mos {

inline constexpr const char* kGroundTruthLabel = "ground_truth";

// ---------------------------------------------------------------------------
// Bundles

/// One method's output for a rated image, at reference resolution.
using Renderer = std::function<ImageSlice(const RoiPair&)>;

struct Method {
  std::string label;
  Renderer render;
};

struct KeyEntry {
  std::string image_id;
  std::string method;
};

struct BundleSummary {
  std::vector<std::string> image_ids;  ///< selected images
  std::vector<std::string> item_ids;   ///< blinded order
  std::map<std::string, KeyEntry> key;
};

/// Display mapping shared by every render of one image: the reference's
/// raw-intensity range maps to 0..255.
struct Window {
  double lo = 0, hi = 1;
  static Window of(const ImageSlice& reference);
  Pixels apply(const ImageSlice& s) const;
};

/// Selects `n_images` pairs (seeded, without replacement), renders every
/// method plus the ground truth, shuffles and writes the bundle to `out`.
BundleSummary prepare_bundle(const std::vector<RoiPair>& pairs, const std::vector<Method>& methods, int n_images,
                             std::uint64_t seed, const std::filesystem::path& out);

/// Rater-visible bundle contents: ids and image files only.
struct BundleIndex {
  std::filesystem::path dir;
  std::vector<std::string> items;
  std::map<std::string, std::string> files;

  static BundleIndex load(const std::filesystem::path& dir);
  std::vector<unsigned char> image_bytes(const std::string& item_id) const;
};

/// Reads key.sealed.json. Report code only.
std::map<std::string, KeyEntry> load_sealed_key(const std::filesystem::path& bundle_dir);

// ---------------------------------------------------------------------------
// Sessions

/// HTTP-shaped failure: 404 unknown, 409 conflict, 422 invalid.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct Progress {
  std::size_t rated = 0, total = 0;
};

struct Session {
  std::string id;
  std::string rater;
  std::uint64_t seed = 0;
  std::vector<std::string> order;
  std::size_t cursor = 0;
  std::vector<metrics::MosRecord> records;  ///< method field left empty

  bool complete() const { return cursor == order.size(); }
  Progress progress() const { return {cursor, order.size()}; }
};

struct NextItem {
  bool complete = false;
  std::string item_id;
  std::vector<unsigned char> png;
  Progress progress;
};

struct SessionReport {
  std::vector<metrics::MosSummary> summaries;
  std::vector<metrics::MosRecord> records;  ///< joined with the key
  std::string aggregation = "pooled over raters";
};

class Service {
 public:
  /// Loads the bundle index and replays `state_dir/records.jsonl` if present.
  Service(const std::filesystem::path& bundle_dir, const std::filesystem::path& state_dir);

  /// Item order is a shuffle of the bundle order seeded by `seed`.
  Session create_session(const std::string& rater, std::uint64_t seed);
  Session session(const std::string& id) const;
  NextItem next_item(const std::string& session_id) const;
  Progress submit_score(const std::string& session_id, const std::string& item_id, int score,
                        const std::string& flags);

  /// Completed sessions only; joins the persisted scores with the sealed key.
  SessionReport report(const std::string& session_id) const;

  std::vector<std::string> session_ids() const;
  const std::filesystem::path& log_path() const { return log_path_; }

  /// Deterministic session order for a seed, without creating a session.
  std::vector<std::string> shuffled_items(std::uint64_t seed) const;

 private:
  void append(const nlohmann::json& line);
  void apply(const nlohmann::json& line);

  BundleIndex bundle_;
  std::filesystem::path log_path_;
  std::map<std::string, Session> sessions_;
  mutable std::mutex mutex_;
};

/// Joins a record log with the sealed key and aggregates every score in it.
SessionReport report_log(const std::filesystem::path& bundle_dir, const std::filesystem::path& log_path);

/// UTC ISO 8601 timestamp with second resolution.
std::string utc_now();

}  // namespace lfsr::mos
