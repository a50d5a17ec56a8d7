#pragma once

// Image quality metrics, the bilinear baseline, and MOS aggregation.

#include "lfsr/image.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace lfsr::metrics {

/// PSNR of identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(range^2 / mse); kPsnrIdentical when mse is zero.
double psnr(const ImageSlice& a, const ImageSlice& b, double data_range);

struct SsimOptions {
  int window = 8;  ///< uniform square window, stride 1
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM over all window positions (population statistics).
double ssim(const ImageSlice& a, const ImageSlice& b, double data_range, const SsimOptions& options = {});

/// max - min of the reference image; the PSNR/SSIM data range convention.
double data_range_of(const ImageSlice& reference);

/// Corner-aligned bilinear interpolation: output sample o maps to source
/// coordinate o * (in - 1) / (out - 1).
ImageSlice bilinear_upsample(const ImageSlice& lr, int factor);

// ---------------------------------------------------------------------------
// Reports

struct ImageScore {
  std::string id;
  double psnr = 0;
  double ssim = 0;
  double data_range = 0;
};

struct MethodMetrics {
  std::string method;
  std::vector<ImageScore> images;
  double psnr_mean = 0, psnr_std = 0, ssim_mean = 0, ssim_std = 0;

  /// Recomputes the summary statistics from `images` (population std).
  void summarize();
};

/// Scores one method's outputs against the references, per image.
struct ScoredImage {
  std::string id;
  ImageSlice output;
  ImageSlice reference;
};
MethodMetrics score_method(const std::string& method, const std::vector<ScoredImage>& images,
                           const SsimOptions& options = {});

struct MetricsReport {
  std::vector<MethodMetrics> methods;
  std::string averaging = "per-slice";
  std::string region = "roi";
  std::string data_range = "per-image HR max-min";

  const MethodMetrics& method(const std::string& name) const;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

// ---------------------------------------------------------------------------
// MOS

inline constexpr std::array<char, 4> kFlagAlphabet{'S', 'A', 'U', 'N'};
inline constexpr std::array<const char*, 5> kScoreLabels{"non-diagnostic", "poor", "fair", "good", "great"};

struct MosRecord {
  std::string image_id;
  std::string method;
  int score = 0;          ///< 0..4
  std::set<char> flags;   ///< subset of S, A, U, N
  std::string rater;
  std::string timestamp;  ///< ISO 8601, UTC

  /// Throws InvalidInputError on an out-of-range score or unknown flag.
  void validate() const;
};

void to_json(nlohmann::json& j, const MosRecord& r);
void from_json(const nlohmann::json& j, MosRecord& r);
std::set<char> parse_flags(const std::string& s);
std::string flags_string(const std::set<char>& flags);

struct MosSummary {
  std::string method;
  std::size_t n = 0;
  double mean = 0;
  double std = 0;  ///< population
  std::array<std::size_t, 5> histogram{};
  std::map<char, std::size_t> flags;  ///< S, A, U, N (zero counts included)
};

/// Per-method summaries sorted by method label. Raters are pooled.
std::vector<MosSummary> mos_aggregate(const std::vector<MosRecord>& records);

void to_json(nlohmann::json& j, const MosSummary& s);

/// Table with one row per method: MOS, score histogram, flags, PSNR, SSIM.
/// Either part may be empty.
std::string format_table(const std::vector<MosSummary>& mos, const MetricsReport* metrics);

}  // namespace lfsr::metrics
