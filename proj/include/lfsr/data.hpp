#pragma once

#include "lfsr/image.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lfsr::data {

/// Floor applied to the standard deviation of constant slices.
inline constexpr double kStdFloor = 1e-8;

/// Zero-mean / unit-variance copy of a raw slice (population statistics).
ImageSlice normalize(const ImageSlice& slice);

enum class DownsampleKernel {
  box,      ///< mean of each factor x factor block (default, exact)
  bicubic,  ///< antialiased bicubic (a = -0.5), kernel stretched by the factor
};

/// Reduces both dimensions by `factor` (2 or 4).
ImageSlice downsample(const ImageSlice& hr, int factor, DownsampleKernel kernel = DownsampleKernel::box);

/// Tight bounding box of the mask, grown by `margin`, clipped to the image,
/// then widened symmetrically to a multiple of `scale` in each dimension.
RoiBox roi_from_mask(const SegMask& mask, int scale, int margin);

/// Smallest box containing `box` whose offsets and extents are multiples of
/// `scale`. `width`/`height` (HR frame) must themselves be multiples of `scale`.
RoiBox align_to_grid(const RoiBox& box, int scale, int width, int height);

/// Crops the HR slice at `box` and the LR slice at `box / scale`.
RoiPair crop_pair(const SlicePair& pair, const RoiBox& box);

/// Extracts a sub-image.
ImageSlice crop(const ImageSlice& slice, const RoiBox& box);

/// Maps a full-frame LR slice to an ROI box in HR coordinates.
using Detector = std::function<RoiBox(const ImageSlice& lr_full, int scale)>;

/// Detector backed by a known HR-resolution lesion mask; boxes are grid-aligned.
Detector mask_detector(SegMask mask, int margin);

// ---------------------------------------------------------------------------
// Corpus

struct CorpusItem {
  std::string id;
  std::string patient;
  ImageSlice hr;
  std::optional<ImageSlice> lr;
  std::optional<SegMask> mask;
};

struct PhantomSlice {
  ImageSlice hr;
  SegMask mask;
};

/// Deterministic MRI-like phantoms with one textured lesion each. Intensities
/// are integers in [0, 4095] so they survive 16-bit PNG storage exactly.
std::vector<PhantomSlice> synth_phantom_corpus(int n, int hr_size, std::uint64_t seed);

/// Writes `manifest.json` plus PNG files (16-bit HR/LR, 8-bit mask).
void save_corpus(const std::filesystem::path& dir, const std::vector<CorpusItem>& items);
std::vector<CorpusItem> load_corpus(const std::filesystem::path& dir);

/// Disjoint split by patient group; deterministic for a given seed.
std::pair<std::vector<CorpusItem>, std::vector<CorpusItem>> split(const std::vector<CorpusItem>& corpus,
                                                                  double train_fraction,
                                                                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Prepared ROI datasets

struct PrepareOptions {
  int scale = 4;
  int margin = 2;
  DownsampleKernel kernel = DownsampleKernel::box;
};

struct PrepareResult {
  std::vector<RoiPair> pairs;
  std::vector<std::string> excluded;  ///< ids skipped for having no lesion
};

/// normalize -> LR simulation (or supplied LR) -> ROI from mask -> crop.
PrepareResult prepare_roi_pairs(const std::vector<CorpusItem>& corpus, const PrepareOptions& options);

void save_roi_dataset(const std::filesystem::path& path, const std::vector<RoiPair>& pairs);
std::vector<RoiPair> load_roi_dataset(const std::filesystem::path& path);

}  // namespace lfsr::data
