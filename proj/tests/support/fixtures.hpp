#pragma once

// Desk-scale datasets and model configurations shared by the tests.

#include <lfsr/data.hpp>
#include <lfsr/training.hpp>

#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

namespace lfsr::testing {

inline std::vector<data::CorpusItem> phantom_items(int n, std::uint64_t seed, int size = 64) {
  const auto phantoms = data::synth_phantom_corpus(n, size, seed);
  std::vector<data::CorpusItem> items;
  for (int i = 0; i < n; ++i) {
    const auto& p = phantoms[static_cast<std::size_t>(i)];
    items.push_back({"s" + std::to_string(i), "p" + std::to_string(i / 2), p.hr, std::nullopt, p.mask});
  }
  return items;
}

/// X4 ROI pairs (with the X2 target) from `n` 64x64 phantoms.
inline std::vector<RoiPair> phantom_pairs(int n, std::uint64_t seed) {
  return data::prepare_roi_pairs(phantom_items(n, seed), {}).pairs;
}

inline TrainingConfig tiny_config(Variant v) {
  TrainingConfig c = TrainingConfig::for_variant(v);
  c.generator.channels = 8;
  c.generator.n_res_blocks_trunk = 2;
  c.generator.n_res_blocks_stage2 = 1;
  c.generator.io_kernel = 3;
  c.critic.base_channels = 8;
  c.critic.input_size = 32;
  c.critic.n_down = 2;
  c.perceptual.extractor = "random";
  c.perceptual.random_channels = 4;
  c.perceptual.random_depth = 1;
  c.batch_size = 4;
  c.epochs = 4;
  c.lr_initial = 1e-3;
  c.lr_after_midpoint = 5e-4;
  if (uses_pretraining(v)) c.pretrain_epochs = 2;
  return c;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag)
      : path(std::filesystem::temp_directory_path() / ("lfsr_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace lfsr::testing
