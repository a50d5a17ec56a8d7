#pragma once

// Training orchestration for the six adversarial regimes, pretraining, the
// step learning-rate schedule, run directories, and inference.

#include "lfsr/data.hpp"
#include "lfsr/losses.hpp"
#include "lfsr/models.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lfsr {

enum class Variant { GAN_PRETRAIN, WGAN_PRETRAIN, WGAN, WGAN_GP, WGAN_GP_X2MSE, MS_GAN };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();
bool uses_pretraining(Variant v);

struct TrainingConfig {
  Variant variant = Variant::MS_GAN;
  int epochs = 300;
  int batch_size = 16;
  double lr_initial = 1e-4;
  double lr_after_midpoint = 1e-5;
  AdvConfig adv;
  int pretrain_epochs = 0;
  std::uint64_t seed = 0;
  GeneratorSpec generator;
  CriticSpec critic;
  PerceptualConfig perceptual;
  MsLossWeights ms_weights;
  int checkpoint_every = 0;  ///< epochs between checkpoints in the run directory; 0 = final only

  /// Defaults for a variant: generator/critic kinds, n_critic, pretraining.
  static TrainingConfig for_variant(Variant v);
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
/// Missing keys take the variant's defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainingConfig& c);

/// lr_initial before floor(epochs/2), lr_after_midpoint from there on.
double lr_schedule(int epoch, const TrainingConfig& cfg);

struct StepRecord {
  std::string kind;  ///< "critic", "generator", "pretrain" or "divergence"
  int epoch = 0;
  long step = 0;            ///< strictly increasing over the run
  long generator_step = 0;  ///< generator updates completed when the record was written
  double lr = 0;
  std::map<std::string, double> terms;
  double total = 0;
  double wall_time = 0;  ///< seconds since the run started
  std::optional<double> critic_max_abs;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void from_json(const nlohmann::json& j, StepRecord& r);

struct RunHistory {
  std::vector<StepRecord> pretrain;
  std::vector<StepRecord> records;  ///< adversarial phase
  std::vector<std::string> checkpoints;

  std::vector<const StepRecord*> of_kind(const std::string& kind) const;
};

/// Receives every record as it is produced.
using StepObserver = std::function<void(const StepRecord&, const Critic<double>*)>;

struct TrainOptions {
  std::optional<std::filesystem::path> run_dir;
  StepObserver observer;
  /// Overrides the generator initialisation (e.g. from an earlier pretraining).
  std::optional<Checkpoint> init;
  /// Stop after this many generator steps (0 = full epoch budget).
  long max_generator_steps = 0;
};

struct TrainResult {
  Checkpoint final;
  RunHistory history;
};

// ---------------------------------------------------------------------------
// Batching. ROIs are zero-padded (top-left anchored) to the critic's patch
// size; masks mark the valid pixels.

struct Batch {
  TensorD lr, hr, dr;         ///< dr empty when the pairs carry none
  TensorD mask_hr, mask_dr;  ///< 1 on valid pixels
};

Batch make_batch(const std::vector<RoiPair>& pairs, std::span<const std::size_t> indices, int hr_patch);

/// Mean over pairs of mse(G(lr), hr) (and of the X2 head against dr, if any), unpadded.
struct DatasetLoss {
  double mse_sr = 0;
  std::optional<double> mse_x2;
};
DatasetLoss dataset_mse(const Generator<double>& g, const std::vector<RoiPair>& pairs);

/// MSE-only optimisation for cfg.pretrain_epochs. Passing a critic (an
/// adversarial hook) is a configuration error.
Checkpoint pretrain_generator(Generator<double>& gen, const std::vector<RoiPair>& dataset, const TrainingConfig& cfg,
                              RunHistory* history = nullptr, const Critic<double>* critic = nullptr,
                              const StepObserver& observer = {});

TrainResult train(const TrainingConfig& cfg, const std::vector<RoiPair>& train_set,
                  const std::vector<RoiPair>& val_set, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Inference

struct InferenceResult {
  ImageSlice sr;
  std::optional<ImageSlice> sr_x2;
  RoiBox box;  ///< HR coordinates of the super-resolved region
};

/// Super-resolves an LR ROI. Output carries the input's normalization metadata.
InferenceResult infer(const Generator<double>& g, const ImageSlice& lr_roi);
/// Detector -> crop -> generator on a full LR slice.
InferenceResult infer(const Generator<double>& g, const ImageSlice& lr_full, const data::Detector& detector);
InferenceResult infer(const Checkpoint& ck, const ImageSlice& lr_full, const data::Detector& detector);

}  // namespace lfsr
