#include "lfsr/training.hpp"

#include "lfsr/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace lfsr {

using nlohmann::json;

namespace {

struct VariantName {
  Variant v;
  const char* name;
};

constexpr VariantName kVariantNames[] = {
    {Variant::GAN_PRETRAIN, "GAN_PRETRAIN"}, {Variant::WGAN_PRETRAIN, "WGAN_PRETRAIN"},
    {Variant::WGAN, "WGAN"},                 {Variant::WGAN_GP, "WGAN_GP"},
    {Variant::WGAN_GP_X2MSE, "WGAN_GP_X2MSE"}, {Variant::MS_GAN, "MS_GAN"},
};

}  // namespace

std::string to_string(Variant v) {
  for (const auto& [k, n] : kVariantNames)
    if (k == v) return n;
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (const auto& [k, n] : kVariantNames)
    if (s == n) return k;
  throw ConfigError("unknown variant '" + s +
                    "' (expected GAN_PRETRAIN, WGAN_PRETRAIN, WGAN, WGAN_GP, WGAN_GP_X2MSE or MS_GAN)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::GAN_PRETRAIN, Variant::WGAN_PRETRAIN, Variant::WGAN,
                                      Variant::WGAN_GP,      Variant::WGAN_GP_X2MSE, Variant::MS_GAN};
  return v;
}

bool uses_pretraining(Variant v) { return v == Variant::GAN_PRETRAIN || v == Variant::WGAN_PRETRAIN; }

TrainingConfig TrainingConfig::for_variant(Variant v) {
  TrainingConfig c;
  c.variant = v;
  switch (v) {
    case Variant::GAN_PRETRAIN:
      c.generator.kind = GeneratorKind::srresnet;
      c.critic.kind = CriticKind::vanilla_d;
      c.adv.n_critic = 1;
      c.pretrain_epochs = 10;
      break;
    case Variant::WGAN_PRETRAIN:
      c.generator.kind = GeneratorKind::srresnet;
      c.critic.kind = CriticKind::wgan_critic;
      c.pretrain_epochs = 10;
      break;
    case Variant::WGAN:
      c.generator.kind = GeneratorKind::srresnet;
      c.critic.kind = CriticKind::wgan_critic;
      break;
    case Variant::WGAN_GP:
      c.generator.kind = GeneratorKind::srresnet;
      c.critic.kind = CriticKind::wgangp_critic;
      break;
    case Variant::WGAN_GP_X2MSE:
    case Variant::MS_GAN:
      c.generator.kind = GeneratorKind::multiscale;
      c.critic.kind = CriticKind::wgangp_critic;
      break;
  }
  return c;
}

void TrainingConfig::validate() const {
  const std::string v = to_string(variant);
  if (epochs < 2) throw ConfigError("epochs must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_after_midpoint > 0) || !(lr_initial > lr_after_midpoint))
    throw ConfigError("learning rates must satisfy lr_initial > lr_after_midpoint > 0");
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  adv.validate();
  generator.validate();
  critic.validate();
  perceptual.validate();

  if (uses_pretraining(variant) && pretrain_epochs < 1)
    throw ConfigError(v + " requires pretraining: set pretrain_epochs >= 1");
  if (!uses_pretraining(variant) && pretrain_epochs > 0)
    throw ConfigError(v + " trains without pretraining: pretrain_epochs must be 0");

  const CriticKind k = critic.kind;
  bool ok = false;
  switch (variant) {
    case Variant::GAN_PRETRAIN: ok = k == CriticKind::vanilla_d; break;
    case Variant::WGAN_PRETRAIN:
    case Variant::WGAN: ok = k == CriticKind::wgan_critic; break;
    case Variant::WGAN_GP:
    case Variant::WGAN_GP_X2MSE: ok = k == CriticKind::wgangp_critic; break;
    case Variant::MS_GAN: ok = k == CriticKind::wgangp_critic || k == CriticKind::wgan_critic; break;
  }
  if (!ok) throw ConfigError(v + " cannot use critic kind " + to_string(k));
  if ((variant == Variant::WGAN_GP_X2MSE || variant == Variant::MS_GAN) && generator.kind != GeneratorKind::multiscale)
    throw ConfigError(v + " needs an X2 output: generator.kind must be multiscale");
  if (critic.input_size % generator.scale != 0 || critic.input_size / generator.scale < 1)
    throw ConfigError("critic.input_size must be a positive multiple of generator.scale");
}

namespace {

const char* const kConfigKeys[] = {"variant",    "epochs",          "batch_size", "lr_initial", "lr_after_midpoint",
                                   "adv",        "pretrain_epochs", "seed",       "generator",  "critic",
                                   "perceptual", "ms_weights",      "checkpoint_every"};

}  // namespace

void to_json(json& j, const TrainingConfig& c) {
  j = {{"variant", to_string(c.variant)},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr_initial", c.lr_initial},
       {"lr_after_midpoint", c.lr_after_midpoint},
       {"adv", c.adv},
       {"pretrain_epochs", c.pretrain_epochs},
       {"seed", c.seed},
       {"generator", c.generator},
       {"critic", c.critic},
       {"perceptual", c.perceptual},
       {"ms_weights", c.ms_weights},
       {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainingConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(std::begin(kConfigKeys), std::end(kConfigKeys), key) == std::end(kConfigKeys))
      throw ConfigError("unknown training config key '" + key + "'");
  const Variant v = j.contains("variant") ? parse_variant(j.at("variant").get<std::string>()) : Variant::MS_GAN;
  json merged = TrainingConfig::for_variant(v);
  merged.merge_patch(j);
  try {
    c.variant = v;
    c.epochs = merged.at("epochs").get<int>();
    c.batch_size = merged.at("batch_size").get<int>();
    c.lr_initial = merged.at("lr_initial").get<double>();
    c.lr_after_midpoint = merged.at("lr_after_midpoint").get<double>();
    c.adv = merged.at("adv").get<AdvConfig>();
    c.pretrain_epochs = merged.at("pretrain_epochs").get<int>();
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.generator = merged.at("generator").get<GeneratorSpec>();
    c.critic = merged.at("critic").get<CriticSpec>();
    c.perceptual = merged.at("perceptual").get<PerceptualConfig>();
    c.ms_weights = merged.at("ms_weights").get<MsLossWeights>();
    c.checkpoint_every = merged.at("checkpoint_every").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
}

double lr_schedule(int epoch, const TrainingConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw DomainError("lr_schedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                      ")");
  return epoch < cfg.epochs / 2 ? cfg.lr_initial : cfg.lr_after_midpoint;
}

void to_json(json& j, const StepRecord& r) {
  j = {{"kind", r.kind},   {"epoch", r.epoch}, {"step", r.step},   {"generator_step", r.generator_step},
       {"lr", r.lr},       {"terms", r.terms}, {"total", r.total}, {"wall_time", r.wall_time}};
  if (r.critic_max_abs) j["critic_max_abs"] = *r.critic_max_abs;
}

void from_json(const json& j, StepRecord& r) {
  r.kind = j.at("kind").get<std::string>();
  r.epoch = j.at("epoch").get<int>();
  r.step = j.at("step").get<long>();
  r.generator_step = j.at("generator_step").get<long>();
  r.lr = j.at("lr").get<double>();
  r.terms = j.at("terms").get<std::map<std::string, double>>();
  r.total = j.at("total").get<double>();
  r.wall_time = j.at("wall_time").get<double>();
  if (j.contains("critic_max_abs")) r.critic_max_abs = j.at("critic_max_abs").get<double>();
}

std::vector<const StepRecord*> RunHistory::of_kind(const std::string& kind) const {
  std::vector<const StepRecord*> out;
  for (const auto& r : records)
    if (r.kind == kind) out.push_back(&r);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void place(TensorD& dst, int n, const Pixels& src) {
  for (int y = 0; y < src.rows(); ++y)
    for (int x = 0; x < src.cols(); ++x) dst(n, 0, y, x) = src(y, x);
}

void mark(TensorD& mask, int n, int h, int w) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mask(n, 0, y, x) = 1.0;
}

}  // namespace

Batch make_batch(const std::vector<RoiPair>& pairs, std::span<const std::size_t> indices, int hr_patch) {
  if (indices.empty()) throw InvalidInputError("make_batch: no indices");
  const int s = pairs.at(indices[0]).scale;
  if (hr_patch % s != 0) throw ConfigError("make_batch: patch " + std::to_string(hr_patch) + " not divisible by scale");
  bool with_dr = true;
  for (auto i : indices) {
    const RoiPair& p = pairs.at(i);
    if (p.scale != s) throw ConfigError("make_batch: mixed scales in dataset");
    if (p.hr.width() > hr_patch || p.hr.height() > hr_patch)
      throw ConfigError("ROI '" + p.id + "' is " + p.hr.dims() + " but the critic patch is " +
                        std::to_string(hr_patch) + "; raise critic.input_size");
    with_dr = with_dr && p.dr.has_value();
  }
  const int n = static_cast<int>(indices.size());
  Batch b;
  b.lr = TensorD({n, 1, hr_patch / s, hr_patch / s});
  b.hr = TensorD({n, 1, hr_patch, hr_patch});
  b.mask_hr = TensorD(b.hr.shape());
  if (with_dr && s == 4) {
    b.dr = TensorD({n, 1, hr_patch / 2, hr_patch / 2});
    b.mask_dr = TensorD(b.dr.shape());
  }
  for (int k = 0; k < n; ++k) {
    const RoiPair& p = pairs[indices[static_cast<std::size_t>(k)]];
    place(b.lr, k, p.lr.pixels);
    place(b.hr, k, p.hr.pixels);
    mark(b.mask_hr, k, p.hr.height(), p.hr.width());
    if (b.dr.size() > 0) {
      place(b.dr, k, p.dr->pixels);
      mark(b.mask_dr, k, p.dr->height(), p.dr->width());
    }
  }
  return b;
}

DatasetLoss dataset_mse(const Generator<double>& g, const std::vector<RoiPair>& pairs) {
  if (pairs.empty()) throw InvalidInputError("dataset_mse: empty dataset");
  NoGrad ng;
  DatasetLoss out;
  double x2 = 0;
  bool have_x2 = g.spec().kind == GeneratorKind::multiscale;
  for (const auto& p : pairs) {
    const auto o = g.forward(VarD::constant(to_tensor(p.lr)));
    out.mse_sr += mse(o.sr, VarD::constant(to_tensor(p.hr))).item();
    if (have_x2 && p.dr) x2 += mse(o.x2, VarD::constant(to_tensor(*p.dr))).item();
    else have_x2 = false;
  }
  out.mse_sr /= static_cast<double>(pairs.size());
  if (have_x2) out.mse_x2 = x2 / static_cast<double>(pairs.size());
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

std::string sr_term(const char* base, int scale) { return std::string(base) + "_x" + std::to_string(scale); }

void require_dataset(const std::vector<RoiPair>& data, const TrainingConfig& cfg) {
  if (data.empty()) throw InvalidInputError("training set is empty");
  for (const auto& p : data) {
    if (p.scale != cfg.generator.scale)
      throw ConfigError("pair '" + p.id + "' has scale " + std::to_string(p.scale) + ", generator expects " +
                        std::to_string(cfg.generator.scale));
    if (cfg.generator.kind == GeneratorKind::multiscale && !p.dr)
      throw ConfigError("pair '" + p.id + "' lacks the X2 target required by the multiscale generator");
  }
}

/// Append-only writer for the run directory.
class RunLog {
 public:
  RunLog(const std::optional<std::filesystem::path>& dir, const TrainingConfig& cfg) {
    if (!dir) return;
    dir_ = *dir;
    std::filesystem::create_directories(*dir_ / "checkpoints");
    std::ofstream(*dir_ / "config.json") << json(cfg).dump(2) << "\n";
    history_.open(*dir_ / "history.jsonl", std::ios::trunc);
    losses_.open(*dir_ / "losses.jsonl", std::ios::trunc);
    variant_ = to_string(cfg.variant);
  }

  void write(const StepRecord& r) {
    if (!dir_) return;
    history_ << json(r).dump() << "\n";
    for (const auto& [term, value] : r.terms)
      losses_ << json{{"step", r.step}, {"kind", r.kind}, {"variant", variant_}, {"term", term}, {"value", value}}.dump()
              << "\n";
    history_.flush();
    losses_.flush();
  }

  std::optional<std::string> checkpoint(const Checkpoint& ck, const std::string& name) {
    if (!dir_) return std::nullopt;
    const auto path = *dir_ / "checkpoints" / name;
    ck.save(path);
    return std::filesystem::relative(path, *dir_).string();
  }

  void final(const Checkpoint& ck) {
    if (dir_) ck.save(*dir_ / "final.ckpt");
  }

 private:
  std::optional<std::filesystem::path> dir_;
  std::ofstream history_, losses_;
  std::string variant_;
};

/// Aborts the run on a non-finite term, after logging a diagnostic record.
void check_finite(StepRecord r, RunLog& log, RunHistory& history) {
  std::string bad;
  double value = 0;
  for (const auto& [k, v] : r.terms)
    if (!std::isfinite(v)) {
      bad = k;
      value = v;
      break;
    }
  if (bad.empty() && !std::isfinite(r.total)) bad = "total", value = r.total;
  if (bad.empty()) return;
  r.kind = "divergence";
  r.terms = {{bad, value}};
  history.records.push_back(r);
  log.write(r);
  throw DivergenceError(r.step, bad, value);
}

StepRecord make_record(const char* kind, int epoch, long step, long gstep, double lr, const LossBreakdown<double>& b,
                       Clock::time_point t0) {
  StepRecord r;
  r.kind = kind;
  r.epoch = epoch;
  r.step = step;
  r.generator_step = gstep;
  r.lr = lr;
  r.terms = b.values();
  r.total = b.total.item();
  r.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

LossBreakdown<double> pixel_terms(const GeneratorOutput<double>& out, const Batch& b, int scale) {
  LossBreakdown<double> L;
  L.add(sr_term("mse", scale), masked_mse(out.sr, VarD::constant(b.hr), b.mask_hr));
  if (out.x2.defined() && b.dr.size() > 0) L.add("mse_x2", masked_mse(out.x2, VarD::constant(b.dr), b.mask_dr));
  return L;
}

}  // namespace

Checkpoint pretrain_generator(Generator<double>& gen, const std::vector<RoiPair>& dataset, const TrainingConfig& cfg,
                              RunHistory* history, const Critic<double>* critic, const StepObserver& observer) {
  if (critic) throw ConfigError("pretraining optimises MSE only; an adversarial critic must not be attached");
  if (!uses_pretraining(cfg.variant))
    throw ConfigError(to_string(cfg.variant) + " is not a pretraining variant");
  if (cfg.pretrain_epochs < 1) throw ConfigError("pretrain_epochs must be >= 1");
  require_dataset(dataset, cfg);

  const auto t0 = Clock::now();
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam<double> opt(nn::vars(gen.parameters()), {cfg.lr_initial});
  auto params = nn::vars(gen.parameters());
  auto order = iota_indices(dataset.size());
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  long step = 0;
  RunHistory local;
  RunHistory& h = history ? *history : local;
  RunLog nolog(std::nullopt, cfg);
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(B, order.size() - start));
      const Batch b = make_batch(dataset, idx, cfg.critic.input_size);
      const auto L = pixel_terms(gen.forward(VarD::constant(b.lr)), b, cfg.generator.scale);
      ++step;
      StepRecord r = make_record("pretrain", epoch, step, step, cfg.lr_initial, L, t0);
      check_finite(r, nolog, h);
      opt.step(grad(L.total, params));
      h.pretrain.push_back(r);
      if (observer) observer(r, nullptr);
    }
  }
  return Checkpoint::capture(gen, nullptr, step, cfg.pretrain_epochs, to_string(cfg.variant));
}

TrainResult train(const TrainingConfig& cfg, const std::vector<RoiPair>& train_set,
                  const std::vector<RoiPair>& val_set, const TrainOptions& options) {
  cfg.validate();
  require_dataset(train_set, cfg);
  const auto fx = make_extractor(cfg.perceptual);
  const auto t0 = Clock::now();
  RunLog log(options.run_dir, cfg);
  TrainResult result;
  RunHistory& history = result.history;

  Generator<double> gen = options.init ? options.init->restore_generator() : Generator<double>(cfg.generator, cfg.seed);
  if (!(gen.spec() == cfg.generator)) throw ConfigError("initial checkpoint generator does not match the config");
  Critic<double> critic(cfg.critic, cfg.seed + 1);
  const int scale = cfg.generator.scale;

  if (uses_pretraining(cfg.variant) && !options.init) {
    const Checkpoint pre = pretrain_generator(gen, train_set, cfg, &history, nullptr, options.observer);
    if (auto rel = log.checkpoint(pre, "pretrain.ckpt")) history.checkpoints.push_back(*rel);
  }

  auto gparams = nn::vars(gen.parameters());
  auto cparams_named = critic.parameters();
  auto cparams = nn::vars(cparams_named);
  Adam<double> gopt(gparams, {cfg.lr_initial});
  Adam<double> copt(cparams, {cfg.lr_initial});
  const CriticKind ck = cfg.critic.kind;
  if (ck == CriticKind::wgan_critic) clip_weights(cparams_named, cfg.adv.clip_c);

  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
  auto order = iota_indices(train_set.size());
  auto pool = iota_indices(train_set.size());
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  const int P = cfg.critic.input_size;
  long step = 0, gstep = 0, cstep = 0;
  bool done = false;

  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    gopt.set_lr(lr);
    copt.set_lr(lr);
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size() && !done; start += B) {
      // Critic updates on freshly sampled batches.
      for (int k = 0; k < cfg.adv.n_critic; ++k) {
        std::shuffle(pool.begin(), pool.end(), rng);
        const std::span<const std::size_t> idx(pool.data(), std::min(B, pool.size()));
        const Batch b = make_batch(train_set, idx, P);
        TensorD fake;
        {
          NoGrad ng;
          fake = mul(gen.forward(VarD::constant(b.lr)).sr, b.mask_hr).value();
        }
        const VarD d_real = critic.forward(VarD::constant(b.hr));
        const VarD d_fake = critic.forward(VarD::constant(fake));
        LossBreakdown<double> L;
        if (ck == CriticKind::vanilla_d) {
          L.add("critic", vanilla_d_loss(d_real, d_fake));
        } else {
          L.add("critic", wgan_critic_loss(d_real, d_fake));
          if (ck == CriticKind::wgangp_critic)
            L.add("gp", gradient_penalty(critic, b.hr, fake, cfg.adv.gp_lambda, cfg.seed * 1000003ULL + cstep));
        }
        StepRecord r = make_record("critic", epoch, ++step, gstep, lr, L, t0);
        check_finite(r, log, history);
        copt.step(grad(L.total, cparams));
        if (ck == CriticKind::wgan_critic) clip_weights(cparams_named, cfg.adv.clip_c);
        ++cstep;
        r.critic_max_abs = max_abs_parameter(cparams_named);
        history.records.push_back(r);
        log.write(r);
        if (options.observer) options.observer(r, &critic);
      }

      // Generator update.
      const std::span<const std::size_t> idx(order.data() + start, std::min(B, order.size() - start));
      const Batch b = make_batch(train_set, idx, P);
      const auto out = gen.forward(VarD::constant(b.lr));
      const VarD hr = VarD::constant(b.hr);
      const VarD sr_seen = mul(out.sr, b.mask_hr);
      const VarD d_fake = critic.forward(sr_seen);
      LossBreakdown<double> L;
      if (cfg.variant == Variant::MS_GAN) {
        L = composite_ms_loss(out, VarD::constant(b.dr), hr, d_fake, *fx, cfg.ms_weights,
                              LossMasks<double>{&b.mask_dr, &b.mask_hr});
      } else {
        L.add(sr_term("mse", scale), masked_mse(out.sr, hr, b.mask_hr));
        L.add(sr_term("vgg", scale), perceptual(sr_seen, hr, *fx));
        L.add(sr_term("adv", scale), ck == CriticKind::vanilla_d ? vanilla_g_loss(d_fake) : wgan_g_loss(d_fake));
        if (cfg.variant == Variant::WGAN_GP_X2MSE)
          L.add("mse_x2", masked_mse(out.x2, VarD::constant(b.dr), b.mask_dr));
      }
      StepRecord r = make_record("generator", epoch, ++step, gstep + 1, lr, L, t0);
      check_finite(r, log, history);
      gopt.step(grad(L.total, gparams));
      ++gstep;
      history.records.push_back(r);
      log.write(r);
      if (options.observer) options.observer(r, &critic);
      if (options.max_generator_steps > 0 && gstep >= options.max_generator_steps) done = true;
    }

    if (!val_set.empty()) {
      const DatasetLoss v = dataset_mse(gen, val_set);
      StepRecord r;
      r.kind = "validation";
      r.epoch = epoch;
      r.step = ++step;
      r.generator_step = gstep;
      r.lr = lr;
      r.terms[sr_term("mse", scale)] = v.mse_sr;
      if (v.mse_x2) r.terms["mse_x2"] = *v.mse_x2;
      r.total = v.mse_sr;
      r.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
      history.records.push_back(r);
      log.write(r);
      if (options.observer) options.observer(r, &critic);
    }

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(4) << std::setfill('0') << epoch + 1 << ".ckpt";
      if (auto rel = log.checkpoint(Checkpoint::capture(gen, &critic, gstep, epoch + 1, to_string(cfg.variant)),
                                    name.str()))
        history.checkpoints.push_back(*rel);
    }
  }

  const int last_epoch = history.records.empty() ? 0 : history.records.back().epoch + 1;
  result.final = Checkpoint::capture(gen, &critic, gstep, last_epoch, to_string(cfg.variant));
  log.final(result.final);
  return result;
}

// ---------------------------------------------------------------------------

InferenceResult infer(const Generator<double>& g, const ImageSlice& lr_roi) {
  NoGrad ng;
  const auto out = g.forward(VarD::constant(to_tensor(lr_roi)));
  const int s = g.spec().scale;
  InferenceResult r;
  r.sr = lr_roi.with_pixels(tensor_plane(out.sr.value()));
  if (out.x2.defined()) r.sr_x2 = lr_roi.with_pixels(tensor_plane(out.x2.value()));
  r.box = {0, 0, lr_roi.width() * s, lr_roi.height() * s};
  return r;
}

InferenceResult infer(const Generator<double>& g, const ImageSlice& lr_full, const data::Detector& detector) {
  const int s = g.spec().scale;
  const RoiBox box = detector(lr_full, s);
  if (box.x0 % s || box.y0 % s || box.w % s || box.h % s || box.w <= 0 || box.h <= 0)
    throw AlignmentError("detector box " + box.str() + " is not aligned to scale " + std::to_string(s));
  if (box.x0 < 0 || box.y0 < 0 || (box.x0 + box.w) / s > lr_full.width() || (box.y0 + box.h) / s > lr_full.height())
    throw ShapeError("detector box " + box.str() + " exceeds the slice");
  InferenceResult r = infer(g, data::crop(lr_full, {box.x0 / s, box.y0 / s, box.w / s, box.h / s}));
  r.box = box;
  return r;
}

InferenceResult infer(const Checkpoint& ck, const ImageSlice& lr_full, const data::Detector& detector) {
  return infer(ck.restore_generator(), lr_full, detector);
}

}  // namespace lfsr
