#include "lfsr/losses.hpp"

#include <numeric>

namespace lfsr {

using nlohmann::json;

void AdvConfig::validate() const {
  if (!(clip_c > 0)) throw ConfigError("adv.clip_c must be positive");
  if (!(gp_lambda > 0)) throw ConfigError("adv.gp_lambda must be positive");
  if (n_critic < 1) throw ConfigError("adv.n_critic must be >= 1");
}

void to_json(json& j, const AdvConfig& c) {
  j = {{"clip_c", c.clip_c}, {"gp_lambda", c.gp_lambda}, {"n_critic", c.n_critic}};
}

void from_json(const json& j, AdvConfig& c) {
  AdvConfig d;
  c.clip_c = j.value("clip_c", d.clip_c);
  c.gp_lambda = j.value("gp_lambda", d.gp_lambda);
  c.n_critic = j.value("n_critic", d.n_critic);
}

void to_json(json& j, const MsLossWeights& w) {
  j = {{"mse_x2", w.mse_x2}, {"mse_x4", w.mse_x4}, {"vgg_x4", w.vgg_x4}, {"adv_x4", w.adv_x4}};
}

void from_json(const json& j, MsLossWeights& w) {
  MsLossWeights d;
  w.mse_x2 = j.value("mse_x2", d.mse_x2);
  w.mse_x4 = j.value("mse_x4", d.mse_x4);
  w.vgg_x4 = j.value("vgg_x4", d.vgg_x4);
  w.adv_x4 = j.value("adv_x4", d.adv_x4);
}

double mse_loss(const ImageSlice& a, const ImageSlice& b) {
  if (!a.same_dims(b)) throw ShapeError("mse_loss: dims " + a.dims() + " vs " + b.dims());
  if (a.pixels.size() == 0) throw ShapeError("mse_loss: empty image");
  return (a.pixels - b.pixels).square().mean();
}

double perceptual_loss(const ImageSlice& sr, const ImageSlice& hr, const FeatureExtractor<double>& fx) {
  if (!sr.same_dims(hr)) throw ShapeError("perceptual_loss: dims " + sr.dims() + " vs " + hr.dims());
  NoGrad ng;
  try {
    return mse(fx(VarD::constant(to_tensor(sr))), fx(VarD::constant(to_tensor(hr)))).item();
  } catch (const ShapeError& e) {
    throw ShapeError("perceptual_loss: extractor '" + fx.name() + "' failed on " + sr.dims() + ": " + e.what());
  }
}

namespace {

double mean_of(std::span<const double> v, const char* what) {
  if (v.empty()) throw InvalidInputError(std::string(what) + ": empty input");
  for (double x : v)
    if (!std::isfinite(x)) throw InvalidInputError(std::string(what) + ": non-finite value");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void require_probabilities(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!(x > 0.0 && x < 1.0))
      throw DomainError(std::string(what) + ": value " + std::to_string(x) + " outside (0, 1)");
}

double mean_log(std::span<const double> v, bool complement) {
  double s = 0;
  for (double x : v) s += std::log(complement ? 1.0 - x : x);
  return s / static_cast<double>(v.size());
}

}  // namespace

double vanilla_d_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  mean_of(d_real, "vanilla_d_loss");
  mean_of(d_fake, "vanilla_d_loss");
  require_probabilities(d_real, "vanilla_d_loss");
  require_probabilities(d_fake, "vanilla_d_loss");
  return -mean_log(d_real, false) - mean_log(d_fake, true);
}

double vanilla_g_loss(std::span<const double> d_fake) {
  mean_of(d_fake, "vanilla_g_loss");
  require_probabilities(d_fake, "vanilla_g_loss");
  return -mean_log(d_fake, false);
}

double wgan_critic_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  return mean_of(d_fake, "wgan_critic_loss") - mean_of(d_real, "wgan_critic_loss");
}

double wgan_g_loss(std::span<const double> d_fake) { return -mean_of(d_fake, "wgan_g_loss"); }

}  // namespace lfsr
