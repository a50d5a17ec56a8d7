#pragma once

// Loss terms. Graph-level versions operate on Var and are what training
// differentiates; the ImageSlice / plain-value versions are for evaluation and
// for checking the former.

#include "lfsr/features.hpp"
#include "lfsr/image.hpp"
#include "lfsr/models.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lfsr {

struct AdvConfig {
  double clip_c = 0.01;
  double gp_lambda = 10.0;
  int n_critic = 5;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdvConfig& c);
void from_json(const nlohmann::json& j, AdvConfig& c);

/// Per-term weights of the composite multi-scale loss. Unit weights reproduce
/// the plain sum of the four terms.
struct MsLossWeights {
  double mse_x2 = 1.0, mse_x4 = 1.0, vgg_x4 = 1.0, adv_x4 = 1.0;
};

void to_json(nlohmann::json& j, const MsLossWeights& w);
void from_json(const nlohmann::json& j, MsLossWeights& w);

/// Probability clamp used inside the graph-level vanilla GAN losses.
inline constexpr double kProbClamp = 1e-7;

/// Named loss terms and their sum.
template <typename S>
struct LossBreakdown {
  std::vector<std::pair<std::string, Var<S>>> terms;
  Var<S> total;

  std::map<std::string, double> values() const {
    std::map<std::string, double> out;
    for (const auto& [name, v] : terms) out[name] = static_cast<double>(v.item());
    return out;
  }
  void add(std::string name, Var<S> v) {
    total = total.defined() ? lfsr::add(total, v) : v;
    terms.emplace_back(std::move(name), std::move(v));
  }
};

// ---------------------------------------------------------------------------
// Graph level

template <typename S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  return mean(square(sub(a, b)));
}

/// Mean squared error over the pixels where `mask` is 1.
template <typename S>
Var<S> masked_mse(const Var<S>& a, const Var<S>& b, const Tensor<S>& mask) {
  require_same_shape(a.shape(), b.shape(), "masked_mse");
  require_same_shape(a.shape(), mask.shape(), "masked_mse mask");
  const S n = mask.array().sum();
  if (!(n > 0)) throw InvalidInputError("masked_mse: empty mask");
  return scale(sum(mul(square(sub(a, b)), mask)), S(1) / n);
}

template <typename S>
Var<S> perceptual(const Var<S>& sr, const Var<S>& hr, const FeatureExtractor<S>& fx) {
  require_same_shape(sr.shape(), hr.shape(), "perceptual");
  const Var<S> fs = fx(sr);
  const Var<S> fh = fx(hr.detach());
  return mse(fs, fh);
}

template <typename S>
Var<S> vanilla_d_loss(const Var<S>& d_real, const Var<S>& d_fake) {
  const S lo = S(kProbClamp), hi = S(1) - S(kProbClamp);
  const Var<S> real_term = mean(log(clamp(d_real, lo, hi)));
  const Var<S> fake_term = mean(log(add_scalar(scale(clamp(d_fake, lo, hi), S(-1)), S(1))));
  return scale(add(real_term, fake_term), S(-1));
}

/// Non-saturating generator term, -mean(log D(G(z))).
template <typename S>
Var<S> vanilla_g_loss(const Var<S>& d_fake) {
  return scale(mean(log(clamp(d_fake, S(kProbClamp), S(1) - S(kProbClamp)))), S(-1));
}

template <typename S>
Var<S> wgan_critic_loss(const Var<S>& d_real, const Var<S>& d_fake) {
  return sub(mean(d_fake), mean(d_real));
}

template <typename S>
Var<S> wgan_g_loss(const Var<S>& d_fake) {
  return scale(mean(d_fake), S(-1));
}

/// Clamps every parameter into [-c, c] in place.
template <typename S>
void clip_weights(const nn::ParameterList<S>& params, S c) {
  if (!(c > 0)) throw DomainError("clip_weights: c must be positive");
  for (auto p : params) p.var.mutable_value().array() = p.var.value().array().max(-c).min(c);
}

template <typename S>
void clip_weights(const Critic<S>& critic, S c) {
  clip_weights(critic.parameters(), c);
}

template <typename S>
S max_abs_parameter(const nn::ParameterList<S>& params) {
  S m = 0;
  for (const auto& p : params) m = std::max(m, p.var.value().array().abs().maxCoeff());
  return m;
}

/// Interpolation weights eps_n ~ U(0,1), one per sample, from `seed`.
inline std::vector<double> penalty_epsilons(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> eps(static_cast<std::size_t>(n));
  for (auto& e : eps) e = u(rng);
  return eps;
}

/// lambda * mean_n (||grad_x D(x_hat_n)||_2 - 1)^2 at x_hat = eps real + (1-eps) fake.
/// Differentiable with respect to the critic parameters. `norms`, if given,
/// receives the per-sample gradient norms.
template <typename S>
Var<S> gradient_penalty(const std::function<Var<S>(const Var<S>&)>& critic, const Tensor<S>& real,
                        const Tensor<S>& fake, S lambda, std::uint64_t seed,
                        std::vector<double>* norms = nullptr) {
  require_same_shape(real.shape(), fake.shape(), "gradient_penalty");
  if (!(lambda > 0)) throw DomainError("gradient_penalty: lambda must be positive");
  const Shape s = real.shape();
  const auto eps = penalty_epsilons(s.n, seed);
  Tensor<S> xh(s);
  for (int n = 0; n < s.n; ++n) {
    const S e = static_cast<S>(eps[static_cast<std::size_t>(n)]);
    const auto seg = Eigen::seqN(static_cast<Eigen::Index>(n) * s.sample_size(), s.sample_size());
    xh.array()(seg) = e * real.array()(seg) + (S(1) - e) * fake.array()(seg);
  }

  const bool outer = grad_enabled();
  GradModeGuard record(true);
  const Var<S> x_hat = Var<S>::parameter(std::move(xh));
  const Var<S> d = critic(x_hat);
  if (!d.requires_grad())
    throw CapabilityError("gradient_penalty: critic output is not differentiable with respect to its input");
  const Var<S> g = grad(sum(d), {x_hat}, outer)[0];
  GradModeGuard inner(outer);
  // The tiny offset keeps the square root differentiable at a zero gradient.
  const Var<S> norm = sqrt(add_scalar(sum_per_sample(square(g)), S(1e-24)));
  if (norms) {
    norms->clear();
    for (Eigen::Index i = 0; i < norm.value().size(); ++i) norms->push_back(static_cast<double>(norm.value().array()[i]));
  }
  return scale(mean(square(add_scalar(norm, S(-1)))), lambda);
}

template <typename S>
Var<S> gradient_penalty(const Critic<S>& critic, const Tensor<S>& real, const Tensor<S>& fake, S lambda,
                        std::uint64_t seed, std::vector<double>* norms = nullptr) {
  return gradient_penalty<S>([&](const Var<S>& x) { return critic.forward(x); }, real, fake, lambda, seed, norms);
}

/// Optional validity masks (1 = real pixel) for padded batches.
template <typename S>
struct LossMasks {
  const Tensor<S>* x2 = nullptr;
  const Tensor<S>* x4 = nullptr;
};

template <typename S>
Var<S> pixel_loss(const Var<S>& a, const Var<S>& b, const Tensor<S>* mask) {
  return mask ? masked_mse(a, b, *mask) : mse(a, b);
}

/// Composite multi-scale generator loss:
///   mse(sr_x2, dr) + mse(sr_x4, hr) + perceptual(sr_x4, hr) - mean(d_fake_x4),
/// each term scaled by its weight. Terms are named mse_x2, mse_x4, vgg_x4, adv_x4.
template <typename S>
LossBreakdown<S> composite_ms_loss(const GeneratorOutput<S>& out, const Var<S>& dr, const Var<S>& hr,
                                   const Var<S>& d_fake_x4, const FeatureExtractor<S>& fx,
                                   const MsLossWeights& w = {}, LossMasks<S> masks = {}) {
  if (!out.x2.defined()) throw ShapeError("composite_ms_loss: term mse_x2 needs a multiscale output");
  auto check = [](const Var<S>& a, const Var<S>& b, const char* term) {
    if (a.shape() != b.shape())
      throw ShapeError(std::string("composite_ms_loss: term ") + term + ": shape mismatch " + a.shape().str() +
                       " vs " + b.shape().str());
  };
  check(out.x2, dr, "mse_x2");
  check(out.sr, hr, "mse_x4");
  LossBreakdown<S> b;
  b.add("mse_x2", scale(pixel_loss(out.x2, dr, masks.x2), static_cast<S>(w.mse_x2)));
  b.add("mse_x4", scale(pixel_loss(out.sr, hr, masks.x4), static_cast<S>(w.mse_x4)));
  const Var<S> sr_seen = masks.x4 ? mul(out.sr, *masks.x4) : out.sr;
  b.add("vgg_x4", scale(perceptual(sr_seen, hr, fx), static_cast<S>(w.vgg_x4)));
  b.add("adv_x4", scale(wgan_g_loss(d_fake_x4), static_cast<S>(w.adv_x4)));
  return b;
}

// ---------------------------------------------------------------------------
// Slice / plain-value API

/// (1/(W H)) sum (a - b)^2.
double mse_loss(const ImageSlice& a, const ImageSlice& b);
double perceptual_loss(const ImageSlice& sr, const ImageSlice& hr, const FeatureExtractor<double>& fx);
/// Values must lie in (0, 1).
double vanilla_d_loss(std::span<const double> d_real, std::span<const double> d_fake);
double vanilla_g_loss(std::span<const double> d_fake);
double wgan_critic_loss(std::span<const double> d_real, std::span<const double> d_fake);
double wgan_g_loss(std::span<const double> d_fake);

}  // namespace lfsr
