#pragma once

// Generators (SRResNet, multi-scale) and the discriminator/critic family.
//
// Parameter counts, with conv(k, i, o) = o*i*k*k + o and C = channels:
//   block(C)      = 2*conv(3, C, C) + C                    (conv, PReLU, conv, skip)
//   upsampler(C)  = conv(3, C, 4C) + C                     (conv, pixel shuffle x2, PReLU)
//   srresnet      = conv(k_io, 1, C) + C + B*block(C) + conv(3, C, C)
//                   + log2(scale)*upsampler(C) + conv(k_io, C, 1)
//   multiscale    = conv(k_io, 1, C) + C + B1*block(C) + conv(3, C, C) + upsampler(C)
//                   + conv(k_io, C, 1)                                   (X2 head)
//                   + B2*block(C) + conv(3, C, C) + upsampler(C) + conv(k_io, C, 1)
//   critic        = conv(3, 1, b) + sum_i conv(3, c_i, c_{i+1}) + conv(s, c_last, 1)
//                   with c_0 = b, c_{i+1} = 2 c_i, and s = input_size / 2^n_down.

#include "lfsr/archive.hpp"
#include "lfsr/errors.hpp"
#include "lfsr/nn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace lfsr {

enum class GeneratorKind { srresnet, multiscale };
enum class CriticKind { vanilla_d, wgan_critic, wgangp_critic };

std::string to_string(GeneratorKind k);
std::string to_string(CriticKind k);
GeneratorKind parse_generator_kind(const std::string& s);
CriticKind parse_critic_kind(const std::string& s);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::multiscale;
  int n_res_blocks_trunk = 16;
  int n_res_blocks_stage2 = 4;  ///< multiscale only
  int channels = 64;
  int scale = 4;
  int io_kernel = 9;  ///< kernel of the first layer and of each image head

  void validate() const;
  std::size_t parameter_count() const;
  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct CriticSpec {
  CriticKind kind = CriticKind::wgangp_critic;
  int base_channels = 64;
  int input_size = 32;  ///< HR patch side
  int n_down = 3;       ///< stride-2 stages

  void validate() const;
  std::size_t parameter_count() const;
  friend bool operator==(const CriticSpec&, const CriticSpec&) = default;
};

void to_json(nlohmann::json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);
void to_json(nlohmann::json& j, const CriticSpec& s);
void from_json(const nlohmann::json& j, CriticSpec& s);

/// Output of a generator forward pass. `x2` is set for multiscale generators.
template <typename Scalar>
struct GeneratorOutput {
  Var<Scalar> sr;  ///< final image at the generator's scale
  Var<Scalar> x2;
};

namespace detail {

template <typename Scalar>
struct ResidualBlock {
  nn::Conv2d<Scalar> conv1, conv2;
  nn::PReLU<Scalar> act;

  ResidualBlock(int c, std::mt19937_64& rng)
      : conv1(nn::Conv2d<Scalar>::same(c, c, 3, rng)), conv2(nn::Conv2d<Scalar>::same(c, c, 3, rng)), act(c) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return add(x, conv2(act(conv1(x)))); }
  void collect(const std::string& p, nn::ParameterList<Scalar>& out) const {
    conv1.collect(p + ".conv1", out);
    act.collect(p + ".act", out);
    conv2.collect(p + ".conv2", out);
  }
};

/// conv -> pixel shuffle (x2) -> PReLU
template <typename Scalar>
struct Upsampler {
  nn::Conv2d<Scalar> conv;
  nn::PReLU<Scalar> act;

  Upsampler(int c, std::mt19937_64& rng) : conv(nn::Conv2d<Scalar>::same(c, 4 * c, 3, rng)), act(c) {}
  Var<Scalar> operator()(const Var<Scalar>& x) const { return act(pixel_shuffle(conv(x), 2)); }
  void collect(const std::string& p, nn::ParameterList<Scalar>& out) const {
    conv.collect(p + ".conv", out);
    act.collect(p + ".act", out);
  }
};

/// Residual blocks followed by a conv, with a skip around the whole stack.
template <typename Scalar>
struct ResidualStack {
  std::vector<ResidualBlock<Scalar>> blocks;
  nn::Conv2d<Scalar> tail;

  ResidualStack(int n, int c, std::mt19937_64& rng) {
    for (int i = 0; i < n; ++i) blocks.emplace_back(c, rng);
    tail = nn::Conv2d<Scalar>::same(c, c, 3, rng);
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const {
    Var<Scalar> h = x;
    for (const auto& b : blocks) h = b(h);
    return add(x, tail(h));
  }
  void collect(const std::string& p, nn::ParameterList<Scalar>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(p + ".block" + std::to_string(i), out);
    tail.collect(p + ".tail", out);
  }
};

}  // namespace detail

/// SRResNet-style generator, or its multi-scale variant whose X4 stage
/// continues from the X2 stage's upsampled features.
template <typename Scalar>
class Generator {
 public:
  Generator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    const int c = spec.channels;
    head_ = nn::Conv2d<Scalar>::same(1, c, spec.io_kernel, rng);
    head_act_ = nn::PReLU<Scalar>(c);
    trunk_.emplace_back(spec.n_res_blocks_trunk, c, rng);
    if (spec.kind == GeneratorKind::srresnet) {
      for (int s = spec.scale; s > 1; s /= 2) up_.emplace_back(c, rng);
      heads_.push_back(nn::Conv2d<Scalar>::same(c, 1, spec.io_kernel, rng));
    } else {
      up_.emplace_back(c, rng);
      heads_.push_back(nn::Conv2d<Scalar>::same(c, 1, spec.io_kernel, rng));
      trunk_.emplace_back(spec.n_res_blocks_stage2, c, rng);
      up_.emplace_back(c, rng);
      heads_.push_back(nn::Conv2d<Scalar>::same(c, 1, spec.io_kernel, rng));
    }
  }

  const GeneratorSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  /// `lr` is (N,1,h,w); outputs are (N,1,s*h,s*w).
  GeneratorOutput<Scalar> forward(const Var<Scalar>& lr) const {
    const Shape s = lr.shape();
    if (s.c != 1 || s.h < 4 || s.w < 4) throw ShapeError("generator: expected (N,1,h>=4,w>=4), got " + s.str());
    if (!lr.value().all_finite()) throw InvalidInputError("generator: non-finite input");
    const Var<Scalar> f0 = head_act_(head_(lr));
    GeneratorOutput<Scalar> out;
    if (spec_.kind == GeneratorKind::srresnet) {
      Var<Scalar> h = trunk_[0](f0);
      for (const auto& u : up_) h = u(h);
      out.sr = heads_[0](h);
    } else {
      const Var<Scalar> f2 = up_[0](trunk_[0](f0));
      out.x2 = heads_[0](f2);
      out.sr = heads_[1](up_[1](trunk_[1](f2)));
    }
    return out;
  }

  nn::ParameterList<Scalar> parameters() const {
    nn::ParameterList<Scalar> out;
    head_.collect("head", out);
    head_act_.collect("head.act", out);
    if (spec_.kind == GeneratorKind::srresnet) {
      trunk_[0].collect("trunk", out);
      for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect("up" + std::to_string(i), out);
      heads_[0].collect("out", out);
    } else {
      trunk_[0].collect("trunk", out);
      up_[0].collect("up_x2", out);
      heads_[0].collect("out_x2", out);
      trunk_[1].collect("stage2", out);
      up_[1].collect("up_x4", out);
      heads_[1].collect("out_x4", out);
    }
    return out;
  }

 private:
  GeneratorSpec spec_;
  std::uint64_t seed_;
  nn::Conv2d<Scalar> head_;
  nn::PReLU<Scalar> head_act_;
  std::vector<detail::ResidualStack<Scalar>> trunk_;
  std::vector<detail::Upsampler<Scalar>> up_;
  std::vector<nn::Conv2d<Scalar>> heads_;
};

/// Strided convolutional critic: conv + LeakyReLU(0.2), n_down stride-2
/// stages, and a dense head (a conv spanning the remaining extent). No
/// normalization layers. The vanilla discriminator applies a sigmoid.
template <typename Scalar>
class Critic {
 public:
  Critic(const CriticSpec& spec, std::uint64_t seed) : spec_(spec), seed_(seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    int c = spec.base_channels;
    convs_.push_back(nn::Conv2d<Scalar>::same(1, c, 3, rng));
    for (int i = 0; i < spec.n_down; ++i, c *= 2) convs_.emplace_back(c, 2 * c, 3, Conv2dGeometry{2, 1}, rng);
    const int spatial = spec.input_size >> spec.n_down;
    head_ = nn::Conv2d<Scalar>(c, 1, spatial, Conv2dGeometry{1, 0}, rng);
  }

  const CriticSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  bool probability_head() const { return spec_.kind == CriticKind::vanilla_d; }

  /// Layer names in evaluation order; used to audit the architecture.
  std::vector<std::string> layer_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      names.push_back("conv" + std::to_string(i));
      names.push_back("leaky_relu");
    }
    names.push_back("dense");
    if (probability_head()) names.push_back("sigmoid");
    return names;
  }

  /// `x` is (N,1,input_size,input_size); returns (N,1,1,1).
  Var<Scalar> forward(const Var<Scalar>& x) const {
    const Shape s = x.shape();
    if (s.c != 1 || s.h != spec_.input_size || s.w != spec_.input_size)
      throw ShapeError("critic: expected (N,1," + std::to_string(spec_.input_size) + "," +
                       std::to_string(spec_.input_size) + "), got " + s.str());
    Var<Scalar> h = x;
    for (const auto& conv : convs_) h = leaky_relu(conv(h), Scalar(0.2));
    h = head_(h);
    return probability_head() ? sigmoid(h) : h;
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return forward(x); }

  nn::ParameterList<Scalar> parameters() const {
    nn::ParameterList<Scalar> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect("conv" + std::to_string(i), out);
    head_.collect("dense", out);
    return out;
  }

 private:
  CriticSpec spec_;
  std::uint64_t seed_;
  std::vector<nn::Conv2d<Scalar>> convs_;
  nn::Conv2d<Scalar> head_;
};

template <typename Scalar>
Generator<Scalar> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  return Generator<Scalar>(spec, seed);
}

template <typename Scalar>
Critic<Scalar> build_critic(const CriticSpec& spec, std::uint64_t seed) {
  return Critic<Scalar>(spec, seed);
}

/// Copies named tensors from `ar` (under `prefix`) into `params`. Every
/// parameter must be present with a matching shape.
void load_parameters(const TensorArchive& ar, const std::string& prefix, const nn::ParameterList<double>& params);
void store_parameters(TensorArchive& ar, const std::string& prefix, const nn::ParameterList<double>& params);

/// Training checkpoint: generator (and optionally critic) weights plus provenance.
struct Checkpoint {
  GeneratorSpec generator;
  std::optional<CriticSpec> critic;
  std::uint64_t seed = 0;
  long step = 0;
  int epoch = 0;
  std::string variant;
  TensorArchive weights;  ///< tensors named "generator.*" and "critic.*"

  static Checkpoint capture(const Generator<double>& g, const Critic<double>* c, long step, int epoch,
                            const std::string& variant);
  Generator<double> restore_generator() const;
  Critic<double> restore_critic() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace lfsr
