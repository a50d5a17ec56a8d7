#pragma once

#include "lfsr/ops.hpp"

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace lfsr::nn {

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Var<Scalar> var;
};

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

template <typename Scalar>
std::vector<Var<Scalar>> vars(const ParameterList<Scalar>& params) {
  std::vector<Var<Scalar>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

template <typename Scalar>
std::size_t count(const ParameterList<Scalar>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

template <typename Scalar>
Tensor<Scalar> uniform(Shape shape, Scalar bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  Tensor<Scalar> t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.array()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

/// 2-D convolution with bias; weights drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, Conv2dGeometry geometry,
         std::mt19937_64& rng)
      : geometry_(geometry) {
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(in_channels * kernel * kernel));
    weight_ = Var<Scalar>::parameter(uniform<Scalar>({out_channels, in_channels, kernel, kernel}, bound, rng));
    bias_ = Var<Scalar>::parameter(uniform<Scalar>({1, out_channels, 1, 1}, bound, rng));
  }

  /// Stride-1 convolution that preserves spatial size (odd kernels).
  static Conv2d same(int in_channels, int out_channels, int kernel, std::mt19937_64& rng) {
    return Conv2d(in_channels, out_channels, kernel, {1, kernel / 2}, rng);
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return add_channel_bias(conv2d(x, weight_, geometry_), bias_);
  }

  void collect(const std::string& prefix, ParameterList<Scalar>& out) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

  const Var<Scalar>& weight() const { return weight_; }
  const Var<Scalar>& bias() const { return bias_; }
  int in_channels() const { return weight_.shape().c; }
  int out_channels() const { return weight_.shape().n; }
  int kernel() const { return weight_.shape().h; }
  Conv2dGeometry geometry() const { return geometry_; }

  static std::size_t parameter_count(int in_channels, int out_channels, int kernel) {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel + out_channels;
  }

 private:
  Var<Scalar> weight_, bias_;
  Conv2dGeometry geometry_{};
};

/// PReLU with one slope per channel, initialised to 0.25.
template <typename Scalar>
class PReLU {
 public:
  PReLU() = default;
  explicit PReLU(int channels)
      : slope_(Var<Scalar>::parameter(Tensor<Scalar>::constant({1, channels, 1, 1}, Scalar(0.25)))) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return prelu(x, slope_); }
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const {
    out.push_back({prefix + ".slope", slope_});
  }
  static std::size_t parameter_count(int channels) { return static_cast<std::size_t>(channels); }

 private:
  Var<Scalar> slope_;
};

}  // namespace lfsr::nn
