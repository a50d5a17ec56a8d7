#pragma once

// Feature extractors for the perceptual loss: identity, a fixed random
// convolution stack, and the VGG19 topology loaded from a converted archive.

#include "lfsr/archive.hpp"
#include "lfsr/errors.hpp"
#include "lfsr/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lfsr {

// ---------------------------------------------------------------------------
// 2x2 max pooling. The backward pass routes gradients to the recorded argmax
// positions; routing and its adjoint (gather) are both linear in the gradient.

namespace detail {

template <typename S>
Var<S> gather_at(const Var<S>& x, std::shared_ptr<const std::vector<Eigen::Index>> idx, Shape out);

template <typename S>
Var<S> scatter_to(const Var<S>& g, std::shared_ptr<const std::vector<Eigen::Index>> idx, Shape in) {
  Tensor<S> v(in);
  for (std::size_t i = 0; i < idx->size(); ++i) v.array()[(*idx)[i]] += g.value().array()[i];
  const Shape out = g.shape();
  return Var<S>::make(std::move(v), {g},
                      [idx, out](const Var<S>& up, const std::vector<bool>&) {
                        return std::vector<Var<S>>{gather_at(up, idx, out)};
                      },
                      "scatter");
}

template <typename S>
Var<S> gather_at(const Var<S>& x, std::shared_ptr<const std::vector<Eigen::Index>> idx, Shape out) {
  Tensor<S> v(out);
  for (std::size_t i = 0; i < idx->size(); ++i) v.array()[i] = x.value().array()[(*idx)[i]];
  const Shape in = x.shape();
  return Var<S>::make(std::move(v), {x},
                      [idx, in](const Var<S>& up, const std::vector<bool>&) {
                        return std::vector<Var<S>>{scatter_to(up, idx, in)};
                      },
                      "gather");
}

}  // namespace detail

/// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped.
template <typename S>
Var<S> max_pool2x2(const Var<S>& x) {
  const Shape s = x.shape();
  if (s.h < 2 || s.w < 2) throw ShapeError("max_pool2x2: input " + s.str() + " too small");
  const Shape out{s.n, s.c, s.h / 2, s.w / 2};
  auto idx = std::make_shared<std::vector<Eigen::Index>>(static_cast<std::size_t>(out.size()));
  const auto& v = x.value();
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int xx = 0; xx < out.w; ++xx) {
          Eigen::Index best = v.index(n, c, 2 * y, 2 * xx);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index i = v.index(n, c, 2 * y + dy, 2 * xx + dx);
              if (v.array()[i] > v.array()[best]) best = i;
            }
          (*idx)[k++] = best;
        }
  return detail::gather_at<S>(x, std::move(idx), out);
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  return leaky_relu(x, S(0));
}

// ---------------------------------------------------------------------------

/// Deterministic, differentiable image -> feature map.
template <typename S>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Var<S> operator()(const Var<S>& x) const = 0;
  virtual std::string name() const = 0;
};

template <typename S>
class IdentityExtractor final : public FeatureExtractor<S> {
 public:
  Var<S> operator()(const Var<S>& x) const override { return x; }
  std::string name() const override { return "identity"; }
};

/// Sequence of frozen conv / relu / pool layers, truncated after `last`.
template <typename S>
class ConvStackExtractor final : public FeatureExtractor<S> {
 public:
  struct Layer {
    enum class Kind { conv, relu, pool } kind;
    std::string name;
    Var<S> weight, bias;  // conv only
  };

  ConvStackExtractor(std::vector<Layer> layers, std::string label, double rescale = 1.0)
      : layers_(std::move(layers)), label_(std::move(label)), rescale_(rescale) {
    if (layers_.empty()) throw ConfigError("feature extractor has no layers");
  }

  Var<S> operator()(const Var<S>& x) const override {
    Var<S> h = x;
    for (const auto& l : layers_) {
      switch (l.kind) {
        case Layer::Kind::conv:
          h = add_channel_bias(conv2d(h, l.weight, {1, l.weight.shape().h / 2}), l.bias);
          break;
        case Layer::Kind::relu: h = relu(h); break;
        case Layer::Kind::pool: h = max_pool2x2(h); break;
      }
    }
    return rescale_ == 1.0 ? h : scale(h, static_cast<S>(rescale_));
  }

  std::string name() const override { return label_; }
  const std::vector<Layer>& layers() const { return layers_; }

 private:
  std::vector<Layer> layers_;
  std::string label_;
  double rescale_;
};

/// Flattened VGG19 feature layer names ("conv1_1", "relu1_1", ..., "pool5").
std::vector<std::string> vgg19_layer_names();
/// Index of relu5_4, the deep feature block used by default.
inline constexpr int kVgg54Layer = 35;

struct PerceptualConfig {
  std::string extractor = "vgg19";  ///< vgg19 | random | identity
  int layer_index = -1;             ///< last layer kept; -1 selects the extractor default
  std::string weights_source;       ///< vgg19 weight archive
  int random_channels = 8;
  int random_depth = 2;  ///< conv+relu pairs
  std::uint64_t random_seed = 1234;
  double rescale = 1.0;  ///< multiplier on features before comparison

  void validate() const;
};

void to_json(nlohmann::json& j, const PerceptualConfig& c);
void from_json(const nlohmann::json& j, PerceptualConfig& c);

/// Fixed random conv stack: `depth` pairs of 3x3 conv and relu.
std::unique_ptr<FeatureExtractor<double>> make_random_extractor(int channels, int depth, std::uint64_t seed,
                                                                int layer_index = -1, double rescale = 1.0);
/// VGG19 features up to `layer_index` from an archive holding "convX_Y.weight"
/// (O,3 or 1,3,3) and "convX_Y.bias" (1,O,1,1). RGB first-layer kernels are
/// summed over colour, i.e. the gray slice is fed as R=G=B.
std::unique_ptr<FeatureExtractor<double>> load_vgg19_extractor(const std::filesystem::path& weights,
                                                               int layer_index = kVgg54Layer,
                                                               double rescale = 1.0);
std::unique_ptr<FeatureExtractor<double>> make_extractor(const PerceptualConfig& cfg);

}  // namespace lfsr
