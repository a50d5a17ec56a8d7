#include "lfsr/features.hpp"

#include <random>

namespace lfsr {

using nlohmann::json;
using Layer = ConvStackExtractor<double>::Layer;

std::vector<std::string> vgg19_layer_names() {
  static const int convs[] = {2, 2, 4, 4, 4};
  std::vector<std::string> names;
  for (int b = 0; b < 5; ++b) {
    for (int i = 1; i <= convs[b]; ++i) {
      const std::string tag = std::to_string(b + 1) + "_" + std::to_string(i);
      names.push_back("conv" + tag);
      names.push_back("relu" + tag);
    }
    names.push_back("pool" + std::to_string(b + 1));
  }
  return names;
}

void PerceptualConfig::validate() const {
  if (extractor != "vgg19" && extractor != "random" && extractor != "identity")
    throw ConfigError("perceptual.extractor must be vgg19, random or identity (got '" + extractor + "')");
  if (extractor == "random" && (random_channels < 1 || random_depth < 1))
    throw ConfigError("perceptual: random extractor needs channels >= 1 and depth >= 1");
  if (extractor == "vgg19" && layer_index >= static_cast<int>(vgg19_layer_names().size()))
    throw ConfigError("perceptual.layer_index out of range for vgg19");
  if (extractor == "random" && layer_index >= 2 * random_depth)
    throw ConfigError("perceptual.layer_index out of range for the random extractor");
  if (layer_index < -1) throw ConfigError("perceptual.layer_index must be >= -1");
  if (!(rescale > 0)) throw ConfigError("perceptual.rescale must be positive");
}

void to_json(json& j, const PerceptualConfig& c) {
  j = {{"extractor", c.extractor},
       {"layer_index", c.layer_index},
       {"weights_source", c.weights_source},
       {"random_channels", c.random_channels},
       {"random_depth", c.random_depth},
       {"random_seed", c.random_seed},
       {"rescale", c.rescale}};
}

void from_json(const json& j, PerceptualConfig& c) {
  PerceptualConfig d;
  c.extractor = j.value("extractor", d.extractor);
  c.layer_index = j.value("layer_index", d.layer_index);
  c.weights_source = j.value("weights_source", d.weights_source);
  c.random_channels = j.value("random_channels", d.random_channels);
  c.random_depth = j.value("random_depth", d.random_depth);
  c.random_seed = j.value("random_seed", d.random_seed);
  c.rescale = j.value("rescale", d.rescale);
}

namespace {

std::vector<Layer> truncate(std::vector<Layer> layers, int last) {
  if (last >= 0) {
    if (last >= static_cast<int>(layers.size())) throw ConfigError("feature layer index out of range");
    layers.resize(static_cast<std::size_t>(last) + 1);
  }
  return layers;
}

}  // namespace

std::unique_ptr<FeatureExtractor<double>> make_random_extractor(int channels, int depth, std::uint64_t seed,
                                                                int layer_index, double rescale) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  int in = 1;
  for (int i = 0; i < depth; ++i) {
    const double bound = 1.0 / std::sqrt(9.0 * in);
    layers.push_back({Layer::Kind::conv, "conv" + std::to_string(i),
                      VarD::constant(nn::uniform<double>({channels, in, 3, 3}, bound, rng)),
                      VarD::constant(nn::uniform<double>({1, channels, 1, 1}, bound, rng))});
    layers.push_back({Layer::Kind::relu, "relu" + std::to_string(i), {}, {}});
    in = channels;
  }
  return std::make_unique<ConvStackExtractor<double>>(truncate(std::move(layers), layer_index), "random", rescale);
}

std::unique_ptr<FeatureExtractor<double>> load_vgg19_extractor(const std::filesystem::path& weights,
                                                               int layer_index, double rescale) {
  const TensorArchive ar = TensorArchive::load(weights);
  std::vector<Layer> layers;
  int in = 1;
  for (const auto& name : vgg19_layer_names()) {
    if (name.starts_with("relu")) {
      layers.push_back({Layer::Kind::relu, name, {}, {}});
    } else if (name.starts_with("pool")) {
      layers.push_back({Layer::Kind::pool, name, {}, {}});
    } else {
      auto w = ar.tensors.find(name + ".weight");
      auto b = ar.tensors.find(name + ".bias");
      if (w == ar.tensors.end() || b == ar.tensors.end())
        throw ParseError(weights.string(), "missing tensors for " + name);
      TensorD wt = w->second;
      const Shape ws = wt.shape();
      if (in == 1 && ws.c == 3) {
        TensorD gray({ws.n, 1, ws.h, ws.w});
        for (int o = 0; o < ws.n; ++o)
          for (int c = 0; c < 3; ++c)
            for (int y = 0; y < ws.h; ++y)
              for (int x = 0; x < ws.w; ++x) gray(o, 0, y, x) += wt(o, c, y, x);
        wt = std::move(gray);
      }
      if (wt.shape().c != in || b->second.shape() != Shape{1, ws.n, 1, 1})
        throw ParseError(weights.string(), "unexpected shape for " + name + ": " + ws.str());
      layers.push_back({Layer::Kind::conv, name, VarD::constant(wt), VarD::constant(b->second)});
      in = ws.n;
    }
  }
  return std::make_unique<ConvStackExtractor<double>>(truncate(std::move(layers), layer_index), "vgg19", rescale);
}

std::unique_ptr<FeatureExtractor<double>> make_extractor(const PerceptualConfig& cfg) {
  cfg.validate();
  if (cfg.extractor == "identity") return std::make_unique<IdentityExtractor<double>>();
  if (cfg.extractor == "random")
    return make_random_extractor(cfg.random_channels, cfg.random_depth, cfg.random_seed, cfg.layer_index,
                                 cfg.rescale);
  if (cfg.weights_source.empty())
    throw CapabilityError(
        "perceptual.extractor=vgg19 needs perceptual.weights_source (convert torchvision weights with "
        "tools/export_vgg19.py) or choose extractor=random");
  return load_vgg19_extractor(cfg.weights_source, cfg.layer_index < 0 ? kVgg54Layer : cfg.layer_index,
                              cfg.rescale);
}

}  // namespace lfsr
