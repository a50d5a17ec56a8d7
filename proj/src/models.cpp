#include "lfsr/models.hpp"

namespace lfsr {

using nlohmann::json;

std::string to_string(GeneratorKind k) { return k == GeneratorKind::srresnet ? "srresnet" : "multiscale"; }

std::string to_string(CriticKind k) {
  switch (k) {
    case CriticKind::vanilla_d: return "vanilla_d";
    case CriticKind::wgan_critic: return "wgan_critic";
    case CriticKind::wgangp_critic: return "wgangp_critic";
  }
  return "?";
}

GeneratorKind parse_generator_kind(const std::string& s) {
  if (s == "srresnet") return GeneratorKind::srresnet;
  if (s == "multiscale") return GeneratorKind::multiscale;
  throw ConfigError("unknown generator kind '" + s + "'");
}

CriticKind parse_critic_kind(const std::string& s) {
  if (s == "vanilla_d") return CriticKind::vanilla_d;
  if (s == "wgan_critic") return CriticKind::wgan_critic;
  if (s == "wgangp_critic") return CriticKind::wgangp_critic;
  throw ConfigError("unknown critic kind '" + s + "'");
}

void GeneratorSpec::validate() const {
  if (scale != 2 && scale != 4) throw ConfigError("generator: scale must be 2 or 4");
  if (kind == GeneratorKind::multiscale && scale != 4) throw ConfigError("generator: multiscale requires scale 4");
  if (n_res_blocks_trunk < 1) throw ConfigError("generator: n_res_blocks_trunk must be >= 1");
  if (kind == GeneratorKind::multiscale && n_res_blocks_stage2 < 1)
    throw ConfigError("generator: n_res_blocks_stage2 must be >= 1");
  if (channels < 1) throw ConfigError("generator: channels must be >= 1");
  if (io_kernel < 1 || io_kernel % 2 == 0) throw ConfigError("generator: io_kernel must be odd and positive");
}

namespace {

std::size_t conv(int k, int in, int out) { return nn::Conv2d<double>::parameter_count(in, out, k); }
std::size_t block(int c) { return 2 * conv(3, c, c) + static_cast<std::size_t>(c); }
std::size_t upsampler(int c) { return conv(3, c, 4 * c) + static_cast<std::size_t>(c); }

}  // namespace

std::size_t GeneratorSpec::parameter_count() const {
  const int c = channels, k = io_kernel;
  std::size_t n = conv(k, 1, c) + c + n_res_blocks_trunk * block(c) + conv(3, c, c);
  if (kind == GeneratorKind::srresnet) {
    const int stages = scale == 4 ? 2 : 1;
    return n + stages * upsampler(c) + conv(k, c, 1);
  }
  n += upsampler(c) + conv(k, c, 1);
  return n + n_res_blocks_stage2 * block(c) + conv(3, c, c) + upsampler(c) + conv(k, c, 1);
}

void CriticSpec::validate() const {
  if (base_channels < 1) throw ConfigError("critic: base_channels must be >= 1");
  if (n_down < 0) throw ConfigError("critic: n_down must be >= 0");
  if (input_size < 1 || input_size % (1 << n_down) != 0)
    throw ConfigError("critic: input_size must be a positive multiple of 2^n_down");
}

std::size_t CriticSpec::parameter_count() const {
  int c = base_channels;
  std::size_t n = conv(3, 1, c);
  for (int i = 0; i < n_down; ++i, c *= 2) n += conv(3, c, 2 * c);
  return n + conv(input_size >> n_down, c, 1);
}

void to_json(json& j, const GeneratorSpec& s) {
  j = {{"kind", to_string(s.kind)},
       {"n_res_blocks_trunk", s.n_res_blocks_trunk},
       {"n_res_blocks_stage2", s.n_res_blocks_stage2},
       {"channels", s.channels},
       {"scale", s.scale},
       {"io_kernel", s.io_kernel}};
}

void from_json(const json& j, GeneratorSpec& s) {
  GeneratorSpec d;
  s.kind = j.contains("kind") ? parse_generator_kind(j.at("kind").get<std::string>()) : d.kind;
  s.n_res_blocks_trunk = j.value("n_res_blocks_trunk", d.n_res_blocks_trunk);
  s.n_res_blocks_stage2 = j.value("n_res_blocks_stage2", d.n_res_blocks_stage2);
  s.channels = j.value("channels", d.channels);
  s.scale = j.value("scale", d.scale);
  s.io_kernel = j.value("io_kernel", d.io_kernel);
}

void to_json(json& j, const CriticSpec& s) {
  j = {{"kind", to_string(s.kind)},
       {"base_channels", s.base_channels},
       {"input_size", s.input_size},
       {"n_down", s.n_down}};
}

void from_json(const json& j, CriticSpec& s) {
  CriticSpec d;
  s.kind = j.contains("kind") ? parse_critic_kind(j.at("kind").get<std::string>()) : d.kind;
  s.base_channels = j.value("base_channels", d.base_channels);
  s.input_size = j.value("input_size", d.input_size);
  s.n_down = j.value("n_down", d.n_down);
}

void load_parameters(const TensorArchive& ar, const std::string& prefix, const nn::ParameterList<double>& params) {
  for (auto p : params) {
    const std::string name = prefix + p.name;
    auto it = ar.tensors.find(name);
    if (it == ar.tensors.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
    if (!(it->second.shape() == p.var.shape()))
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + it->second.shape().str() + ", expected " +
                       p.var.shape().str());
    p.var.mutable_value() = it->second;
  }
}

void store_parameters(TensorArchive& ar, const std::string& prefix, const nn::ParameterList<double>& params) {
  for (const auto& p : params) ar.tensors.insert_or_assign(prefix + p.name, p.var.value());
}

Checkpoint Checkpoint::capture(const Generator<double>& g, const Critic<double>* c, long step, int epoch,
                               const std::string& variant) {
  Checkpoint ck;
  ck.generator = g.spec();
  ck.seed = g.seed();
  ck.step = step;
  ck.epoch = epoch;
  ck.variant = variant;
  store_parameters(ck.weights, "generator.", g.parameters());
  if (c) {
    ck.critic = c->spec();
    store_parameters(ck.weights, "critic.", c->parameters());
  }
  return ck;
}

Generator<double> Checkpoint::restore_generator() const {
  Generator<double> g(generator, seed);
  load_parameters(weights, "generator.", g.parameters());
  return g;
}

Critic<double> Checkpoint::restore_critic() const {
  if (!critic) throw ConfigError("checkpoint holds no critic");
  Critic<double> c(*critic, seed);
  load_parameters(weights, "critic.", c.parameters());
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  TensorArchive ar = weights;
  ar.meta = {{"kind", "checkpoint"},
             {"generator", generator},
             {"seed", seed},
             {"step", step},
             {"epoch", epoch},
             {"variant", variant}};
  if (critic) ar.meta["critic"] = *critic;
  ar.save(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  TensorArchive ar = TensorArchive::load(path);
  Checkpoint ck;
  try {
    if (ar.meta.at("kind") != "checkpoint") throw ParseError(path.string(), "archive is not a checkpoint");
    ck.generator = ar.meta.at("generator").get<GeneratorSpec>();
    if (ar.meta.contains("critic")) ck.critic = ar.meta.at("critic").get<CriticSpec>();
    ck.seed = ar.meta.at("seed").get<std::uint64_t>();
    ck.step = ar.meta.at("step").get<long>();
    ck.epoch = ar.meta.at("epoch").get<int>();
    ck.variant = ar.meta.value("variant", "");
  } catch (const json::exception& e) {
    throw ParseError(path.string(), e.what());
  }
  ar.meta = json::object();
  ck.weights = std::move(ar);
  return ck;
}

}  // namespace lfsr
