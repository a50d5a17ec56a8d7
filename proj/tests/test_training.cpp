#include <doctest.h>

#include <lfsr/training.hpp>

#include "support/fixtures.hpp"

#include <fstream>
#include <set>

using namespace lfsr;
using namespace lfsr::testing;

TEST_CASE("learning-rate schedule") {
  TrainingConfig c;
  c.epochs = 300;
  CHECK(lr_schedule(0, c) == 1e-4);
  CHECK(lr_schedule(149, c) == 1e-4);
  CHECK(lr_schedule(150, c) == 1e-5);
  CHECK(lr_schedule(299, c) == 1e-5);
  CHECK_THROWS_AS(lr_schedule(300, c), DomainError);
  CHECK_THROWS_AS(lr_schedule(-1, c), DomainError);
  c.epochs = 2;
  CHECK(lr_schedule(0, c) == c.lr_initial);
  CHECK(lr_schedule(1, c) == c.lr_after_midpoint);
  c.epochs = 5;
  CHECK(lr_schedule(1, c) == c.lr_initial);
  CHECK(lr_schedule(2, c) == c.lr_after_midpoint);
}

TEST_CASE("training config validation and JSON") {
  for (Variant v : all_variants()) {
    const TrainingConfig c = TrainingConfig::for_variant(v);
    CHECK_NOTHROW(c.validate());
    CHECK(parse_variant(to_string(v)) == v);
    const nlohmann::json j = c;
    const TrainingConfig back = j.get<TrainingConfig>();
    CHECK(nlohmann::json(back) == j);
  }
  CHECK(TrainingConfig::for_variant(Variant::GAN_PRETRAIN).adv.n_critic == 1);
  CHECK(TrainingConfig::for_variant(Variant::WGAN).adv.n_critic == 5);
  CHECK(TrainingConfig::for_variant(Variant::WGAN_GP).adv.gp_lambda == 10.0);
  CHECK(TrainingConfig::for_variant(Variant::WGAN).adv.clip_c == 0.01);

  auto c = TrainingConfig::for_variant(Variant::GAN_PRETRAIN);
  c.pretrain_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig::for_variant(Variant::WGAN);
  c.pretrain_epochs = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig::for_variant(Variant::WGAN_GP_X2MSE);
  c.generator.kind = GeneratorKind::srresnet;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig::for_variant(Variant::WGAN);
  c.critic.kind = CriticKind::vanilla_d;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig::for_variant(Variant::MS_GAN);
  c.lr_after_midpoint = c.lr_initial;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.lr_after_midpoint = 1e-5;
  c.epochs = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  CHECK_THROWS_AS(nlohmann::json({{"epochs", 3}, {"bogus", 1}}).get<TrainingConfig>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json({{"variant", "DCGAN"}}).get<TrainingConfig>(), ConfigError);
  const auto partial = nlohmann::json({{"variant", "WGAN"}, {"critic", {{"base_channels", 8}}}}).get<TrainingConfig>();
  CHECK(partial.critic.kind == CriticKind::wgan_critic);
  CHECK(partial.critic.base_channels == 8);
  CHECK(partial.critic.input_size == 32);
}

TEST_CASE("batches pad to the critic patch with validity masks") {
  const auto pairs = phantom_pairs(6, 3);
  REQUIRE(pairs.size() == 6);
  const std::vector<std::size_t> idx{0, 3, 5};
  const Batch b = make_batch(pairs, idx, 32);
  CHECK(b.lr.shape() == Shape{3, 1, 8, 8});
  CHECK(b.hr.shape() == Shape{3, 1, 32, 32});
  CHECK(b.dr.shape() == Shape{3, 1, 16, 16});
  for (int k = 0; k < 3; ++k) {
    const RoiPair& p = pairs[idx[static_cast<std::size_t>(k)]];
    double m = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const bool inside = y < p.hr.height() && x < p.hr.width();
        CHECK(b.mask_hr(k, 0, y, x) == (inside ? 1.0 : 0.0));
        CHECK(b.hr(k, 0, y, x) == (inside ? p.hr.pixels(y, x) : 0.0));
        m += b.mask_hr(k, 0, y, x);
      }
    CHECK(m == p.hr.width() * p.hr.height());
  }
  CHECK_THROWS_AS(make_batch(pairs, idx, 8), ConfigError);
}

TEST_CASE("pretraining") {
  // Four pairs with identical content.
  auto pairs = phantom_pairs(1, 4);
  REQUIRE(pairs.size() == 1);
  pairs = {pairs[0], pairs[0], pairs[0], pairs[0]};
  TrainingConfig cfg = tiny_config(Variant::GAN_PRETRAIN);
  cfg.pretrain_epochs = 20;
  Generator<double> g(cfg.generator, cfg.seed);
  const double before = dataset_mse(g, pairs).mse_sr;
  RunHistory h;
  const Checkpoint ck = pretrain_generator(g, pairs, cfg, &h);
  const double after = dataset_mse(g, pairs).mse_sr;
  CHECK(after < before);
  CHECK(h.pretrain.size() == 20);
  CHECK(ck.step == 20);
  CHECK(dataset_mse(ck.restore_generator(), pairs).mse_sr == after);

  const Critic<double> critic(cfg.critic, 1);
  CHECK_THROWS_AS(pretrain_generator(g, pairs, cfg, nullptr, &critic), ConfigError);
  CHECK_THROWS_AS(pretrain_generator(g, pairs, tiny_config(Variant::WGAN), nullptr), ConfigError);
  CHECK_THROWS_AS(pretrain_generator(g, {}, cfg, nullptr), InvalidInputError);
}

TEST_CASE("adversarial loop invariants") {
  const auto pairs = phantom_pairs(8, 5);
  const std::map<Variant, std::set<std::string>> gen_terms{
      {Variant::GAN_PRETRAIN, {"mse_x4", "vgg_x4", "adv_x4"}},
      {Variant::WGAN_PRETRAIN, {"mse_x4", "vgg_x4", "adv_x4"}},
      {Variant::WGAN, {"mse_x4", "vgg_x4", "adv_x4"}},
      {Variant::WGAN_GP, {"mse_x4", "vgg_x4", "adv_x4"}},
      {Variant::WGAN_GP_X2MSE, {"mse_x2", "mse_x4", "vgg_x4", "adv_x4"}},
      {Variant::MS_GAN, {"mse_x2", "mse_x4", "vgg_x4", "adv_x4"}}};
  for (Variant v : all_variants()) {
    CAPTURE(to_string(v));
    TrainingConfig cfg = tiny_config(v);
    cfg.pretrain_epochs = uses_pretraining(v) ? 1 : 0;
    double worst_clip = 0;
    TrainOptions opt;
    opt.max_generator_steps = 3;
    opt.observer = [&](const StepRecord& r, const Critic<double>* c) {
      if (r.kind == "critic" && c) worst_clip = std::max(worst_clip, max_abs_parameter(c->parameters()));
    };
    const TrainResult res = train(cfg, pairs, {}, opt);
    const auto& recs = res.history.records;
    CHECK(res.history.pretrain.size() == (uses_pretraining(v) ? 2u : 0u));

    long prev = 0;
    int critic_run = 0;
    std::set<std::string> expected_critic{"critic"};
    if (cfg.critic.kind == CriticKind::wgangp_critic) expected_critic.insert("gp");
    for (const auto& r : recs) {
      CHECK(r.step > prev);
      prev = r.step;
      CHECK(r.lr == lr_schedule(r.epoch, cfg));
      for (const auto& [k, x] : r.terms) CHECK(std::isfinite(x));
      std::set<std::string> keys;
      for (const auto& [k, x] : r.terms) keys.insert(k);
      if (r.kind == "critic") {
        ++critic_run;
        CHECK(keys == expected_critic);
      } else if (r.kind == "generator") {
        CHECK(critic_run == cfg.adv.n_critic);
        critic_run = 0;
        CHECK(keys == gen_terms.at(v));
      }
    }
    CHECK(res.history.of_kind("generator").size() == 3);
    CHECK(res.final.step == 3);
    if (cfg.critic.kind == CriticKind::wgan_critic) CHECK(worst_clip <= cfg.adv.clip_c);
  }
}

TEST_CASE("runs are deterministic for a seed") {
  const auto pairs = phantom_pairs(4, 6);
  TrainingConfig cfg = tiny_config(Variant::MS_GAN);
  TrainOptions opt;
  opt.max_generator_steps = 2;
  const auto a = train(cfg, pairs, {}, opt);
  const auto b = train(cfg, pairs, {}, opt);
  CHECK(a.final.weights.tensors.size() == b.final.weights.tensors.size());
  for (const auto& [name, t] : a.final.weights.tensors)
    CHECK((t.array() == b.final.weights.at(name).array()).all());
  cfg.seed = 99;
  const auto c = train(cfg, pairs, {}, opt);
  CHECK_FALSE((a.final.weights.at("generator.head.weight").array() ==
               c.final.weights.at("generator.head.weight").array())
                  .all());
}

TEST_CASE("run directory contents") {
  TempDir dir("run");
  const auto pairs = phantom_pairs(4, 7);
  TrainingConfig cfg = tiny_config(Variant::WGAN_GP);
  cfg.epochs = 2;
  cfg.checkpoint_every = 1;
  TrainOptions opt;
  opt.run_dir = dir.path / "r";
  const auto res = train(cfg, pairs, pairs, opt);
  const auto root = dir.path / "r";
  CHECK(std::filesystem::exists(root / "config.json"));
  CHECK(std::filesystem::exists(root / "final.ckpt"));
  CHECK(res.history.checkpoints == std::vector<std::string>{"checkpoints/epoch_0001.ckpt", "checkpoints/epoch_0002.ckpt"});
  std::ifstream cfg_in(root / "config.json");
  CHECK(nlohmann::json::parse(cfg_in).get<TrainingConfig>().variant == Variant::WGAN_GP);
  std::ifstream hist(root / "history.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(hist, line); ++lines) {
    const StepRecord r = nlohmann::json::parse(line).get<StepRecord>();
    CHECK(r.step == res.history.records[lines].step);
  }
  CHECK(lines == res.history.records.size());
  CHECK(res.history.of_kind("validation").size() == 2);
  std::ifstream losses(root / "losses.jsonl");
  std::string first;
  std::getline(losses, first);
  const auto rec = nlohmann::json::parse(first);
  CHECK(rec.at("variant") == "WGAN_GP");
  CHECK(rec.contains("term"));
  CHECK(rec.contains("value"));
  const Checkpoint fin = Checkpoint::load(root / "final.ckpt");
  CHECK(fin.critic.has_value());
  CHECK(fin.generator == cfg.generator);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  TempDir dir("diverge");
  const auto pairs = phantom_pairs(4, 8);
  TrainingConfig cfg = tiny_config(Variant::WGAN_GP);
  cfg.lr_initial = 1e300;
  cfg.lr_after_midpoint = 1e299;
  TrainOptions opt;
  opt.run_dir = dir.path / "r";
  try {
    train(cfg, pairs, {}, opt);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() > 0);
    CHECK_FALSE(e.term().empty());
    std::ifstream hist(dir.path / "r" / "history.jsonl");
    std::string line, last;
    while (std::getline(hist, line)) last = line;
    const auto j = nlohmann::json::parse(last);
    CHECK(j.at("kind") == "divergence");
    CHECK(j.at("step") == e.step());
  }
}

TEST_CASE("inference") {
  const auto items = phantom_items(2, 9);
  GeneratorSpec spec = tiny_config(Variant::MS_GAN).generator;
  const Generator<double> g(spec, 3);
  const ImageSlice hr = data::normalize(items[0].hr);
  const ImageSlice lr = data::downsample(hr, 4);
  const auto detector = data::mask_detector(*items[0].mask, 2);
  const InferenceResult r = infer(g, lr, detector);
  CHECK(r.box == data::align_to_grid(data::roi_from_mask(*items[0].mask, 4, 2), 4, 64, 64));
  CHECK(r.sr.width() == r.box.w);
  CHECK(r.sr.height() == r.box.h);
  CHECK(r.sr_x2->width() == r.box.w / 2);
  CHECK(r.sr.normalized);
  const InferenceResult again = infer(g, lr, detector);
  CHECK((again.sr.pixels == r.sr.pixels).all());

  for (auto [h, w] : {std::pair{4, 4}, {5, 9}, {8, 6}}) {
    const auto out = infer(g, ImageSlice(Pixels::Random(h, w)));
    CHECK(out.sr.height() == 4 * h);
    CHECK(out.sr.width() == 4 * w);
  }

  SegMask empty{MaskPixels::Zero(64, 64)};
  CHECK_THROWS_AS(infer(g, lr, data::mask_detector(empty, 2)), NoLesionError);
  const data::Detector crooked = [](const ImageSlice&, int) { return RoiBox{2, 0, 16, 16}; };
  CHECK_THROWS_AS(infer(g, lr, crooked), AlignmentError);

  const Checkpoint ck = Checkpoint::capture(g, nullptr, 0, 0, "MS_GAN");
  CHECK((infer(ck, lr, detector).sr.pixels == r.sr.pixels).all());
}
