// Acceptance suite: one line per criterion.
//
//   acceptance [--expect-fail NAME]... [FILTER]
//
// FILTER runs only criteria whose name contains it. Exit status is nonzero
// when a criterion fails that was not named with --expect-fail; expected
// failures still print FAIL.

#include <lfsr/cli.hpp>
#include <lfsr/losses.hpp>
#include <lfsr/metrics.hpp>
#include <lfsr/training.hpp>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace lfsr;
using namespace lfsr::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Shape random_shape(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(1, 3), hw(2, 6);
  return {n(rng), 1, hw(rng), hw(rng)};
}

// ---------------------------------------------------------------------------

Outcome loss_oracles() {
  std::mt19937_64 rng(2024);
  const IdentityExtractor<double> id;
  double worst[4] = {0, 0, 0, 0};
  const int trials = 120;
  for (int t = 0; t < trials; ++t) {
    const Shape s = random_shape(rng);
    const TensorD a = random_tensor(s, 1000 + t), b = random_tensor(s, 2000 + t, 2.0);
    const Grid ga = to_grid(a), gb = to_grid(b);
    const VarD va = VarD::constant(a), vb = VarD::constant(b);

    worst[0] = std::max(worst[0], std::abs(mse(va, vb).item() - mse_loop(ga, gb)));
    worst[1] = std::max(worst[1], std::abs(perceptual(va, vb, id).item() - mse_loop(ga, gb)));

    const TensorD dr = random_tensor({s.n, 1, 1, 1}, 3000 + t), df = random_tensor({s.n, 1, 1, 1}, 4000 + t);
    double mr = 0, mf = 0;
    for (int i = 0; i < s.n; ++i) mr += dr(i, 0, 0, 0), mf += df(i, 0, 0, 0);
    mr /= s.n, mf /= s.n;
    const double wc = wgan_critic_loss(VarD::constant(dr), VarD::constant(df)).item();
    const double wg = wgan_g_loss(VarD::constant(df)).item();
    worst[2] = std::max({worst[2], std::abs(wc - (mf - mr)), std::abs(wg + mf)});

    const Shape s4{s.n, 1, 2 * s.h, 2 * s.w};
    const TensorD x2 = random_tensor(s, 5000 + t), x4 = random_tensor(s4, 6000 + t), hr = random_tensor(s4, 7000 + t);
    const GeneratorOutput<double> out{VarD::constant(x4), VarD::constant(x2)};
    const double total = composite_ms_loss(out, VarD::constant(a), VarD::constant(hr), VarD::constant(df), id).total.item();
    const double oracle = mse_loop(to_grid(x2), ga) + 2 * mse_loop(to_grid(x4), to_grid(hr)) - mf;
    worst[3] = std::max(worst[3], std::abs(total - oracle));
  }
  Outcome o;
  for (double w : worst) o.pass = o.pass && w <= 1e-10;
  o.detail = fmt("%d inputs; max |err| mse %.1e, perceptual(identity) %.1e, wgan %.1e, composite %.1e", trials,
                 worst[0], worst[1], worst[2], worst[3]);
  return o;
}

Outcome gradient_checks() {
  GeneratorSpec spec;
  spec.kind = GeneratorKind::multiscale;
  spec.n_res_blocks_trunk = 1;
  spec.n_res_blocks_stage2 = 1;
  spec.channels = 4;
  spec.io_kernel = 3;
  const auto g = build_generator<double>(spec, 3);
  const auto critic = build_critic<double>(CriticSpec{CriticKind::wgangp_critic, 3, 16, 2}, 4);
  const auto fx = make_random_extractor(3, 2, 6);
  const VarD lr = VarD::constant(random_tensor({2, 1, 4, 4}, 7));
  const VarD hr = VarD::constant(random_tensor({2, 1, 16, 16}, 8));

  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const std::function<VarD()>& f, std::vector<VarD> params, unsigned seed) {
    const auto gr = grad(f(), params);
    const auto dir = random_direction(params, seed);
    // Small step: the LeakyReLU kinks make the loss only piecewise smooth.
    const double fd = fd_directional([&] { NoGrad ng; return f().item(); }, params, dir, 1e-7);
    errs.emplace_back(name, relative_error(dot(gr, dir), fd));
  };
  const auto gp = nn::vars(g.parameters());
  check("L_MSE", [&] { return mse(g.forward(lr).sr, hr); }, gp, 11);
  check("L_VGG", [&] { return perceptual(g.forward(lr).sr, hr, *fx); }, gp, 12);
  check("L_G", [&] { return wgan_g_loss(critic.forward(g.forward(lr).sr)); }, gp, 13);
  // The penalty's parameters are the critic's (generator samples enter detached).
  const TensorD fake = g.forward(lr).sr.value();
  check("GP", [&] { return gradient_penalty(critic, hr.value(), fake, 10.0, 5); }, nn::vars(critic.parameters()), 14);

  Outcome o;
  std::ostringstream os;
  for (const auto& [n, e] : errs) {
    o.pass = o.pass && e < 1e-3;
    os << n << " " << fmt("%.1e", e) << "  ";
  }
  o.detail = "relative error vs central FD: " + os.str();
  return o;
}

Outcome gp_closed_form() {
  const std::function<VarD(const VarD&)> linear = [](const VarD& x) { return sum_per_sample(x); };
  Outcome o;
  std::ostringstream os;
  for (int side : {2, 4, 8}) {
    const int n = side * side;
    const double gp = gradient_penalty<double>(linear, random_tensor({4, 1, side, side}, 1),
                                               random_tensor({4, 1, side, side}, 2), 10.0, 3)
                          .item();
    const double expect = 10.0 * std::pow(std::sqrt(n) - 1.0, 2);
    o.pass = o.pass && std::abs(gp - expect) <= 1e-6;
    os << fmt("n=%d: %.9g vs %.9g  ", n, gp, expect);
  }
  o.detail = os.str();
  return o;
}

TrainingConfig overfit_config(Variant v, long steps) {
  TrainingConfig c = tiny_config(v);
  c.seed = 7;
  // 16 pairs / batch 4 = 4 generator steps per epoch
  c.epochs = static_cast<int>((steps + 3) / 4);
  return c;
}

Outcome wgan_clipping() {
  const auto pairs = phantom_pairs(16, 11);
  TrainingConfig cfg = overfit_config(Variant::WGAN, 200);
  long critic_steps = 0;
  double worst = 0;
  bool exceeded = false;
  TrainOptions opts;
  opts.max_generator_steps = 200;
  opts.observer = [&](const StepRecord& r, const Critic<double>* c) {
    if (r.kind != "critic" || !c) return;
    ++critic_steps;
    const double m = max_abs_parameter(c->parameters());
    worst = std::max(worst, m);
    exceeded = exceeded || m > cfg.adv.clip_c;
  };
  const auto res = train(cfg, pairs, {}, opts);
  Outcome o;
  o.pass = !exceeded && critic_steps == 5 * 200;
  o.detail = fmt("%ld critic steps over %zu generator steps; max |w| = %.17g (c = %.2g)", critic_steps,
                 res.history.of_kind("generator").size(), worst, cfg.adv.clip_c);
  return o;
}

Outcome schedule() {
  const auto pairs = phantom_pairs(8, 12);
  TrainingConfig cfg = tiny_config(Variant::WGAN_GP);
  const TrainingConfig defaults = TrainingConfig::for_variant(Variant::WGAN_GP);
  cfg.lr_initial = defaults.lr_initial;
  cfg.lr_after_midpoint = defaults.lr_after_midpoint;
  cfg.epochs = 4;
  const auto res = train(cfg, pairs, {});
  std::map<int, std::set<double>> lrs;
  for (const auto& r : res.history.records)
    if (r.kind == "generator" || r.kind == "critic") lrs[r.epoch].insert(r.lr);
  Outcome o;
  std::ostringstream os;
  for (int e = 0; e < 4; ++e) {
    const double want = e < 2 ? 1e-4 : 1e-5;
    const bool ok = lrs[e].size() == 1 && *lrs[e].begin() == want;
    o.pass = o.pass && ok;
    os << "epoch " << e << ": " << (lrs[e].empty() ? std::string("none") : fmt("%g", *lrs[e].begin()))
       << (ok ? "" : " (expected " + fmt("%g", want) + ")") << "  ";
  }
  o.detail = os.str();
  return o;
}

struct OverfitRun {
  std::vector<RoiPair> pairs;
  TrainResult result;
  double mse_before = 0, mse_after = 0;
};

OverfitRun overfit(Variant v, long steps) {
  OverfitRun r;
  r.pairs = phantom_pairs(16, 21);
  const TrainingConfig cfg = overfit_config(v, steps);
  TrainOptions opts;
  opts.max_generator_steps = steps;
  r.mse_before = dataset_mse(Generator<double>(cfg.generator, cfg.seed), r.pairs).mse_sr;
  r.result = train(cfg, r.pairs, {}, opts);
  r.mse_after = dataset_mse(r.result.final.restore_generator(), r.pairs).mse_sr;
  return r;
}

std::optional<OverfitRun> ms_gan_run;

Outcome stability_matrix() {
  Outcome o;
  std::ostringstream os;
  for (Variant v : all_variants()) {
    const long budget = v == Variant::GAN_PRETRAIN ? 600 : 200;
    try {
      OverfitRun run = overfit(v, budget);
      bool finite = true;
      for (const auto& rec : run.result.history.records)
        for (const auto& [k, x] : rec.terms) finite = finite && std::isfinite(x);
      const long gsteps = static_cast<long>(run.result.history.of_kind("generator").size());
      const double drop = 1.0 - run.mse_after / run.mse_before;
      bool ok = finite && gsteps == budget;
      if (v == Variant::MS_GAN) ok = ok && drop >= 0.5;
      o.pass = o.pass && ok;
      os << "\n      " << fmt("%-14s %4ld steps, finite=%s, X4 MSE %.4f -> %.4f (-%.0f%%)%s", to_string(v).c_str(),
                              gsteps, finite ? "yes" : "no", run.mse_before, run.mse_after, 100 * drop,
                              ok ? "" : "  <-- fails");
      if (v == Variant::MS_GAN) ms_gan_run = std::move(run);
    } catch (const std::exception& e) {
      o.pass = false;
      os << "\n      " << to_string(v) << ": " << e.what();
    }
  }
  o.detail = "MS_GAN needs >= 50% X4 MSE reduction in 200 generator steps; GAN_PRETRAIN runs 600" + os.str();
  return o;
}

Outcome baseline_ordering() {
  if (!ms_gan_run) ms_gan_run = overfit(Variant::MS_GAN, 200);
  const auto g = ms_gan_run->result.final.restore_generator();
  Outcome o;
  int wins = 0, n = 0;
  double worst_margin = 1e300;
  for (const auto& p : ms_gan_run->pairs) {
    const ImageSlice ref(p.hr.denormalized());
    const double range = metrics::data_range_of(ref);
    const double sr = metrics::psnr(ImageSlice(infer(g, p.lr).sr.denormalized()), ref, range);
    const double bl = metrics::psnr(ImageSlice(metrics::bilinear_upsample(p.lr, p.scale).denormalized()), ref, range);
    ++n;
    wins += sr >= bl;
    worst_margin = std::min(worst_margin, sr - bl);
  }
  o.pass = wins == n;
  o.detail = fmt("MS_GAN >= bilinear ROI PSNR on %d/%d training images; worst margin %+.2f dB", wins, n, worst_margin);
  return o;
}

Outcome metrics_reference() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0, 1);
  auto rand_img = [&](int h, int w) {
    Pixels p(h, w);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = nd(rng);
    return ImageSlice(p);
  };
  auto ssim_loop = [](const ImageSlice& a, const ImageSlice& b, double range) {
    const int w = 8;
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double total = 0;
    int count = 0;
    for (int y = 0; y + w <= a.height(); ++y)
      for (int x = 0; x + w <= a.width(); ++x) {
        double ma = 0, mb = 0, va = 0, vb = 0, cab = 0;
        for (int i = 0; i < w; ++i)
          for (int j = 0; j < w; ++j) ma += a.pixels(y + i, x + j), mb += b.pixels(y + i, x + j);
        ma /= w * w, mb /= w * w;
        for (int i = 0; i < w; ++i)
          for (int j = 0; j < w; ++j) {
            const double da = a.pixels(y + i, x + j) - ma, db = b.pixels(y + i, x + j) - mb;
            va += da * da, vb += db * db, cab += da * db;
          }
        va /= w * w, vb /= w * w, cab /= w * w;
        total += (2 * ma * mb + c1) * (2 * cab + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    return total / count;
  };
  double worst_self = 0, worst_oracle = 0;
  for (int t = 0; t < 20; ++t) {
    const ImageSlice a = rand_img(16, 16);
    const ImageSlice b = a.with_pixels(a.pixels + 0.3 * rand_img(16, 16).pixels);
    const double r = metrics::data_range_of(a);
    worst_self = std::max(worst_self, std::abs(metrics::ssim(a, a, r) - 1.0));
    worst_oracle = std::max(worst_oracle, std::abs(metrics::ssim(b, a, r) - ssim_loop(b, a, r)));
  }
  const ImageSlice ref = rand_img(32, 32);
  const ImageSlice noise = rand_img(32, 32);
  const double range = metrics::data_range_of(ref);
  bool monotone = true;
  double prev = metrics::kPsnrIdentical;
  std::ostringstream os;
  for (double s : {0.0, 0.01, 0.05, 0.1, 0.5, 1.0}) {
    const double p = metrics::psnr(ref.with_pixels(ref.pixels + s * noise.pixels), ref, range);
    if (s > 0) monotone = monotone && p < prev;
    prev = p;
    os << fmt("%.1f ", p);
  }
  Outcome o;
  o.pass = worst_self <= 1e-6 && worst_oracle <= 1e-8 && monotone;
  o.detail = fmt("|ssim(x,x)-1| <= %.1e; |ssim - loop| <= %.1e over 20 16x16 pairs; psnr vs noise: ", worst_self,
                 worst_oracle) +
             os.str() + (monotone ? "(decreasing)" : "(NOT monotone)");
  return o;
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::vector<const char*> argv{"lfsr"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream so, se;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), so, se);
  if (out) *out = so.str() + se.str();
  return rc;
}

Outcome pipeline_smoke() {
  TempDir tmp("acceptance_pipeline");
  const auto d = [&](const char* p) { return (tmp.path / p).string(); };
  {
    std::ofstream cfg(tmp.path / "run.json");
    cfg << R"({"data": {"train": "ds/train.roi", "val": "ds/val.roi"}, "run_dir": "run",
  "max_generator_steps": 50,
  "training": {"variant": "MS_GAN", "epochs": 20, "batch_size": 4, "seed": 5,
    "lr_initial": 1e-3, "lr_after_midpoint": 5e-4,
    "generator": {"channels": 8, "n_res_blocks_trunk": 2, "n_res_blocks_stage2": 1, "io_kernel": 3},
    "critic": {"base_channels": 8, "input_size": 32, "n_down": 2},
    "perceptual": {"extractor": "random", "random_channels": 4, "random_depth": 1}}})";
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> steps{
      {"synth-data", {"synth-data", "--n", "16", "--size", "64", "--seed", "1", "--out", d("corpus")}},
      {"prepare", {"prepare", "--corpus", d("corpus"), "--out", d("ds")}},
      {"train", {"train", "--config", d("run.json"), "--quiet"}},
      {"infer", {"infer", "--checkpoint", d("run/final.ckpt"), "--data", d("ds/val.roi"), "--out", d("sr")}},
      {"evaluate",
       {"evaluate", "--checkpoint", d("run/final.ckpt"), "--images", d("sr"), "--data", d("ds/val.roi"), "--out",
        d("eval")}},
      {"mos-prepare", {"mos-prepare", "--run", d("run"), "--n-images", "3", "--bilinear", "--out", d("bundle")}}};
  Outcome o;
  std::ostringstream os;
  for (const auto& [name, args] : steps) {
    std::string text;
    const int rc = cli(args, &text);
    os << name << "=" << rc << " ";
    if (rc != 0) {
      o.pass = false;
      os << "(" << text.substr(0, 200) << ") ";
      break;
    }
  }
  if (o.pass) {
    std::ifstream is(tmp.path / "eval/metrics.json");
    const auto report = nlohmann::json::parse(is).get<metrics::MetricsReport>();
    o.pass = report.methods.size() == 3 && report.method("bilinear").images.size() > 0;
    os << "report methods " << report.methods.size() << "; ";
  }
  auto rec = [](int s) { return metrics::MosRecord{"i", "m", s, {}, "r", ""}; };
  const auto mos = metrics::mos_aggregate({rec(2), rec(4)});
  const bool mos_ok = std::abs(mos[0].mean - 3.0) < 1e-12 && std::abs(mos[0].std - 1.0) < 1e-12;
  o.pass = o.pass && mos_ok;
  o.detail = os.str() + fmt("mos {2,4} -> %.3f +- %.3f", mos[0].mean, mos[0].std);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::string filter;
  std::set<std::string> expected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--expect-fail" && i + 1 < argc)
      expected.insert(argv[++i]);
    else
      filter = a;
  }
  const std::vector<Criterion> all{
      {"loss oracle suite", 10, loss_oracles},
      {"gradient correctness", 120, gradient_checks},
      {"gradient-penalty closed form", 10, gp_closed_form},
      {"WGAN clipping invariant", 60, wgan_clipping},
      {"schedule invariant", 60, schedule},
      {"stability/overfit matrix", 900, stability_matrix},
      {"baseline ordering", 900, baseline_ordering},
      {"metrics reference", 30, metrics_reference},
      {"pipeline smoke", 1200, pipeline_smoke},
  };
  int failed = 0, ran = 0, unexpected = 0;
  for (const auto& c : all) {
    if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = s <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    const bool known = expected.contains(c.name);
    unexpected += !pass && !known;
    std::printf("[%s] %-30s %7.1fs / %4.0fs  %s%s%s\n", pass ? "PASS" : "FAIL", c.name.c_str(), s, c.budget_s,
                o.detail.c_str(), in_time ? "" : "  (over time budget)",
                known ? (pass ? "  (listed as expected failure)" : "  (expected failure)") : "");
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed, %d unexpected failure(s)\n", ran - failed, ran, unexpected);
  return unexpected == 0 ? 0 : 1;
}
