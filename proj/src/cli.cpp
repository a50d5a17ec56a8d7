#include "lfsr/cli.hpp"

#include "lfsr/data.hpp"
#include "lfsr/errors.hpp"
#include "lfsr/mos.hpp"
#include "lfsr/mos_http.hpp"
#include "lfsr/png_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

namespace lfsr::cli {

using nlohmann::json;

// ---------------------------------------------------------------------------

ExitCode exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UserError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
      dynamic_cast<const DomainError*>(&e) || dynamic_cast<const CapabilityError*>(&e) ||
      dynamic_cast<const mos::ServiceError*>(&e))
    return kUserError;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const InvalidInputError*>(&e) || dynamic_cast<const NoLesionError*>(&e) ||
      dynamic_cast<const AlignmentError*>(&e) || dynamic_cast<const DivergenceError*>(&e) ||
      dynamic_cast<const json::exception*>(&e))
    return kDataError;
  return kInternalError;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const json& config) { return fnv1a_hex(config.dump()); }

void to_json(json& j, const RunManifest& m) {
  j = {{"command", m.command},       {"config_path", m.config_path}, {"config_hash", m.config_hash},
       {"output_dir", m.output_dir}, {"seed", m.seed},               {"resolved", m.resolved}};
}

void from_json(const json& j, RunManifest& m) {
  m.command = j.at("command").get<std::string>();
  m.config_path = j.value("config_path", "");
  m.config_hash = j.at("config_hash").get<std::string>();
  m.output_dir = j.at("output_dir").get<std::string>();
  m.seed = j.value("seed", std::uint64_t{0});
  m.resolved = j.value("resolved", json::object());
}

void write_manifest(const fs::path& dir, RunManifest m) {
  fs::create_directories(dir);
  m.output_dir = fs::absolute(dir).lexically_normal().string();
  m.config_hash = config_hash(m.resolved);
  std::ofstream os(dir / "run_manifest.json");
  os << json(m).dump(2) << '\n';
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UserError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw UserError("override '" + assignment + "' has an empty path segment");
    if (!node->is_object()) throw UserError("override '" + assignment + "': '" + key + "' is under a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

namespace {

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UserError(what + " '" + p.string() + "' does not exist");
}

json read_json_file(const fs::path& p, const std::string& what) {
  require_file(p, what);
  std::ifstream is(p);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw UserError(what + " '" + p.string() + "' is not valid JSON: " + e.what());
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

std::string abs_str(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

/// Raw-intensity copy for metrics and files.
ImageSlice raw(const ImageSlice& s) { return ImageSlice(s.denormalized()); }

std::string unique_label(std::string label, std::set<std::string>& used) {
  std::string out = label;
  for (int k = 2; used.contains(out); ++k) out = label + "_" + std::to_string(k);
  used.insert(out);
  return out;
}

std::vector<RoiPair> load_dataset(const fs::path& p) {
  require_file(p, "ROI dataset");
  return data::load_roi_dataset(p);
}

Checkpoint load_checkpoint(const fs::path& p) {
  require_file(p, "checkpoint");
  return Checkpoint::load(p);
}

}  // namespace

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j = read_json_file(path, "config");
  if (!j.is_object()) throw UserError("config '" + path.string() + "' must be a JSON object");
  for (const auto& o : overrides) apply_override(j, o);
  static const std::set<std::string> known{"data", "run_dir", "max_generator_steps", "training"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw UserError("config: unknown key '" + k + "'");

  const fs::path base = fs::absolute(path).parent_path();
  RunConfig rc;
  try {
    const json& d = j.at("data");
    rc.train_data = resolve(base, d.at("train").get<std::string>());
    if (d.contains("val") && !d["val"].is_null()) rc.val_data = resolve(base, d["val"].get<std::string>());
    for (const auto& [k, v] : d.items())
      if (k != "train" && k != "val") throw UserError("config: unknown key 'data." + k + "'");
    rc.run_dir = resolve(base, j.at("run_dir").get<std::string>());
    rc.max_generator_steps = j.value("max_generator_steps", 0L);
    rc.training = j.value("training", json::object()).get<TrainingConfig>();
  } catch (const json::exception& e) {
    throw UserError(std::string("config: ") + e.what());
  }
  if (rc.max_generator_steps < 0) throw UserError("config: max_generator_steps must be >= 0");
  rc.training.validate();
  rc.resolved = {{"data", {{"train", rc.train_data.string()}}},
                 {"run_dir", rc.run_dir.string()},
                 {"max_generator_steps", rc.max_generator_steps},
                 {"training", rc.training}};
  if (rc.val_data) rc.resolved["data"]["val"] = rc.val_data->string();
  return rc;
}

// ---------------------------------------------------------------------------

void cmd_synth_data(const SynthArgs& a, std::ostream& log) {
  if (a.n < 1) throw UserError("--n must be at least 1");
  if (a.size < 16 || a.size % 4 != 0) throw UserError("--size must be a multiple of 4, at least 16");
  const auto phantoms = data::synth_phantom_corpus(a.n, a.size, a.seed);
  std::vector<data::CorpusItem> items;
  char id[32], patient[32];
  for (int i = 0; i < a.n; ++i) {
    std::snprintf(id, sizeof id, "phantom_%04d", i);
    std::snprintf(patient, sizeof patient, "P%03d", i / 2);
    const auto& p = phantoms[static_cast<std::size_t>(i)];
    items.push_back({id, patient, p.hr, std::nullopt, p.mask});
  }
  data::save_corpus(a.out, items);
  write_manifest(a.out, {"synth-data", "", "", "", a.seed, {{"n", a.n}, {"size", a.size}, {"seed", a.seed}}});
  log << "wrote " << a.n << " phantom slices (" << a.size << "x" << a.size << ") to " << a.out.string() << "\n";
}

void cmd_prepare(const PrepareArgs& a, std::ostream& log) {
  require_file(a.corpus / "manifest.json", "corpus manifest");
  if (a.scale != 2 && a.scale != 4) throw UserError("--scale must be 2 or 4");
  if (a.margin < 0) throw UserError("--margin must be >= 0");
  const auto corpus = data::load_corpus(a.corpus);
  const auto [train_items, val_items] = data::split(corpus, a.train_fraction, a.split_seed);
  const data::PrepareOptions opts{a.scale, a.margin, data::DownsampleKernel::box};
  const auto tr = data::prepare_roi_pairs(train_items, opts);
  const auto va = data::prepare_roi_pairs(val_items, opts);
  fs::create_directories(a.out);
  data::save_roi_dataset(a.out / "train.roi", tr.pairs);
  data::save_roi_dataset(a.out / "val.roi", va.pairs);

  json excluded = tr.excluded;
  for (const auto& e : va.excluded) excluded.push_back(e);
  const json summary = {{"train", tr.pairs.size()}, {"val", va.pairs.size()}, {"excluded", excluded}};
  std::ofstream(a.out / "prepare.json") << summary.dump(2) << '\n';
  write_manifest(a.out, {"prepare", "", "", "", a.split_seed,
                         {{"corpus", abs_str(a.corpus)},
                          {"scale", a.scale},
                          {"margin", a.margin},
                          {"train_fraction", a.train_fraction},
                          {"split_seed", a.split_seed}}});
  log << "prepared " << tr.pairs.size() << " training and " << va.pairs.size() << " validation ROI pairs ("
      << excluded.size() << " slices without lesion excluded)\n";
}

TrainResult cmd_train(const TrainArgs& a, std::ostream& log) {
  const RunConfig rc = load_run_config(a.config, a.overrides);
  const auto train_set = load_dataset(rc.train_data);
  const std::vector<RoiPair> val_set = rc.val_data ? load_dataset(*rc.val_data) : std::vector<RoiPair>{};
  if (train_set.empty()) throw UserError("training set '" + rc.train_data.string() + "' is empty");

  TrainOptions opts;
  opts.run_dir = rc.run_dir;
  opts.max_generator_steps = rc.max_generator_steps;
  if (!a.quiet)
    opts.observer = [&log](const StepRecord& r, const Critic<double>*) {
      if (r.kind == "validation" || (r.kind == "generator" && r.generator_step % 25 == 0)) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "[%s] epoch %d gen_step %ld total %.6g\n", r.kind.c_str(), r.epoch,
                      r.generator_step, r.total);
        log << buf;
      }
    };
  log << "training " << to_string(rc.training.variant) << " on " << train_set.size() << " pairs -> "
      << rc.run_dir.string() << "\n";
  TrainResult res = train(rc.training, train_set, val_set, opts);
  std::ofstream(rc.run_dir / "cli_config.json") << rc.resolved.dump(2) << '\n';
  write_manifest(rc.run_dir, {"train", abs_str(a.config), "", "", rc.training.seed, rc.resolved});
  log << "done: " << res.history.of_kind("generator").size() << " generator steps\n";
  return res;
}

void cmd_infer(const InferArgs& a, std::ostream& log) {
  if (a.data.has_value() == a.lr.has_value()) throw UserError("give exactly one of --data or --lr");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Generator<double> g = ck.restore_generator();
  fs::create_directories(a.out);
  json outputs = json::array();
  auto box_json = [](const RoiBox& b) { return json{{"x0", b.x0}, {"y0", b.y0}, {"w", b.w}, {"h", b.h}}; };
  json resolved = {{"checkpoint", abs_str(a.checkpoint)}};

  if (a.data) {
    resolved["data"] = abs_str(*a.data);
    for (const auto& p : load_dataset(*a.data)) {
      const auto r = infer(g, p.lr);
      const std::string file = p.id + "_sr.png";
      png::write16(a.out / file, raw(r.sr).pixels);
      outputs.push_back({{"id", p.id}, {"file", file}, {"box", box_json(p.box)}, {"source", "roi dataset"}});
    }
  } else {
    if (!a.mask) throw UserError("--lr needs --mask (the lesion mask locates the ROI)");
    require_file(*a.lr, "LR slice");
    require_file(*a.mask, "mask");
    const ImageSlice lr = data::normalize(ImageSlice(png::read(*a.lr)));
    const Pixels m = png::read(*a.mask);
    const SegMask mask{(m != 0).cast<std::uint8_t>()};
    const auto r = infer(ck, lr, data::mask_detector(mask, a.margin));
    png::write16(a.out / "sr.png", raw(r.sr).pixels);
    outputs.push_back({{"id", a.lr->stem().string()},
                       {"file", "sr.png"},
                       {"box", box_json(r.box)},
                       {"source", "mask detector, margin " + std::to_string(a.margin)}});
    resolved["lr"] = abs_str(*a.lr);
    resolved["mask"] = abs_str(*a.mask);
    resolved["margin"] = a.margin;
  }
  std::ofstream(a.out / "inference.json")
      << json{{"checkpoint", abs_str(a.checkpoint)}, {"variant", ck.variant}, {"outputs", outputs}}.dump(2) << '\n';
  write_manifest(a.out, {"infer", "", "", "", ck.seed, resolved});
  log << "wrote " << outputs.size() << " super-resolved ROI(s) to " << a.out.string() << "\n";
}

metrics::MetricsReport cmd_evaluate(const EvaluateArgs& a, std::ostream& log) {
  if (a.checkpoints.empty() && a.image_dirs.empty() && !a.bilinear)
    throw UserError("nothing to evaluate: give --checkpoint or --images");
  const auto pairs = load_dataset(a.data);
  if (pairs.empty()) throw UserError("reference dataset is empty");
  metrics::MetricsReport report;
  std::set<std::string> used;
  json resolved = {{"data", abs_str(a.data)}, {"bilinear", a.bilinear}, {"checkpoints", json::array()},
                   {"images", json::array()}};

  for (const auto& path : a.checkpoints) {
    const Checkpoint ck = load_checkpoint(path);
    const Generator<double> g = ck.restore_generator();
    std::vector<metrics::ScoredImage> imgs;
    for (const auto& p : pairs) imgs.push_back({p.id, raw(infer(g, p.lr).sr), raw(p.hr)});
    report.methods.push_back(metrics::score_method(unique_label(ck.variant, used), imgs));
    resolved["checkpoints"].push_back(abs_str(path));
  }
  for (const auto& dir : a.image_dirs) {
    std::vector<metrics::ScoredImage> imgs;
    for (const auto& p : pairs) {
      const fs::path f = dir / (p.id + "_sr.png");
      require_file(f, "SR image");
      const ImageSlice out(png::read(f));
      if (!out.same_dims(p.hr)) throw ParseError(f.string(), "dims " + out.dims() + " differ from reference " + p.hr.dims());
      imgs.push_back({p.id, out, raw(p.hr)});
    }
    report.methods.push_back(metrics::score_method(unique_label(dir.filename().string(), used), imgs));
    resolved["images"].push_back(abs_str(dir));
  }
  if (a.bilinear) {
    std::vector<metrics::ScoredImage> imgs;
    for (const auto& p : pairs) imgs.push_back({p.id, raw(metrics::bilinear_upsample(p.lr, p.scale)), raw(p.hr)});
    report.methods.push_back(metrics::score_method(unique_label("bilinear", used), imgs));
  }
  fs::create_directories(a.out);
  std::ofstream(a.out / "metrics.json") << json(report).dump(2) << '\n';
  write_manifest(a.out, {"evaluate", "", "", "", 0, resolved});
  log << metrics::format_table({}, &report);
  return report;
}

void cmd_mos_prepare(const MosPrepareArgs& a, std::ostream& log) {
  if (a.runs.empty()) throw UserError("give at least one --run directory");
  fs::path data_path;
  if (a.data) {
    data_path = *a.data;
  } else {
    const json cfg = read_json_file(a.runs.front() / "cli_config.json", "run config");
    if (!cfg.contains("data") || !cfg["data"].contains("val"))
      throw UserError("run '" + a.runs.front().string() + "' has no validation set; pass --data");
    data_path = cfg["data"]["val"].get<std::string>();
  }
  const auto pairs = load_dataset(data_path);

  std::vector<mos::Method> methods;
  std::set<std::string> used{mos::kGroundTruthLabel};
  json resolved = {{"data", abs_str(data_path)}, {"runs", json::array()}, {"n_images", a.n_images},
                   {"seed", a.seed},             {"bilinear", a.bilinear}};
  for (const auto& run : a.runs) {
    const Checkpoint ck = load_checkpoint(run / "final.ckpt");
    auto g = std::make_shared<Generator<double>>(ck.restore_generator());
    methods.push_back({unique_label(ck.variant, used), [g](const RoiPair& p) { return infer(*g, p.lr).sr; }});
    resolved["runs"].push_back(abs_str(run));
  }
  if (a.bilinear)
    methods.push_back({unique_label("bilinear", used),
                       [](const RoiPair& p) { return metrics::bilinear_upsample(p.lr, p.scale); }});
  const auto b = mos::prepare_bundle(pairs, methods, a.n_images, a.seed, a.out);
  write_manifest(a.out, {"mos-prepare", "", "", "", a.seed, resolved});
  log << "bundle with " << b.item_ids.size() << " blinded items (" << b.image_ids.size() << " images x "
      << methods.size() + 1 << " methods incl. ground truth) in " << a.out.string() << "\n";
}

std::vector<metrics::MosSummary> cmd_mos_report(const MosReportArgs& a, std::ostream& log) {
  require_file(a.bundle / "key.sealed.json", "sealed key");
  const fs::path log_path = a.log.value_or(a.bundle / "ratings" / "records.jsonl");
  require_file(log_path, "rating log");
  const auto rep = mos::report_log(a.bundle, log_path);
  std::optional<metrics::MetricsReport> m;
  if (a.metrics) m = read_json_file(*a.metrics, "metrics report").get<metrics::MetricsReport>();
  const std::string table = metrics::format_table(rep.summaries, m ? &*m : nullptr);
  log << table;
  if (a.out) {
    fs::create_directories(*a.out);
    std::ofstream(*a.out / "mos_report.json") << mos::to_json(rep).dump(2) << '\n';
    std::ofstream(*a.out / "table.txt") << table;
    json resolved = {{"bundle", abs_str(a.bundle)}, {"log", abs_str(log_path)}};
    if (a.metrics) resolved["metrics"] = abs_str(*a.metrics);
    write_manifest(*a.out, {"mos-report", "", "", "", 0, resolved});
  }
  return rep.summaries;
}

void cmd_mos_serve(const ServeArgs& a, std::ostream& log) {
  require_file(a.bundle / "bundle.json", "bundle index");
  if (a.ui_dir && !fs::is_directory(*a.ui_dir)) throw UserError("--ui-dir '" + a.ui_dir->string() + "' is not a directory");
  mos::Service service(a.bundle, a.state.value_or(a.bundle / "ratings"));
  httplib::Server server;
  mos::install_routes(server, service, a.ui_dir);
  log << "serving " << a.bundle.string() << " on http://" << a.host << ":" << a.port << "\n" << std::flush;
  if (!server.listen(a.host, a.port)) throw UserError("cannot listen on " + a.host + ":" + std::to_string(a.port));
}

// ---------------------------------------------------------------------------

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lesion-focused super-resolution toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "write a synthetic phantom corpus");
  s->add_option("--n", synth.n, "number of slices")->capture_default_str();
  s->add_option("--size", synth.size, "HR side length")->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--out", synth.out)->required();

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "build train/val ROI datasets from a corpus");
  p->add_option("--corpus", prep.corpus)->required();
  p->add_option("--scale", prep.scale)->capture_default_str();
  p->add_option("--margin", prep.margin, "LR pixels around the lesion")->capture_default_str();
  p->add_option("--train-fraction", prep.train_fraction)->capture_default_str();
  p->add_option("--split-seed", prep.split_seed)->capture_default_str();
  p->add_option("--out", prep.out)->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a generator from a run config");
  t->add_option("--config", tr.config)->required();
  t->add_option("--set", tr.overrides, "dotted override, e.g. training.epochs=4");
  t->add_flag("--quiet", tr.quiet);

  InferArgs inf;
  std::string inf_data, inf_lr, inf_mask;
  auto* i = app.add_subcommand("infer", "super-resolve ROIs with a checkpoint");
  i->add_option("--checkpoint", inf.checkpoint)->required();
  i->add_option("--data", inf_data, "ROI dataset");
  i->add_option("--lr", inf_lr, "full LR slice (PNG)");
  i->add_option("--mask", inf_mask, "HR-resolution lesion mask (PNG)");
  i->add_option("--margin", inf.margin)->capture_default_str();
  i->add_option("--out", inf.out)->required();

  EvaluateArgs ev;
  bool no_bilinear = false;
  auto* e = app.add_subcommand("evaluate", "PSNR/SSIM report against a reference ROI dataset");
  e->add_option("--checkpoint", ev.checkpoints, "repeatable");
  e->add_option("--images", ev.image_dirs, "infer --data output directory; repeatable");
  e->add_option("--data", ev.data)->required();
  e->add_flag("--no-bilinear", no_bilinear);
  e->add_option("--out", ev.out)->required();

  MosPrepareArgs mp;
  std::string mp_data;
  auto* m = app.add_subcommand("mos-prepare", "render a blinded rating bundle");
  m->add_option("--run", mp.runs, "run directory; repeatable")->required();
  m->add_option("--data", mp_data, "ROI dataset (default: the first run's validation set)");
  m->add_option("--n-images", mp.n_images)->capture_default_str();
  m->add_option("--seed", mp.seed)->capture_default_str();
  m->add_flag("--bilinear", mp.bilinear, "add the bilinear baseline as a method");
  m->add_option("--out", mp.out)->required();

  MosReportArgs mr;
  std::string mr_log, mr_metrics, mr_out;
  auto* r = app.add_subcommand("mos-report", "aggregate ratings with the sealed key");
  r->add_option("--bundle", mr.bundle)->required();
  r->add_option("--log", mr_log, "rating log (default: <bundle>/ratings/records.jsonl)");
  r->add_option("--metrics", mr_metrics, "evaluate metrics.json to join");
  r->add_option("--out", mr_out);

  ServeArgs sv;
  std::string sv_state, sv_ui;
  auto* v = app.add_subcommand("mos-serve", "serve rating sessions over HTTP");
  v->add_option("--bundle", sv.bundle)->required();
  v->add_option("--state", sv_state, "record log directory (default: <bundle>/ratings)");
  v->add_option("--host", sv.host)->capture_default_str();
  v->add_option("--port", sv.port)->capture_default_str();
  v->add_option("--ui-dir", sv_ui, "static files for the rating UI");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUserError;
  }

  auto opt = [](const std::string& s) { return s.empty() ? std::optional<fs::path>{} : std::optional<fs::path>{s}; };
  try {
    if (s->parsed()) cmd_synth_data(synth, out);
    if (p->parsed()) cmd_prepare(prep, out);
    if (t->parsed()) cmd_train(tr, out);
    if (i->parsed()) {
      inf.data = opt(inf_data), inf.lr = opt(inf_lr), inf.mask = opt(inf_mask);
      cmd_infer(inf, out);
    }
    if (e->parsed()) {
      ev.bilinear = !no_bilinear;
      cmd_evaluate(ev, out);
    }
    if (m->parsed()) {
      mp.data = opt(mp_data);
      cmd_mos_prepare(mp, out);
    }
    if (r->parsed()) {
      mr.log = opt(mr_log), mr.metrics = opt(mr_metrics), mr.out = opt(mr_out);
      cmd_mos_report(mr, out);
    }
    if (v->parsed()) {
      sv.state = opt(sv_state), sv.ui_dir = opt(sv_ui);
      cmd_mos_serve(sv, out);
    }
  } catch (const std::exception& ex) {
    const ExitCode code = exit_code_for(ex);
    err << "error: " << ex.what() << "\n";
    if (code == kInternalError) err << "(internal error; please report)\n";
    return code;
  }
  return kOk;
}

}  // namespace lfsr::cli
