#include "lfsr/data.hpp"

#include "lfsr/archive.hpp"
#include "lfsr/png_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

namespace lfsr::data {

namespace fs = std::filesystem;
using nlohmann::json;

ImageSlice normalize(const ImageSlice& slice) {
  if (slice.normalized) throw InvalidInputError("normalize: slice is already normalized");
  if (slice.pixels.size() == 0) throw InvalidInputError("normalize: empty slice");
  if (!slice.pixels.allFinite()) throw InvalidInputError("normalize: non-finite pixel values");
  const double mean = slice.pixels.mean();
  const double var = (slice.pixels - mean).square().mean();
  const double sd = std::max(std::sqrt(var), kStdFloor);
  ImageSlice out(Pixels((slice.pixels - mean) / sd));
  out.normalized = true;
  out.norm_mean = mean;
  out.norm_std = sd;
  return out;
}

namespace {

// Exact 2x2 block mean; factor 4 is two passes so that the pyramid identity
// downsample(downsample(x, 2), 2) == downsample(x, 4) holds bit for bit.
Pixels box_half(const Pixels& p) {
  const Eigen::Index h = p.rows() / 2, w = p.cols() / 2;
  Pixels out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      out(y, x) = ((p(2 * y, 2 * x) + p(2 * y, 2 * x + 1)) + (p(2 * y + 1, 2 * x) + p(2 * y + 1, 2 * x + 1))) * 0.25;
  return out;
}

double cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0;
}

// Antialiased bicubic reduction along rows (y) of `p`.
Pixels bicubic_rows(const Pixels& p, int factor) {
  const Eigen::Index in = p.rows(), out_n = in / factor;
  Pixels out = Pixels::Zero(out_n, p.cols());
  for (Eigen::Index o = 0; o < out_n; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * factor - 0.5;
    const auto lo = static_cast<Eigen::Index>(std::floor(center - 2.0 * factor)) + 1;
    const auto hi = static_cast<Eigen::Index>(std::floor(center + 2.0 * factor));
    double total = 0;
    for (Eigen::Index i = lo; i <= hi; ++i) {
      const double wgt = cubic((static_cast<double>(i) - center) / factor);
      const Eigen::Index src = std::clamp<Eigen::Index>(i, 0, in - 1);
      out.row(o) += wgt * p.row(src);
      total += wgt;
    }
    out.row(o) /= total;
  }
  return out;
}

}  // namespace

ImageSlice downsample(const ImageSlice& hr, int factor, DownsampleKernel kernel) {
  if (factor != 2 && factor != 4) throw DomainError("downsample: factor must be 2 or 4, got " + std::to_string(factor));
  if (hr.width() % factor != 0 || hr.height() % factor != 0)
    throw ShapeError("downsample: " + hr.dims() + " not divisible by " + std::to_string(factor));
  Pixels p;
  if (kernel == DownsampleKernel::box) {
    p = box_half(hr.pixels);
    if (factor == 4) p = box_half(p);
  } else {
    Pixels rows = bicubic_rows(hr.pixels, factor);
    Pixels t = rows.transpose();
    p = bicubic_rows(t, factor).transpose();
  }
  return hr.with_pixels(std::move(p));
}

namespace {

// Widens [lo, hi] (inclusive) to `target` length inside [0, limit).
std::pair<int, int> widen(int lo, int hi, int target, int limit) {
  const int extra = target - (hi - lo + 1);
  int start = lo - extra / 2;
  start = std::clamp(start, 0, limit - target);
  return {start, target};
}

}  // namespace

RoiBox roi_from_mask(const SegMask& mask, int scale, int margin) {
  if (scale < 1) throw DomainError("roi_from_mask: scale must be positive");
  if (margin < 0) throw DomainError("roi_from_mask: margin must be non-negative");
  int x_min = mask.width(), x_max = -1, y_min = mask.height(), y_max = -1;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.pixels(y, x) != 0) {
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }
  if (x_max < 0) throw NoLesionError("roi_from_mask: mask has no lesion pixels");

  x_min = std::max(0, x_min - margin);
  y_min = std::max(0, y_min - margin);
  x_max = std::min(mask.width() - 1, x_max + margin);
  y_max = std::min(mask.height() - 1, y_max + margin);

  auto snap = [scale](int len) { return (len + scale - 1) / scale * scale; };
  const int tw = snap(x_max - x_min + 1), th = snap(y_max - y_min + 1);
  if (tw > mask.width() || th > mask.height())
    throw ShapeError("roi_from_mask: snapped box exceeds a " + std::to_string(mask.width()) + "x" +
                     std::to_string(mask.height()) + " image at scale " + std::to_string(scale));
  const auto [x0, w] = widen(x_min, x_max, tw, mask.width());
  const auto [y0, h] = widen(y_min, y_max, th, mask.height());
  return {x0, y0, w, h};
}

RoiBox align_to_grid(const RoiBox& box, int scale, int width, int height) {
  if (width % scale != 0 || height % scale != 0)
    throw ShapeError("align_to_grid: frame not divisible by scale " + std::to_string(scale));
  const int x0 = box.x0 / scale * scale, y0 = box.y0 / scale * scale;
  const int x1 = std::min(width, (box.x0 + box.w + scale - 1) / scale * scale);
  const int y1 = std::min(height, (box.y0 + box.h + scale - 1) / scale * scale);
  return {x0, y0, x1 - x0, y1 - y0};
}

ImageSlice crop(const ImageSlice& slice, const RoiBox& box) {
  if (box.w < 1 || box.h < 1 || box.x0 < 0 || box.y0 < 0 || box.x0 + box.w > slice.width() ||
      box.y0 + box.h > slice.height())
    throw ShapeError("crop: box " + box.str() + " outside " + slice.dims() + " image");
  return slice.with_pixels(slice.pixels.block(box.y0, box.x0, box.h, box.w));
}

RoiPair crop_pair(const SlicePair& pair, const RoiBox& box) {
  const int s = pair.scale;
  if (s != 2 && s != 4) throw DomainError("crop_pair: scale must be 2 or 4");
  if (pair.hr.width() != s * pair.lr.width() || pair.hr.height() != s * pair.lr.height())
    throw ShapeError("crop_pair: HR " + pair.hr.dims() + " is not " + std::to_string(s) + "x LR " + pair.lr.dims());
  if (box.x0 % s || box.y0 % s || box.w % s || box.h % s)
    throw AlignmentError("crop_pair: box " + box.str() + " not aligned to scale " + std::to_string(s));
  RoiPair out;
  out.scale = s;
  out.box = box;
  out.hr = crop(pair.hr, box);
  out.lr = crop(pair.lr, {box.x0 / s, box.y0 / s, box.w / s, box.h / s});
  if (s == 4) out.dr = downsample(out.hr, 2);
  return out;
}

Detector mask_detector(SegMask mask, int margin) {
  return [mask = std::move(mask), margin](const ImageSlice& lr_full, int scale) {
    if (mask.width() != scale * lr_full.width() || mask.height() != scale * lr_full.height())
      throw ShapeError("mask_detector: mask does not match " + std::to_string(scale) + "x LR " + lr_full.dims());
    return align_to_grid(roi_from_mask(mask, scale, margin), scale, mask.width(), mask.height());
  };
}

// ---------------------------------------------------------------------------
// Phantoms

std::vector<PhantomSlice> synth_phantom_corpus(int n, int hr_size, std::uint64_t seed) {
  if (n < 1) throw DomainError("synth_phantom_corpus: n must be >= 1");
  if (hr_size < 16 || hr_size % 4 != 0)
    throw DomainError("synth_phantom_corpus: hr_size must be a multiple of 4 and >= 16");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 25.0);
  const double S = hr_size;

  std::vector<PhantomSlice> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    // Head ellipse.
    const double cx = S / 2 + (u(rng) - 0.5) * 0.06 * S, cy = S / 2 + (u(rng) - 0.5) * 0.06 * S;
    const double ax = S * (0.40 + 0.04 * u(rng)), ay = S * (0.43 + 0.04 * u(rng));
    const double rot = (u(rng) - 0.5) * 0.4;
    const double bg_fx = 0.5 + u(rng), bg_fy = 0.5 + u(rng), bg_phase = two_pi * u(rng);
    const double tissue_f = 1.5 + 1.5 * u(rng), tissue_phase = two_pi * u(rng);
    // Ventricles.
    const double vx = 0.10 * S, vy = 0.06 * S, vsep = 0.09 * S;
    // Lesion: irregular blob inside the brain, away from the border.
    const double r0 = S / 16 + u(rng) * (S / 8 - S / 16);
    const double r_max = r0 * 1.28;
    const double lo = std::max(r_max + 4, cx - 0.45 * ax), hi = std::min(S - r_max - 4, cx + 0.45 * ax);
    const double lcx = lo + u(rng) * std::max(0.0, hi - lo);
    const double lo_y = std::max(r_max + 4, cy - 0.45 * ay), hi_y = std::min(S - r_max - 4, cy + 0.45 * ay);
    const double lcy = lo_y + u(rng) * std::max(0.0, hi_y - lo_y);
    const double p3 = two_pi * u(rng), p5 = two_pi * u(rng);
    const double tk = two_pi / (2.5 + 2.0 * u(rng)), tang = two_pi * u(rng), tphase = two_pi * u(rng);

    ImageSlice hr(Pixels(hr_size, hr_size));
    SegMask mask{MaskPixels::Zero(hr_size, hr_size)};
    for (int y = 0; y < hr_size; ++y)
      for (int x = 0; x < hr_size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double v = 80 + 30 * std::cos(two_pi * bg_fx * px / S + bg_phase) * std::cos(two_pi * bg_fy * py / S);
        const double dx = px - cx, dy = py - cy;
        const double ex = std::cos(rot) * dx + std::sin(rot) * dy, ey = -std::sin(rot) * dx + std::cos(rot) * dy;
        const double rho = std::hypot(ex / ax, ey / ay);
        if (rho < 1.0) {
          if (rho > 0.90) {
            v = 2600;  // skull
          } else {
            v = 1400 + 180 * std::sin(two_pi * tissue_f * ex / S + tissue_phase) * std::cos(two_pi * tissue_f * ey / S);
            for (double side : {-1.0, 1.0})
              if (std::hypot((ex - side * vsep / 2) / vx, ey / vy) < 1.0) v = 550;
          }
        }
        const double lx = px - lcx, ly = py - lcy;
        const double theta = std::atan2(ly, lx);
        const double r_edge = r0 * (1 + 0.18 * std::sin(3 * theta + p3) + 0.10 * std::sin(5 * theta + p5));
        const double r = std::hypot(lx, ly);
        if (r < r_edge) {
          const double t = std::sin(tk * (std::cos(tang) * lx + std::sin(tang) * ly) + tphase) *
                           std::cos(tk * (-std::sin(tang) * lx + std::cos(tang) * ly));
          const double rim = r / r_edge;
          v = 2100 + 500 * t + 600 * rim * rim - 500 * std::max(0.0, 0.35 - rim);
          mask.pixels(y, x) = 1;
        }
        v += noise(rng);
        hr.pixels(y, x) = std::round(std::clamp(v, 0.0, 4095.0));
      }
    if (mask.empty()) throw std::logic_error("synth_phantom_corpus: generated an empty lesion");
    out.push_back({std::move(hr), std::move(mask)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus files

void save_corpus(const fs::path& dir, const std::vector<CorpusItem>& items) {
  fs::create_directories(dir);
  json manifest = {{"format", "lfsr-corpus"}, {"version", 1}, {"items", json::array()}};
  for (const auto& item : items) {
    if (item.hr.normalized) throw InvalidInputError("save_corpus: " + item.id + " holds normalized pixels");
    json entry = {{"id", item.id}, {"patient", item.patient}, {"hr", item.id + "_hr.png"}};
    png::write16(dir / (item.id + "_hr.png"), item.hr.pixels);
    if (item.lr) {
      entry["lr"] = item.id + "_lr.png";
      png::write16(dir / (item.id + "_lr.png"), item.lr->pixels);
    }
    if (item.mask) {
      entry["mask"] = item.id + "_mask.png";
      png::write8(dir / (item.id + "_mask.png"), item.mask->pixels.cast<double>() * 255.0);
    }
    manifest["items"].push_back(entry);
  }
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

std::vector<CorpusItem> load_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw ParseError(manifest_path.string(), "cannot open corpus manifest");
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string(), e.what());
  }
  std::vector<CorpusItem> items;
  std::set<std::string> ids;
  try {
    if (manifest.at("format") != "lfsr-corpus") throw ParseError(manifest_path.string(), "unknown format tag");
    for (const auto& entry : manifest.at("items")) {
      CorpusItem item;
      item.id = entry.at("id").get<std::string>();
      if (!ids.insert(item.id).second) throw ParseError(manifest_path.string(), "duplicate id " + item.id);
      item.patient = entry.value("patient", item.id);
      item.hr = ImageSlice(png::read(dir / entry.at("hr").get<std::string>()));
      if (entry.contains("lr")) item.lr = ImageSlice(png::read(dir / entry.at("lr").get<std::string>()));
      if (entry.contains("mask")) {
        const fs::path mp = dir / entry.at("mask").get<std::string>();
        const Pixels m = png::read(mp);
        if (m.rows() != item.hr.height() || m.cols() != item.hr.width())
          throw ParseError(mp.string(), "mask dims differ from HR " + item.hr.dims());
        item.mask = SegMask{(m != 0).cast<std::uint8_t>()};
      }
      items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string(), e.what());
  }
  return items;
}

std::pair<std::vector<CorpusItem>, std::vector<CorpusItem>> split(const std::vector<CorpusItem>& corpus,
                                                                  double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw DomainError("split: train_fraction must be in [0, 1]");
  std::vector<std::string> patients;
  std::set<std::string> seen;
  for (const auto& item : corpus)
    if (seen.insert(item.patient).second) patients.push_back(item.patient);
  std::sort(patients.begin(), patients.end());
  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(patients.size())));
  const std::set<std::string> train_patients(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_train));

  std::pair<std::vector<CorpusItem>, std::vector<CorpusItem>> out;
  for (const auto& item : corpus) (train_patients.contains(item.patient) ? out.first : out.second).push_back(item);
  return out;
}

// ---------------------------------------------------------------------------
// ROI datasets

PrepareResult prepare_roi_pairs(const std::vector<CorpusItem>& corpus, const PrepareOptions& options) {
  const int s = options.scale;
  if (s != 2 && s != 4) throw ConfigError("prepare: scale must be 2 or 4");
  PrepareResult result;
  for (const auto& item : corpus) {
    if (!item.mask) {
      result.excluded.push_back(item.id);
      continue;
    }
    if (item.hr.width() % s || item.hr.height() % s)
      throw ShapeError("prepare: " + item.id + " HR " + item.hr.dims() + " not divisible by scale");
    const ImageSlice hr = normalize(item.hr);
    ImageSlice lr;
    if (item.lr) {
      if (item.hr.width() != s * item.lr->width() || item.hr.height() != s * item.lr->height())
        throw ShapeError("prepare: " + item.id + " LR " + item.lr->dims() + " does not match HR " + item.hr.dims());
      lr = hr.with_pixels((item.lr->pixels - hr.norm_mean) / hr.norm_std);
    } else {
      lr = downsample(hr, s, options.kernel);
    }
    RoiBox box;
    try {
      box = roi_from_mask(*item.mask, s, options.margin);
    } catch (const NoLesionError&) {
      result.excluded.push_back(item.id);
      continue;
    }
    box = align_to_grid(box, s, hr.width(), hr.height());
    RoiPair pair = crop_pair(SlicePair{lr, hr, s}, box);
    pair.id = item.id;
    result.pairs.push_back(std::move(pair));
  }
  return result;
}

namespace {

std::string key(std::size_t i, const char* part) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu/%s", i, part);
  return buf;
}

Tensor<double> plane_tensor(const ImageSlice& s) { return to_tensor(s); }

ImageSlice slice_from(const Tensor<double>& t, double mean, double sd) {
  ImageSlice s(tensor_plane(t));
  s.normalized = true;
  s.norm_mean = mean;
  s.norm_std = sd;
  return s;
}

}  // namespace

void save_roi_dataset(const fs::path& path, const std::vector<RoiPair>& pairs) {
  TensorArchive ar;
  ar.meta = {{"kind", "roi_dataset"}, {"pairs", json::array()}};
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const RoiPair& p = pairs[i];
    ar.meta["pairs"].push_back({{"id", p.id},
                                {"scale", p.scale},
                                {"box", {p.box.x0, p.box.y0, p.box.w, p.box.h}},
                                {"norm_mean", p.hr.norm_mean},
                                {"norm_std", p.hr.norm_std},
                                {"normalized", p.hr.normalized}});
    ar.tensors.emplace(key(i, "lr"), plane_tensor(p.lr));
    ar.tensors.emplace(key(i, "hr"), plane_tensor(p.hr));
    if (p.dr) ar.tensors.emplace(key(i, "dr"), plane_tensor(*p.dr));
  }
  ar.save(path);
}

std::vector<RoiPair> load_roi_dataset(const fs::path& path) {
  const TensorArchive ar = TensorArchive::load(path);
  std::vector<RoiPair> pairs;
  try {
    if (ar.meta.at("kind") != "roi_dataset") throw ParseError(path.string(), "archive is not an ROI dataset");
    const auto& entries = ar.meta.at("pairs");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const double mean = e.at("norm_mean"), sd = e.at("norm_std");
      RoiPair p;
      p.id = e.at("id");
      p.scale = e.at("scale");
      const auto& b = e.at("box");
      p.box = {b.at(0), b.at(1), b.at(2), b.at(3)};
      p.lr = slice_from(ar.at(key(i, "lr")), mean, sd);
      p.hr = slice_from(ar.at(key(i, "hr")), mean, sd);
      p.lr.normalized = p.hr.normalized = e.value("normalized", true);
      if (ar.tensors.contains(key(i, "dr"))) {
        p.dr = slice_from(ar.at(key(i, "dr")), mean, sd);
        p.dr->normalized = p.hr.normalized;
      }
      if (p.hr.width() != p.scale * p.lr.width() || p.hr.height() != p.scale * p.lr.height())
        throw ParseError(path.string(), "pair " + p.id + " violates the scale invariant");
      pairs.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string(), e.what());
  } catch (const std::out_of_range& e) {
    throw ParseError(path.string(), e.what());
  }
  return pairs;
}

}  // namespace lfsr::data
