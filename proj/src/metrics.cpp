#include "lfsr/metrics.hpp"

#include "lfsr/errors.hpp"
#include "lfsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace lfsr::metrics {

using nlohmann::json;

namespace {

void require_same(const ImageSlice& a, const ImageSlice& b, const char* what) {
  if (!a.same_dims(b)) throw ShapeError(std::string(what) + ": dims " + a.dims() + " vs " + b.dims());
}

void require_range(double r, const char* what) {
  if (!(r > 0) || !std::isfinite(r)) throw DomainError(std::string(what) + ": data_range must be positive and finite");
}

/// Summed-area table with a zero first row and column.
Eigen::ArrayXXd integral(const Eigen::ArrayXXd& x) {
  Eigen::ArrayXXd s = Eigen::ArrayXXd::Zero(x.rows() + 1, x.cols() + 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) s(i + 1, j + 1) = x(i, j) + s(i, j + 1) + s(i + 1, j) - s(i, j);
  return s;
}

/// Window sums of size w at every valid top-left corner.
Eigen::ArrayXXd box_sums(const Eigen::ArrayXXd& s, int w) {
  const Eigen::Index h = s.rows() - w, v = s.cols() - w;
  return s.bottomRightCorner(h, v) - s.topRightCorner(h, v) - s.bottomLeftCorner(h, v) + s.topLeftCorner(h, v);
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v, double mean) {
  if (std::isinf(mean)) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// JSON cannot hold infinities; they are written as the string "inf".
json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return nullptr;
  return v;
}

double number(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) return j.get<std::string>() == "inf" ? kPsnrIdentical : -kPsnrIdentical;
  return j.get<double>();
}

}  // namespace

double psnr(const ImageSlice& a, const ImageSlice& b, double data_range) {
  require_same(a, b, "psnr");
  require_range(data_range, "psnr");
  const double mse = (a.pixels - b.pixels).square().mean();
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const ImageSlice& a, const ImageSlice& b, double data_range, const SsimOptions& o) {
  require_same(a, b, "ssim");
  require_range(data_range, "ssim");
  const int w = o.window;
  if (w < 1 || a.width() < w || a.height() < w)
    throw ShapeError("ssim: image " + a.dims() + " smaller than the " + std::to_string(w) + "x" + std::to_string(w) +
                     " window");
  // Centre both images on a common offset to limit cancellation in the
  // E[x^2] - E[x]^2 form.
  const double shift = 0.5 * (a.pixels.mean() + b.pixels.mean());
  const Eigen::ArrayXXd x = a.pixels - shift, y = b.pixels - shift;
  const double n = static_cast<double>(w) * w;
  const Eigen::ArrayXXd mx = box_sums(integral(x), w) / n;
  const Eigen::ArrayXXd my = box_sums(integral(y), w) / n;
  const Eigen::ArrayXXd vx = box_sums(integral(x.square()), w) / n - mx.square();
  const Eigen::ArrayXXd vy = box_sums(integral(y.square()), w) / n - my.square();
  const Eigen::ArrayXXd cxy = box_sums(integral(x * y), w) / n - mx * my;
  const double c1 = (o.k1 * data_range) * (o.k1 * data_range);
  const double c2 = (o.k2 * data_range) * (o.k2 * data_range);
  // Variances are shift invariant; the means are not.
  const Eigen::ArrayXXd ux = mx + shift, uy = my + shift;
  const Eigen::ArrayXXd map =
      ((2 * ux * uy + c1) * (2 * cxy + c2)) / ((ux.square() + uy.square() + c1) * (vx + vy + c2));
  return map.mean();
}

double data_range_of(const ImageSlice& reference) {
  const double r = reference.pixels.maxCoeff() - reference.pixels.minCoeff();
  if (!(r > 0)) throw DomainError("data range of a constant reference image is zero");
  return r;
}

ImageSlice bilinear_upsample(const ImageSlice& lr, int factor) {
  if (factor != 2 && factor != 4) throw DomainError("bilinear_upsample: factor must be 2 or 4");
  const int h = lr.height(), w = lr.width(), H = h * factor, W = w * factor;
  auto coord = [](int o, int in, int out) { return out > 1 ? static_cast<double>(o) * (in - 1) / (out - 1) : 0.0; };
  Pixels out(H, W);
  for (int i = 0; i < H; ++i) {
    const double sy = coord(i, h, H);
    const int y0 = std::min(static_cast<int>(sy), h - 1), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int j = 0; j < W; ++j) {
      const double sx = coord(j, w, W);
      const int x0 = std::min(static_cast<int>(sx), w - 1), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      out(i, j) = (1 - fy) * ((1 - fx) * lr.pixels(y0, x0) + fx * lr.pixels(y0, x1)) +
                  fy * ((1 - fx) * lr.pixels(y1, x0) + fx * lr.pixels(y1, x1));
    }
  }
  return lr.with_pixels(std::move(out));
}

// ---------------------------------------------------------------------------

void MethodMetrics::summarize() {
  if (images.empty()) {
    psnr_mean = psnr_std = ssim_mean = ssim_std = 0;
    return;
  }
  std::vector<double> p, s;
  for (const auto& im : images) p.push_back(im.psnr), s.push_back(im.ssim);
  psnr_mean = mean_of(p);
  psnr_std = pop_std(p, psnr_mean);
  ssim_mean = mean_of(s);
  ssim_std = pop_std(s, ssim_mean);
}

MethodMetrics score_method(const std::string& method, const std::vector<ScoredImage>& images,
                           const SsimOptions& options) {
  MethodMetrics m;
  m.method = method;
  for (const auto& im : images) {
    const double range = data_range_of(im.reference);
    m.images.push_back({im.id, psnr(im.output, im.reference, range), ssim(im.output, im.reference, range, options),
                        range});
  }
  m.summarize();
  return m;
}

const MethodMetrics& MetricsReport::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.method == name) return m;
  throw InvalidInputError("report has no method '" + name + "'");
}

void to_json(json& j, const MetricsReport& r) {
  j = {{"averaging", r.averaging}, {"region", r.region}, {"data_range", r.data_range}, {"methods", json::array()}};
  for (const auto& m : r.methods) {
    json images = json::array();
    for (const auto& im : m.images)
      images.push_back({{"id", im.id}, {"psnr", number(im.psnr)}, {"ssim", im.ssim}, {"data_range", im.data_range}});
    j["methods"].push_back({{"method", m.method},
                            {"psnr_mean", number(m.psnr_mean)},
                            {"psnr_std", number(m.psnr_std)},
                            {"ssim_mean", m.ssim_mean},
                            {"ssim_std", m.ssim_std},
                            {"images", images}});
  }
}

void from_json(const json& j, MetricsReport& r) {
  r.averaging = j.at("averaging").get<std::string>();
  r.region = j.value("region", "roi");
  r.data_range = j.value("data_range", r.data_range);
  r.methods.clear();
  for (const auto& m : j.at("methods")) {
    MethodMetrics mm;
    mm.method = m.at("method").get<std::string>();
    for (const auto& im : m.at("images"))
      mm.images.push_back({im.at("id").get<std::string>(), number(im.at("psnr")), im.at("ssim").get<double>(),
                           im.at("data_range").get<double>()});
    mm.summarize();
    r.methods.push_back(std::move(mm));
  }
}

// ---------------------------------------------------------------------------

std::set<char> parse_flags(const std::string& s) {
  std::set<char> out;
  for (char c : s) {
    if (std::find(kFlagAlphabet.begin(), kFlagAlphabet.end(), c) == kFlagAlphabet.end())
      throw InvalidInputError(std::string("unknown quality flag '") + c + "' (expected S, A, U or N)");
    if (!out.insert(c).second) throw InvalidInputError(std::string("duplicate quality flag '") + c + "'");
  }
  return out;
}

std::string flags_string(const std::set<char>& flags) {
  std::string s;
  for (char c : kFlagAlphabet)
    if (flags.contains(c)) s += c;
  return s;
}

void MosRecord::validate() const {
  if (score < 0 || score > 4) throw InvalidInputError("score " + std::to_string(score) + " outside 0..4");
  for (char c : flags)
    if (std::find(kFlagAlphabet.begin(), kFlagAlphabet.end(), c) == kFlagAlphabet.end())
      throw InvalidInputError(std::string("unknown quality flag '") + c + "'");
}

void to_json(json& j, const MosRecord& r) {
  j = {{"image_id", r.image_id}, {"method", r.method},       {"score", r.score},
       {"flags", flags_string(r.flags)}, {"rater", r.rater}, {"timestamp", r.timestamp}};
}

void from_json(const json& j, MosRecord& r) {
  r.image_id = j.at("image_id").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.score = j.at("score").get<int>();
  r.flags = parse_flags(j.value("flags", ""));
  r.rater = j.value("rater", "");
  r.timestamp = j.value("timestamp", "");
}

std::vector<MosSummary> mos_aggregate(const std::vector<MosRecord>& records) {
  if (records.empty()) throw DomainError("mos_aggregate: no records");
  std::map<std::string, std::vector<const MosRecord*>> by;
  for (const auto& r : records) {
    r.validate();
    by[r.method].push_back(&r);
  }
  std::vector<MosSummary> out;
  for (const auto& [method, rs] : by) {
    MosSummary s;
    s.method = method;
    s.n = rs.size();
    for (char c : kFlagAlphabet) s.flags[c] = 0;
    std::vector<double> scores;
    for (const auto* r : rs) {
      scores.push_back(r->score);
      ++s.histogram[static_cast<std::size_t>(r->score)];
      for (char c : r->flags) ++s.flags[c];
    }
    s.mean = mean_of(scores);
    s.std = pop_std(scores, s.mean);
    out.push_back(std::move(s));
  }
  return out;
}

void to_json(json& j, const MosSummary& s) {
  json flags = json::object();
  for (const auto& [c, n] : s.flags) flags[std::string(1, c)] = n;
  j = {{"method", s.method}, {"n", s.n}, {"mean", s.mean}, {"std", s.std}, {"histogram", s.histogram}, {"flags", flags}};
}

namespace {

std::string fmt(const char* f, double a, double b) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string pad(std::string s, std::size_t n) {
  // Width counts code points so the +- sign does not skew columns.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  if (cps < n) s.append(n - cps, ' ');
  return s;
}

}  // namespace

std::string format_table(const std::vector<MosSummary>& mos, const MetricsReport* metrics) {
  std::vector<std::string> methods;
  for (const auto& s : mos) methods.push_back(s.method);
  if (metrics)
    for (const auto& m : metrics->methods)
      if (std::find(methods.begin(), methods.end(), m.method) == methods.end()) methods.push_back(m.method);

  std::ostringstream os;
  if (!mos.empty()) os << "# MOS pooled over raters, population std\n";
  if (metrics) os << "# PSNR/SSIM per slice over ROIs (" << metrics->data_range << "), mean +- population std\n";
  os << pad("Method", 18) << pad("MOS", 16);
  for (const char* l : {"0", "1", "2", "3", "4"}) os << pad(l, 6);
  for (char c : kFlagAlphabet) os << pad(std::string(1, c), 5);
  os << pad("PSNR", 18) << "SSIM\n";
  for (const auto& name : methods) {
    os << pad(name, 18);
    auto s = std::find_if(mos.begin(), mos.end(), [&](const MosSummary& x) { return x.method == name; });
    if (s != mos.end()) {
      os << pad(fmt("%.2f±%.3f", s->mean, s->std), 16);
      for (auto h : s->histogram) os << pad(std::to_string(h), 6);
      for (char c : kFlagAlphabet) os << pad(std::to_string(s->flags.at(c)), 5);
    } else {
      os << pad("-", 16);
      for (int i = 0; i < 5; ++i) os << pad("-", 6);
      for (int i = 0; i < 4; ++i) os << pad("-", 5);
    }
    const MethodMetrics* m = nullptr;
    if (metrics)
      for (const auto& x : metrics->methods)
        if (x.method == name) m = &x;
    if (m && !m->images.empty())
      os << pad(fmt("%.1f±%.2f", m->psnr_mean, m->psnr_std), 18) << fmt("%.3f±%.4f", m->ssim_mean, m->ssim_std);
    else
      os << pad("-", 18) << "-";
    os << "\n";
  }
  return os.str();
}

}  // namespace lfsr::metrics
