#pragma once

// Brute-force reference computations, written as plain loops over
// std::vector so they share no code with the library kernels.

#include <lfsr/tensor.hpp>

#include <cmath>
#include <vector>

namespace lfsr::testing {

struct Grid {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;
  double& at(int a, int b, int y, int x) { return v[((a * c + b) * h + y) * w + x]; }
  double at(int a, int b, int y, int x) const { return v[((a * c + b) * h + y) * w + x]; }
};

inline Grid to_grid(const TensorD& t) {
  const Shape s = t.shape();
  Grid g{s.n, s.c, s.h, s.w, std::vector<double>(static_cast<std::size_t>(t.size()))};
  for (int a = 0; a < s.n; ++a)
    for (int b = 0; b < s.c; ++b)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) g.at(a, b, y, x) = t(a, b, y, x);
  return g;
}

inline double mse_loop(const Grid& a, const Grid& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
  return s / static_cast<double>(a.v.size());
}

/// Zero-padded "same" convolution with odd square kernels, plus bias.
inline Grid conv_same_loop(const Grid& x, const Grid& w, const std::vector<double>& bias) {
  const int k = w.h, p = k / 2;
  Grid y{x.n, w.n, x.h, x.w, std::vector<double>(static_cast<std::size_t>(x.n * w.n * x.h * x.w))};
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < w.n; ++o)
      for (int i = 0; i < x.h; ++i)
        for (int j = 0; j < x.w; ++j) {
          double s = bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < x.c; ++c)
            for (int a = 0; a < k; ++a)
              for (int b = 0; b < k; ++b) {
                const int yy = i + a - p, xx = j + b - p;
                if (yy >= 0 && yy < x.h && xx >= 0 && xx < x.w) s += w.at(o, c, a, b) * x.at(n, c, yy, xx);
              }
          y.at(n, o, i, j) = s;
        }
  return y;
}

inline Grid relu_loop(Grid g) {
  for (auto& v : g.v) v = v > 0 ? v : 0;
  return g;
}

}  // namespace lfsr::testing
