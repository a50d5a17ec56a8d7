#pragma once

// Differentiable tensor ops. Every backward rule is itself written in terms of
// these ops, so gradients can be differentiated again (needed for the
// gradient penalty, which is a function of an input gradient).

#include "lfsr/autograd.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace lfsr {

struct Conv2dGeometry {
  int stride = 1;
  int pad = 0;
};

namespace kernels {

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out(int in, int k, Conv2dGeometry g) { return (in + 2 * g.pad - k) / g.stride + 1; }

/// Unfolds one sample (C,H,W) into a (C*k*k, Ho*Wo) matrix.
template <typename Scalar>
void im2col(const Scalar* x, int c, int h, int w, int k, Conv2dGeometry g, int ho, int wo,
            RowMat<Scalar>& col) {
  col.resize(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(ho) * wo);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        Scalar* row = col.row((ci * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[oy * wo + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(static_cast<Eigen::Index>(ci) * h + iy) * w + ix]
                                    : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im_add(const RowMat<Scalar>& col, int c, int h, int w, int k, Conv2dGeometry g, int ho,
                int wo, Scalar* x) {
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* row = col.row((ci * k + ky) * k + kx).data();
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= w) continue;
            x[(static_cast<Eigen::Index>(ci) * h + iy) * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Conv2dGeometry g) {
  const Shape xs = x.shape(), ws = w.shape();
  if (ws.c != xs.c || ws.h != ws.w)
    throw ShapeError("conv2d: input " + xs.str() + " incompatible with kernel " + ws.str());
  const int k = ws.h;
  const int ho = conv_out(xs.h, k, g), wo = conv_out(xs.w, k, g);
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: input " + xs.str() + " smaller than kernel");
  Tensor<Scalar> y({xs.n, ws.n, ho, wo});
  Eigen::Map<const RowMat<Scalar>> wm(w.data(), ws.n, ws.sample_size());
  RowMat<Scalar> col;
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.data() + n * xs.sample_size(), xs.c, xs.h, xs.w, k, g, ho, wo, col);
    Eigen::Map<RowMat<Scalar>> yn(y.data() + n * y.shape().sample_size(), ws.n,
                                  static_cast<Eigen::Index>(ho) * wo);
    yn.noalias() = wm * col;
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> conv_input_grad(const Tensor<Scalar>& gy, const Tensor<Scalar>& w, Shape xs,
                               Conv2dGeometry g) {
  const Shape ws = w.shape(), ys = gy.shape();
  const int k = ws.h;
  if (ys.c != ws.n || ys.n != xs.n || ys.h != conv_out(xs.h, k, g) || ys.w != conv_out(xs.w, k, g))
    throw ShapeError("conv2d input grad: " + ys.str() + " vs kernel " + ws.str());
  Tensor<Scalar> dx(xs);
  Eigen::Map<const RowMat<Scalar>> wm(w.data(), ws.n, ws.sample_size());
  RowMat<Scalar> col;
  for (int n = 0; n < xs.n; ++n) {
    Eigen::Map<const RowMat<Scalar>> gn(gy.data() + n * ys.sample_size(), ys.c, ys.plane());
    col.noalias() = wm.transpose() * gn;
    col2im_add(col, xs.c, xs.h, xs.w, k, g, ys.h, ys.w, dx.data() + n * xs.sample_size());
  }
  return dx;
}

template <typename Scalar>
Tensor<Scalar> conv_weight_grad(const Tensor<Scalar>& x, const Tensor<Scalar>& gy, Shape ws,
                                Conv2dGeometry g) {
  const Shape xs = x.shape(), ys = gy.shape();
  const int k = ws.h;
  if (ys.c != ws.n || ys.n != xs.n || xs.c != ws.c || ys.h != conv_out(xs.h, k, g) ||
      ys.w != conv_out(xs.w, k, g))
    throw ShapeError("conv2d weight grad: " + xs.str() + " / " + ys.str() + " vs " + ws.str());
  Tensor<Scalar> dw(ws);
  Eigen::Map<RowMat<Scalar>> dwm(dw.data(), ws.n, ws.sample_size());
  RowMat<Scalar> col;
  for (int n = 0; n < xs.n; ++n) {
    im2col(x.data() + n * xs.sample_size(), xs.c, xs.h, xs.w, k, g, ys.h, ys.w, col);
    Eigen::Map<const RowMat<Scalar>> gn(gy.data() + n * ys.sample_size(), ys.c, ys.plane());
    dwm.noalias() += gn * col.transpose();
  }
  return dw;
}

template <typename Scalar>
Tensor<Scalar> pixel_shuffle(const Tensor<Scalar>& x, int r) {
  const Shape s = x.shape();
  if (s.c % (r * r) != 0) throw ShapeError("pixel_shuffle: channels " + s.str() + " not divisible");
  const int c = s.c / (r * r);
  Tensor<Scalar> y({s.n, c, s.h * r, s.w * r});
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < c; ++co)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int yy = 0; yy < s.h; ++yy)
            for (int xx = 0; xx < s.w; ++xx)
              y(n, co, yy * r + i, xx * r + j) = x(n, co * r * r + i * r + j, yy, xx);
  return y;
}

template <typename Scalar>
Tensor<Scalar> pixel_unshuffle(const Tensor<Scalar>& y, int r) {
  const Shape s = y.shape();
  if (s.h % r != 0 || s.w % r != 0) throw ShapeError("pixel_unshuffle: " + s.str());
  Tensor<Scalar> x({s.n, s.c * r * r, s.h / r, s.w / r});
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < s.c; ++co)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j)
          for (int yy = 0; yy < s.h / r; ++yy)
            for (int xx = 0; xx < s.w / r; ++xx)
              x(n, co * r * r + i * r + j, yy, xx) = y(n, co, yy * r + i, xx * r + j);
  return x;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S>
Var<S> scale(const Var<S>& a, S s);

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<S> v(a.shape(), a.value().array() + b.value().array());
  return Var<S>::make(std::move(v), {a, b},
                      [](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{g, g};
                      },
                      "add");
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<S> v(a.shape(), a.value().array() - b.value().array());
  return Var<S>::make(std::move(v), {a, b},
                      [](const Var<S>& g, const std::vector<bool>& need) {
                        return std::vector<Var<S>>{g, need[1] ? scale(g, S(-1)) : Var<S>()};
                      },
                      "sub");
}

template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<S> v(a.shape(), a.value().array() * b.value().array());
  return Var<S>::make(std::move(v), {a, b},
                      [a, b](const Var<S>& g, const std::vector<bool>& need) {
                        return std::vector<Var<S>>{need[0] ? mul(g, b) : Var<S>(),
                                                   need[1] ? mul(g, a) : Var<S>()};
                      },
                      "mul");
}

/// Multiplies by a constant tensor (no gradient flows into the constant).
template <typename S>
Var<S> mul(const Var<S>& a, const Tensor<S>& c) {
  return mul(a, Var<S>::constant(c));
}

template <typename S>
Var<S> scale(const Var<S>& a, S s) {
  Tensor<S> v(a.shape(), a.value().array() * s);
  return Var<S>::make(std::move(v), {a},
                      [s](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{scale(g, s)};
                      },
                      "scale");
}

template <typename S>
Var<S> add_scalar(const Var<S>& a, S s) {
  Tensor<S> v(a.shape(), a.value().array() + s);
  return Var<S>::make(std::move(v), {a},
                      [](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{g};
                      },
                      "add_scalar");
}

template <typename S>
Var<S> square(const Var<S>& a) {
  return mul(a, a);
}

template <typename S>
Var<S> reciprocal(const Var<S>& a) {
  Tensor<S> v(a.shape(), a.value().array().inverse());
  return Var<S>::make(std::move(v), {a},
                      [a](const Var<S>& g, const std::vector<bool>&) {
                        const Var<S> r = reciprocal(a);
                        return std::vector<Var<S>>{mul(g, scale(mul(r, r), S(-1)))};
                      },
                      "reciprocal");
}

template <typename S>
Var<S> sqrt(const Var<S>& a) {
  Tensor<S> v(a.shape(), a.value().array().sqrt());
  return Var<S>::make(std::move(v), {a},
                      [a](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{mul(g, scale(reciprocal(sqrt(a)), S(0.5)))};
                      },
                      "sqrt");
}

template <typename S>
Var<S> log(const Var<S>& a) {
  Tensor<S> v(a.shape(), a.value().array().log());
  return Var<S>::make(std::move(v), {a},
                      [a](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{mul(g, reciprocal(a))};
                      },
                      "log");
}

template <typename S>
Var<S> sigmoid(const Var<S>& a) {
  Tensor<S> v(a.shape(), (S(1) + (-a.value().array()).exp()).inverse());
  return Var<S>::make(std::move(v), {a},
                      [a](const Var<S>& g, const std::vector<bool>&) {
                        const Var<S> s = sigmoid(a);
                        return std::vector<Var<S>>{mul(g, mul(s, add_scalar(scale(s, S(-1)), S(1))))};
                      },
                      "sigmoid");
}

/// Clamp into [lo, hi]; the gradient is zero where the clamp is active.
template <typename S>
Var<S> clamp(const Var<S>& a, S lo, S hi) {
  Tensor<S> v(a.shape(), a.value().array().max(lo).min(hi));
  Tensor<S> mask(a.shape(),
                 ((a.value().array() >= lo) && (a.value().array() <= hi)).template cast<S>());
  return Var<S>::make(std::move(v), {a},
                      [mask](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{mul(g, mask)};
                      },
                      "clamp");
}

template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  Tensor<S> mask(x.shape(),
                 (x.value().array() > S(0)).select(Tensor<S>::Array::Ones(x.value().size()),
                                                    slope));
  return mul(x, mask);
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts

template <typename S>
Var<S> expand(const Var<S>& scalar, Shape shape);
template <typename S>
Var<S> expand_per_sample(const Var<S>& v, Shape shape);
template <typename S>
Var<S> broadcast_channels(const Var<S>& b, Shape shape);

template <typename S>
Var<S> sum(const Var<S>& a) {
  const Shape s = a.shape();
  return Var<S>::make(Tensor<S>::scalar(a.value().array().sum()), {a},
                      [s](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{expand(g, s)};
                      },
                      "sum");
}

template <typename S>
Var<S> mean(const Var<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

template <typename S>
Var<S> expand(const Var<S>& scalar, Shape shape) {
  return Var<S>::make(Tensor<S>::constant(shape, scalar.item()), {scalar},
                      [](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{sum(g)};
                      },
                      "expand");
}

/// (N,C,H,W) -> (N,1,1,1)
template <typename S>
Var<S> sum_per_sample(const Var<S>& a) {
  const Shape s = a.shape();
  Tensor<S> v({s.n, 1, 1, 1});
  for (int n = 0; n < s.n; ++n)
    v.array()[n] = a.value().array().segment(n * s.sample_size(), s.sample_size()).sum();
  return Var<S>::make(std::move(v), {a},
                      [s](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{expand_per_sample(g, s)};
                      },
                      "sum_per_sample");
}

template <typename S>
Var<S> expand_per_sample(const Var<S>& v, Shape shape) {
  if (v.shape() != Shape{shape.n, 1, 1, 1})
    throw ShapeError("expand_per_sample: " + v.shape().str() + " -> " + shape.str());
  Tensor<S> out(shape);
  for (int n = 0; n < shape.n; ++n)
    out.array().segment(n * shape.sample_size(), shape.sample_size()).setConstant(v.value().array()[n]);
  return Var<S>::make(std::move(out), {v},
                      [](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{sum_per_sample(g)};
                      },
                      "expand_per_sample");
}

/// (N,C,H,W) -> (1,C,1,1)
template <typename S>
Var<S> sum_to_channels(const Var<S>& a) {
  const Shape s = a.shape();
  Tensor<S> v({1, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      v.array()[c] += a.value().array().segment((n * s.c + c) * s.plane(), s.plane()).sum();
  return Var<S>::make(std::move(v), {a},
                      [s](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{broadcast_channels(g, s)};
                      },
                      "sum_to_channels");
}

template <typename S>
Var<S> broadcast_channels(const Var<S>& b, Shape shape) {
  if (b.shape() != Shape{1, shape.c, 1, 1})
    throw ShapeError("broadcast_channels: " + b.shape().str() + " -> " + shape.str());
  Tensor<S> out(shape);
  for (int n = 0; n < shape.n; ++n)
    for (int c = 0; c < shape.c; ++c)
      out.array().segment((n * shape.c + c) * shape.plane(), shape.plane()).setConstant(b.value().array()[c]);
  return Var<S>::make(std::move(out), {b},
                      [](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{sum_to_channels(g)};
                      },
                      "broadcast_channels");
}

template <typename S>
Var<S> add_channel_bias(const Var<S>& x, const Var<S>& bias) {
  return add(x, broadcast_channels(bias, x.shape()));
}

/// Parametric ReLU with one learnable slope per channel.
template <typename S>
Var<S> prelu(const Var<S>& x, const Var<S>& slope) {
  const auto pos = (x.value().array() > S(0)).template cast<S>().eval();
  Tensor<S> pos_mask(x.shape(), pos);
  Tensor<S> neg_mask(x.shape(), S(1) - pos);
  return add(mul(x, pos_mask), mul(mul(x, neg_mask), broadcast_channels(slope, x.shape())));
}

// ---------------------------------------------------------------------------
// Convolution family. The three maps are bilinear and mutually adjoint:
// <gy, conv(x,w)> = <conv_input_grad(gy,w), x> = <conv_weight_grad(x,gy), w>.

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, Conv2dGeometry g);
template <typename S>
Var<S> conv2d_input_grad(const Var<S>& gy, const Var<S>& w, Shape xs, Conv2dGeometry g);
template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& gy, Shape ws, Conv2dGeometry g);

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, Conv2dGeometry g) {
  return Var<S>::make(kernels::conv_forward(x.value(), w.value(), g), {x, w},
                      [x, w, g](const Var<S>& gy, const std::vector<bool>& need) {
                        return std::vector<Var<S>>{
                            need[0] ? conv2d_input_grad(gy, w, x.shape(), g) : Var<S>(),
                            need[1] ? conv2d_weight_grad(x, gy, w.shape(), g) : Var<S>()};
                      },
                      "conv2d");
}

template <typename S>
Var<S> conv2d_input_grad(const Var<S>& gy, const Var<S>& w, Shape xs, Conv2dGeometry g) {
  return Var<S>::make(kernels::conv_input_grad(gy.value(), w.value(), xs, g), {gy, w},
                      [gy, w, g](const Var<S>& up, const std::vector<bool>& need) {
                        return std::vector<Var<S>>{
                            need[0] ? conv2d(up, w, g) : Var<S>(),
                            need[1] ? conv2d_weight_grad(up, gy, w.shape(), g) : Var<S>()};
                      },
                      "conv2d_input_grad");
}

template <typename S>
Var<S> conv2d_weight_grad(const Var<S>& x, const Var<S>& gy, Shape ws, Conv2dGeometry g) {
  return Var<S>::make(kernels::conv_weight_grad(x.value(), gy.value(), ws, g), {x, gy},
                      [x, gy, g](const Var<S>& up, const std::vector<bool>& need) {
                        return std::vector<Var<S>>{
                            need[0] ? conv2d_input_grad(gy, up, x.shape(), g) : Var<S>(),
                            need[1] ? conv2d(x, up, g) : Var<S>()};
                      },
                      "conv2d_weight_grad");
}

template <typename S>
Var<S> pixel_unshuffle(const Var<S>& y, int r);

/// (N, C*r*r, H, W) -> (N, C, H*r, W*r)
template <typename S>
Var<S> pixel_shuffle(const Var<S>& x, int r) {
  return Var<S>::make(kernels::pixel_shuffle(x.value(), r), {x},
                      [r](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{pixel_unshuffle(g, r)};
                      },
                      "pixel_shuffle");
}

template <typename S>
Var<S> pixel_unshuffle(const Var<S>& y, int r) {
  return Var<S>::make(kernels::pixel_unshuffle(y.value(), r), {y},
                      [r](const Var<S>& g, const std::vector<bool>&) {
                        return std::vector<Var<S>>{pixel_shuffle(g, r)};
                      },
                      "pixel_unshuffle");
}

// ---------------------------------------------------------------------------
// Reverse-mode differentiation

/// Gradients of the one-element `output` with respect to `inputs`. With
/// `create_graph` the returned gradients are themselves differentiable.
/// Inputs that `output` does not depend on get zero gradients.
template <typename S>
std::vector<Var<S>> grad(const Var<S>& output, const std::vector<Var<S>>& inputs,
                         bool create_graph = false) {
  using NodeT = detail::Node<S>;
  if (output.value().size() != 1)
    throw ShapeError("grad: output must have one element, got " + output.shape().str());

  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  if (output.requires_grad()) stack.emplace_back(output.node(), 0);
  seen.insert(output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].node();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_set<NodeT*> wanted;
  for (const auto& in : inputs) wanted.insert(in.node());

  GradModeGuard mode(create_graph);
  std::unordered_map<NodeT*, Var<S>> grads;
  grads[output.node()] = Var<S>::constant(Tensor<S>::constant(output.shape(), S(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (!node->backward) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    std::vector<bool> need(node->parents.size());
    for (std::size_t i = 0; i < need.size(); ++i) need[i] = node->parents[i].requires_grad();
    const auto pg = node->backward(found->second, need);
    for (std::size_t i = 0; i < pg.size(); ++i) {
      if (!need[i] || !pg[i].defined()) continue;
      NodeT* p = node->parents[i].node();
      auto [slot, inserted] = grads.try_emplace(p, pg[i]);
      if (!inserted) slot->second = add(slot->second, pg[i]);
    }
    if (!wanted.contains(node)) grads.erase(found);
  }

  std::vector<Var<S>> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = grads.find(in.node());
    out.push_back(it != grads.end() ? it->second
                                    : Var<S>::constant(Tensor<S>::zeros(in.shape())));
  }
  return out;
}

}  // namespace lfsr
