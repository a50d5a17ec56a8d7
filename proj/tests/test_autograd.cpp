#include <doctest.h>

#include <lfsr/nn.hpp>
#include <lfsr/ops.hpp>

#include "support/gradcheck.hpp"

using namespace lfsr;
using lfsr::testing::dot;
using lfsr::testing::fd_directional;
using lfsr::testing::random_direction;
using lfsr::testing::random_tensor;
using lfsr::testing::relative_error;

namespace {

// Checks grad(f) against central differences along a random direction.
void check_gradient(const std::function<VarD()>& f, std::vector<VarD> inputs, unsigned seed,
                    double tol = 1e-6) {
  const auto grads = grad(f(), inputs);
  const auto dir = random_direction(inputs, seed);
  const double fd = fd_directional([&] { NoGrad ng; return f().item(); }, inputs, dir);
  CHECK(relative_error(dot(grads, dir), fd) < tol);
}

}  // namespace

TEST_CASE("conv2d forward matches a direct loop") {
  const TensorD x = random_tensor({2, 3, 5, 6}, 1);
  const TensorD w = random_tensor({4, 3, 3, 3}, 2);
  for (Conv2dGeometry g : {Conv2dGeometry{1, 1}, Conv2dGeometry{2, 1}, Conv2dGeometry{1, 0}}) {
    const TensorD y = kernels::conv_forward(x, w, g);
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int oy = 0; oy < y.shape().h; ++oy)
          for (int ox = 0; ox < y.shape().w; ++ox) {
            double s = 0;
            for (int c = 0; c < 3; ++c)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
                  if (iy >= 0 && iy < 5 && ix >= 0 && ix < 6) s += x(n, c, iy, ix) * w(o, c, ky, kx);
                }
            CHECK(y(n, o, oy, ox) == doctest::Approx(s).epsilon(1e-12));
          }
  }
}

TEST_CASE("convolution family is mutually adjoint") {
  const Conv2dGeometry g{2, 1};
  const TensorD x = random_tensor({2, 3, 6, 6}, 3);
  const TensorD w = random_tensor({4, 3, 3, 3}, 4);
  const TensorD gy = random_tensor({2, 4, 3, 3}, 5);
  const double a = (gy.array() * kernels::conv_forward(x, w, g).array()).sum();
  const double b = (x.array() * kernels::conv_input_grad(gy, w, x.shape(), g).array()).sum();
  const double c = (w.array() * kernels::conv_weight_grad(x, gy, w.shape(), g).array()).sum();
  CHECK(b == doctest::Approx(a).epsilon(1e-12));
  CHECK(c == doctest::Approx(a).epsilon(1e-12));
}

TEST_CASE("pixel shuffle round trip and layout") {
  const TensorD x = random_tensor({1, 8, 2, 3}, 6);
  const TensorD y = kernels::pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 2, 4, 6});
  CHECK(y(0, 1, 3, 4) == x(0, 1 * 4 + 1 * 2 + 0, 1, 2));
  CHECK((kernels::pixel_unshuffle(y, 2).array() == x.array()).all());
}

TEST_CASE("first-order gradients match finite differences") {
  auto x = VarD::parameter(random_tensor({2, 3, 6, 6}, 10));
  auto w = VarD::parameter(random_tensor({4, 3, 3, 3}, 11, 0.3));
  auto b = VarD::parameter(random_tensor({1, 4, 1, 1}, 12));
  auto slope = VarD::parameter(TensorD::constant({1, 4, 1, 1}, 0.25));

  SUBCASE("conv + bias + prelu + shuffle") {
    check_gradient(
        [&] {
          auto h = prelu(add_channel_bias(conv2d(x, w, {1, 1}), b), slope);
          return mean(square(pixel_shuffle(h, 2)));
        },
        {x, w, b, slope}, 1);
  }
  SUBCASE("strided conv, sigmoid, log") {
    check_gradient([&] { return sum(log(sigmoid(conv2d(x, w, {2, 1})))); }, {x, w}, 2);
  }
  SUBCASE("per-sample norm") {
    check_gradient([&] { return sum(sqrt(add_scalar(sum_per_sample(square(x)), 1e-3))); }, {x}, 3);
  }
  SUBCASE("leaky relu and reciprocal") {
    check_gradient([&] { return sum(reciprocal(add_scalar(square(leaky_relu(x, 0.2)), 1.0))); },
                   {x}, 4);
  }
}

TEST_CASE("second-order: gradient of an input-gradient norm matches finite differences") {
  auto w1 = VarD::parameter(random_tensor({3, 1, 3, 3}, 20, 0.4));
  auto w2 = VarD::parameter(random_tensor({1, 3, 3, 3}, 21, 0.4));
  auto b1 = VarD::parameter(random_tensor({1, 3, 1, 1}, 22, 0.1));
  const TensorD x0 = random_tensor({2, 1, 6, 6}, 23);

  auto penalty = [&] {
    const bool outer = grad_enabled();
    GradModeGuard on(true);
    auto x = VarD::parameter(x0);
    auto h = leaky_relu(add_channel_bias(conv2d(x, w1, {2, 1}), b1), 0.2);
    auto d = sum_per_sample(conv2d(h, w2, {1, 1}));
    auto gx = grad(sum(d), {x}, outer)[0];
    auto norm = sqrt(sum_per_sample(square(gx)));
    return mean(square(add_scalar(norm, -1.0)));
  };
  check_gradient(penalty, {w1, w2, b1}, 7, 1e-5);
}

TEST_CASE("no-grad mode records nothing") {
  auto x = VarD::parameter(random_tensor({1, 1, 2, 2}, 30));
  NoGrad ng;
  auto y = sum(square(x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("unreachable inputs get zero gradients") {
  auto x = VarD::parameter(random_tensor({1, 1, 2, 2}, 31));
  auto z = VarD::parameter(random_tensor({1, 1, 3, 3}, 32));
  auto g = grad(sum(x), {z});
  CHECK(g[0].shape() == z.shape());
  CHECK(g[0].value().array().abs().maxCoeff() == 0.0);
}
