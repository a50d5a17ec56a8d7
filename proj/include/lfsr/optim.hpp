#pragma once

#include "lfsr/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace lfsr {

/// Adaptive moment estimation over a fixed parameter set.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    Scalar lr = Scalar(1e-4);
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar eps = Scalar(1e-8);
  };

  Adam(std::vector<Var<Scalar>> params, Options options)
      : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
      m_.push_back(Tensor<Scalar>::Array::Zero(p.value().size()));
      v_.push_back(Tensor<Scalar>::Array::Zero(p.value().size()));
    }
  }

  void set_lr(Scalar lr) { options_.lr = lr; }
  Scalar lr() const { return options_.lr; }
  long steps() const { return t_; }

  /// `grads[i]` is the gradient for parameter i.
  void step(const std::vector<Var<Scalar>>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam::step: gradient count mismatch");
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(options_.beta1, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(options_.beta2, static_cast<Scalar>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& g = grads[i].value().array();
      m_[i] = options_.beta1 * m_[i] + (Scalar(1) - options_.beta1) * g;
      v_[i] = options_.beta2 * v_[i] + (Scalar(1) - options_.beta2) * g.square();
      params_[i].mutable_value().array() -=
          options_.lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + options_.eps);
    }
  }

 private:
  std::vector<Var<Scalar>> params_;
  Options options_;
  std::vector<typename Tensor<Scalar>::Array> m_, v_;
  long t_ = 0;
};

}  // namespace lfsr
