#pragma once

#include <cmath>
#include <map>
#include <string>

#include "gridcast/tensor.hpp"

namespace gridcast {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamMoments {
  Tensor<Scalar> m, v;
};

/// Optimizer state for a named parameter set. Moments are created lazily on
/// the first step that sees a parameter.
template <typename Scalar>
struct AdamState {
  AdamOptions options;
  long step = 0;
  std::map<std::string, AdamMoments<Scalar>> moments;
};

/// In-place Adam update with bias correction for a single tensor.
template <typename Scalar>
void adam_update(Tensor<Scalar>& param, const Tensor<Scalar>& grad, AdamMoments<Scalar>& mom, long step,
                 const AdamOptions& opt) {
  if (grad.shape() != param.shape()) {
    throw ShapeError("adam: gradient " + to_string(grad.shape()) + " does not match parameter " +
                     to_string(param.shape()));
  }
  if (mom.m.shape() != param.shape()) {
    mom.m = Tensor<Scalar>(param.shape());
    mom.v = Tensor<Scalar>(param.shape());
  }
  const auto b1 = static_cast<Scalar>(opt.beta1), b2 = static_cast<Scalar>(opt.beta2);
  mom.m.array() = b1 * mom.m.array() + (Scalar(1) - b1) * grad.array();
  mom.v.array() = b2 * mom.v.array() + (Scalar(1) - b2) * grad.array().square();
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(opt.beta1, static_cast<double>(step)));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(opt.beta2, static_cast<double>(step)));
  param.array() -= static_cast<Scalar>(opt.lr) * (mom.m.array() / c1) /
                   ((mom.v.array() / c2).sqrt() + static_cast<Scalar>(opt.eps));
}

/// One optimizer step over every parameter that has a gradient.
template <typename Scalar>
void adam_step(std::map<std::string, Tensor<Scalar>>& params, const std::map<std::string, Tensor<Scalar>>& grads,
               AdamState<Scalar>& state) {
  ++state.step;
  for (auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    adam_update(p, g->second, state.moments[name], state.step, state.options);
  }
}

}  // namespace gridcast
