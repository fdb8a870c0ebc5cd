#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "betagnn/autodiff.hpp"

namespace betagnn {

using ParamList = std::vector<Parameter*>;

/// Scales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw Error("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (Real g : p->grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter* p : params) {
      for (Real& g : p->grad.data()) g *= f;
    }
  }
  return norm;
}

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2 penalty added to the gradient of parameters with decay set.
  double weight_decay = 0.0;
};

/// Moments are matched to parameters by position in the list passed to
/// adam_step, which must stay the same for the lifetime of the state.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

/// Bias-corrected Adam update; zeroes the gradients afterwards. Weight
/// decay is folded into the gradient after any clipping.
inline void adam_step(AdamState& state, std::span<Parameter* const> params) {
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.rows(), p->value.cols());
      state.v.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  if (state.m.size() != params.size()) throw Error("adam_step: parameter list changed size");
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!m.same_shape(p.value)) throw ShapeError("adam_step: moment shape mismatch for " + p.name);
    if (!p.grad.same_shape(p.value)) p.zero_grad();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + (p.decay ? c.weight_decay * p.value[i] : 0.0);
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      p.value[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
    p.zero_grad();
  }
}

}  // namespace betagnn
