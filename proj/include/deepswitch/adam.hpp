#pragma once
// Adam with bias correction, operating on the flat parameter layout of a
// Network. Rejects non-finite gradients instead of silently corrupting
// parameters.

#include <cmath>
#include <string>
#include <vector>

#include "deepswitch/common.hpp"
#include "deepswitch/network.hpp"

namespace deepswitch {

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  long long t = 0;
  std::vector<double> m, v;

  void init(std::size_t n) {
    t = 0;
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

inline void adam_step(std::vector<double>& params, const std::vector<double>& grad,
                      AdamState& state, const AdamParams& opt) {
  if (state.m.size() != params.size()) state.init(params.size());
  if (grad.size() != params.size())
    throw training_error("adam_step: gradient size " + std::to_string(grad.size()) +
                         " does not match parameter size " + std::to_string(params.size()));
  ++state.t;
  double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grad[i];
    if (!is_finite(g))
      throw training_error("adam_step: non-finite gradient at parameter " + std::to_string(i) +
                           " (step " + std::to_string(state.t) + ")");
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    double mhat = state.m[i] / c1;
    double vhat = state.v[i] / c2;
    params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

inline void adam_step(Network& net, const std::vector<double>& grad, AdamState& state,
                      const AdamParams& opt) {
  std::vector<double> flat;
  get_params(net, flat);
  adam_step(flat, grad, state, opt);
  set_params(net, flat);
}

}  // namespace deepswitch
