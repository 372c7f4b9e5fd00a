#pragma once
// State dynamics: diagonal geometric Brownian motion, affine Ito processes
// under Euler discretization, and exponential OU with Poisson jumps.

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "deepswitch/common.hpp"
#include "deepswitch/linalg.hpp"

namespace deepswitch {

// dX_k = X_k (mu_k dt + sigma_k dW_k); simulated exactly in log space.
struct GbmParams {
  std::vector<double> x0;
  std::vector<double> mu;
  std::vector<double> sigma;  // diagonal volatility
};

// dX = (A_mu X + b_mu) dt + sum_k (A_sig[k] X + b_sig[k]) dW_k; Euler scheme.
struct AffineItoParams {
  std::vector<double> x0;
  std::vector<double> a_mu;               // row-major d x d
  std::vector<double> b_mu;               // d
  std::vector<std::vector<double>> a_sig; // per driver k: row-major d x d
  std::vector<std::vector<double>> b_sig; // per driver k: d
};

// d log X = kappa (mu - log X) dt + Sigma1 dW + Sigma2 dN with componentwise
// Poisson counters N (intensity lambda). The OU part is sampled exactly per
// substep, jointly with the stored Brownian increments.
struct ExpOuJumpParams {
  std::vector<double> x0;
  std::vector<double> kappa;   // diagonal mean-reversion speeds, > 0
  std::vector<double> mu;      // log-space levels
  std::vector<double> sigma1;  // row-major d x d diffusion loading
  std::vector<double> sigma2;  // row-major d x d jump loading
  std::vector<double> lambda;  // jump intensities per component, >= 0
};

using Dynamics = std::variant<GbmParams, AffineItoParams, ExpOuJumpParams>;

inline int state_dim(const Dynamics& dyn) {
  return std::visit([](const auto& p) { return static_cast<int>(p.x0.size()); }, dyn);
}

inline bool has_jumps(const Dynamics& dyn) {
  if (const auto* p = std::get_if<ExpOuJumpParams>(&dyn)) {
    for (double l : p->lambda)
      if (l > 0.0) return true;
  }
  return false;
}

inline const std::vector<double>& initial_state(const Dynamics& dyn) {
  return std::visit([](const auto& p) -> const std::vector<double>& { return p.x0; }, dyn);
}

// Per-component jump intensities; empty when the model has no jump part.
inline std::vector<double> jump_intensities(const Dynamics& dyn) {
  if (const auto* p = std::get_if<ExpOuJumpParams>(&dyn)) {
    if (has_jumps(dyn)) return p->lambda;
  }
  return {};
}

inline void validate_dynamics(const Dynamics& dyn) {
  int d = state_dim(dyn);
  if (d < 1) throw config_error("/dynamics/x0: empty initial state");
  if (const auto* g = std::get_if<GbmParams>(&dyn)) {
    if (static_cast<int>(g->mu.size()) != d || static_cast<int>(g->sigma.size()) != d)
      throw config_error("/dynamics: mu and sigma must match x0 dimension");
    for (double x : g->x0)
      if (!(x > 0.0)) throw config_error("/dynamics/x0: log-space scheme needs x0 > 0");
    for (double s : g->sigma)
      if (s < 0.0) throw config_error("/dynamics/sigma: must be >= 0");
  } else if (const auto* a = std::get_if<AffineItoParams>(&dyn)) {
    std::size_t dd = static_cast<std::size_t>(d) * d;
    if (a->a_mu.size() != dd || static_cast<int>(a->b_mu.size()) != d)
      throw config_error("/dynamics: drift coefficients must be d x d and d");
    if (a->a_sig.size() != static_cast<std::size_t>(d) || a->b_sig.size() != static_cast<std::size_t>(d))
      throw config_error("/dynamics: need one diffusion column per driver");
    for (int k = 0; k < d; ++k)
      if (a->a_sig[k].size() != dd || static_cast<int>(a->b_sig[k].size()) != d)
        throw config_error("/dynamics: diffusion coefficients must be d x d and d");
  } else if (const auto* e = std::get_if<ExpOuJumpParams>(&dyn)) {
    std::size_t dd = static_cast<std::size_t>(d) * d;
    if (static_cast<int>(e->kappa.size()) != d || static_cast<int>(e->mu.size()) != d ||
        e->sigma1.size() != dd || e->sigma2.size() != dd ||
        static_cast<int>(e->lambda.size()) != d)
      throw config_error("/dynamics: exp-OU fields must match x0 dimension");
    for (double x : e->x0)
      if (!(x > 0.0)) throw config_error("/dynamics/x0: log-space scheme needs x0 > 0");
    for (double k : e->kappa)
      if (!(k > 0.0)) throw config_error("/dynamics/kappa: exact OU transition needs kappa > 0");
    for (double l : e->lambda)
      if (l < 0.0) throw config_error("/dynamics/lambda: must be >= 0");
    // The diffusion loading must have full rank for the hedging-ratio solve
    // and for the penalties to span the martingale space.
    std::vector<double> m(e->sigma1);
    std::vector<double> rhs(static_cast<std::size_t>(d), 1.0);
    try {
      lu_solve(m, rhs, d);
    } catch (const numeric_error&) {
      throw config_error("/dynamics/sigma1: must be non-degenerate");
    }
  }
}

// Diffusion matrix sigma(t, x) as a row-major d x d buffer.
inline void diffusion_matrix(const Dynamics& dyn, const double* x, double* out) {
  int d = state_dim(dyn);
  if (const auto* g = std::get_if<GbmParams>(&dyn)) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        out[static_cast<std::size_t>(i) * d + j] = i == j ? x[i] * g->sigma[i] : 0.0;
  } else if (const auto* a = std::get_if<AffineItoParams>(&dyn)) {
    for (int k = 0; k < d; ++k) {
      for (int i = 0; i < d; ++i) {
        double acc = a->b_sig[k][i];
        for (int j = 0; j < d; ++j)
          acc += a->a_sig[k][static_cast<std::size_t>(i) * d + j] * x[j];
        out[static_cast<std::size_t>(i) * d + k] = acc;
      }
    }
  } else {
    const auto& e = std::get<ExpOuJumpParams>(dyn);
    // X = exp(Y), so the diffusion of X_i is X_i (Sigma1 dW)_i.
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        out[static_cast<std::size_t>(i) * d + j] = x[i] * e.sigma1[static_cast<std::size_t>(i) * d + j];
  }
}

}  // namespace deepswitch
