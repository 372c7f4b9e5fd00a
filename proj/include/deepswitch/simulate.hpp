#pragma once
// Path simulation. GBM and exp-OU use exact per-substep transitions (no
// discretization bias); affine Ito dynamics use Euler. Each path draws from
// its own (seed, path index) stream, so results are independent of batch
// size, shard layout, and worker count.

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "deepswitch/common.hpp"
#include "deepswitch/dynamics.hpp"
#include "deepswitch/linalg.hpp"
#include "deepswitch/path_batch.hpp"
#include "deepswitch/rng.hpp"
#include "deepswitch/time_grid.hpp"

namespace deepswitch {

struct SimOptions {
  int workers = 1;
  // Global index of the first path; sharded evaluation passes its offset so
  // shard p of many small batches equals the same slice of one big batch.
  std::uint64_t first_path_index = 0;
};

namespace detail {

// Exact one-substep sampler for the OU part of the exp-OU dynamics,
// conditionally on the stored Brownian increments:
//   Y' = mu + e^{-kappa dt} (Y - mu) + A dW + L zeta + Sigma2 dN,
// where A dW is the conditional mean of the OU noise given dW and L L^T its
// conditional covariance. Keeps the stored dW a genuine Brownian increment
// while the state transition stays exact in law.
struct ExpOuStepper {
  int d;
  double dt;
  std::vector<double> decay;      // e^{-kappa dt}
  std::vector<double> cond_mean;  // A, row-major d x d
  std::vector<double> cond_chol;  // L, row-major d x d lower

  ExpOuStepper(const ExpOuJumpParams& p, double dt_in) : d(static_cast<int>(p.x0.size())), dt(dt_in) {
    decay.resize(static_cast<std::size_t>(d));
    cond_mean.assign(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
      decay[i] = std::exp(-p.kappa[i] * dt);
      double scale = -std::expm1(-p.kappa[i] * dt) / (p.kappa[i] * dt);
      for (int j = 0; j < d; ++j)
        cond_mean[static_cast<std::size_t>(i) * d + j] =
            p.sigma1[static_cast<std::size_t>(i) * d + j] * scale;
    }
    for (int i = 0; i < d; ++i) {
      for (int l = 0; l < d; ++l) {
        double s1s1 = 0.0;
        for (int j = 0; j < d; ++j)
          s1s1 += p.sigma1[static_cast<std::size_t>(i) * d + j] *
                  p.sigma1[static_cast<std::size_t>(l) * d + j];
        double kk = p.kappa[i] + p.kappa[l];
        cov[static_cast<std::size_t>(i) * d + l] = s1s1 * (-std::expm1(-kk * dt)) / kk;
        double am = 0.0;
        for (int j = 0; j < d; ++j)
          am += cond_mean[static_cast<std::size_t>(i) * d + j] *
                cond_mean[static_cast<std::size_t>(l) * d + j];
        cov[static_cast<std::size_t>(i) * d + l] -= dt * am;
      }
    }
    cholesky_lower(cov, d);
    cond_chol = std::move(cov);
  }
};

}  // namespace detail

// Simulates n_paths from the given states at intervention date start_date
// out to the horizon. start_states holds either one row (broadcast) or
// n_paths rows, each of the state dimension.
inline PathBatch simulate_conditional(const Dynamics& dyn, const TimeGrid& grid, int start_date,
                                      const std::vector<double>& start_states, int n_paths,
                                      std::uint64_t seed, const SimOptions& opt = {}) {
  grid.validate();
  validate_dynamics(dyn);
  int d = state_dim(dyn);
  if (start_date < 0 || start_date > grid.n_dates)
    throw config_error("simulate_conditional: start_date out of range");
  if (n_paths < 1) throw config_error("simulate_conditional: need n_paths >= 1");
  bool broadcast = start_states.size() == static_cast<std::size_t>(d);
  if (!broadcast && start_states.size() != static_cast<std::size_t>(n_paths) * d)
    throw config_error("simulate_conditional: start_states must hold 1 or n_paths rows");

  PathBatch pb;
  pb.grid = grid;
  pb.n_paths = n_paths;
  pb.dim = d;
  pb.start_step = grid.date_step(start_date);
  pb.n_steps = grid.total_steps() - pb.start_step;
  pb.seed = seed;
  bool jumps = has_jumps(dyn);
  bool is_expou = std::holds_alternative<ExpOuJumpParams>(dyn);

  std::size_t n_states = static_cast<std::size_t>(n_paths) * (pb.n_steps + 1) * d;
  std::size_t n_incr = static_cast<std::size_t>(n_paths) * pb.n_steps * d;
  check_allocation((n_states + n_incr * (is_expou && jumps ? 2 : 1)) * sizeof(double),
                   "simulate_conditional");
  pb.states.resize(n_states);
  pb.dw.resize(n_incr);
  if (is_expou && jumps) pb.dn.assign(n_incr, 0.0);

  double dt = grid.dt();
  double sq_dt = std::sqrt(dt);

  const auto* gbm = std::get_if<GbmParams>(&dyn);
  const auto* aff = std::get_if<AffineItoParams>(&dyn);
  const auto* eou = std::get_if<ExpOuJumpParams>(&dyn);

  // Per-substep constants.
  std::vector<double> gbm_drift;
  if (gbm) {
    gbm_drift.resize(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k)
      gbm_drift[k] = (gbm->mu[k] - 0.5 * gbm->sigma[k] * gbm->sigma[k]) * dt;
  }
  detail::ExpOuStepper stepper = eou ? detail::ExpOuStepper(*eou, dt)
                                     : detail::ExpOuStepper(
                                           ExpOuJumpParams{{1.0}, {1.0}, {0.0}, {1.0}, {0.0}, {0.0}}, dt);

  parallel_for(n_paths, opt.workers, [&](std::int64_t begin, std::int64_t end, int) {
    std::vector<double> y(static_cast<std::size_t>(d));       // log-state or work buffer
    std::vector<double> drift(static_cast<std::size_t>(d));
    std::vector<double> zeta(static_cast<std::size_t>(d));
    std::vector<double> noise(static_cast<std::size_t>(d));
    std::vector<double> counts(static_cast<std::size_t>(d));
    for (std::int64_t p = begin; p < end; ++p) {
      PathRng rng(seed, opt.first_path_index + static_cast<std::uint64_t>(p));
      double* row0 = pb.states.data() + (static_cast<std::size_t>(p) * (pb.n_steps + 1)) * d;
      const double* init = broadcast ? start_states.data()
                                     : start_states.data() + static_cast<std::size_t>(p) * d;
      for (int k = 0; k < d; ++k) row0[k] = init[k];
      if (eou)
        for (int k = 0; k < d; ++k) y[k] = std::log(init[k]);

      for (int s = 0; s < pb.n_steps; ++s) {
        const double* xs = row0 + static_cast<std::size_t>(s) * d;
        double* xn = row0 + static_cast<std::size_t>(s + 1) * d;
        double* dwr = pb.dw.data() + (static_cast<std::size_t>(p) * pb.n_steps + s) * d;
        for (int k = 0; k < d; ++k) dwr[k] = sq_dt * rng.normal();

        if (gbm) {
          for (int k = 0; k < d; ++k)
            xn[k] = xs[k] * std::exp(gbm_drift[k] + gbm->sigma[k] * dwr[k]);
        } else if (aff) {
          for (int i = 0; i < d; ++i) {
            double acc = aff->b_mu[i];
            for (int j = 0; j < d; ++j)
              acc += aff->a_mu[static_cast<std::size_t>(i) * d + j] * xs[j];
            drift[i] = acc;
          }
          for (int i = 0; i < d; ++i) xn[i] = xs[i] + drift[i] * dt;
          for (int k = 0; k < d; ++k) {
            const double* ak = aff->a_sig[static_cast<std::size_t>(k)].data();
            const double* bk = aff->b_sig[static_cast<std::size_t>(k)].data();
            for (int i = 0; i < d; ++i) {
              double col = bk[i];
              for (int j = 0; j < d; ++j) col += ak[static_cast<std::size_t>(i) * d + j] * xs[j];
              xn[i] += col * dwr[k];
            }
          }
        } else {
          for (int k = 0; k < d; ++k) zeta[k] = rng.normal();
          for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) {
              acc += stepper.cond_mean[static_cast<std::size_t>(i) * d + j] * dwr[j];
              if (j <= i) acc += stepper.cond_chol[static_cast<std::size_t>(i) * d + j] * zeta[j];
            }
            noise[i] = acc;
          }
          double* dnr = pb.dn.empty()
                            ? nullptr
                            : pb.dn.data() + (static_cast<std::size_t>(p) * pb.n_steps + s) * d;
          for (int k = 0; k < d; ++k) {
            long cnt = eou->lambda[k] > 0.0 ? rng.poisson(eou->lambda[k] * dt) : 0;
            if (dnr) dnr[k] = static_cast<double>(cnt);
            counts[k] = static_cast<double>(cnt);
          }
          for (int i = 0; i < d; ++i) {
            double jump = 0.0;
            for (int j = 0; j < d; ++j)
              jump += eou->sigma2[static_cast<std::size_t>(i) * d + j] * counts[j];
            y[i] = eou->mu[i] + stepper.decay[i] * (y[i] - eou->mu[i]) + noise[i] + jump;
            xn[i] = std::exp(y[i]);
          }
        }
        for (int k = 0; k < d; ++k)
          if (!is_finite(xn[k]))
            throw numeric_error("simulate: non-finite state at path " + std::to_string(p) +
                                ", substep " + std::to_string(pb.start_step + s) +
                                ", component " + std::to_string(k));
      }
    }
  });
  return pb;
}

inline PathBatch simulate(const Dynamics& dyn, const TimeGrid& grid, int n_paths,
                          std::uint64_t seed, const SimOptions& opt = {}) {
  return simulate_conditional(dyn, grid, 0, initial_state(dyn), n_paths, seed, opt);
}

}  // namespace deepswitch
