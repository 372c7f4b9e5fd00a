#pragma once
// Out-of-sample estimation: upper bounds from penalized pathwise maxima,
// lower bounds from hardened policies, hedging-error tail risk, hedge ratios
// via the diffusion solve, and switching-region exports. Evaluation paths
// live in their own seed streams so they never overlap training batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "deepswitch/common.hpp"
#include "deepswitch/dual.hpp"
#include "deepswitch/dynamics.hpp"
#include "deepswitch/linalg.hpp"
#include "deepswitch/primal.hpp"
#include "deepswitch/problem.hpp"
#include "deepswitch/simulate.hpp"

namespace deepswitch {

struct BoundReport {
  int n_regimes = 0;
  long long ub_paths = 0;
  long long lb_paths = 0;
  std::uint64_t seed = 0;
  std::vector<double> ub, ub_se, ub_var;  // per start regime
  std::vector<double> lb, lb_se;
  std::vector<double> gap;  // ub - lb
  double max_gap = 0.0;
  std::vector<double> mean_switches;  // hardened-policy switches per path

  // Weak duality at the estimator level: UB_i >= LB_i - slack * SE.
  bool consistent(double slack = 4.0) const {
    for (int i = 0; i < n_regimes; ++i) {
      const double se = std::sqrt(ub_se[i] * ub_se[i] + lb_se[i] * lb_se[i]);
      if (ub[i] < lb[i] - slack * se) return false;
    }
    return true;
  }
};

// Upper bound per start regime: mean over fresh paths of the penalized
// pathwise recursion started at date 0. A null penalty means zero penalty.
inline void accumulate_upper(DualPenalty* pen, const SwitchingProblem& pb, int n_paths,
                             std::uint64_t seed, std::vector<RunningStats>& stats,
                             int shard = 8192, int workers = 1) {
  const int J = pb.n_regimes;
  const int M = pb.grid.n_dates;
  stats.assign(static_cast<std::size_t>(J), {});
  for (int done = 0; done < n_paths; done += shard) {
    const int b = std::min(shard, n_paths - done);
    SimOptions opt;
    opt.workers = workers;
    opt.first_path_index = static_cast<std::uint64_t>(done);
    PathBatch batch = simulate(pb.dynamics, pb.grid, b, seed, opt);
    PayoffTables tab = evaluate_payoffs(pb, batch, workers);
    std::vector<double> xi;
    if (pen)
      xi = batch_increments(*pen, pb, batch, NetMode::eval);
    else
      xi.assign(static_cast<std::size_t>(b) * M * J, 0.0);
    DualValues dv = dual_backward(tab, xi);
    for (int p = 0; p < b; ++p)
      for (int i = 0; i < J; ++i) stats[static_cast<std::size_t>(i)].add(dv.value(p, 0, i));
  }
}

inline void accumulate_lower(SwitchPolicy& pol, const SwitchingProblem& pb, int n_paths,
                             std::uint64_t seed, std::vector<RunningStats>& stats,
                             std::vector<RunningStats>& switch_stats, int shard = 8192,
                             int workers = 1) {
  const int J = pb.n_regimes;
  stats.assign(static_cast<std::size_t>(J), {});
  switch_stats.assign(static_cast<std::size_t>(J), {});
  for (int done = 0; done < n_paths; done += shard) {
    const int b = std::min(shard, n_paths - done);
    SimOptions opt;
    opt.workers = workers;
    opt.first_path_index = static_cast<std::uint64_t>(done);
    PathBatch batch = simulate(pb.dynamics, pb.grid, b, seed, opt);
    PayoffTables tab = evaluate_payoffs(pb, batch, workers);
    PolicyRun run = run_policy(pol, pb, batch, tab);
    for (int p = 0; p < b; ++p)
      for (int i = 0; i < J; ++i) {
        stats[static_cast<std::size_t>(i)].add(run.value(p, i));
        switch_stats[static_cast<std::size_t>(i)].add(
            run.switches[static_cast<std::size_t>(p) * J + i]);
      }
  }
}

// Null penalty evaluates the zero penalty; null policy skips the lower side.
inline BoundReport estimate_bounds(const SwitchingProblem& pb, DualPenalty* pen,
                                   SwitchPolicy* pol, int n_paths, std::uint64_t seed,
                                   int shard = 8192, int workers = 1) {
  if (n_paths < 1) throw config_error("/evaluation/paths: must be >= 1");
  const int J = pb.n_regimes;
  BoundReport rep;
  rep.n_regimes = J;
  rep.seed = seed;
  rep.ub.assign(static_cast<std::size_t>(J), 0.0);
  rep.ub_se = rep.ub_var = rep.lb = rep.lb_se = rep.gap = rep.ub;
  rep.mean_switches = rep.ub;

  std::vector<RunningStats> ub_stats;
  accumulate_upper(pen, pb, n_paths, labeled_seed(seed, "eval-upper"), ub_stats, shard,
                   workers);
  for (int i = 0; i < J; ++i) {
    rep.ub[static_cast<std::size_t>(i)] = ub_stats[static_cast<std::size_t>(i)].mean;
    rep.ub_se[static_cast<std::size_t>(i)] = ub_stats[static_cast<std::size_t>(i)].sem();
    rep.ub_var[static_cast<std::size_t>(i)] = ub_stats[static_cast<std::size_t>(i)].variance();
  }
  rep.ub_paths = ub_stats.empty() ? 0 : ub_stats[0].n;

  if (pol) {
    std::vector<RunningStats> lb_stats, sw_stats;
    accumulate_lower(*pol, pb, n_paths, labeled_seed(seed, "eval-lower"), lb_stats, sw_stats,
                     shard, workers);
    for (int i = 0; i < J; ++i) {
      rep.lb[static_cast<std::size_t>(i)] = lb_stats[static_cast<std::size_t>(i)].mean;
      rep.lb_se[static_cast<std::size_t>(i)] = lb_stats[static_cast<std::size_t>(i)].sem();
      rep.mean_switches[static_cast<std::size_t>(i)] = sw_stats[static_cast<std::size_t>(i)].mean;
    }
    rep.lb_paths = lb_stats.empty() ? 0 : lb_stats[0].n;
  }
  for (int i = 0; i < J; ++i)
    rep.gap[static_cast<std::size_t>(i)] =
        rep.ub[static_cast<std::size_t>(i)] - rep.lb[static_cast<std::size_t>(i)];
  rep.max_gap = *std::max_element(rep.gap.begin(), rep.gap.end());
  return rep;
}

// Order-statistic quantile with linear interpolation between closest ranks.
inline double quantile_sorted(const std::vector<double>& sorted, double alpha) {
  if (sorted.empty()) throw numeric_error("quantile of empty sample");
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = alpha * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= n) return sorted[n - 1];
  const double w = h - static_cast<double>(lo);
  return sorted[lo] + w * (sorted[lo + 1] - sorted[lo]);
}

struct HedgeReport {
  int regime = 0;
  bool shortfall = true;  // H as written; false flips the sign first
  long long n_samples = 0;
  double price = 0.0;  // mean pathwise value, the hedge is centered here
  double var95 = 0.0, var99 = 0.0;
  double cvar95 = 0.0, cvar99 = 0.0;
  std::vector<double> samples;
  std::vector<double> bin_edges;  // n_bins + 1
  std::vector<long long> bin_counts;
};

inline double tail_mean(const std::vector<double>& sorted, double var) {
  double acc = 0.0;
  long long cnt = 0;
  for (auto it = sorted.rbegin(); it != sorted.rend() && *it >= var; ++it) {
    acc += *it;
    ++cnt;
  }
  return cnt > 0 ? acc / static_cast<double>(cnt) : var;
}

// Pathwise residual of the martingale hedge against the adversarial regime
// sequence, centered at the price estimate: H = U_0^i(penalty) - mean.
inline HedgeReport hedging_errors(const SwitchingProblem& pb, DualPenalty* pen, int regime,
                                  int n_paths, std::uint64_t seed, bool shortfall = true,
                                  int n_bins = 50, int shard = 8192, int workers = 1) {
  if (n_paths < 1000)
    throw config_error("/hedge/paths: refusing tail risk metrics on fewer than 1000 samples");
  if (regime < 0 || regime >= pb.n_regimes)
    throw config_error("/hedge/regime: out of range");
  const int J = pb.n_regimes;
  const int M = pb.grid.n_dates;
  HedgeReport rep;
  rep.regime = regime;
  rep.shortfall = shortfall;
  rep.samples.reserve(static_cast<std::size_t>(n_paths));
  const std::uint64_t eseed = labeled_seed(seed, "eval-hedge");
  for (int done = 0; done < n_paths; done += shard) {
    const int b = std::min(shard, n_paths - done);
    SimOptions opt;
    opt.workers = workers;
    opt.first_path_index = static_cast<std::uint64_t>(done);
    PathBatch batch = simulate(pb.dynamics, pb.grid, b, eseed, opt);
    PayoffTables tab = evaluate_payoffs(pb, batch, workers);
    std::vector<double> xi;
    if (pen)
      xi = batch_increments(*pen, pb, batch, NetMode::eval);
    else
      xi.assign(static_cast<std::size_t>(b) * M * J, 0.0);
    DualValues dv = dual_backward(tab, xi);
    for (int p = 0; p < b; ++p) rep.samples.push_back(dv.value(p, 0, regime));
  }
  rep.n_samples = static_cast<long long>(rep.samples.size());
  double mean = 0.0;
  for (double v : rep.samples) mean += v;
  mean /= static_cast<double>(rep.samples.size());
  rep.price = mean;
  for (double& v : rep.samples) v = shortfall ? v - mean : mean - v;

  std::vector<double> sorted(rep.samples);
  std::sort(sorted.begin(), sorted.end());
  rep.var95 = quantile_sorted(sorted, 0.95);
  rep.var99 = quantile_sorted(sorted, 0.99);
  rep.cvar95 = tail_mean(sorted, rep.var95);
  rep.cvar99 = tail_mean(sorted, rep.var99);

  if (n_bins > 0) {
    const double lo = sorted.front(), hi = sorted.back();
    const double width = hi > lo ? (hi - lo) / n_bins : 1.0;
    rep.bin_edges.resize(static_cast<std::size_t>(n_bins) + 1);
    for (int k = 0; k <= n_bins; ++k)
      rep.bin_edges[static_cast<std::size_t>(k)] = lo + width * k;
    rep.bin_counts.assign(static_cast<std::size_t>(n_bins), 0);
    for (double v : rep.samples) {
      int k = static_cast<int>((v - lo) / width);
      k = std::clamp(k, 0, n_bins - 1);
      ++rep.bin_counts[static_cast<std::size_t>(k)];
    }
  }
  return rep;
}

struct DeltaReport {
  int n_states = 0;
  int dim = 0;
  std::vector<double> pi;       // [state][d]; valid where ok
  std::vector<char> ok;         // per state
  std::vector<std::string> err;  // per state, empty when ok
};

// Hedge ratios: solve sigma(t,x) pi = z_n(t,x) per state. The network output
// is taken in eval mode; a singular diffusion marks the state, not the run.
inline DeltaReport delta_ratio(const SwitchingProblem& pb, DualPenalty& pen, int date,
                               int regime, double t, const std::vector<double>& states,
                               int n_states) {
  const int d = pb.dim();
  if (regime < 0 || regime >= pb.n_regimes) throw config_error("/delta/regime: out of range");
  if (date < 0 || date >= pb.grid.n_dates) throw config_error("/delta/date: out of range");
  if (states.size() != static_cast<std::size_t>(n_states) * d)
    throw config_error("/delta/states: size must be n_states * dim");
  DeltaReport rep;
  rep.n_states = n_states;
  rep.dim = d;
  rep.pi.assign(static_cast<std::size_t>(n_states) * d, 0.0);
  rep.ok.assign(static_cast<std::size_t>(n_states), 1);
  rep.err.assign(static_cast<std::size_t>(n_states), {});

  std::vector<double> in(static_cast<std::size_t>(n_states) * (1 + d));
  for (int s = 0; s < n_states; ++s) {
    in[static_cast<std::size_t>(s) * (1 + d)] = t;
    for (int c = 0; c < d; ++c)
      in[static_cast<std::size_t>(s) * (1 + d) + 1 + c] =
          states[static_cast<std::size_t>(s) * d + c];
  }
  std::vector<double> z(static_cast<std::size_t>(n_states) * d);
  forward(pen.znet(date, regime), in.data(), n_states, NetMode::eval, z.data());

  std::vector<double> sig(static_cast<std::size_t>(d) * d), rhs(static_cast<std::size_t>(d));
  for (int s = 0; s < n_states; ++s) {
    diffusion_matrix(pb.dynamics, &states[static_cast<std::size_t>(s) * d], sig.data());
    for (int c = 0; c < d; ++c) rhs[static_cast<std::size_t>(c)] = z[static_cast<std::size_t>(s) * d + c];
    try {
      std::vector<double> m(sig);
      lu_solve(m, rhs, d);
      for (int c = 0; c < d; ++c)
        rep.pi[static_cast<std::size_t>(s) * d + c] = rhs[static_cast<std::size_t>(c)];
    } catch (const numeric_error& e) {
      rep.ok[static_cast<std::size_t>(s)] = 0;
      rep.err[static_cast<std::size_t>(s)] = e.what();
    }
  }
  return rep;
}

struct RegionExport {
  int date = 0;
  int n_states = 0;
  int dim = 0;
  int n_regimes = 0;
  std::vector<double> states;   // [s][d] sampled at the date
  std::vector<int> dual_choice;  // [s][i], -1 when no penalty given
  std::vector<int> primal_choice;  // [s][i], -1 when no policy given
};

// Preferred-regime maps at one date. States are sampled by simulating fresh
// paths to the date; the dual rule replays the penalized recursion on a
// short conditional bundle per state and picks the regime with the best mean
// one-stage value; the primal rule is the hardened policy.
inline RegionExport export_regions(const SwitchingProblem& pb, DualPenalty* pen,
                                   SwitchPolicy* pol, int date, int n_states,
                                   std::uint64_t seed, int cond_paths = 32) {
  if (date < 0 || date >= pb.grid.n_dates) throw config_error("/regions/date: out of range");
  if (n_states < 1) throw config_error("/regions/states: must be >= 1");
  if (cond_paths < 1) throw config_error("/regions/cond_paths: must be >= 1");
  const int d = pb.dim();
  const int J = pb.n_regimes;
  const double t = pb.grid.date_time(date);

  RegionExport rex;
  rex.date = date;
  rex.n_states = n_states;
  rex.dim = d;
  rex.n_regimes = J;
  rex.states.assign(static_cast<std::size_t>(n_states) * d, 0.0);
  rex.dual_choice.assign(static_cast<std::size_t>(n_states) * J, -1);
  rex.primal_choice.assign(static_cast<std::size_t>(n_states) * J, -1);

  const std::uint64_t sseed = labeled_seed(seed, "regions-states");
  if (date == 0) {
    const std::vector<double>& x0 = initial_state(pb.dynamics);
    for (int s = 0; s < n_states; ++s)
      for (int c = 0; c < d; ++c) rex.states[static_cast<std::size_t>(s) * d + c] = x0[c];
  } else {
    // Same step size as the full grid, stopping at the date; shards keep the
    // state buffer bounded.
    TimeGrid head{pb.grid.horizon * date / pb.grid.n_dates, date, pb.grid.substeps};
    const int shard = 4096;
    for (int done = 0; done < n_states; done += shard) {
      const int b = std::min(shard, n_states - done);
      SimOptions opt;
      opt.first_path_index = static_cast<std::uint64_t>(done);
      PathBatch batch = simulate(pb.dynamics, head, b, sseed, opt);
      for (int s = 0; s < b; ++s) {
        const double* x = batch.state_row(s, date * pb.grid.substeps);
        for (int c = 0; c < d; ++c)
          rex.states[(static_cast<std::size_t>(done) + s) * d + c] = x[c];
      }
    }
  }

  if (pen) {
    const int M = pb.grid.n_dates - date;
    std::vector<double> mean_v(static_cast<std::size_t>(J));
    for (int s = 0; s < n_states; ++s) {
      std::vector<double> start(static_cast<std::size_t>(cond_paths) * d);
      for (int p = 0; p < cond_paths; ++p)
        for (int c = 0; c < d; ++c)
          start[static_cast<std::size_t>(p) * d + c] =
              rex.states[static_cast<std::size_t>(s) * d + c];
      PathBatch cond = simulate_conditional(
          pb.dynamics, pb.grid, date, start, cond_paths,
          labeled_seed(seed, "regions-cond-" + std::to_string(s)));
      PayoffTables tab = evaluate_payoffs(pb, cond);
      std::vector<double> xi = batch_increments(*pen, pb, cond, NetMode::eval);
      DualValues dv = dual_backward(tab, xi);
      std::fill(mean_v.begin(), mean_v.end(), 0.0);
      for (int p = 0; p < cond_paths; ++p)
        for (int j = 0; j < J; ++j)
          mean_v[static_cast<std::size_t>(j)] +=
              tab.run(p, 0, j) - xi[(static_cast<std::size_t>(p) * M) * J + j] +
              dv.value(p, 1, j);
      for (int i = 0; i < J; ++i) {
        int best = 0;
        double bv = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < J; ++j) {
          const double v = mean_v[static_cast<std::size_t>(j)] -
                           static_cast<double>(cond_paths) *
                               pb.costs(t, &rex.states[static_cast<std::size_t>(s) * d], d, i, j);
          if (v > bv) {
            bv = v;
            best = j;
          }
        }
        rex.dual_choice[static_cast<std::size_t>(s) * J + i] = best;
      }
    }
  }

  if (pol)
    for (int s = 0; s < n_states; ++s)
      for (int i = 0; i < J; ++i)
        rex.primal_choice[static_cast<std::size_t>(s) * J + i] =
            policy_choice(*pol, date, t, &rex.states[static_cast<std::size_t>(s) * d], i);
  return rex;
}

}  // namespace deepswitch
