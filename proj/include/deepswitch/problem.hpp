#pragma once
// Switching problem definition: regimes, running/terminal payoffs, switching
// costs, reference regime and training baseline, plus precomputed per-path
// payoff tables used by the dual and primal solvers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "deepswitch/common.hpp"
#include "deepswitch/dynamics.hpp"
#include "deepswitch/expr.hpp"
#include "deepswitch/path_batch.hpp"
#include "deepswitch/simulate.hpp"
#include "deepswitch/time_grid.hpp"

namespace deepswitch {

// Switching costs l_ij(t,x). The diagonal is identically zero by construction.
// Constant matrices get a compact fast path in the payoff tables.
struct CostModel {
  int n_regimes = 1;
  bool constant = true;
  std::vector<double> matrix;   // [J][J] row-major when constant
  std::vector<FieldFn> fields;  // [J][J] flattened when state-dependent

  static CostModel from_matrix(int n_regimes, std::vector<double> m) {
    CostModel c;
    c.n_regimes = n_regimes;
    c.constant = true;
    c.matrix = std::move(m);
    if (static_cast<int>(c.matrix.size()) != n_regimes * n_regimes)
      throw config_error("/costs/matrix: expected " + std::to_string(n_regimes * n_regimes) +
                         " entries");
    for (int i = 0; i < n_regimes; ++i)
      if (c.matrix[i * n_regimes + i] != 0.0)
        throw config_error("/costs/matrix: diagonal entry " + std::to_string(i + 1) +
                           " must be zero");
    return c;
  }

  static CostModel from_fields(int n_regimes, std::vector<FieldFn> f) {
    CostModel c;
    c.n_regimes = n_regimes;
    c.constant = false;
    c.fields = std::move(f);
    if (static_cast<int>(c.fields.size()) != n_regimes * n_regimes)
      throw config_error("/costs/fields: expected " + std::to_string(n_regimes * n_regimes) +
                         " entries");
    return c;
  }

  // Uniform off-diagonal cost given by one field.
  static CostModel uniform_field(int n_regimes, const FieldFn& f) {
    std::vector<FieldFn> fields(static_cast<std::size_t>(n_regimes) * n_regimes);
    for (int i = 0; i < n_regimes; ++i)
      for (int j = 0; j < n_regimes; ++j)
        fields[static_cast<std::size_t>(i) * n_regimes + j] = f;
    return from_fields(n_regimes, std::move(fields));
  }

  double operator()(double t, const double* x, int dim, int i, int j) const {
    if (i == j) return 0.0;
    const std::size_t idx = static_cast<std::size_t>(i) * n_regimes + j;
    return constant ? matrix[idx] : fields[idx](t, x, dim);
  }
};

// Training baseline eta_n for the reference regime. A hyperparameter of the
// L2 surrogate loss, not part of the problem value.
struct BaselineSpec {
  enum class Kind { zero, linear_in_n, constant, cost_moment, field };
  Kind kind = Kind::zero;
  double rate = 0.45;    // linear_in_n: rate*(n - N)
  double value = 0.0;    // constant
  double cost_slope = 0.01;
  double cost_offset = 0.001;
  double moment_scale = std::exp(0.02);
  double moment_floor = 6.0;
  FieldFn field;  // field: evaluated at (t_n, x)

  static BaselineSpec zero() { return BaselineSpec{}; }
  static BaselineSpec linear(double rate) {
    BaselineSpec b;
    b.kind = Kind::linear_in_n;
    b.rate = rate;
    return b;
  }
  static BaselineSpec constant_value(double v) {
    BaselineSpec b;
    b.kind = Kind::constant;
    b.value = v;
    return b;
  }
  static BaselineSpec cost_moment() {
    BaselineSpec b;
    b.kind = Kind::cost_moment;
    return b;
  }
  static BaselineSpec from_field(FieldFn f) {
    BaselineSpec b;
    b.kind = Kind::field;
    b.field = std::move(f);
    return b;
  }
};

// eta_n at date n given the state there. cost_moment uses a conditional
// moment bound on the mean of the non-first components: a per-stage budget
// of cost_slope*E + cost_offset + dt covering one switch plus running loss,
// scaled by the number of remaining stages.
inline double baseline_value(const BaselineSpec& b, const TimeGrid& grid, int n, const double* x,
                             int dim) {
  const double stages = static_cast<double>(n - grid.n_dates);
  switch (b.kind) {
    case BaselineSpec::Kind::zero: return 0.0;
    case BaselineSpec::Kind::linear_in_n: return b.rate * stages;
    case BaselineSpec::Kind::constant: return b.value;
    case BaselineSpec::Kind::cost_moment: {
      if (dim < 2)
        throw config_error("/baseline: cost_moment baseline needs state dimension >= 2");
      double mean_rest = 0.0;
      for (int k = 1; k < dim; ++k) mean_rest += x[k];
      mean_rest /= static_cast<double>(dim - 1);
      const double moment = b.moment_scale * std::max(mean_rest, b.moment_floor);
      const double per_stage =
          b.cost_slope * moment + b.cost_offset + grid.horizon / grid.n_dates;
      return stages * per_stage;
    }
    case BaselineSpec::Kind::field: return b.field(grid.date_time(n), x, dim);
  }
  return 0.0;
}

struct SwitchingProblem {
  std::string name;
  TimeGrid grid;
  Dynamics dynamics;
  int n_regimes = 1;
  std::vector<FieldFn> running;   // f^i(t,x), one per regime
  std::vector<FieldFn> terminal;  // Phi^i(x), one per regime
  CostModel costs;
  int ref_regime = 0;  // i0, 0-based
  BaselineSpec baseline;

  int dim() const { return state_dim(dynamics); }
  bool jumps() const { return has_jumps(dynamics); }

  void validate() const {
    grid.validate();
    validate_dynamics(dynamics);
    if (n_regimes < 1) throw config_error("/regimes: need at least one regime");
    if (static_cast<int>(running.size()) != n_regimes)
      throw config_error("/running: expected " + std::to_string(n_regimes) + " payoff fields");
    if (static_cast<int>(terminal.size()) != n_regimes)
      throw config_error("/terminal: expected " + std::to_string(n_regimes) + " payoff fields");
    if (costs.n_regimes != n_regimes) throw config_error("/costs: regime count mismatch");
    if (ref_regime < 0 || ref_regime >= n_regimes)
      throw config_error("/ref_regime: out of range");
  }
};

// Numeric check of the triangular condition l_ij + l_jk > l_ik (i != j,
// j != k) on sampled states. Equality (e.g. costs proportional to |i-j| on
// monotone triples) is reported separately from genuine violations; solvers
// proceed on equality with a warning since double switches are then merely
// value-neutral, not profitable.
struct TriangleTriple {
  int i, j, k;
  double slack;
};

struct TriangularReport {
  double min_slack = 0.0;
  bool strict = true;                     // min slack > tolerance
  std::vector<TriangleTriple> equal;      // |slack| <= tolerance, deduped by (i,j,k)
  std::vector<TriangleTriple> violating;  // slack < -tolerance, worst per (i,j,k)
  int n_states = 0;
};

inline TriangularReport validate_triangular(const SwitchingProblem& problem, int n_paths = 64,
                                            std::uint64_t seed = 1, double tol = 1e-12) {
  const int J = problem.n_regimes;
  const int d = problem.dim();
  TriangularReport report;
  if (J < 2) return report;  // no triples with i != j, j != k

  // Sample date-grid states with one substep per date; the check only needs
  // representative states, not the integration subgrid.
  TimeGrid coarse{problem.grid.horizon, problem.grid.n_dates, 1};
  PathBatch batch = simulate(problem.dynamics, coarse, n_paths, seed);

  std::vector<double> worst(static_cast<std::size_t>(J) * J * J,
                            std::numeric_limits<double>::infinity());
  report.min_slack = std::numeric_limits<double>::infinity();
  std::vector<double> l(static_cast<std::size_t>(J) * J);
  for (int p = 0; p < n_paths; ++p) {
    for (int n = 0; n < problem.grid.n_dates; ++n) {
      const double t = coarse.date_time(n);
      const double* x = batch.state_row(p, n);
      for (int i = 0; i < J; ++i)
        for (int j = 0; j < J; ++j) l[static_cast<std::size_t>(i) * J + j] = problem.costs(t, x, d, i, j);
      for (int i = 0; i < J; ++i)
        for (int j = 0; j < J; ++j) {
          if (j == i) continue;
          for (int k = 0; k < J; ++k) {
            if (k == j) continue;
            const double slack = l[static_cast<std::size_t>(i) * J + j] +
                                 l[static_cast<std::size_t>(j) * J + k] -
                                 l[static_cast<std::size_t>(i) * J + k];
            report.min_slack = std::min(report.min_slack, slack);
            auto& w = worst[(static_cast<std::size_t>(i) * J + j) * J + k];
            w = std::min(w, slack);
          }
        }
      ++report.n_states;
    }
  }
  for (int i = 0; i < J; ++i)
    for (int j = 0; j < J; ++j)
      for (int k = 0; k < J; ++k) {
        const double w = worst[(static_cast<std::size_t>(i) * J + j) * J + k];
        if (!std::isfinite(w)) continue;
        if (w < -tol)
          report.violating.push_back({i, j, k, w});
        else if (w <= tol)
          report.equal.push_back({i, j, k, w});
      }
  report.strict = report.violating.empty() && report.equal.empty();
  if (!std::isfinite(report.min_slack)) report.min_slack = 0.0;
  return report;
}

// Per-path payoff tables over the dates covered by a batch:
//   running[p][m][j]  left-endpoint quadrature of f^j over stage start+m
//   cost(p,m,i,j)     l_ij at the date start+m (compact matrix if constant)
//   terminal[p][i]    Phi^i at the final state row
// Terminal entries are meaningful only when the batch ends at the horizon.
struct PayoffTables {
  int n_paths = 0;
  int n_stages = 0;  // dates covered by running/cost entries
  int n_regimes = 0;
  int start_date = 0;
  bool constant_costs = true;
  std::vector<double> running;      // [p][m][j]
  std::vector<double> cost_matrix;  // [J][J] when constant
  std::vector<double> cost_table;   // [p][m][i][j] otherwise
  std::vector<double> terminal;     // [p][i]

  double run(int p, int m, int j) const {
    return running[(static_cast<std::size_t>(p) * n_stages + m) * n_regimes + j];
  }
  double cost(int p, int m, int i, int j) const {
    if (i == j) return 0.0;
    if (constant_costs) return cost_matrix[static_cast<std::size_t>(i) * n_regimes + j];
    return cost_table[((static_cast<std::size_t>(p) * n_stages + m) * n_regimes + i) *
                          n_regimes +
                      j];
  }
  double term(int p, int i) const {
    return terminal[static_cast<std::size_t>(p) * n_regimes + i];
  }
};

inline PayoffTables evaluate_payoffs(const SwitchingProblem& problem, const PathBatch& batch,
                                     int workers = 1) {
  const int J = problem.n_regimes;
  const int d = batch.dim;
  const int K = batch.grid.substeps;
  if (d != problem.dim()) throw config_error("payoff tables: state dimension mismatch");
  if (batch.n_steps % K != 0)
    throw config_error("payoff tables: batch does not cover whole stages");
  if (batch.start_step % K != 0)
    throw config_error("payoff tables: batch does not start on a date");

  PayoffTables tab;
  tab.n_paths = batch.n_paths;
  tab.n_stages = batch.n_steps / K;
  tab.n_regimes = J;
  tab.start_date = batch.start_step / K;
  tab.constant_costs = problem.costs.constant;
  const double dt = batch.grid.dt();

  check_allocation(sizeof(double) * static_cast<std::size_t>(tab.n_paths) *
                       (static_cast<std::size_t>(tab.n_stages) * J + J),
                   "payoff tables");
  tab.running.assign(
      static_cast<std::size_t>(tab.n_paths) * tab.n_stages * J, 0.0);
  tab.terminal.assign(static_cast<std::size_t>(tab.n_paths) * J, 0.0);
  if (tab.constant_costs) {
    tab.cost_matrix = problem.costs.matrix;
  } else {
    check_allocation(sizeof(double) * static_cast<std::size_t>(tab.n_paths) * tab.n_stages * J * J,
                     "switching cost table");
    tab.cost_table.assign(
        static_cast<std::size_t>(tab.n_paths) * tab.n_stages * J * J, 0.0);
  }

  parallel_for(tab.n_paths, workers, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t p = begin; p < end; ++p) {
      for (int m = 0; m < tab.n_stages; ++m) {
        double* frow = &tab.running[(p * tab.n_stages + m) * J];
        for (int k = 0; k < K; ++k) {
          const int s = m * K + k;
          const double t = batch.time_of_local_step(s);
          const double* x = batch.state_row(static_cast<int>(p), s);
          for (int j = 0; j < J; ++j) frow[j] += problem.running[j](t, x, d) * dt;
        }
        if (!tab.constant_costs) {
          const double tn = batch.time_of_local_step(m * K);
          const double* xn = batch.state_row(static_cast<int>(p), m * K);
          double* crow = &tab.cost_table[((p * tab.n_stages + m) * J) * J];
          for (int i = 0; i < J; ++i)
            for (int j = 0; j < J; ++j)
              crow[static_cast<std::size_t>(i) * J + j] =
                  i == j ? 0.0 : problem.costs(tn, xn, d, i, j);
        }
      }
      const double* xend = batch.state_row(static_cast<int>(p), batch.n_steps);
      for (int i = 0; i < J; ++i) tab.terminal[p * J + i] = problem.terminal[i](0.0, xend, d);
    }
  });
  return tab;
}

// Three-regime production problem under geometric Brownian motion: idle with
// a fixed holding cost, a capacity mode long the average asset level, and a
// spread mode long the first asset against the last. Constant costs
// 0.2*|i-j| satisfy the triangular condition with equality on monotone
// triples, which the validator reports as a warning rather than an error.
inline SwitchingProblem make_gbm_regimes(int d) {
  if (d < 1) throw config_error("/d: need at least one asset");
  SwitchingProblem pb;
  pb.name = "gbm3regime";
  pb.grid = TimeGrid{1.0, 12, 60 + d};
  GbmParams gbm;
  gbm.x0.assign(d, 50.0);
  gbm.mu.assign(d, -0.05);
  gbm.sigma.resize(d);
  for (int k = 0; k < d; ++k) gbm.sigma[k] = (2 * (k + 1) <= d) ? 0.2 : 0.3;
  pb.dynamics = gbm;
  pb.n_regimes = 3;
  pb.running = {
      [](double, const double*, int) { return -0.5; },
      [](double, const double* x, int dim) {
        double s = 0.0;
        for (int k = 0; k < dim; ++k) s += x[k];
        return 2.0 / dim * s - 100.0;
      },
      [](double, const double* x, int dim) { return 2.0 * (x[0] - 1.1 * x[dim - 1]) - 1.0; },
  };
  FieldFn zero = [](double, const double*, int) { return 0.0; };
  pb.terminal = {zero, zero, zero};
  std::vector<double> l(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) l[static_cast<std::size_t>(i) * 3 + j] = 0.2 * std::abs(i - j);
  pb.costs = CostModel::from_matrix(3, std::move(l));
  pb.ref_regime = 0;
  pb.baseline = BaselineSpec::linear(0.45);
  return pb;
}

// Tolling-style three-regime problem under exponential OU with jumps: the
// first component is a jumpy output price, the remaining components are
// mean-reverting input prices. Off / half / full capacity against the spread
// between output and a heat-rate multiple of the mean input. Costs are a
// uniform state-dependent field, strictly triangular since they are positive.
inline SwitchingProblem make_expou_jump(int d) {
  if (d < 2) throw config_error("/d: jump model needs at least two components");
  SwitchingProblem pb;
  pb.name = "expou_jump";
  pb.grid = TimeGrid{0.25, 180, 1};
  ExpOuJumpParams eou;
  eou.x0.assign(d, 6.0);
  eou.x0[0] = 50.0;
  eou.kappa.assign(d, 1.0);
  eou.kappa[0] = 2.0;
  eou.mu.resize(d);
  for (int k = 0; k < d; ++k) eou.mu[k] = std::log(eou.x0[k]);
  eou.sigma1.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int k = 0; k < d; ++k)
    eou.sigma1[static_cast<std::size_t>(k) * d + k] = k == 0 ? 0.5 : 0.32;
  eou.sigma2.assign(static_cast<std::size_t>(d) * d, 0.0);
  eou.sigma2[0] = 0.3;
  eou.lambda.assign(d, 0.0);
  eou.lambda[0] = 6.0;
  pb.dynamics = eou;
  pb.n_regimes = 3;
  auto spread = [](const double* x, int dim) {
    double fuel = 0.0;
    for (int k = 1; k < dim; ++k) fuel += x[k];
    fuel /= static_cast<double>(dim - 1);
    return x[0] - 7.5 * fuel;
  };
  pb.running = {
      [](double, const double*, int) { return -1.0; },
      [spread](double, const double* x, int dim) { return 0.5 * spread(x, dim) - 1.0; },
      [spread](double, const double* x, int dim) { return spread(x, dim) - 2.0; },
  };
  FieldFn zero = [](double, const double*, int) { return 0.0; };
  pb.terminal = {zero, zero, zero};
  pb.costs = CostModel::uniform_field(3, [](double, const double* x, int dim) {
    double fuel = 0.0;
    for (int k = 1; k < dim; ++k) fuel += x[k];
    fuel /= static_cast<double>(dim - 1);
    return 0.01 * fuel + 0.001;
  });
  pb.ref_regime = 0;
  pb.baseline = BaselineSpec::cost_moment();
  return pb;
}

inline SwitchingProblem make_problem(const std::string& name, int d) {
  if (name == "gbm3regime") return make_gbm_regimes(d);
  if (name == "expou_jump") return make_expou_jump(d);
  throw config_error("/problem: unknown built-in '" + name +
                     "' (expected gbm3regime or expou_jump)");
}

}  // namespace deepswitch
