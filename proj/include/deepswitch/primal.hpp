#pragma once
// Feasible switching policies. One network per decision date maps
// (t, x, one-hot regime) to switching logits over the target regime. During
// training the decision is a temperature softmax and the value rolls back
// through the resulting mixture; at evaluation the decision hardens to an
// argmax, so the induced strategy is adapted and its Monte Carlo value is a
// genuine lower bound up to sampling error, whatever the training achieved.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "deepswitch/adam.hpp"
#include "deepswitch/common.hpp"
#include "deepswitch/network.hpp"
#include "deepswitch/path_batch.hpp"
#include "deepswitch/problem.hpp"
#include "deepswitch/simulate.hpp"

namespace deepswitch {

struct SwitchPolicy {
  TimeGrid grid;
  int n_regimes = 1;
  int dim = 1;
  std::vector<Network> nets;  // [n], n = 0..N-1

  Network& net(int n) { return nets[static_cast<std::size_t>(n)]; }
  const Network& net(int n) const { return nets[static_cast<std::size_t>(n)]; }
};

inline SwitchPolicy make_policy(const SwitchingProblem& pb, int width, int depth,
                                std::uint64_t seed) {
  const int d = pb.dim();
  const int J = pb.n_regimes;
  SwitchPolicy pol;
  pol.grid = pb.grid;
  pol.n_regimes = J;
  pol.dim = d;
  pol.nets.reserve(static_cast<std::size_t>(pb.grid.n_dates));
  for (int n = 0; n < pb.grid.n_dates; ++n) {
    Network net = make_mlp(1 + d + J, width, depth, J);
    xavier_init(net, labeled_seed(seed, "policy-" + std::to_string(n)));
    pol.nets.push_back(std::move(net));
  }
  return pol;
}

// Decision inputs for one date, one row per (path, current regime):
// row p*J + i = (t_n, X_{t_n}(p), e_i).
inline std::vector<double> policy_inputs(const SwitchPolicy& pol, const PathBatch& batch,
                                         int local_stage) {
  const int d = pol.dim, J = pol.n_regimes, K = batch.grid.substeps;
  const int B = batch.n_paths;
  const double t = batch.time_of_local_step(local_stage * K);
  std::vector<double> in(static_cast<std::size_t>(B) * J * (1 + d + J), 0.0);
  for (int p = 0; p < B; ++p) {
    const double* x = batch.state_row(p, local_stage * K);
    for (int i = 0; i < J; ++i) {
      double* row = &in[(static_cast<std::size_t>(p) * J + i) * (1 + d + J)];
      row[0] = t;
      for (int c = 0; c < d; ++c) row[1 + c] = x[c];
      row[1 + d + i] = 1.0;
    }
  }
  return in;
}

// Row-wise softmax with temperature, numerically shifted by the row max.
inline void softmax_rows(const double* logits, int rows, int width, double tau, double* probs) {
  for (int r = 0; r < rows; ++r) {
    const double* l = logits + static_cast<std::size_t>(r) * width;
    double* q = probs + static_cast<std::size_t>(r) * width;
    double mx = l[0];
    for (int j = 1; j < width; ++j) mx = std::max(mx, l[j]);
    double sum = 0.0;
    for (int j = 0; j < width; ++j) {
      q[j] = std::exp((l[j] - mx) / tau);
      sum += q[j];
    }
    for (int j = 0; j < width; ++j) q[j] /= sum;
  }
}

// Soft stage objective: V_n(p,i) = sum_j q_{p,i,j} (F_n^j - l_ij + V_{n+1}^j)
// with q the tempered softmax of the date-n logits. Minimizes -mean V over
// paths and regimes. Pass grad = nullptr for the loss alone. v_soft, when
// given, receives the rolled values V_n laid out [p][i].
inline double primal_stage_loss_grad(SwitchPolicy& pol, const PayoffTables& tab,
                                     const std::vector<double>& inputs,
                                     const std::vector<double>& v_next, int local_stage,
                                     double tau, std::vector<double>* grad,
                                     double* grad_norm = nullptr,
                                     std::vector<double>* v_soft = nullptr) {
  const int B = tab.n_paths, J = tab.n_regimes;
  const int rows = B * J;
  Network& net = pol.net(tab.start_date + local_stage);
  std::vector<double> logits(static_cast<std::size_t>(rows) * J);
  ForwardCache cache;
  forward(net, inputs.data(), rows, NetMode::train, logits.data(), grad ? &cache : nullptr);

  std::vector<double> q(static_cast<std::size_t>(rows) * J);
  softmax_rows(logits.data(), rows, J, tau, q.data());

  double loss = 0.0;
  std::vector<double> vrow(static_cast<std::size_t>(rows));
  std::vector<double> w(static_cast<std::size_t>(rows) * J);
  for (int p = 0; p < B; ++p)
    for (int i = 0; i < J; ++i) {
      const std::size_t r = static_cast<std::size_t>(p) * J + i;
      double v = 0.0;
      for (int j = 0; j < J; ++j) {
        w[r * J + j] = tab.run(p, local_stage, j) - tab.cost(p, local_stage, i, j) +
                       v_next[static_cast<std::size_t>(p) * J + j];
        v += q[r * J + j] * w[r * J + j];
      }
      vrow[r] = v;
      loss -= v;
    }
  loss /= rows;
  if (v_soft) *v_soft = vrow;
  if (!grad) return loss;

  // d(-V_r)/d logit_j = -(1/tau) q_j (w_j - V_r)
  std::vector<double> dlog(static_cast<std::size_t>(rows) * J);
  for (std::size_t r = 0; r < static_cast<std::size_t>(rows); ++r)
    for (int j = 0; j < J; ++j)
      dlog[r * J + j] = -q[r * J + j] * (w[r * J + j] - vrow[r]) / (tau * rows);
  grad->assign(net.param_count(), 0.0);
  backward(net, cache, dlog.data(), grad->data());
  if (grad_norm) {
    double sq = 0.0;
    for (double v : *grad) sq += v * v;
    *grad_norm = std::sqrt(sq);
  }
  return loss;
}

struct PolicyTrainConfig {
  int epochs = 1000;
  int batch = 4096;
  int inner_steps = 1;
  double lr = 1e-3;
  int width = 0;  // 0 picks 20 + d
  int depth = 3;
  double tau_start = 1.0;
  double tau_end = 0.1;
  std::uint64_t seed = 1;
  std::string trace_path;
};

struct PolicyTrainResult {
  SwitchPolicy policy;
  std::vector<double> epoch_loss;  // stage-0 loss per epoch
};

inline PolicyTrainResult train_policy(const SwitchingProblem& pb,
                                      const PolicyTrainConfig& cfg) {
  pb.validate();
  const int J = pb.n_regimes;
  const int N = pb.grid.n_dates;
  const int width = cfg.width > 0 ? cfg.width : 20 + pb.dim();
  if (cfg.epochs < 1 || cfg.batch < 1 || cfg.inner_steps < 1)
    throw config_error("/training: epochs, batch and inner steps must be positive");

  PolicyTrainResult res;
  res.policy = make_policy(pb, width, cfg.depth, cfg.seed);
  SwitchPolicy& pol = res.policy;

  AdamParams opt;
  opt.lr = cfg.lr;
  std::vector<AdamState> adam(pol.nets.size());
  for (std::size_t i = 0; i < pol.nets.size(); ++i) adam[i].init(pol.nets[i].param_count());

  std::ofstream trace;
  if (!cfg.trace_path.empty()) {
    trace.open(cfg.trace_path);
    if (!trace) throw config_error("cannot write trace file: " + cfg.trace_path);
    trace << "epoch,stage,loss,grad_norm,temperature\n";
  }

  std::vector<double> grad, v_next, v_soft;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double frac = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 1.0;
    const double tau = cfg.tau_start + (cfg.tau_end - cfg.tau_start) * frac;
    const std::uint64_t eseed = labeled_seed(cfg.seed, "policy-epoch-" + std::to_string(epoch));
    PathBatch batch = simulate(pb.dynamics, pb.grid, cfg.batch, eseed);
    PayoffTables tab = evaluate_payoffs(pb, batch);

    v_next.assign(static_cast<std::size_t>(cfg.batch) * J, 0.0);
    for (int p = 0; p < cfg.batch; ++p)
      for (int i = 0; i < J; ++i)
        v_next[static_cast<std::size_t>(p) * J + i] = tab.term(p, i);

    double stage0_loss = 0.0;
    for (int n = N - 1; n >= 0; --n) {
      const std::vector<double> inputs = policy_inputs(pol, batch, n);
      double loss = 0.0, gnorm = 0.0;
      for (int s = 0; s < cfg.inner_steps; ++s) {
        loss = primal_stage_loss_grad(pol, tab, inputs, v_next, n, tau, &grad, &gnorm);
        adam_step(pol.net(n), grad, adam[static_cast<std::size_t>(n)], opt);
      }
      loss = primal_stage_loss_grad(pol, tab, inputs, v_next, n, tau, nullptr, nullptr,
                                    &v_soft);
      v_next = v_soft;
      if (trace.is_open())
        trace << epoch << "," << n << "," << loss << "," << gnorm << "," << tau << "\n";
      if (n == 0) stage0_loss = loss;
    }
    res.epoch_loss.push_back(stage0_loss);
    if (!std::isfinite(stage0_loss))
      throw training_error("policy training diverged at epoch " + std::to_string(epoch));
  }
  return res;
}

// Hard decision: argmax logit, smallest index on ties.
inline int hard_choice(const double* logits, int width) {
  int best = 0;
  for (int j = 1; j < width; ++j)
    if (logits[j] > logits[best]) best = j;
  return best;
}

// Run the hardened policy over a batch, tracking one regime chain per start
// regime. values[p][i] is the realized payoff of the chain started in i;
// switches[p][i] counts its actual regime changes.
struct PolicyRun {
  int n_paths = 0;
  int n_regimes = 0;
  std::vector<double> values;  // [p][i]
  std::vector<int> switches;   // [p][i]

  double value(int p, int i) const { return values[static_cast<std::size_t>(p) * n_regimes + i]; }
};

inline PolicyRun run_policy(SwitchPolicy& pol, const SwitchingProblem& pb,
                            const PathBatch& batch, const PayoffTables& tab) {
  if (pb.n_regimes != pol.n_regimes || pb.dim() != pol.dim)
    throw config_error("policy run: problem and policy shapes disagree");
  const int B = batch.n_paths, J = pol.n_regimes, d = pol.dim;
  const int M = tab.n_stages, K = batch.grid.substeps;
  PolicyRun run;
  run.n_paths = B;
  run.n_regimes = J;
  run.values.assign(static_cast<std::size_t>(B) * J, 0.0);
  run.switches.assign(static_cast<std::size_t>(B) * J, 0);
  std::vector<int> regime(static_cast<std::size_t>(B) * J);
  for (int p = 0; p < B; ++p)
    for (int i = 0; i < J; ++i) regime[static_cast<std::size_t>(p) * J + i] = i;

  const int rows = B * J;
  std::vector<double> in(static_cast<std::size_t>(rows) * (1 + d + J));
  std::vector<double> logits(static_cast<std::size_t>(rows) * J);
  for (int m = 0; m < M; ++m) {
    const double t = batch.time_of_local_step(m * K);
    for (int p = 0; p < B; ++p) {
      const double* x = batch.state_row(p, m * K);
      for (int i = 0; i < J; ++i) {
        double* row = &in[(static_cast<std::size_t>(p) * J + i) * (1 + d + J)];
        std::fill(row, row + 1 + d + J, 0.0);
        row[0] = t;
        for (int c = 0; c < d; ++c) row[1 + c] = x[c];
        row[1 + d + regime[static_cast<std::size_t>(p) * J + i]] = 1.0;
      }
    }
    forward(pol.net(tab.start_date + m), in.data(), rows, NetMode::eval, logits.data());
    for (int p = 0; p < B; ++p)
      for (int i = 0; i < J; ++i) {
        const std::size_t r = static_cast<std::size_t>(p) * J + i;
        const int cur = regime[r];
        const int nxt = hard_choice(&logits[r * J], J);
        run.values[r] += tab.run(p, m, nxt) - tab.cost(p, m, cur, nxt);
        if (nxt != cur) ++run.switches[r];
        regime[r] = nxt;
      }
  }
  for (int p = 0; p < B; ++p)
    for (int i = 0; i < J; ++i) {
      const std::size_t r = static_cast<std::size_t>(p) * J + i;
      run.values[r] += tab.term(p, regime[r]);
    }
  return run;
}

// Single-state decision for region maps and spot checks.
inline int policy_choice(SwitchPolicy& pol, int date, double t, const double* x, int regime) {
  std::vector<double> row(static_cast<std::size_t>(1 + pol.dim + pol.n_regimes), 0.0);
  row[0] = t;
  for (int c = 0; c < pol.dim; ++c) row[1 + c] = x[c];
  row[static_cast<std::size_t>(1 + pol.dim + regime)] = 1.0;
  const std::vector<double> logits = forward_one(pol.net(date), row, NetMode::eval);
  return hard_choice(logits.data(), pol.n_regimes);
}

}  // namespace deepswitch
