#pragma once
// Trained martingale penalties and the pathwise dual recursion they plug
// into. Each stage and regime owns a network z(t,x) whose dot products with
// Brownian increments over the stage subgrid build a martingale increment
//   xi_n^i = sum_k z_{n,i}(t_k, X_{t_k}) . dW_{t_k}  (+ jump-net terms
// against compensated Poisson increments when the model jumps).
// Upper-bound values follow the backward recursion
//   U_N^i = Phi^i,  U_n^i = max_j (F_n^j - l_ij - xi_n^j + U_{n+1}^j),
// which dominates the switching value in conditional expectation for any
// true martingale penalty; training shapes xi toward the Doob increments of
// the value process, where the bound becomes pathwise tight.

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

struct DualPenalty {
  TimeGrid grid;
  int n_regimes = 1;
  int dim = 1;
  bool jump_nets = false;
  bool compensate_jumps = true;  // subtract lambda*dt from jump counts
  std::vector<double> lambda;    // intensities used for compensation
  std::vector<Network> z;        // [n*J + i], input (t, x), output dim d
  std::vector<Network> zp;       // jump nets, same layout, when jump_nets

  Network& znet(int n, int i) { return z[static_cast<std::size_t>(n) * n_regimes + i]; }
  Network& zpnet(int n, int i) { return zp[static_cast<std::size_t>(n) * n_regimes + i]; }
};

inline DualPenalty make_dual_penalty(const SwitchingProblem& pb, int width, int depth,
                                     std::uint64_t seed, bool jump_nets = true,
                                     bool compensate_jumps = true) {
  const int d = pb.dim();
  const int J = pb.n_regimes;
  const int N = pb.grid.n_dates;
  DualPenalty pen;
  pen.grid = pb.grid;
  pen.n_regimes = J;
  pen.dim = d;
  pen.jump_nets = jump_nets && pb.jumps();
  pen.compensate_jumps = compensate_jumps;
  pen.lambda = jump_intensities(pb.dynamics);
  pen.z.reserve(static_cast<std::size_t>(N) * J);
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < J; ++i) {
      Network net = make_mlp(1 + d, width, depth, d);
      xavier_init(net, labeled_seed(seed, "dual-z-" + std::to_string(n) + "-" +
                                              std::to_string(i)));
      pen.z.push_back(std::move(net));
    }
  if (pen.jump_nets) {
    pen.zp.reserve(static_cast<std::size_t>(N) * J);
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < J; ++i) {
        Network net = make_mlp(1 + d, width, depth, d);
        xavier_init(net, labeled_seed(seed, "dual-zp-" + std::to_string(n) + "-" +
                                                std::to_string(i)));
        pen.zp.push_back(std::move(net));
      }
  }
  return pen;
}

// Everything one stage of training or evaluation needs, laid out for batched
// network calls: row r = p*K + k holds (t_k, X_{t_k}) of path p at substep k.
struct StageData {
  int n_paths = 0;
  int substeps = 1;
  int dim = 1;
  int n_regimes = 1;
  int stage = 0;  // local stage index m within the batch
  int date = 0;   // global date n = start_date + m
  std::vector<double> inputs;  // [p*K + k][1 + d]
  std::vector<double> dw;      // [p*K + k][d]
  std::vector<double> jumps;   // [p*K + k][d], compensated; empty if no jumps
  std::vector<double> u_next;  // [p][J] continuation values
  std::vector<double> eta;     // [p] baseline at the date
};

inline StageData make_stage_data(const SwitchingProblem& pb, const PathBatch& batch,
                                 const std::vector<double>& u_next, int local_stage,
                                 bool compensate_jumps = true) {
  const int K = batch.grid.substeps;
  const int d = batch.dim;
  const int B = batch.n_paths;
  const int J = pb.n_regimes;
  StageData sd;
  sd.n_paths = B;
  sd.substeps = K;
  sd.dim = d;
  sd.n_regimes = J;
  sd.stage = local_stage;
  sd.date = batch.start_step / K + local_stage;
  const std::size_t rows = static_cast<std::size_t>(B) * K;
  sd.inputs.resize(rows * (1 + d));
  sd.dw.resize(rows * d);
  if (batch.has_jumps()) sd.jumps.resize(rows * d);
  const std::vector<double> lambda = jump_intensities(pb.dynamics);
  const double dt = batch.grid.dt();
  for (int p = 0; p < B; ++p) {
    for (int k = 0; k < K; ++k) {
      const int s = local_stage * K + k;
      const std::size_t r = static_cast<std::size_t>(p) * K + k;
      double* in = &sd.inputs[r * (1 + d)];
      in[0] = batch.time_of_local_step(s);
      const double* x = batch.state_row(p, s);
      for (int c = 0; c < d; ++c) in[1 + c] = x[c];
      for (int c = 0; c < d; ++c) sd.dw[r * d + c] = batch.dw_at(p, s, c);
      if (!sd.jumps.empty())
        for (int c = 0; c < d; ++c) {
          const double comp = compensate_jumps && !lambda.empty() ? lambda[c] * dt : 0.0;
          sd.jumps[r * d + c] = batch.dn_at(p, s, c) - comp;
        }
    }
  }
  sd.u_next = u_next;
  sd.eta.resize(static_cast<std::size_t>(B));
  for (int p = 0; p < B; ++p)
    sd.eta[static_cast<std::size_t>(p)] =
        baseline_value(pb.baseline, pb.grid, sd.date, batch.state_row(p, local_stage * K), d);
  return sd;
}

// Stage increments xi[p][j] for the stage nets under the given mode.
inline void dual_stage_increments(DualPenalty& pen, const StageData& sd, NetMode mode,
                                  std::vector<double>& xi) {
  const int B = sd.n_paths, K = sd.substeps, d = sd.dim, J = sd.n_regimes;
  const std::size_t rows = static_cast<std::size_t>(B) * K;
  xi.assign(static_cast<std::size_t>(B) * J, 0.0);
  std::vector<double> out(rows * d);
  for (int j = 0; j < J; ++j) {
    forward(pen.znet(sd.date, j), sd.inputs.data(), static_cast<int>(rows), mode, out.data());
    for (int p = 0; p < B; ++p) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        const std::size_t r = static_cast<std::size_t>(p) * K + k;
        for (int c = 0; c < d; ++c) acc += out[r * d + c] * sd.dw[r * d + c];
      }
      xi[static_cast<std::size_t>(p) * J + j] += acc;
    }
    if (pen.jump_nets && !sd.jumps.empty()) {
      forward(pen.zpnet(sd.date, j), sd.inputs.data(), static_cast<int>(rows), mode, out.data());
      for (int p = 0; p < B; ++p) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
          const std::size_t r = static_cast<std::size_t>(p) * K + k;
          for (int c = 0; c < d; ++c) acc += out[r * d + c] * sd.jumps[r * d + c];
        }
        xi[static_cast<std::size_t>(p) * J + j] += acc;
      }
    }
  }
}

// One-stage value at regime i for path p given stage increments.
inline double stage_value(const PayoffTables& tab, const StageData& sd,
                          const std::vector<double>& xi, int p, int i, int* arg = nullptr) {
  const int J = sd.n_regimes;
  double best = -std::numeric_limits<double>::infinity();
  int bestj = 0;
  for (int j = 0; j < J; ++j) {
    const double v = tab.run(p, sd.stage, j) - tab.cost(p, sd.stage, i, j) -
                     xi[static_cast<std::size_t>(p) * J + j] +
                     sd.u_next[static_cast<std::size_t>(p) * J + j];
    if (v > best) {
      best = v;
      bestj = j;
    }
  }
  if (arg) *arg = bestj;
  return best;
}

// Stage loss at the reference regime with parameter gradients for the stage
// nets. Layout of grads: one flat vector per z net (regime order), then per
// jump net when present. Gradients flow through the maximizing branch only;
// continuation values are data. Pass grads = nullptr for the loss alone.
inline double dual_stage_loss_grad(DualPenalty& pen, const StageData& sd,
                                   const PayoffTables& tab, int i0, bool l2_loss,
                                   std::vector<std::vector<double>>* grads,
                                   double* grad_norm = nullptr,
                                   std::vector<double>* xi_out = nullptr) {
  const int B = sd.n_paths, K = sd.substeps, d = sd.dim, J = sd.n_regimes;
  const std::size_t rows = static_cast<std::size_t>(B) * K;
  const bool with_jumps = pen.jump_nets && !sd.jumps.empty();

  std::vector<std::vector<double>> outs(static_cast<std::size_t>(J));
  std::vector<std::vector<double>> pouts(with_jumps ? static_cast<std::size_t>(J) : 0);
  std::vector<ForwardCache> caches(grads ? static_cast<std::size_t>(J) : 0);
  std::vector<ForwardCache> pcaches(grads && with_jumps ? static_cast<std::size_t>(J) : 0);

  std::vector<double> xi(static_cast<std::size_t>(B) * J, 0.0);
  for (int j = 0; j < J; ++j) {
    outs[static_cast<std::size_t>(j)].resize(rows * d);
    forward(pen.znet(sd.date, j), sd.inputs.data(), static_cast<int>(rows), NetMode::train,
            outs[static_cast<std::size_t>(j)].data(), grads ? &caches[static_cast<std::size_t>(j)] : nullptr);
    for (int p = 0; p < B; ++p) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        const std::size_t r = static_cast<std::size_t>(p) * K + k;
        for (int c = 0; c < d; ++c)
          acc += outs[static_cast<std::size_t>(j)][r * d + c] * sd.dw[r * d + c];
      }
      xi[static_cast<std::size_t>(p) * J + j] += acc;
    }
    if (with_jumps) {
      pouts[static_cast<std::size_t>(j)].resize(rows * d);
      forward(pen.zpnet(sd.date, j), sd.inputs.data(), static_cast<int>(rows), NetMode::train,
              pouts[static_cast<std::size_t>(j)].data(),
              grads ? &pcaches[static_cast<std::size_t>(j)] : nullptr);
      for (int p = 0; p < B; ++p) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
          const std::size_t r = static_cast<std::size_t>(p) * K + k;
          for (int c = 0; c < d; ++c)
            acc += pouts[static_cast<std::size_t>(j)][r * d + c] * sd.jumps[r * d + c];
        }
        xi[static_cast<std::size_t>(p) * J + j] += acc;
      }
    }
  }

  std::vector<int> am(static_cast<std::size_t>(B));
  double loss = 0.0;
  std::vector<double> dfac(static_cast<std::size_t>(B));
  for (int p = 0; p < B; ++p) {
    int arg = 0;
    const double u = stage_value(tab, sd, xi, p, i0, &arg);
    am[static_cast<std::size_t>(p)] = arg;
    const double diff = u - sd.eta[static_cast<std::size_t>(p)];
    loss += l2_loss ? diff * diff : u;
    dfac[static_cast<std::size_t>(p)] = l2_loss ? 2.0 * diff / B : 1.0 / B;
  }
  loss /= B;
  if (xi_out) *xi_out = xi;
  if (!grads) return loss;

  const int n_nets = with_jumps ? 2 * J : J;
  grads->assign(static_cast<std::size_t>(n_nets), {});
  std::vector<double> cot(rows * d);
  double sq = 0.0;
  for (int j = 0; j < J; ++j) {
    // d(loss)/d(z output row r,c) = -dfac[p] * dw[r,c] on the argmax branch
    std::fill(cot.begin(), cot.end(), 0.0);
    for (int p = 0; p < B; ++p) {
      if (am[static_cast<std::size_t>(p)] != j) continue;
      for (int k = 0; k < K; ++k) {
        const std::size_t r = static_cast<std::size_t>(p) * K + k;
        for (int c = 0; c < d; ++c)
          cot[r * d + c] = -dfac[static_cast<std::size_t>(p)] * sd.dw[r * d + c];
      }
    }
    auto& gz = (*grads)[static_cast<std::size_t>(j)];
    gz.assign(pen.znet(sd.date, j).param_count(), 0.0);
    backward(pen.znet(sd.date, j), caches[static_cast<std::size_t>(j)], cot.data(), gz.data());
    for (double v : gz) sq += v * v;
    if (with_jumps) {
      std::fill(cot.begin(), cot.end(), 0.0);
      for (int p = 0; p < B; ++p) {
        if (am[static_cast<std::size_t>(p)] != j) continue;
        for (int k = 0; k < K; ++k) {
          const std::size_t r = static_cast<std::size_t>(p) * K + k;
          for (int c = 0; c < d; ++c)
            cot[r * d + c] = -dfac[static_cast<std::size_t>(p)] * sd.jumps[r * d + c];
        }
      }
      auto& gp = (*grads)[static_cast<std::size_t>(J + j)];
      gp.assign(pen.zpnet(sd.date, j).param_count(), 0.0);
      backward(pen.zpnet(sd.date, j), pcaches[static_cast<std::size_t>(j)], cot.data(),
               gp.data());
      for (double v : gp) sq += v * v;
    }
  }
  if (grad_norm) *grad_norm = std::sqrt(sq);
  return loss;
}

// Roll the continuation values down one stage for every regime.
inline void dual_stage_roll(const PayoffTables& tab, const StageData& sd,
                            const std::vector<double>& xi, std::vector<double>& u_out) {
  const int B = sd.n_paths, J = sd.n_regimes;
  u_out.assign(static_cast<std::size_t>(B) * J, 0.0);
  for (int p = 0; p < B; ++p)
    for (int i = 0; i < J; ++i)
      u_out[static_cast<std::size_t>(p) * J + i] = stage_value(tab, sd, xi, p, i);
}

// Full backward recursion over a batch given per-stage increments
// xi[(p*M + m)*J + j]. Returns values for every date level and the argmax
// regime choices at decision dates.
struct DualValues {
  int n_paths = 0;
  int n_stages = 0;
  int n_regimes = 0;
  int start_date = 0;
  std::vector<double> u;  // [p][m][i], m = 0..n_stages
  std::vector<int> arg;   // [p][m][i], m = 0..n_stages-1

  double value(int p, int m, int i) const {
    return u[(static_cast<std::size_t>(p) * (n_stages + 1) + m) * n_regimes + i];
  }
  int choice(int p, int m, int i) const {
    return arg[(static_cast<std::size_t>(p) * n_stages + m) * n_regimes + i];
  }
};

inline DualValues dual_backward(const PayoffTables& tab, const std::vector<double>& xi) {
  const int B = tab.n_paths, M = tab.n_stages, J = tab.n_regimes;
  if (xi.size() != static_cast<std::size_t>(B) * M * J)
    throw numeric_error("dual backward: increment table size mismatch");
  DualValues dv;
  dv.n_paths = B;
  dv.n_stages = M;
  dv.n_regimes = J;
  dv.start_date = tab.start_date;
  dv.u.assign(static_cast<std::size_t>(B) * (M + 1) * J, 0.0);
  dv.arg.assign(static_cast<std::size_t>(B) * M * J, 0);
  for (int p = 0; p < B; ++p) {
    auto at = [&](int m, int i) -> double& {
      return dv.u[(static_cast<std::size_t>(p) * (M + 1) + m) * J + i];
    };
    for (int i = 0; i < J; ++i) at(M, i) = tab.term(p, i);
    for (int m = M - 1; m >= 0; --m) {
      for (int i = 0; i < J; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        int bestj = 0;
        for (int j = 0; j < J; ++j) {
          const double v = tab.run(p, m, j) - tab.cost(p, m, i, j) -
                           xi[(static_cast<std::size_t>(p) * M + m) * J + j] + at(m + 1, j);
          if (v > best) {
            best = v;
            bestj = j;
          }
        }
        at(m, i) = best;
        dv.arg[(static_cast<std::size_t>(p) * M + m) * J + i] = bestj;
      }
    }
  }
  return dv;
}

// Increments for a whole batch under the given mode: xi[(p*M + m)*J + j].
inline std::vector<double> batch_increments(DualPenalty& pen, const SwitchingProblem& pb,
                                            const PathBatch& batch, NetMode mode) {
  const int M = batch.n_steps / batch.grid.substeps;
  const int B = batch.n_paths, J = pen.n_regimes;
  std::vector<double> xi(static_cast<std::size_t>(B) * M * J, 0.0);
  std::vector<double> u_dummy(static_cast<std::size_t>(B) * J, 0.0);
  std::vector<double> stage_xi;
  for (int m = 0; m < M; ++m) {
    StageData sd = make_stage_data(pb, batch, u_dummy, m, pen.compensate_jumps);
    dual_stage_increments(pen, sd, mode, stage_xi);
    for (int p = 0; p < B; ++p)
      for (int j = 0; j < J; ++j)
        xi[(static_cast<std::size_t>(p) * M + m) * J + j] =
            stage_xi[static_cast<std::size_t>(p) * J + j];
  }
  return xi;
}

struct DualTrainConfig {
  int epochs = 1000;
  int batch = 4096;
  int inner_steps = 1;
  double lr = 1e-3;
  bool l2_loss = true;  // |U - eta|^2 surrogate; false trains E[U] directly
  int width = 0;        // 0 picks 20 + d
  int depth = 3;
  std::uint64_t seed = 1;
  bool jump_nets = true;
  bool compensate_jumps = true;
  std::string trace_path;  // per-stage CSV when nonempty
};

struct DualTrainResult {
  DualPenalty penalty;
  std::vector<double> epoch_loss;  // stage-0 loss per epoch
  std::vector<double> epoch_u0;    // mean rolled U_0 at the reference regime
};

// Backward-iterated stage training: per epoch simulate one batch, set the
// terminal values, then walk stages from the horizon down, updating the
// stage nets before rolling values through them.
inline DualTrainResult train_dual(const SwitchingProblem& pb, const DualTrainConfig& cfg) {
  pb.validate();
  const int J = pb.n_regimes;
  const int N = pb.grid.n_dates;
  const int d = pb.dim();
  const int width = cfg.width > 0 ? cfg.width : 20 + d;
  if (cfg.epochs < 1 || cfg.batch < 1 || cfg.inner_steps < 1)
    throw config_error("/training: epochs, batch and inner steps must be positive");

  DualTrainResult res;
  res.penalty =
      make_dual_penalty(pb, width, cfg.depth, cfg.seed, cfg.jump_nets, cfg.compensate_jumps);
  DualPenalty& pen = res.penalty;

  AdamParams opt;
  opt.lr = cfg.lr;
  std::vector<AdamState> adam_z(pen.z.size());
  std::vector<AdamState> adam_zp(pen.zp.size());
  for (std::size_t i = 0; i < pen.z.size(); ++i) adam_z[i].init(pen.z[i].param_count());
  for (std::size_t i = 0; i < pen.zp.size(); ++i) adam_zp[i].init(pen.zp[i].param_count());

  std::ofstream trace;
  if (!cfg.trace_path.empty()) {
    trace.open(cfg.trace_path);
    if (!trace) throw config_error("cannot write trace file: " + cfg.trace_path);
    trace << "epoch,stage,loss,grad_norm\n";
  }

  std::vector<std::vector<double>> grads;
  std::vector<double> u_next, xi;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::uint64_t eseed = labeled_seed(cfg.seed, "dual-epoch-" + std::to_string(epoch));
    PathBatch batch = simulate(pb.dynamics, pb.grid, cfg.batch, eseed);
    PayoffTables tab = evaluate_payoffs(pb, batch);

    u_next.assign(static_cast<std::size_t>(cfg.batch) * J, 0.0);
    for (int p = 0; p < cfg.batch; ++p)
      for (int i = 0; i < J; ++i)
        u_next[static_cast<std::size_t>(p) * J + i] = tab.term(p, i);

    double stage0_loss = 0.0;
    for (int n = N - 1; n >= 0; --n) {
      StageData sd = make_stage_data(pb, batch, u_next, n, pen.compensate_jumps);
      double loss = 0.0, gnorm = 0.0;
      for (int s = 0; s < cfg.inner_steps; ++s) {
        loss = dual_stage_loss_grad(pen, sd, tab, pb.ref_regime, cfg.l2_loss, &grads, &gnorm);
        for (int j = 0; j < J; ++j) {
          adam_step(pen.znet(n, j), grads[static_cast<std::size_t>(j)],
                    adam_z[static_cast<std::size_t>(n) * J + j], opt);
          if (pen.jump_nets && !sd.jumps.empty())
            adam_step(pen.zpnet(n, j), grads[static_cast<std::size_t>(J + j)],
                      adam_zp[static_cast<std::size_t>(n) * J + j], opt);
        }
      }
      dual_stage_increments(pen, sd, NetMode::train, xi);
      dual_stage_roll(tab, sd, xi, u_next);
      if (trace.is_open())
        trace << epoch << "," << n << "," << loss << "," << gnorm << "\n";
      if (n == 0) stage0_loss = loss;
    }
    double u0 = 0.0;
    for (int p = 0; p < cfg.batch; ++p)
      u0 += u_next[static_cast<std::size_t>(p) * J + pb.ref_regime];
    res.epoch_loss.push_back(stage0_loss);
    res.epoch_u0.push_back(u0 / cfg.batch);
    if (!std::isfinite(stage0_loss) || !std::isfinite(u0))
      throw training_error("dual training diverged at epoch " + std::to_string(epoch));
  }
  return res;
}

}  // namespace deepswitch
