#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "deepswitch/dual.hpp"
#include "deepswitch/expr.hpp"

using namespace deepswitch;

namespace {

SwitchingProblem toy_two_regime() {
  SwitchingProblem pb;
  pb.name = "toy";
  pb.grid = TimeGrid{1.0, 2, 3};
  GbmParams g;
  g.x0 = {100.0};
  g.mu = {0.02};
  g.sigma = {0.25};
  pb.dynamics = g;
  pb.n_regimes = 2;
  pb.running = {parse_field("0.02*x1 - 1"), parse_field("1 - 0.005*x1")};
  pb.terminal = {parse_field("x1 - 95"), parse_field("0.5*x1")};
  pb.costs = CostModel::from_matrix(2, {0.0, 0.4, 0.3, 0.0});
  pb.ref_regime = 0;
  pb.baseline = BaselineSpec::linear(0.45);
  pb.validate();
  return pb;
}

std::vector<double> terminal_values(const PayoffTables& tab) {
  std::vector<double> u(static_cast<std::size_t>(tab.n_paths) * tab.n_regimes);
  for (int p = 0; p < tab.n_paths; ++p)
    for (int i = 0; i < tab.n_regimes; ++i)
      u[static_cast<std::size_t>(p) * tab.n_regimes + i] = tab.term(p, i);
  return u;
}

// Central differences through the stage loss with the reverse-mode result.
double stage_fd_worst(SwitchingProblem& pb, DualPenalty& pen, const StageData& sd,
                      const PayoffTables& tab, bool l2) {
  std::vector<std::vector<double>> grads;
  dual_stage_loss_grad(pen, sd, tab, pb.ref_regime, l2, &grads);
  const int J = pen.n_regimes;
  const bool with_jumps = pen.jump_nets && !sd.jumps.empty();
  // FD roundoff is ~eps*|loss|/h and batch norm zeroes bias gradients
  // exactly, so the relative error floors its denominator above the noise.
  const double h = 1e-5;
  double worst = 0.0;
  const int n_nets = with_jumps ? 2 * J : J;
  for (int slot = 0; slot < n_nets; ++slot) {
    Network& net = slot < J ? pen.znet(sd.date, slot) : pen.zpnet(sd.date, slot - J);
    std::vector<double> p;
    get_params(net, p);
    REQUIRE(grads[static_cast<std::size_t>(slot)].size() == p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      double keep = p[k];
      p[k] = keep + h;
      set_params(net, p);
      double up = dual_stage_loss_grad(pen, sd, tab, pb.ref_regime, l2, nullptr);
      p[k] = keep - h;
      set_params(net, p);
      double dn = dual_stage_loss_grad(pen, sd, tab, pb.ref_regime, l2, nullptr);
      p[k] = keep;
      double fd = (up - dn) / (2.0 * h);
      double got = grads[static_cast<std::size_t>(slot)][k];
      double denom = std::max({std::abs(fd), std::abs(got), 1e-2});
      worst = std::max(worst, std::abs(fd - got) / denom);
    }
    set_params(net, p);
  }
  return worst;
}

}  // namespace

TEST_CASE("penalty construction matches the problem shape") {
  SwitchingProblem pb = toy_two_regime();
  DualPenalty pen = make_dual_penalty(pb, 6, 2, 1);
  CHECK(pen.z.size() == 4);  // 2 dates x 2 regimes
  CHECK_FALSE(pen.jump_nets);  // no jumps in the dynamics, nets elided
  CHECK(pen.znet(0, 0).input_dim == 2);
  CHECK(pen.znet(0, 0).output_dim() == 1);

  // per-net seeds differ
  std::vector<double> a, b;
  get_params(pen.znet(0, 0), a);
  get_params(pen.znet(0, 1), b);
  CHECK(a != b);

  SwitchingProblem jp = make_expou_jump(2);
  DualPenalty jpen = make_dual_penalty(jp, 6, 2, 1);
  CHECK(jpen.jump_nets);
  CHECK(jpen.zp.size() == jpen.z.size());
  DualPenalty plain = make_dual_penalty(jp, 6, 2, 1, false);
  CHECK(plain.zp.empty());
}

TEST_CASE("stage data flattens states, increments and baselines") {
  SwitchingProblem pb = toy_two_regime();
  PathBatch batch = simulate(pb.dynamics, pb.grid, 4, 3);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> u = terminal_values(tab);
  StageData sd = make_stage_data(pb, batch, u, 1);
  CHECK(sd.date == 1);
  CHECK(sd.n_paths == 4);
  CHECK(sd.substeps == 3);
  for (int p = 0; p < 4; ++p)
    for (int k = 0; k < 3; ++k) {
      const double* row = &sd.inputs[(static_cast<std::size_t>(p) * 3 + k) * 2];
      CHECK(row[0] == batch.time_of_local_step(3 + k));
      CHECK(row[1] == batch.state(p, 3 + k, 0));
      CHECK(sd.dw[static_cast<std::size_t>(p) * 3 + k] == batch.dw_at(p, 3 + k, 0));
    }
  for (int p = 0; p < 4; ++p)
    CHECK(sd.eta[static_cast<std::size_t>(p)] == Catch::Approx(0.45 * (1 - 2)));
}

TEST_CASE("jump increments are compensated unless disabled") {
  SwitchingProblem pb = make_expou_jump(2);
  pb.grid = TimeGrid{0.25, 2, 2};
  PathBatch batch = simulate(pb.dynamics, pb.grid, 64, 5);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> u = terminal_values(tab);
  StageData comp = make_stage_data(pb, batch, u, 0, true);
  StageData raw = make_stage_data(pb, batch, u, 0, false);
  const double dt = pb.grid.dt();
  bool saw_jump = false;
  for (int p = 0; p < 64; ++p)
    for (int k = 0; k < 2; ++k) {
      std::size_t r = static_cast<std::size_t>(p) * 2 + k;
      double dn = batch.dn_at(p, k, 0);
      if (dn > 0) saw_jump = true;
      CHECK(comp.jumps[r * 2 + 0] == Catch::Approx(dn - 6.0 * dt).margin(1e-15));
      CHECK(raw.jumps[r * 2 + 0] == dn);
      CHECK(comp.jumps[r * 2 + 1] == Catch::Approx(0.0).margin(1e-15));  // no jumps there
    }
  CHECK(saw_jump);
}

TEST_CASE("stage loss gradients match finite differences") {
  SwitchingProblem pb = toy_two_regime();
  PathBatch batch = simulate(pb.dynamics, pb.grid, 12, 7);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> u = terminal_values(tab);
  StageData sd = make_stage_data(pb, batch, u, 1);
  DualPenalty pen = make_dual_penalty(pb, 5, 2, 3);
  CHECK(stage_fd_worst(pb, pen, sd, tab, true) < 1e-5);
  CHECK(stage_fd_worst(pb, pen, sd, tab, false) < 1e-5);
}

TEST_CASE("stage loss gradients match finite differences with jump nets") {
  SwitchingProblem pb = make_expou_jump(2);
  pb.grid = TimeGrid{0.25, 2, 2};
  PathBatch batch = simulate(pb.dynamics, pb.grid, 8, 9);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> u = terminal_values(tab);
  StageData sd = make_stage_data(pb, batch, u, 1);
  DualPenalty pen = make_dual_penalty(pb, 4, 1, 5);
  REQUIRE(pen.jump_nets);
  CHECK(stage_fd_worst(pb, pen, sd, tab, true) < 1e-5);
}

TEST_CASE("gradients stay on the maximizing branch") {
  SwitchingProblem pb = toy_two_regime();
  // relabel: switching away from the first regime is prohibitively expensive,
  // so the second branch never wins the stage maximum
  pb.costs = CostModel::from_matrix(2, {0.0, 1e6, 0.3, 0.0});
  PathBatch batch = simulate(pb.dynamics, pb.grid, 16, 11);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> u = terminal_values(tab);
  StageData sd = make_stage_data(pb, batch, u, 0);
  DualPenalty pen = make_dual_penalty(pb, 5, 2, 7);
  std::vector<std::vector<double>> grads;
  double gnorm = 0.0;
  dual_stage_loss_grad(pen, sd, tab, 0, true, &grads, &gnorm);
  double sum0 = 0.0, sq = 0.0;
  for (double v : grads[1]) sum0 += std::abs(v);
  CHECK(sum0 == 0.0);
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  CHECK(gnorm == Catch::Approx(std::sqrt(sq)).epsilon(1e-12));
}

TEST_CASE("backward recursion reproduces a hand-rolled two-stage case") {
  PayoffTables tab;
  tab.n_paths = 1;
  tab.n_stages = 2;
  tab.n_regimes = 2;
  tab.start_date = 0;
  tab.constant_costs = true;
  tab.cost_matrix = {0.0, 0.4, 0.3, 0.0};
  tab.running = {1.0, 1.5, 0.5, 0.2};  // [m][j]
  tab.terminal = {2.0, 1.0};
  std::vector<double> xi = {0.1, -0.2, 0.0, 0.3};  // [m][j]

  DualValues dv = dual_backward(tab, xi);
  CHECK(dv.value(0, 2, 0) == 2.0);
  CHECK(dv.value(0, 1, 0) == Catch::Approx(2.5));   // stay
  CHECK(dv.value(0, 1, 1) == Catch::Approx(2.2));   // move back
  CHECK(dv.choice(0, 1, 0) == 0);
  CHECK(dv.choice(0, 1, 1) == 0);
  CHECK(dv.value(0, 0, 0) == Catch::Approx(3.5));   // switch out
  CHECK(dv.value(0, 0, 1) == Catch::Approx(3.9));   // stay
  CHECK(dv.choice(0, 0, 0) == 1);

  // exact ties resolve to the smallest regime index
  tab.cost_matrix = {0.0, 0.0, 0.0, 0.0};
  tab.running = {1.0, 1.0, 1.0, 1.0};
  tab.terminal = {1.0, 1.0};
  std::vector<double> zero_xi(4, 0.0);
  DualValues tie = dual_backward(tab, zero_xi);
  CHECK(tie.choice(0, 0, 0) == 0);
  CHECK(tie.choice(0, 0, 1) == 0);
  CHECK(tie.choice(0, 1, 1) == 0);

  CHECK_THROWS_AS(dual_backward(tab, std::vector<double>(3, 0.0)), numeric_error);
}

TEST_CASE("stage roll agrees with the one-stage values") {
  SwitchingProblem pb = toy_two_regime();
  PathBatch batch = simulate(pb.dynamics, pb.grid, 10, 13);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> u = terminal_values(tab);
  StageData sd = make_stage_data(pb, batch, u, 1);
  DualPenalty pen = make_dual_penalty(pb, 5, 2, 9);
  std::vector<double> xi;
  dual_stage_increments(pen, sd, NetMode::eval, xi);
  std::vector<double> rolled;
  dual_stage_roll(tab, sd, xi, rolled);
  for (int p = 0; p < 10; ++p)
    for (int i = 0; i < 2; ++i)
      CHECK(rolled[static_cast<std::size_t>(p) * 2 + i] ==
            Catch::Approx(stage_value(tab, sd, xi, p, i)).margin(1e-15));
}

TEST_CASE("whole-batch increments tile the per-stage ones") {
  SwitchingProblem pb = toy_two_regime();
  PathBatch batch = simulate(pb.dynamics, pb.grid, 6, 15);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  DualPenalty pen = make_dual_penalty(pb, 5, 2, 11);
  std::vector<double> all = batch_increments(pen, pb, batch, NetMode::eval);
  std::vector<double> u(static_cast<std::size_t>(6) * 2, 0.0);
  std::vector<double> stage_xi;
  for (int m = 0; m < 2; ++m) {
    StageData sd = make_stage_data(pb, batch, u, m);
    dual_stage_increments(pen, sd, NetMode::eval, stage_xi);
    for (int p = 0; p < 6; ++p)
      for (int j = 0; j < 2; ++j)
        CHECK(all[(static_cast<std::size_t>(p) * 2 + m) * 2 + j] ==
              stage_xi[static_cast<std::size_t>(p) * 2 + j]);
  }
}

TEST_CASE("evaluation-mode increments average to zero") {
  SwitchingProblem pb = toy_two_regime();
  DualPenalty pen = make_dual_penalty(pb, 6, 2, 13);
  PathBatch batch = simulate(pb.dynamics, pb.grid, 40000, 17);
  std::vector<double> xi = batch_increments(pen, pb, batch, NetMode::eval);
  const int M = 2, J = 2, B = 40000;
  for (int m = 0; m < M; ++m)
    for (int j = 0; j < J; ++j) {
      RunningStats st;
      for (int p = 0; p < B; ++p)
        st.add(xi[(static_cast<std::size_t>(p) * M + m) * J + j]);
      INFO("stage " << m << " regime " << j);
      CHECK(std::abs(st.mean) < 5.0 * st.sem());
    }
}

TEST_CASE("stage training runs and tightens the rolled value") {
  SwitchingProblem pb = make_gbm_regimes(1);
  pb.grid = TimeGrid{1.0, 4, 4};
  DualTrainConfig cfg;
  cfg.epochs = 16;
  cfg.batch = 128;
  cfg.inner_steps = 1;
  cfg.width = 8;
  cfg.depth = 2;
  cfg.seed = 5;
  cfg.trace_path = "dual_trace_test.csv";
  DualTrainResult res = train_dual(pb, cfg);
  REQUIRE(res.epoch_loss.size() == 16);
  for (double l : res.epoch_loss) CHECK(std::isfinite(l));
  double head = 0.0, tail = 0.0;
  for (int e = 0; e < 4; ++e) {
    head += res.epoch_u0[static_cast<std::size_t>(e)];
    tail += res.epoch_u0[res.epoch_u0.size() - 1 - static_cast<std::size_t>(e)];
  }
  CHECK(tail < head);  // the trained penalty pushes the bound down

  std::FILE* f = std::fopen("dual_trace_test.csv", "r");
  REQUIRE(f != nullptr);
  char line[128] = {0};
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "epoch,stage,loss,grad_norm\n");
  std::fclose(f);
  std::remove("dual_trace_test.csv");

  DualTrainConfig bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(train_dual(pb, bad), config_error);
}
