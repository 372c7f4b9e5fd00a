#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <vector>

#include "deepswitch/expr.hpp"
#include "deepswitch/primal.hpp"

using namespace deepswitch;

namespace {

SwitchingProblem toy_two_regime() {
  SwitchingProblem pb;
  pb.name = "toy";
  pb.grid = TimeGrid{1.0, 3, 2};
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
  pb.baseline = BaselineSpec::zero();
  pb.validate();
  return pb;
}

SwitchingProblem single_regime() {
  SwitchingProblem pb;
  pb.name = "toy1";
  pb.grid = TimeGrid{1.0, 2, 3};
  GbmParams g;
  g.x0 = {50.0};
  g.mu = {0.0};
  g.sigma = {0.2};
  pb.dynamics = g;
  pb.n_regimes = 1;
  pb.running = {parse_field("0.1*x1")};
  pb.terminal = {parse_field("x1")};
  pb.costs = CostModel::from_matrix(1, {0.0});
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

}  // namespace

TEST_CASE("policy nets take time, state and regime one-hot") {
  SwitchingProblem pb = toy_two_regime();
  SwitchPolicy pol = make_policy(pb, 6, 2, 1);
  REQUIRE(pol.nets.size() == 3);
  CHECK(pol.net(0).input_dim == 1 + 1 + 2);
  CHECK(pol.net(0).output_dim() == 2);

  PathBatch batch = simulate(pb.dynamics, pb.grid, 3, 3);
  std::vector<double> in = policy_inputs(pol, batch, 1);
  for (int p = 0; p < 3; ++p)
    for (int i = 0; i < 2; ++i) {
      const double* row = &in[(static_cast<std::size_t>(p) * 2 + i) * 4];
      CHECK(row[0] == pb.grid.date_time(1));
      CHECK(row[1] == batch.state(p, 2, 0));
      CHECK(row[2 + i] == 1.0);
      CHECK(row[2 + (1 - i)] == 0.0);
    }
}

TEST_CASE("tempered softmax behaves like a probability table") {
  std::vector<double> logits = {1.0, 2.0, -0.5, 0.0, 0.0, 0.0};
  std::vector<double> q(6);
  softmax_rows(logits.data(), 2, 3, 1.0, q.data());
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      CHECK(q[static_cast<std::size_t>(r) * 3 + j] > 0.0);
      s += q[static_cast<std::size_t>(r) * 3 + j];
    }
    CHECK(s == Catch::Approx(1.0).epsilon(1e-14));
  }
  // hand value at unit temperature
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(-0.5);
  CHECK(q[0] == Catch::Approx(std::exp(1.0) / z).epsilon(1e-13));
  CHECK(q[1] == Catch::Approx(std::exp(2.0) / z).epsilon(1e-13));
  // equal logits split evenly
  CHECK(q[3] == Catch::Approx(1.0 / 3.0).epsilon(1e-14));

  // cooling sharpens toward the argmax, shifting leaves the row unchanged
  std::vector<double> cold(3), shifted(3);
  softmax_rows(logits.data(), 1, 3, 0.05, cold.data());
  CHECK(cold[1] > 0.999);
  std::vector<double> plus = {101.0, 102.0, 99.5};
  softmax_rows(plus.data(), 1, 3, 1.0, shifted.data());
  for (int j = 0; j < 3; ++j)
    CHECK(shifted[static_cast<std::size_t>(j)] ==
          Catch::Approx(q[static_cast<std::size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("hard decisions take the smallest maximizing index") {
  std::vector<double> l = {0.5, 2.0, 2.0};
  CHECK(hard_choice(l.data(), 3) == 1);
  std::vector<double> tie = {1.0, 1.0, 1.0};
  CHECK(hard_choice(tie.data(), 3) == 0);
  std::vector<double> single = {-3.0};
  CHECK(hard_choice(single.data(), 1) == 0);
}

TEST_CASE("soft stage loss gradients match finite differences") {
  SwitchingProblem pb = toy_two_regime();
  PathBatch batch = simulate(pb.dynamics, pb.grid, 10, 5);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> v_next = terminal_values(tab);
  SwitchPolicy pol = make_policy(pb, 5, 2, 7);
  const int stage = 1;
  std::vector<double> inputs = policy_inputs(pol, batch, stage);

  for (double tau : {1.0, 0.35}) {
    std::vector<double> grad;
    double gnorm = 0.0;
    primal_stage_loss_grad(pol, tab, inputs, v_next, stage, tau, &grad, &gnorm);
    Network& net = pol.net(stage);
    std::vector<double> p;
    get_params(net, p);
    REQUIRE(grad.size() == p.size());
    // FD roundoff is ~eps*|loss|/h and batch norm zeroes bias gradients
    // exactly, so the relative error floors its denominator above the noise.
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      double keep = p[k];
      p[k] = keep + h;
      set_params(net, p);
      double up = primal_stage_loss_grad(pol, tab, inputs, v_next, stage, tau, nullptr);
      p[k] = keep - h;
      set_params(net, p);
      double dn = primal_stage_loss_grad(pol, tab, inputs, v_next, stage, tau, nullptr);
      p[k] = keep;
      double fd = (up - dn) / (2.0 * h);
      double denom = std::max({std::abs(fd), std::abs(grad[k]), 1e-2});
      worst = std::max(worst, std::abs(fd - grad[k]) / denom);
    }
    set_params(net, p);
    INFO("temperature " << tau);
    CHECK(worst < 1e-5);
    CHECK(gnorm > 0.0);
  }
}

TEST_CASE("soft values are the probability-weighted stage objectives") {
  SwitchingProblem pb = toy_two_regime();
  PathBatch batch = simulate(pb.dynamics, pb.grid, 6, 9);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  std::vector<double> v_next = terminal_values(tab);
  SwitchPolicy pol = make_policy(pb, 5, 2, 11);
  const int stage = 1;  // last decision date, so v_next really is the rollback target
  std::vector<double> inputs = policy_inputs(pol, batch, stage);
  std::vector<double> v_soft;
  double loss =
      primal_stage_loss_grad(pol, tab, inputs, v_next, stage, 0.8, nullptr, nullptr, &v_soft);
  REQUIRE(v_soft.size() == 12);

  // recompute one row by hand through the eval-free train-mode forward
  std::vector<double> logits(24);  // 12 rows x 2 logits
  forward(pol.net(stage), inputs.data(), 12, NetMode::train, logits.data(), nullptr, false);
  std::vector<double> q(24);
  softmax_rows(logits.data(), 6 * 2, 2, 0.8, q.data());
  double mean_v = 0.0;
  for (int p = 0; p < 6; ++p)
    for (int i = 0; i < 2; ++i) {
      const std::size_t r = static_cast<std::size_t>(p) * 2 + i;
      double v = 0.0;
      for (int j = 0; j < 2; ++j)
        v += q[r * 2 + j] *
             (tab.run(p, stage, j) - tab.cost(p, stage, i, j) + v_next[static_cast<std::size_t>(p) * 2 + j]);
      CHECK(v_soft[r] == Catch::Approx(v).margin(1e-12));
      mean_v += v;
    }
  CHECK(loss == Catch::Approx(-mean_v / 12.0).margin(1e-12));
}

TEST_CASE("a single-regime policy earns exactly the hold value") {
  SwitchingProblem pb = single_regime();
  SwitchPolicy pol = make_policy(pb, 4, 1, 13);
  PathBatch batch = simulate(pb.dynamics, pb.grid, 8, 15);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  PolicyRun run = run_policy(pol, pb, batch, tab);
  for (int p = 0; p < 8; ++p) {
    double want = tab.term(p, 0);
    for (int m = 0; m < tab.n_stages; ++m) want += tab.run(p, m, 0);
    CHECK(run.value(p, 0) == Catch::Approx(want).margin(1e-12));
    CHECK(run.switches[static_cast<std::size_t>(p)] == 0);
  }
}

TEST_CASE("batched policy rollout matches single-state decisions") {
  SwitchingProblem pb = toy_two_regime();
  SwitchPolicy pol = make_policy(pb, 6, 2, 17);
  PathBatch batch = simulate(pb.dynamics, pb.grid, 5, 19);
  PayoffTables tab = evaluate_payoffs(pb, batch);
  PolicyRun run = run_policy(pol, pb, batch, tab);

  const int K = pb.grid.substeps;
  for (int p = 0; p < 5; ++p)
    for (int i0 = 0; i0 < 2; ++i0) {
      int cur = i0;
      int switches = 0;
      double value = 0.0;
      for (int m = 0; m < tab.n_stages; ++m) {
        const double t = batch.time_of_local_step(m * K);
        int nxt = policy_choice(pol, m, t, batch.state_row(p, m * K), cur);
        value += tab.run(p, m, nxt) - tab.cost(p, m, cur, nxt);
        if (nxt != cur) ++switches;
        cur = nxt;
      }
      value += tab.term(p, cur);
      CHECK(run.value(p, i0) == Catch::Approx(value).margin(1e-12));
      CHECK(run.switches[static_cast<std::size_t>(p) * 2 + i0] == switches);
    }
}

TEST_CASE("policy training anneals the temperature and stays finite") {
  SwitchingProblem pb = toy_two_regime();
  PolicyTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 64;
  cfg.inner_steps = 2;
  cfg.width = 6;
  cfg.depth = 2;
  cfg.tau_start = 1.0;
  cfg.tau_end = 0.2;
  cfg.seed = 3;
  cfg.trace_path = "policy_trace_test.csv";
  PolicyTrainResult res = train_policy(pb, cfg);
  REQUIRE(res.epoch_loss.size() == 5);
  for (double l : res.epoch_loss) CHECK(std::isfinite(l));
  REQUIRE(res.policy.nets.size() == 3);

  std::FILE* f = std::fopen("policy_trace_test.csv", "r");
  REQUIRE(f != nullptr);
  char line[160] = {0};
  REQUIRE(std::fgets(line, sizeof line, f) != nullptr);
  CHECK(std::string(line) == "epoch,stage,loss,grad_norm,temperature\n");
  double first_tau = -1.0, last_tau = -1.0;
  while (std::fgets(line, sizeof line, f)) {
    int epoch = 0, stage = 0;
    double loss = 0.0, gn = 0.0, tau = 0.0;
    REQUIRE(std::sscanf(line, "%d,%d,%lf,%lf,%lf", &epoch, &stage, &loss, &gn, &tau) == 5);
    if (first_tau < 0.0) first_tau = tau;
    last_tau = tau;
  }
  std::fclose(f);
  std::remove("policy_trace_test.csv");
  CHECK(first_tau == Catch::Approx(1.0));
  CHECK(last_tau == Catch::Approx(0.2));

  PolicyTrainConfig bad = cfg;
  bad.batch = 0;
  CHECK_THROWS_AS(train_policy(pb, bad), config_error);
}
