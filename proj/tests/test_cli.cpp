// Config resolution, checkpoint files, and the command line binary driven
// end to end through std::system. The binary path comes in through
// DEEPSWITCH_CLI_PATH; everything runs inside a scratch directory that is
// wiped at the start of the suite.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef _WIN32
#include <sys/wait.h>
#endif

#include "json.hpp"

#include "deepswitch/checkpoint.hpp"
#include "deepswitch/config.hpp"
#include "deepswitch/dual.hpp"
#include "deepswitch/primal.hpp"
#include "deepswitch/problem.hpp"

namespace ds = deepswitch;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir() {
  static fs::path dir = [] {
    fs::path p = fs::current_path() / "cli_scratch";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const fs::path log = scratch_dir() / "cli_log.txt";
  std::string cmd = std::string("\"") + DEEPSWITCH_CLI_PATH + "\" " + args + " >> \"" +
                    log.string() + "\" 2>&1";
  int raw = std::system(cmd.c_str());
#ifdef _WIN32
  return raw;
#else
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
#endif
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  return line;
}

// Tiny run: 1-asset variant of the 3-regime problem, two dates, two
// substeps, a few dozen paths. Everything the CLI writes stays cheap.
fs::path tiny_config() {
  static fs::path path = [] {
    json j = {{"problem", {{"name", "gbm3regime"}, {"d", 1}, {"n_dates", 2}, {"substeps", 2}}},
              {"training", {{"epochs", 2}, {"batch", 32}, {"width", 4}, {"depth", 1}}},
              {"evaluation",
               {{"paths", 200},
                {"shard", 64},
                {"hedge_paths", 1000},
                {"region_states", 4},
                {"cond_paths", 4}}}};
    fs::path p = scratch_dir() / "tiny.json";
    std::ofstream out(p);
    out << j.dump(2);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("config defaults resolve from an empty document") {
  ds::RunConfig cfg = ds::parse_config(json::object());
  CHECK(cfg.problem.name == "gbm3regime");
  CHECK(cfg.problem.dim() == 2);
  CHECK(cfg.problem.n_regimes == 3);
  CHECK(cfg.problem.grid.n_dates == 12);
  CHECK(cfg.dual.epochs == 1040);  // 1000 + 20 per dimension
  CHECK(cfg.dual.batch == 4096);
  CHECK(cfg.dual.inner_steps == 1);
  CHECK(cfg.dual.l2_loss);
  CHECK(cfg.dual.lr == 1e-3);
  CHECK(cfg.policy.epochs == cfg.dual.epochs);
  CHECK(cfg.policy.tau_start == 1.0);
  CHECK(cfg.policy.tau_end == 0.1);
  CHECK(cfg.eval.paths == 1'638'400);
  CHECK(cfg.eval.shard == 8192);
  CHECK(cfg.eval.hedge_paths == 100'000);
  CHECK(cfg.eval.hedge_regime == cfg.problem.ref_regime);
  CHECK(cfg.eval.region_date == 12 / 2 + 1 - 1);
  CHECK(cfg.eval.region_states == 2000);
  CHECK(cfg.eval.cond_paths == 32);
  CHECK(cfg.seed == 1);
  CHECK(cfg.workers == 1);
  CHECK(cfg.out_dir == "out");
  CHECK_FALSE(cfg.desk_scale);

  ds::RunConfig wide = ds::parse_config(json::object(), 5);
  CHECK(wide.problem.dim() == 5);
  CHECK(wide.dual.epochs == 1100);

  ds::RunConfig jumps = ds::parse_config(json{{"problem", {{"name", "expou_jump"}}}});
  CHECK(jumps.problem.name == "expou_jump");
  CHECK(jumps.dual.epochs == 306);  // 300 + 3 per dimension
}

TEST_CASE("config keys map onto training and evaluation settings") {
  json j = {{"seed", 42},
            {"workers", 3},
            {"out", "elsewhere"},
            {"problem", {{"name", "gbm3regime"}, {"d", 1}, {"n_dates", 4}, {"substeps", 2}}},
            {"training",
             {{"epochs", 7},
              {"batch", 128},
              {"inner_steps", 2},
              {"lr", 5e-4},
              {"loss", "d1"},
              {"width", 9},
              {"depth", 2},
              {"jump_nets", false},
              {"compensate_jumps", false},
              {"tau_start", 0.8},
              {"tau_end", 0.05}}},
            {"evaluation",
             {{"paths", 1000},
              {"shard", 100},
              {"hedge_paths", 2000},
              {"hedge_regime", 2},
              {"shortfall", false},
              {"region_date", 1},
              {"region_states", 17},
              {"cond_paths", 5}}}};
  ds::RunConfig cfg = ds::parse_config(j);
  CHECK(cfg.seed == 42);
  CHECK(cfg.workers == 3);
  CHECK(cfg.out_dir == "elsewhere");
  CHECK(cfg.problem.grid.n_dates == 4);
  CHECK(cfg.problem.grid.substeps == 2);
  CHECK(cfg.dual.epochs == 7);
  CHECK(cfg.dual.batch == 128);
  CHECK(cfg.dual.inner_steps == 2);
  CHECK(cfg.dual.lr == 5e-4);
  CHECK_FALSE(cfg.dual.l2_loss);
  CHECK(cfg.dual.width == 9);
  CHECK(cfg.dual.depth == 2);
  CHECK_FALSE(cfg.dual.jump_nets);
  CHECK_FALSE(cfg.dual.compensate_jumps);
  CHECK(cfg.dual.seed == 42);
  CHECK(cfg.policy.epochs == 7);
  CHECK(cfg.policy.tau_start == 0.8);
  CHECK(cfg.policy.tau_end == 0.05);
  CHECK(cfg.eval.paths == 1000);
  CHECK(cfg.eval.shard == 100);
  CHECK(cfg.eval.hedge_paths == 2000);
  CHECK(cfg.eval.hedge_regime == 1);  // 1-based in the file
  CHECK_FALSE(cfg.eval.shortfall);
  CHECK(cfg.eval.region_date == 0);
  CHECK(cfg.eval.region_states == 17);
  CHECK(cfg.eval.cond_paths == 5);
}

TEST_CASE("config validation points at the offending field") {
  auto message_of = [](const json& j) {
    try {
      ds::parse_config(j);
    } catch (const ds::config_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message_of(json{{"training", {{"loss", "huber"}}}}).find("/training/loss") !=
        std::string::npos);
  CHECK(message_of(json{{"training", {{"epochs", "many"}}}}).find("/training/epochs") !=
        std::string::npos);
  CHECK(message_of(json{{"workers", 0}}).find("/workers") != std::string::npos);
  CHECK(message_of(json{{"evaluation", {{"paths", 0}}}}).find("/evaluation/paths") !=
        std::string::npos);
  CHECK(message_of(json{{"evaluation", {{"hedge_regime", 9}}}}).find("hedge_regime") !=
        std::string::npos);
  CHECK(message_of(json{{"evaluation", {{"region_date", 0}}}}).find("region_date") !=
        std::string::npos);
  CHECK_THROWS_AS(ds::parse_config(json::array()), ds::config_error);
}

TEST_CASE("desk scale shrinks work tenfold with floors") {
  ds::RunConfig cfg = ds::parse_config(json{{"desk_scale", true}});
  CHECK(cfg.desk_scale);
  CHECK(cfg.dual.epochs == 104);  // ceil(1040 / 10)
  CHECK(cfg.dual.batch == 512);
  CHECK(cfg.dual.inner_steps == 4);
  CHECK(cfg.policy.epochs == 104);
  CHECK(cfg.policy.batch == 512);
  CHECK(cfg.eval.paths == 163'840);
  CHECK(cfg.eval.hedge_paths == 10'000);
  CHECK(cfg.eval.region_states == 500);

  // The hedge path floor binds when a tenth would drop below 1000.
  ds::RunConfig small =
      ds::parse_config(json{{"desk_scale", true}, {"evaluation", {{"hedge_paths", 1500}}}});
  CHECK(small.eval.hedge_paths == 1000);

  // Explicit epoch counts are still scaled; a second application is refused
  // by the CLI layer via the stored flag, not here.
  ds::RunConfig twice = ds::parse_config(json{{"desk_scale", true}, {"training", {{"epochs", 5}}}});
  CHECK(twice.dual.epochs == 1);
}

TEST_CASE("dual checkpoints restore nets, flags, and running statistics") {
  ds::SwitchingProblem pb = ds::make_expou_jump(2);
  pb.grid.n_dates = 2;
  pb.grid.substeps = 1;
  ds::DualPenalty pen = ds::make_dual_penalty(pb, 4, 1, 9, true, true);
  REQUIRE(pen.z.size() == 6);
  REQUIRE(pen.zp.size() == 6);

  // Push one training-mode batch through a net so the running statistics
  // move off their initial values and the save has something to preserve.
  {
    std::vector<double> x = {0.1, 50.0, 6.0, 0.2, 52.0, 5.0};
    std::vector<double> y(2 * static_cast<std::size_t>(pen.z[0].output_dim()));
    ds::forward(pen.z[0], x.data(), 2, ds::NetMode::train, y.data(), nullptr, true);
  }

  const fs::path path = scratch_dir() / "roundtrip_dual.ckpt";
  ds::save_dual(path.string(), pen, json{{"note", "unit"}});
  ds::DualPenalty back = ds::load_dual(path.string());

  CHECK(back.n_regimes == pen.n_regimes);
  CHECK(back.dim == pen.dim);
  CHECK(back.jump_nets);
  CHECK(back.compensate_jumps);
  CHECK(back.grid.n_dates == 2);
  CHECK(back.grid.substeps == 1);
  CHECK(back.grid.horizon == pb.grid.horizon);
  REQUIRE(back.lambda.size() == pen.lambda.size());
  for (std::size_t k = 0; k < pen.lambda.size(); ++k) CHECK(back.lambda[k] == pen.lambda[k]);
  REQUIRE(back.z.size() == pen.z.size());
  REQUIRE(back.zp.size() == pen.zp.size());
  for (std::size_t k = 0; k < pen.z.size(); ++k) {
    std::vector<double> a, b;
    ds::get_params(pen.z[k], a);
    ds::get_params(back.z[k], b);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  // Evaluation-mode output uses the running statistics, so agreement here
  // means they came back too.
  std::vector<double> probe = {0.13, 49.0, 6.5};
  std::vector<double> ya = ds::forward_one(pen.z[0], probe);
  std::vector<double> yb = ds::forward_one(back.z[0], probe);
  REQUIRE(ya.size() == yb.size());
  for (std::size_t i = 0; i < ya.size(); ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("policy checkpoints round trip and kinds are enforced") {
  ds::SwitchingProblem pb = ds::make_gbm_regimes(1);
  pb.grid.n_dates = 3;
  pb.grid.substeps = 2;
  ds::SwitchPolicy pol = ds::make_policy(pb, 5, 1, 4);
  const fs::path ppath = scratch_dir() / "roundtrip_policy.ckpt";
  ds::save_policy(ppath.string(), pol);
  ds::SwitchPolicy back = ds::load_policy(ppath.string());
  CHECK(back.n_regimes == 3);
  CHECK(back.dim == 1);
  REQUIRE(back.nets.size() == pol.nets.size());
  for (std::size_t k = 0; k < pol.nets.size(); ++k) {
    std::vector<double> a, b;
    ds::get_params(pol.nets[k], a);
    ds::get_params(back.nets[k], b);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }

  CHECK_THROWS_AS(ds::load_dual(ppath.string()), ds::config_error);
  CHECK_THROWS_AS(ds::load_policy((scratch_dir() / "absent.ckpt").string()), ds::config_error);

  const fs::path garbage = scratch_dir() / "garbage.ckpt";
  std::ofstream(garbage) << "definitely not a checkpoint\n";
  CHECK_THROWS_AS(ds::load_policy(garbage.string()), ds::config_error);
}

TEST_CASE("cli rejects bad invocations with exit code 2") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") != 0);            // a subcommand is required
  CHECK(run_cli("frobnicate") != 0);  // unknown subcommand

  const fs::path bad = scratch_dir() / "bad.json";
  std::ofstream(bad) << "{ not json";
  CHECK(run_cli("simulate --config \"" + bad.string() + "\"") == 2);

  const fs::path schema = scratch_dir() / "schema.json";
  std::ofstream(schema) << R"({"training":{"loss":"bogus"}})";
  CHECK(run_cli("simulate --config \"" + schema.string() + "\"") == 2);

  CHECK(run_cli("simulate --config \"" + (scratch_dir() / "missing.json").string() + "\"") == 2);
}

TEST_CASE("cli simulate is reproducible byte for byte") {
  const std::string cfg = "\"" + tiny_config().string() + "\"";
  const fs::path a = scratch_dir() / "sim_a";
  const fs::path b = scratch_dir() / "sim_b";
  const fs::path c = scratch_dir() / "sim_c";
  REQUIRE(run_cli("simulate --config " + cfg + " --seed 11 --out \"" + a.string() + "\"") == 0);
  REQUIRE(run_cli("simulate --config " + cfg + " --seed 11 --out \"" + b.string() + "\"") == 0);
  REQUIRE(run_cli("simulate --config " + cfg + " --seed 12 --out \"" + c.string() + "\"") == 0);

  REQUIRE(fs::exists(a / "paths.bin"));
  REQUIRE(fs::exists(a / "report.json"));
  CHECK(slurp(a / "paths.bin") == slurp(b / "paths.bin"));
  CHECK(slurp(a / "paths.bin") != slurp(c / "paths.bin"));

  json rep = json::parse(slurp(a / "report.json"));
  CHECK(rep.at("command") == "simulate");
}

TEST_CASE("cli training and evaluation chain produces every artifact") {
  const std::string cfg = "\"" + tiny_config().string() + "\"";
  const fs::path run = scratch_dir() / "run1";

  // Evaluation before any training must fail loudly, not silently retrain.
  CHECK(run_cli("evaluate --config " + cfg + " --out \"" + run.string() + "\"") == 2);

  REQUIRE(run_cli("train-dual --config " + cfg + " --seed 5 --out \"" + run.string() + "\"") == 0);
  REQUIRE(fs::exists(run / "dual.ckpt"));
  REQUIRE(fs::exists(run / "trace.csv"));
  CHECK(first_line(run / "trace.csv") == "epoch,stage,loss,grad_norm");
  json drep = json::parse(slurp(run / "report.json"));
  CHECK(drep.at("command") == "train-dual");

  ds::DualPenalty pen = ds::load_dual((run / "dual.ckpt").string());
  CHECK(pen.n_regimes == 3);
  CHECK(pen.dim == 1);
  CHECK(pen.grid.n_dates == 2);
  CHECK_FALSE(pen.jump_nets);  // driftless noise only, no jump slots

  REQUIRE(run_cli("train-primal --config " + cfg + " --seed 5 --out \"" + run.string() + "\"") ==
          0);
  REQUIRE(fs::exists(run / "policy.ckpt"));
  CHECK(first_line(run / "trace.csv") == "epoch,stage,loss,grad_norm,temperature");

  REQUIRE(run_cli("evaluate --config " + cfg + " --seed 5 --out \"" + run.string() + "\"") == 0);
  REQUIRE(fs::exists(run / "bounds.csv"));
  CHECK(first_line(run / "bounds.csv") == "regime,ub,ub_se,ub_var,lb,lb_se,gap,mean_switches");
  {
    std::ifstream in(run / "bounds.csv");
    std::string line;
    int rows = 0;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) ++rows;
    CHECK(rows == 3);
  }
  json erep = json::parse(slurp(run / "report.json"));
  CHECK(erep.at("command") == "evaluate");

  CHECK(run_cli("hedge --config " + cfg + " --seed 7 --out \"" + run.string() + "\"") == 0);
  REQUIRE(fs::exists(run / "hedge.csv"));
  CHECK(first_line(run / "hedge.csv") == "bin_lo,bin_hi,count");

  CHECK(run_cli("regions --config " + cfg + " --seed 7 --out \"" + run.string() + "\"") == 0);
  REQUIRE(fs::exists(run / "regions.csv"));
}

TEST_CASE("cli table1 runs the whole pipeline in one invocation") {
  const std::string cfg = "\"" + tiny_config().string() + "\"";
  const fs::path run = scratch_dir() / "run_table";
  REQUIRE(run_cli("table1 --config " + cfg + " --seed 5 --out \"" + run.string() + "\"") == 0);
  REQUIRE(fs::exists(run / "table1.csv"));
  REQUIRE(fs::exists(run / "trace-dual.csv"));
  REQUIRE(fs::exists(run / "trace-primal.csv"));
  CHECK(first_line(run / "table1.csv") ==
        "label,ub1,ub2,ub3,lb1,lb2,lb3,gap_max,cvar95,cvar99");
  {
    std::ifstream in(run / "table1.csv");
    std::string header, row;
    std::getline(in, header);
    REQUIRE(std::getline(in, row));
    CHECK(row.rfind("trained,", 0) == 0);
  }
  json rep = json::parse(slurp(run / "report.json"));
  CHECK(rep.at("command") == "table1");
  CHECK(rep.at("results").at("pass").get<bool>());
}

TEST_CASE("cli certify accepts the bundled lattices and random draws") {
  const fs::path out = scratch_dir() / "cert";
  const std::string fixture = std::string(DEEPSWITCH_DATA_DIR) + "/lattices/two_leaf.json";
  CHECK(run_cli("certify --file \"" + fixture + "\" --out \"" + out.string() + "\"") == 0);
  CHECK(run_cli("certify --random 2 --seed 3 --out \"" + out.string() + "\"") == 0);
  json rep = json::parse(slurp(out / "report.json"));
  CHECK(rep.at("command") == "certify");
  CHECK(rep.at("results").at("all_pass").get<bool>());
}
