#pragma once
// Run configuration: JSON in, fully resolved settings out. Problems come
// from a built-in name or an inline spec (dynamics + payoff expressions).
// Validation errors carry the JSON pointer of the offending field. Regime
// and date indices are 1-based at the config/CSV boundary and 0-based in
// memory.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "deepswitch/common.hpp"
#include "deepswitch/dual.hpp"
#include "deepswitch/primal.hpp"
#include "deepswitch/problem.hpp"

namespace deepswitch {

struct EvalConfig {
  int paths = 1'638'400;
  int shard = 8192;
  int hedge_paths = 100'000;
  int hedge_regime = 0;  // 0-based; resolved from 1-based config
  bool shortfall = true;
  int region_date = 0;
  int region_states = 2000;
  int cond_paths = 32;
};

struct RunConfig {
  SwitchingProblem problem;
  DualTrainConfig dual;
  PolicyTrainConfig policy;
  EvalConfig eval;
  std::uint64_t seed = 1;
  int workers = 1;
  bool desk_scale = false;
  std::string out_dir = "out";
  nlohmann::json resolved;  // stamped into every artifact
};

namespace config_detail {

using nlohmann::json;

inline void expect_object(const json& j, const std::string& ptr) {
  if (!j.is_object()) throw config_error(ptr + ": expected an object");
}

template <typename T>
T get_or(const json& j, const std::string& key, const std::string& ptr, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error(ptr + "/" + key + ": wrong type");
  }
}

inline std::vector<double> get_vec(const json& j, const std::string& key,
                                   const std::string& ptr, int want) {
  std::vector<double> v;
  try {
    v = j.at(key).get<std::vector<double>>();
  } catch (const json::exception&) {
    throw config_error(ptr + "/" + key + ": expected an array of " + std::to_string(want) +
                       " numbers");
  }
  if (want >= 0 && static_cast<int>(v.size()) != want)
    throw config_error(ptr + "/" + key + ": expected " + std::to_string(want) + " entries");
  return v;
}

inline std::vector<double> get_matrix(const json& j, const std::string& key,
                                      const std::string& ptr, int rows, int cols) {
  if (!j.contains(key) || !j.at(key).is_array() ||
      static_cast<int>(j.at(key).size()) != rows)
    throw config_error(ptr + "/" + key + ": expected " + std::to_string(rows) + " rows");
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j.at(key).at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw config_error(ptr + "/" + key + "/" + std::to_string(r) + ": expected " +
                         std::to_string(cols) + " entries");
    for (int c = 0; c < cols; ++c) flat.push_back(row.at(static_cast<std::size_t>(c)).get<double>());
  }
  return flat;
}

inline Dynamics parse_dynamics(const json& j, const std::string& ptr) {
  expect_object(j, ptr);
  const std::string type = get_or<std::string>(j, "type", ptr, "");
  if (type == "gbm") {
    GbmParams p;
    p.x0 = get_vec(j, "x0", ptr, -1);
    const int d = static_cast<int>(p.x0.size());
    p.mu = get_vec(j, "mu", ptr, d);
    p.sigma = get_vec(j, "sigma", ptr, d);
    return p;
  }
  if (type == "affine") {
    AffineItoParams p;
    p.x0 = get_vec(j, "x0", ptr, -1);
    const int d = static_cast<int>(p.x0.size());
    p.a_mu = get_matrix(j, "a_mu", ptr, d, d);
    p.b_mu = get_vec(j, "b_mu", ptr, d);
    if (!j.contains("a_sig") || static_cast<int>(j.at("a_sig").size()) != d)
      throw config_error(ptr + "/a_sig: expected one d x d matrix per driver");
    if (!j.contains("b_sig") || static_cast<int>(j.at("b_sig").size()) != d)
      throw config_error(ptr + "/b_sig: expected one d-vector per driver");
    for (int k = 0; k < d; ++k) {
      json sub{{"m", j.at("a_sig").at(static_cast<std::size_t>(k))}};
      p.a_sig.push_back(get_matrix(sub, "m", ptr + "/a_sig/" + std::to_string(k), d, d));
      json subv{{"v", j.at("b_sig").at(static_cast<std::size_t>(k))}};
      p.b_sig.push_back(get_vec(subv, "v", ptr + "/b_sig/" + std::to_string(k), d));
    }
    return p;
  }
  if (type == "expou_jump") {
    ExpOuJumpParams p;
    p.x0 = get_vec(j, "x0", ptr, -1);
    const int d = static_cast<int>(p.x0.size());
    p.kappa = get_vec(j, "kappa", ptr, d);
    p.mu = get_vec(j, "mu", ptr, d);
    p.sigma1 = get_matrix(j, "sigma1", ptr, d, d);
    p.sigma2 = get_matrix(j, "sigma2", ptr, d, d);
    p.lambda = get_vec(j, "lambda", ptr, d);
    return p;
  }
  throw config_error(ptr + "/type: expected gbm, affine or expou_jump");
}

inline BaselineSpec parse_baseline(const json& j, const std::string& ptr) {
  expect_object(j, ptr);
  const std::string kind = get_or<std::string>(j, "kind", ptr, "zero");
  if (kind == "zero") return BaselineSpec::zero();
  if (kind == "linear") return BaselineSpec::linear(get_or<double>(j, "rate", ptr, 0.45));
  if (kind == "constant")
    return BaselineSpec::constant_value(get_or<double>(j, "value", ptr, 0.0));
  if (kind == "cost_moment") {
    BaselineSpec b = BaselineSpec::cost_moment();
    b.cost_slope = get_or<double>(j, "cost_slope", ptr, b.cost_slope);
    b.cost_offset = get_or<double>(j, "cost_offset", ptr, b.cost_offset);
    b.moment_scale = get_or<double>(j, "moment_scale", ptr, b.moment_scale);
    b.moment_floor = get_or<double>(j, "moment_floor", ptr, b.moment_floor);
    return b;
  }
  if (kind == "field") {
    if (!j.contains("expr")) throw config_error(ptr + "/expr: required for field baseline");
    return BaselineSpec::from_field(parse_field(j.at("expr").get<std::string>()));
  }
  throw config_error(ptr + "/kind: expected zero, linear, constant, cost_moment or field");
}

inline std::vector<FieldFn> parse_fields(const json& j, const std::string& key,
                                         const std::string& ptr, int want) {
  if (!j.contains(key) || !j.at(key).is_array() ||
      static_cast<int>(j.at(key).size()) != want)
    throw config_error(ptr + "/" + key + ": expected " + std::to_string(want) +
                       " expressions");
  std::vector<FieldFn> out;
  out.reserve(static_cast<std::size_t>(want));
  for (int i = 0; i < want; ++i) {
    try {
      out.push_back(parse_field(j.at(key).at(static_cast<std::size_t>(i)).get<std::string>()));
    } catch (const config_error& e) {
      throw config_error(ptr + "/" + key + "/" + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

inline CostModel parse_costs(const json& j, const std::string& ptr, int J) {
  expect_object(j, ptr);
  if (j.contains("matrix"))
    return CostModel::from_matrix(J, get_matrix(j, "matrix", ptr, J, J));
  if (j.contains("uniform")) {
    try {
      return CostModel::uniform_field(J, parse_field(j.at("uniform").get<std::string>()));
    } catch (const config_error& e) {
      throw config_error(ptr + "/uniform: " + std::string(e.what()));
    }
  }
  if (j.contains("fields")) {
    if (!j.at("fields").is_array() || static_cast<int>(j.at("fields").size()) != J)
      throw config_error(ptr + "/fields: expected " + std::to_string(J) + " rows");
    std::vector<FieldFn> flat;
    for (int r = 0; r < J; ++r) {
      json sub{{"row", j.at("fields").at(static_cast<std::size_t>(r))}};
      auto row = parse_fields(sub, "row", ptr + "/fields/" + std::to_string(r), J);
      flat.insert(flat.end(), row.begin(), row.end());
    }
    return CostModel::from_fields(J, std::move(flat));
  }
  throw config_error(ptr + ": expected matrix, uniform or fields");
}

inline SwitchingProblem parse_problem(const json& j, int d_override) {
  const std::string ptr = "/problem";
  expect_object(j, ptr);
  const std::string name = get_or<std::string>(j, "name", ptr, "");
  if (!name.empty()) {
    const int d = d_override > 0 ? d_override : get_or<int>(j, "d", ptr, 2);
    SwitchingProblem pb = make_problem(name, d);
    if (j.contains("n_dates")) pb.grid.n_dates = j.at("n_dates").get<int>();
    if (j.contains("substeps")) pb.grid.substeps = j.at("substeps").get<int>();
    if (j.contains("horizon")) pb.grid.horizon = j.at("horizon").get<double>();
    pb.validate();
    return pb;
  }
  SwitchingProblem pb;
  pb.name = get_or<std::string>(j, "label", ptr, "inline");
  pb.grid.horizon = get_or<double>(j, "horizon", ptr, 1.0);
  pb.grid.n_dates = get_or<int>(j, "n_dates", ptr, 1);
  pb.grid.substeps = get_or<int>(j, "substeps", ptr, 1);
  if (!j.contains("dynamics")) throw config_error(ptr + "/dynamics: required");
  pb.dynamics = parse_dynamics(j.at("dynamics"), ptr + "/dynamics");
  pb.n_regimes = get_or<int>(j, "n_regimes", ptr, 1);
  if (pb.n_regimes < 1) throw config_error(ptr + "/n_regimes: must be >= 1");
  pb.ref_regime = get_or<int>(j, "ref_regime", ptr, 1) - 1;
  if (pb.ref_regime < 0 || pb.ref_regime >= pb.n_regimes)
    throw config_error(ptr + "/ref_regime: out of 1..n_regimes");
  pb.running = parse_fields(j, "running", ptr, pb.n_regimes);
  if (j.contains("terminal"))
    pb.terminal = parse_fields(j, "terminal", ptr, pb.n_regimes);
  else
    pb.terminal.assign(static_cast<std::size_t>(pb.n_regimes),
                       [](double, const double*, int) { return 0.0; });
  if (!j.contains("costs")) throw config_error(ptr + "/costs: required");
  pb.costs = parse_costs(j.at("costs"), ptr + "/costs", pb.n_regimes);
  if (j.contains("baseline")) pb.baseline = parse_baseline(j.at("baseline"), ptr + "/baseline");
  pb.validate();
  return pb;
}

}  // namespace config_detail

// Paper-scale training epochs for the built-ins; inline problems default to
// the diffusion setting.
inline int default_epochs(const SwitchingProblem& pb) {
  if (pb.name == "expou_jump") return 300 + 3 * pb.dim();
  return 1000 + 20 * pb.dim();
}

// Shrinks training and evaluation by roughly 10x. Bound quality at this
// scale is held by wider acceptance tolerances, not by luck: fewer epochs
// are partly bought back with more optimizer steps per stage batch.
inline void apply_desk_scale(RunConfig& cfg) {
  cfg.desk_scale = true;
  cfg.dual.epochs = (cfg.dual.epochs + 9) / 10;
  cfg.dual.batch = 512;
  cfg.dual.inner_steps = 4;
  cfg.policy.epochs = (cfg.policy.epochs + 9) / 10;
  cfg.policy.batch = 512;
  cfg.policy.inner_steps = 4;
  cfg.eval.paths = (cfg.eval.paths + 9) / 10;
  cfg.eval.hedge_paths = std::max(1000, (cfg.eval.hedge_paths + 9) / 10);
  cfg.eval.region_states = std::min(cfg.eval.region_states, 500);
}

inline RunConfig parse_config(const nlohmann::json& j, int d_override = 0) {
  namespace cd = config_detail;
  cd::expect_object(j, "");
  RunConfig cfg;
  cfg.problem = cd::parse_problem(
      j.contains("problem") ? j.at("problem") : nlohmann::json{{"name", "gbm3regime"}},
      d_override);

  cfg.seed = cd::get_or<std::uint64_t>(j, "seed", "", 1);
  cfg.workers = cd::get_or<int>(j, "workers", "", 1);
  if (cfg.workers < 1) throw config_error("/workers: must be >= 1");
  cfg.out_dir = cd::get_or<std::string>(j, "out", "", "out");

  const nlohmann::json tr = j.contains("training") ? j.at("training") : nlohmann::json::object();
  cd::expect_object(tr, "/training");
  cfg.dual.epochs = cd::get_or<int>(tr, "epochs", "/training", default_epochs(cfg.problem));
  cfg.dual.batch = cd::get_or<int>(tr, "batch", "/training", 4096);
  cfg.dual.inner_steps = cd::get_or<int>(tr, "inner_steps", "/training", 1);
  cfg.dual.lr = cd::get_or<double>(tr, "lr", "/training", 1e-3);
  if (!(cfg.dual.lr > 0.0)) throw config_error("/training/lr: must be > 0");
  const std::string loss = cd::get_or<std::string>(tr, "loss", "/training", "d2");
  if (loss != "d1" && loss != "d2")
    throw config_error("/training/loss: expected d1 or d2");
  cfg.dual.l2_loss = loss == "d2";
  cfg.dual.width = cd::get_or<int>(tr, "width", "/training", 0);
  cfg.dual.depth = cd::get_or<int>(tr, "depth", "/training", 3);
  cfg.dual.jump_nets = cd::get_or<bool>(tr, "jump_nets", "/training", true);
  cfg.dual.compensate_jumps = cd::get_or<bool>(tr, "compensate_jumps", "/training", true);
  cfg.dual.seed = cfg.seed;
  if (tr.contains("baseline"))
    cfg.problem.baseline = cd::parse_baseline(tr.at("baseline"), "/training/baseline");

  cfg.policy.epochs = cfg.dual.epochs;
  cfg.policy.batch = cfg.dual.batch;
  cfg.policy.inner_steps = cfg.dual.inner_steps;
  cfg.policy.lr = cfg.dual.lr;
  cfg.policy.width = cfg.dual.width;
  cfg.policy.depth = cfg.dual.depth;
  cfg.policy.tau_start = cd::get_or<double>(tr, "tau_start", "/training", 1.0);
  cfg.policy.tau_end = cd::get_or<double>(tr, "tau_end", "/training", 0.1);
  cfg.policy.seed = cfg.seed;

  const nlohmann::json ev = j.contains("evaluation") ? j.at("evaluation") : nlohmann::json::object();
  cd::expect_object(ev, "/evaluation");
  cfg.eval.paths = cd::get_or<int>(ev, "paths", "/evaluation", 1'638'400);
  cfg.eval.shard = cd::get_or<int>(ev, "shard", "/evaluation", 8192);
  cfg.eval.hedge_paths = cd::get_or<int>(ev, "hedge_paths", "/evaluation", 100'000);
  cfg.eval.hedge_regime =
      cd::get_or<int>(ev, "hedge_regime", "/evaluation", cfg.problem.ref_regime + 1) - 1;
  cfg.eval.shortfall = cd::get_or<bool>(ev, "shortfall", "/evaluation", true);
  cfg.eval.region_date = cd::get_or<int>(ev, "region_date", "/evaluation",
                                         cfg.problem.grid.n_dates / 2 + 1) - 1;
  cfg.eval.region_states = cd::get_or<int>(ev, "region_states", "/evaluation", 2000);
  cfg.eval.cond_paths = cd::get_or<int>(ev, "cond_paths", "/evaluation", 32);
  if (cfg.eval.paths < 1) throw config_error("/evaluation/paths: must be >= 1");
  if (cfg.eval.hedge_regime < 0 || cfg.eval.hedge_regime >= cfg.problem.n_regimes)
    throw config_error("/evaluation/hedge_regime: out of 1..n_regimes");
  if (cfg.eval.region_date < 0 || cfg.eval.region_date >= cfg.problem.grid.n_dates)
    throw config_error("/evaluation/region_date: out of 1..n_dates");

  if (cd::get_or<bool>(j, "desk_scale", "", false)) apply_desk_scale(cfg);
  cfg.resolved = j;
  return cfg;
}

inline RunConfig load_config(const std::string& path, int d_override = 0) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw config_error("malformed JSON in config: " + path);
  return parse_config(j, d_override);
}

// The fully resolved settings, for artifact stamps.
inline nlohmann::json resolved_config(const RunConfig& cfg) {
  nlohmann::json grid = {{"horizon", cfg.problem.grid.horizon},
                         {"n_dates", cfg.problem.grid.n_dates},
                         {"substeps", cfg.problem.grid.substeps}};
  return {{"problem", {{"name", cfg.problem.name},
                       {"d", cfg.problem.dim()},
                       {"n_regimes", cfg.problem.n_regimes},
                       {"ref_regime", cfg.problem.ref_regime + 1}}},
          {"grid", grid},
          {"training",
           {{"epochs", cfg.dual.epochs},
            {"batch", cfg.dual.batch},
            {"inner_steps", cfg.dual.inner_steps},
            {"lr", cfg.dual.lr},
            {"loss", cfg.dual.l2_loss ? "d2" : "d1"},
            {"width", cfg.dual.width},
            {"depth", cfg.dual.depth},
            {"tau_start", cfg.policy.tau_start},
            {"tau_end", cfg.policy.tau_end}}},
          {"evaluation",
           {{"paths", cfg.eval.paths},
            {"shard", cfg.eval.shard},
            {"hedge_paths", cfg.eval.hedge_paths},
            {"hedge_regime", cfg.eval.hedge_regime + 1},
            {"shortfall", cfg.eval.shortfall},
            {"region_date", cfg.eval.region_date + 1},
            {"region_states", cfg.eval.region_states},
            {"cond_paths", cfg.eval.cond_paths}}},
          {"seed", cfg.seed},
          {"workers", cfg.workers},
          {"desk_scale", cfg.desk_scale},
          {"out", cfg.out_dir}};
}

}  // namespace deepswitch
