#pragma once
// Dense path storage and its binary dump format: one JSON header line,
// then little-endian float64 payloads (states, then Brownian increments,
// then jump counts when present).

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "deepswitch/common.hpp"
#include "deepswitch/time_grid.hpp"

#include <nlohmann/json.hpp>

namespace deepswitch {

static_assert(std::endian::native == std::endian::little,
              "dump format assumes a little-endian host");

struct PathBatch {
  int n_paths = 0;
  int n_steps = 0;     // simulated substeps; states hold n_steps + 1 points
  int dim = 0;
  int start_step = 0;  // global substep index of states[...][0]
  std::uint64_t seed = 0;
  TimeGrid grid;

  std::vector<double> states;  // [path][step 0..n_steps][dim]
  std::vector<double> dw;      // [path][step 0..n_steps-1][dim]
  std::vector<double> dn;      // jump counts, same shape as dw; empty if none

  double state(int p, int s, int k) const {
    return states[(static_cast<std::size_t>(p) * (n_steps + 1) + s) * dim + k];
  }
  const double* state_row(int p, int s) const {
    return states.data() + (static_cast<std::size_t>(p) * (n_steps + 1) + s) * dim;
  }
  double dw_at(int p, int s, int k) const {
    return dw[(static_cast<std::size_t>(p) * n_steps + s) * dim + k];
  }
  double dn_at(int p, int s, int k) const {
    return dn[(static_cast<std::size_t>(p) * n_steps + s) * dim + k];
  }
  bool has_jumps() const { return !dn.empty(); }

  // Global substep index s (start_step-relative access helper).
  double time_of_local_step(int s) const { return grid.time_at_step(start_step + s); }
};

inline void dump_path_batch(const PathBatch& pb, const std::string& file) {
  nlohmann::json header{{"format", "deepswitch-paths-v1"},
                        {"n_paths", pb.n_paths},
                        {"n_steps", pb.n_steps},
                        {"dim", pb.dim},
                        {"start_step", pb.start_step},
                        {"seed", pb.seed},
                        {"horizon", pb.grid.horizon},
                        {"n_dates", pb.grid.n_dates},
                        {"substeps", pb.grid.substeps},
                        {"has_jumps", pb.has_jumps()}};
  std::FILE* f = std::fopen(file.c_str(), "wb");
  if (!f) throw numeric_error("dump_path_batch: cannot open " + file);
  std::string line = header.dump();
  line.push_back('\n');
  std::fwrite(line.data(), 1, line.size(), f);
  auto write = [&](const std::vector<double>& v) {
    if (!v.empty() && std::fwrite(v.data(), sizeof(double), v.size(), f) != v.size()) {
      std::fclose(f);
      throw numeric_error("dump_path_batch: short write to " + file);
    }
  };
  write(pb.states);
  write(pb.dw);
  write(pb.dn);
  std::fclose(f);
}

inline PathBatch load_path_batch(const std::string& file) {
  std::FILE* f = std::fopen(file.c_str(), "rb");
  if (!f) throw numeric_error("load_path_batch: cannot open " + file);
  std::string line;
  for (int c = std::fgetc(f); c != EOF && c != '\n'; c = std::fgetc(f))
    line.push_back(static_cast<char>(c));
  nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "deepswitch-paths-v1") {
    std::fclose(f);
    throw numeric_error("load_path_batch: bad header in " + file);
  }
  PathBatch pb;
  pb.n_paths = header.at("n_paths").get<int>();
  pb.n_steps = header.at("n_steps").get<int>();
  pb.dim = header.at("dim").get<int>();
  pb.start_step = header.at("start_step").get<int>();
  pb.seed = header.at("seed").get<std::uint64_t>();
  pb.grid.horizon = header.at("horizon").get<double>();
  pb.grid.n_dates = header.at("n_dates").get<int>();
  pb.grid.substeps = header.at("substeps").get<int>();
  bool jumps = header.at("has_jumps").get<bool>();

  std::size_t n_states = static_cast<std::size_t>(pb.n_paths) * (pb.n_steps + 1) * pb.dim;
  std::size_t n_incr = static_cast<std::size_t>(pb.n_paths) * pb.n_steps * pb.dim;
  check_allocation((n_states + n_incr * (jumps ? 2 : 1)) * sizeof(double), "load_path_batch");
  pb.states.resize(n_states);
  pb.dw.resize(n_incr);
  if (jumps) pb.dn.resize(n_incr);
  auto read = [&](std::vector<double>& v) {
    if (!v.empty() && std::fread(v.data(), sizeof(double), v.size(), f) != v.size()) {
      std::fclose(f);
      throw numeric_error("load_path_batch: truncated payload in " + file);
    }
  };
  read(pb.states);
  read(pb.dw);
  read(pb.dn);
  std::fclose(f);
  return pb;
}

}  // namespace deepswitch
