#pragma once
// Checkpoints: one JSON meta line, then per network a raw little-endian
// float64 blob of learnable parameters followed by the batch-norm running
// statistics. Architecture is reconstructed from the meta, so a load needs
// nothing but the file.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "deepswitch/common.hpp"
#include "deepswitch/dual.hpp"
#include "deepswitch/network.hpp"
#include "deepswitch/primal.hpp"

namespace deepswitch {

inline std::size_t running_count(const Network& net) {
  std::size_t n = 0;
  if (net.input_bn) n += net.in_norm.run_mean.size() + net.in_norm.run_var.size();
  for (const auto& l : net.layers)
    if (l.bn) n += l.norm.run_mean.size() + l.norm.run_var.size();
  return n;
}

inline void collect_running(const Network& net, std::vector<double>& out) {
  out.clear();
  out.reserve(running_count(net));
  auto push = [&out](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
  if (net.input_bn) {
    push(net.in_norm.run_mean);
    push(net.in_norm.run_var);
  }
  for (const auto& l : net.layers)
    if (l.bn) {
      push(l.norm.run_mean);
      push(l.norm.run_var);
    }
}

inline void assign_running(Network& net, const std::vector<double>& data) {
  if (data.size() != running_count(net))
    throw numeric_error("checkpoint: running statistics size mismatch");
  std::size_t pos = 0;
  auto pull = [&](std::vector<double>& v) {
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(pos),
              data.begin() + static_cast<std::ptrdiff_t>(pos + v.size()), v.begin());
    pos += v.size();
  };
  if (net.input_bn) {
    pull(net.in_norm.run_mean);
    pull(net.in_norm.run_var);
  }
  for (auto& l : net.layers)
    if (l.bn) {
      pull(l.norm.run_mean);
      pull(l.norm.run_var);
    }
}

namespace checkpoint_detail {

inline void write_blob(std::ofstream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_blob(std::ifstream& in, std::size_t n) {
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw config_error("checkpoint: truncated tensor data");
  return v;
}

inline void write_nets(std::ofstream& out, std::vector<Network>& nets) {
  std::vector<double> buf;
  for (auto& net : nets) {
    get_params(net, buf);
    write_blob(out, buf);
    collect_running(net, buf);
    write_blob(out, buf);
  }
}

inline void read_nets(std::ifstream& in, std::vector<Network>& nets) {
  for (auto& net : nets) {
    set_params(net, read_blob(in, net.param_count()));
    assign_running(net, read_blob(in, running_count(net)));
  }
}

inline nlohmann::json grid_meta(const TimeGrid& g) {
  return {{"horizon", g.horizon}, {"n_dates", g.n_dates}, {"substeps", g.substeps}};
}

inline TimeGrid grid_from_meta(const nlohmann::json& j) {
  TimeGrid g{j.at("horizon").get<double>(), j.at("n_dates").get<int>(),
             j.at("substeps").get<int>()};
  g.validate();
  return g;
}

// Hidden width/depth of a make_mlp product, for reconstruction.
inline std::pair<int, int> mlp_shape(const Network& net) {
  const int depth = static_cast<int>(net.layers.size()) - 1;
  const int width = depth > 0 ? net.layers.front().n_out : 0;
  return {width, depth};
}

inline nlohmann::json open_meta(std::ifstream& in, const std::string& path,
                                const std::string& kind) {
  if (!in) throw config_error("cannot open checkpoint: " + path);
  std::string line;
  std::getline(in, line);
  nlohmann::json meta = nlohmann::json::parse(line, nullptr, false);
  if (meta.is_discarded() || meta.value("format", "") != "deepswitch-net-v1")
    throw config_error("not a checkpoint file: " + path);
  if (meta.value("kind", "") != kind)
    throw config_error("checkpoint kind mismatch in " + path + ": expected " + kind);
  return meta;
}

}  // namespace checkpoint_detail

inline void save_dual(const std::string& path, DualPenalty& pen,
                      const nlohmann::json& extra = {}) {
  namespace cd = checkpoint_detail;
  auto [width, depth] = cd::mlp_shape(pen.z.front());
  nlohmann::json meta = {{"format", "deepswitch-net-v1"},
                         {"kind", "dual"},
                         {"grid", cd::grid_meta(pen.grid)},
                         {"n_regimes", pen.n_regimes},
                         {"dim", pen.dim},
                         {"width", width},
                         {"depth", depth},
                         {"jump_nets", pen.jump_nets},
                         {"compensate_jumps", pen.compensate_jumps},
                         {"lambda", pen.lambda}};
  if (!extra.is_null() && !extra.empty()) meta["run"] = extra;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write checkpoint: " + path);
  out << meta.dump() << "\n";
  cd::write_nets(out, pen.z);
  cd::write_nets(out, pen.zp);
  if (!out) throw config_error("checkpoint write failed: " + path);
}

inline DualPenalty load_dual(const std::string& path) {
  namespace cd = checkpoint_detail;
  std::ifstream in(path, std::ios::binary);
  nlohmann::json meta = cd::open_meta(in, path, "dual");
  DualPenalty pen;
  pen.grid = cd::grid_from_meta(meta.at("grid"));
  pen.n_regimes = meta.at("n_regimes").get<int>();
  pen.dim = meta.at("dim").get<int>();
  pen.jump_nets = meta.at("jump_nets").get<bool>();
  pen.compensate_jumps = meta.at("compensate_jumps").get<bool>();
  pen.lambda = meta.at("lambda").get<std::vector<double>>();
  const int width = meta.at("width").get<int>();
  const int depth = meta.at("depth").get<int>();
  const std::size_t n_nets = static_cast<std::size_t>(pen.grid.n_dates) * pen.n_regimes;
  pen.z.reserve(n_nets);
  for (std::size_t k = 0; k < n_nets; ++k)
    pen.z.push_back(make_mlp(1 + pen.dim, width, depth, pen.dim));
  if (pen.jump_nets)
    for (std::size_t k = 0; k < n_nets; ++k)
      pen.zp.push_back(make_mlp(1 + pen.dim, width, depth, pen.dim));
  cd::read_nets(in, pen.z);
  cd::read_nets(in, pen.zp);
  return pen;
}

inline void save_policy(const std::string& path, SwitchPolicy& pol,
                        const nlohmann::json& extra = {}) {
  namespace cd = checkpoint_detail;
  auto [width, depth] = cd::mlp_shape(pol.nets.front());
  nlohmann::json meta = {{"format", "deepswitch-net-v1"},
                         {"kind", "policy"},
                         {"grid", cd::grid_meta(pol.grid)},
                         {"n_regimes", pol.n_regimes},
                         {"dim", pol.dim},
                         {"width", width},
                         {"depth", depth}};
  if (!extra.is_null() && !extra.empty()) meta["run"] = extra;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config_error("cannot write checkpoint: " + path);
  out << meta.dump() << "\n";
  cd::write_nets(out, pol.nets);
  if (!out) throw config_error("checkpoint write failed: " + path);
}

inline SwitchPolicy load_policy(const std::string& path) {
  namespace cd = checkpoint_detail;
  std::ifstream in(path, std::ios::binary);
  nlohmann::json meta = cd::open_meta(in, path, "policy");
  SwitchPolicy pol;
  pol.grid = cd::grid_from_meta(meta.at("grid"));
  pol.n_regimes = meta.at("n_regimes").get<int>();
  pol.dim = meta.at("dim").get<int>();
  const int width = meta.at("width").get<int>();
  const int depth = meta.at("depth").get<int>();
  pol.nets.reserve(static_cast<std::size_t>(pol.grid.n_dates));
  for (int n = 0; n < pol.grid.n_dates; ++n)
    pol.nets.push_back(make_mlp(1 + pol.dim + pol.n_regimes, width, depth, pol.n_regimes));
  cd::read_nets(in, pol.nets);
  return pol;
}

}  // namespace deepswitch
