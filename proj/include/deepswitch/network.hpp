#pragma once
// Dense feedforward networks with optional batch normalization before the
// input layer and before each hidden activation. Forward, exact reverse-mode
// gradients, Xavier init, and a ReLU max-composition operator.
//
// Everything is float64. Batch matmuls route through linalg.hpp (CBLAS when
// available). Backward in train mode differentiates through the batch
// statistics, so finite differences of a batch loss match the analytic
// gradient to roundoff.

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "deepswitch/common.hpp"
#include "deepswitch/linalg.hpp"

namespace deepswitch {

enum class Activation { relu, tanh_act, identity };
enum class NetMode { train, eval };

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;  // running = 0.9 old + 0.1 batch

struct BatchNorm {
  std::vector<double> gamma, beta;
  std::vector<double> run_mean, run_var;

  void init(int features) {
    gamma.assign(static_cast<std::size_t>(features), 1.0);
    beta.assign(static_cast<std::size_t>(features), 0.0);
    run_mean.assign(static_cast<std::size_t>(features), 0.0);
    run_var.assign(static_cast<std::size_t>(features), 1.0);
  }
  int features() const { return static_cast<int>(gamma.size()); }
};

struct Layer {
  int n_in = 0, n_out = 0;
  std::vector<double> w;  // row-major [n_out][n_in]
  std::vector<double> b;  // [n_out]
  bool bn = false;        // normalize between affine and activation
  Activation act = Activation::identity;
  BatchNorm norm;
  // Per-unit activation override; only composed max networks use it, to
  // carry already-computed values across levels (an identity unit stands in
  // for the ReLU(x) - ReLU(-x) pair). Empty for trained networks.
  std::vector<Activation> unit_act;

  Activation activation_of(int unit) const {
    return unit_act.empty() ? act : unit_act[static_cast<std::size_t>(unit)];
  }
};

struct Network {
  int input_dim = 0;
  bool input_bn = false;
  BatchNorm in_norm;
  std::vector<Layer> layers;

  int output_dim() const { return layers.empty() ? input_dim : layers.back().n_out; }

  bool mixed_activations() const {
    for (const auto& l : layers)
      if (!l.unit_act.empty()) return true;
    return false;
  }

  // Count of learnable scalars (weights, biases, BN scale/shift).
  std::size_t param_count() const {
    std::size_t n = 0;
    if (input_bn) n += in_norm.gamma.size() + in_norm.beta.size();
    for (const auto& l : layers) {
      n += l.w.size() + l.b.size();
      if (l.bn) n += l.norm.gamma.size() + l.norm.beta.size();
    }
    return n;
  }

  // Nonzero learnable entries; the size measure for composed networks.
  std::size_t size_nonzero() const {
    std::size_t n = 0;
    auto count = [&n](const std::vector<double>& v) {
      for (double x : v)
        if (x != 0.0) ++n;
    };
    if (input_bn) { count(in_norm.gamma); count(in_norm.beta); }
    for (const auto& l : layers) {
      count(l.w);
      count(l.b);
      if (l.bn) { count(l.norm.gamma); count(l.norm.beta); }
    }
    return n;
  }
};

// Hidden layers of uniform width, batch norm before the input layer and
// before every hidden activation, linear output layer.
inline Network make_mlp(int input_dim, int hidden_width, int n_hidden, int output_dim,
                        Activation act = Activation::relu, bool batch_norm = true) {
  if (input_dim < 1 || hidden_width < 1 || n_hidden < 0 || output_dim < 1)
    throw config_error("make_mlp: dimensions must be positive");
  Network net;
  net.input_dim = input_dim;
  net.input_bn = batch_norm;
  if (batch_norm) net.in_norm.init(input_dim);
  int prev = input_dim;
  for (int h = 0; h < n_hidden; ++h) {
    Layer l;
    l.n_in = prev;
    l.n_out = hidden_width;
    l.w.assign(static_cast<std::size_t>(l.n_in) * l.n_out, 0.0);
    l.b.assign(static_cast<std::size_t>(l.n_out), 0.0);
    l.bn = batch_norm;
    if (batch_norm) l.norm.init(l.n_out);
    l.act = act;
    net.layers.push_back(std::move(l));
    prev = hidden_width;
  }
  Layer out;
  out.n_in = prev;
  out.n_out = output_dim;
  out.w.assign(static_cast<std::size_t>(out.n_in) * out.n_out, 0.0);
  out.b.assign(static_cast<std::size_t>(out.n_out), 0.0);
  out.act = Activation::identity;
  net.layers.push_back(std::move(out));
  return net;
}

// Weights ~ N(0, 2/(fan_in+fan_out)), biases zero, BN at identity.
inline void xavier_init(Network& net, std::mt19937_64& eng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& l : net.layers) {
    double sd = std::sqrt(2.0 / static_cast<double>(l.n_in + l.n_out));
    for (auto& x : l.w) x = sd * gauss(eng);
    for (auto& x : l.b) x = 0.0;
    if (l.bn) l.norm.init(l.n_out);
  }
  if (net.input_bn) net.in_norm.init(net.input_dim);
}

inline void xavier_init(Network& net, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  xavier_init(net, eng);
}

// Activation saved by forward; backward re-derives the slope from it.
struct ForwardCache {
  int rows = 0;
  NetMode mode = NetMode::train;
  std::vector<double> in_post;        // input after optional input BN
  std::vector<double> in_hat;         // normalized input (input BN only)
  std::vector<double> in_mu, in_var;  // input batch stats (train only)
  struct LayerSlot {
    std::vector<double> zhat;  // normalized pre-activation (BN layers)
    std::vector<double> post;  // activated output
    std::vector<double> mu, var;
  };
  std::vector<LayerSlot> layers;
};

namespace detail {

// In-place batch norm of z (rows x f). Returns normalized values in zhat,
// scale/shift applied into z. Batch statistics use the biased variance;
// running variance stores the unbiased version, matching common practice.
inline void bn_forward(BatchNorm& bn, double* z, int rows, int f, NetMode mode,
                       bool update_running, double* zhat, double* mu_out, double* var_out) {
  double inv_rows = 1.0 / static_cast<double>(rows);
  for (int c = 0; c < f; ++c) {
    double mu, var;
    if (mode == NetMode::train) {
      double s = 0.0;
      for (int r = 0; r < rows; ++r) s += z[static_cast<std::size_t>(r) * f + c];
      mu = s * inv_rows;
      double q = 0.0;
      for (int r = 0; r < rows; ++r) {
        double d = z[static_cast<std::size_t>(r) * f + c] - mu;
        q += d * d;
      }
      var = q * inv_rows;
      if (update_running) {
        double unbiased = rows > 1 ? q / static_cast<double>(rows - 1) : var;
        bn.run_mean[c] = (1.0 - kBnMomentum) * bn.run_mean[c] + kBnMomentum * mu;
        bn.run_var[c] = (1.0 - kBnMomentum) * bn.run_var[c] + kBnMomentum * unbiased;
      }
      if (mu_out) mu_out[c] = mu;
      if (var_out) var_out[c] = var;
    } else {
      mu = bn.run_mean[c];
      var = bn.run_var[c];
    }
    double inv = 1.0 / std::sqrt(var + kBnEps);
    double g = bn.gamma[c], be = bn.beta[c];
    for (int r = 0; r < rows; ++r) {
      std::size_t idx = static_cast<std::size_t>(r) * f + c;
      double h = (z[idx] - mu) * inv;
      if (zhat) zhat[idx] = h;
      z[idx] = g * h + be;
    }
  }
}

inline void apply_activation(const Layer& l, double* z, int rows) {
  int f = l.n_out;
  if (l.unit_act.empty()) {
    if (l.act == Activation::relu) {
      std::size_t n = static_cast<std::size_t>(rows) * f;
      for (std::size_t i = 0; i < n; ++i) z[i] = z[i] > 0.0 ? z[i] : 0.0;
    } else if (l.act == Activation::tanh_act) {
      std::size_t n = static_cast<std::size_t>(rows) * f;
      for (std::size_t i = 0; i < n; ++i) z[i] = std::tanh(z[i]);
    }
    return;
  }
  for (int c = 0; c < f; ++c) {
    Activation a = l.unit_act[static_cast<std::size_t>(c)];
    if (a == Activation::identity) continue;
    for (int r = 0; r < rows; ++r) {
      std::size_t idx = static_cast<std::size_t>(r) * f + c;
      z[idx] = a == Activation::relu ? (z[idx] > 0.0 ? z[idx] : 0.0) : std::tanh(z[idx]);
    }
  }
}

}  // namespace detail

// Forward pass over a row-major batch X[rows x input_dim] into Y[rows x out].
// Train mode uses batch statistics (and updates running statistics unless
// told not to); eval mode uses running statistics and is row-independent.
inline void forward(Network& net, const double* x, int rows, NetMode mode, double* y,
                    ForwardCache* cache = nullptr, bool update_running = true) {
  if (rows < 1) throw numeric_error("forward: empty batch");
  int f0 = net.input_dim;
  std::vector<double> cur(x, x + static_cast<std::size_t>(rows) * f0);
  if (cache) {
    cache->rows = rows;
    cache->mode = mode;
    cache->layers.assign(net.layers.size(), {});
  }
  if (net.input_bn) {
    if (cache) {
      cache->in_hat.resize(cur.size());
      if (mode == NetMode::train) {
        cache->in_mu.resize(static_cast<std::size_t>(f0));
        cache->in_var.resize(static_cast<std::size_t>(f0));
      }
    }
    detail::bn_forward(net.in_norm, cur.data(), rows, f0, mode, update_running,
                       cache ? cache->in_hat.data() : nullptr,
                       cache && mode == NetMode::train ? cache->in_mu.data() : nullptr,
                       cache && mode == NetMode::train ? cache->in_var.data() : nullptr);
  }
  if (cache) cache->in_post = cur;

  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    Layer& l = net.layers[li];
    std::vector<double> z(static_cast<std::size_t>(rows) * l.n_out);
    matmul_wt(cur.data(), l.w.data(), z.data(), rows, l.n_in, l.n_out);
    for (int r = 0; r < rows; ++r) {
      double* zr = z.data() + static_cast<std::size_t>(r) * l.n_out;
      for (int o = 0; o < l.n_out; ++o) zr[o] += l.b[o];
    }
    if (l.bn) {
      auto* slot = cache ? &cache->layers[li] : nullptr;
      if (slot) {
        slot->zhat.resize(z.size());
        if (mode == NetMode::train) {
          slot->mu.resize(static_cast<std::size_t>(l.n_out));
          slot->var.resize(static_cast<std::size_t>(l.n_out));
        }
      }
      detail::bn_forward(l.norm, z.data(), rows, l.n_out, mode, update_running,
                         slot ? slot->zhat.data() : nullptr,
                         slot && mode == NetMode::train ? slot->mu.data() : nullptr,
                         slot && mode == NetMode::train ? slot->var.data() : nullptr);
    }
    detail::apply_activation(l, z.data(), rows);
    if (cache) cache->layers[li].post = z;
    cur = std::move(z);
  }
  std::copy(cur.begin(), cur.end(), y);
}

// Canonical flat parameter order: [input BN gamma, beta], then per layer
// [w, b, BN gamma, BN beta]. Running statistics are not learnable and are
// excluded here (checkpoints carry them separately).
inline void get_params(const Network& net, std::vector<double>& out) {
  out.clear();
  out.reserve(net.param_count());
  auto put = [&out](const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); };
  if (net.input_bn) { put(net.in_norm.gamma); put(net.in_norm.beta); }
  for (const auto& l : net.layers) {
    put(l.w);
    put(l.b);
    if (l.bn) { put(l.norm.gamma); put(l.norm.beta); }
  }
}

inline void set_params(Network& net, const std::vector<double>& flat) {
  if (flat.size() != net.param_count())
    throw config_error("set_params: size mismatch, expected " +
                       std::to_string(net.param_count()) + " got " + std::to_string(flat.size()));
  std::size_t off = 0;
  auto take = [&](std::vector<double>& v) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
    off += v.size();
  };
  if (net.input_bn) { take(net.in_norm.gamma); take(net.in_norm.beta); }
  for (auto& l : net.layers) {
    take(l.w);
    take(l.b);
    if (l.bn) { take(l.norm.gamma); take(l.norm.beta); }
  }
}

namespace detail {

// dz from the cotangent on BN output, accumulating scale/shift gradients.
// Train mode includes the coupling through the batch statistics.
inline void bn_backward(const BatchNorm& bn, const double* cot, const double* zhat,
                        const double* var, int rows, int f, NetMode mode,
                        double* dgamma, double* dbeta, double* dz) {
  double inv_rows = 1.0 / static_cast<double>(rows);
  for (int c = 0; c < f; ++c) {
    double g = bn.gamma[c];
    double inv = 1.0 / std::sqrt((mode == NetMode::train ? var[c] : bn.run_var[c]) + kBnEps);
    double s_cot = 0.0, s_cot_hat = 0.0;
    for (int r = 0; r < rows; ++r) {
      std::size_t idx = static_cast<std::size_t>(r) * f + c;
      s_cot += cot[idx];
      s_cot_hat += cot[idx] * zhat[idx];
    }
    dgamma[c] += s_cot_hat;
    dbeta[c] += s_cot;
    if (mode == NetMode::train) {
      // dxhat = cot * gamma; dz = inv/B (B dxhat - sum dxhat - zhat * sum(dxhat zhat))
      double s1 = g * s_cot, s2 = g * s_cot_hat;
      for (int r = 0; r < rows; ++r) {
        std::size_t idx = static_cast<std::size_t>(r) * f + c;
        dz[idx] = inv * inv_rows *
                  (static_cast<double>(rows) * g * cot[idx] - s1 - zhat[idx] * s2);
      }
    } else {
      double k = g * inv;
      for (int r = 0; r < rows; ++r) {
        std::size_t idx = static_cast<std::size_t>(r) * f + c;
        dz[idx] = k * cot[idx];
      }
    }
  }
}

}  // namespace detail

// Reverse pass. Accumulates into grad_flat (layout as get_params); writes
// input cotangents to dx when given. Composed networks with per-unit
// activations are evaluation-only and rejected here.
inline void backward(const Network& net, const ForwardCache& cache, const double* dy,
                     double* grad_flat, double* dx = nullptr) {
  if (net.mixed_activations())
    throw numeric_error("backward: composed max networks are evaluation-only");
  int rows = cache.rows;
  if (rows < 1) throw numeric_error("backward: empty cache");

  // Flat offsets mirroring get_params.
  std::size_t n_layers = net.layers.size();
  std::vector<std::size_t> w_off(n_layers), b_off(n_layers), g_off(n_layers), be_off(n_layers);
  std::size_t off = 0, in_g_off = 0, in_b_off = 0;
  if (net.input_bn) {
    in_g_off = off;
    off += net.in_norm.gamma.size();
    in_b_off = off;
    off += net.in_norm.beta.size();
  }
  for (std::size_t li = 0; li < n_layers; ++li) {
    const Layer& l = net.layers[li];
    w_off[li] = off;
    off += l.w.size();
    b_off[li] = off;
    off += l.b.size();
    if (l.bn) {
      g_off[li] = off;
      off += l.norm.gamma.size();
      be_off[li] = off;
      off += l.norm.beta.size();
    }
  }

  std::vector<double> cot(dy, dy + static_cast<std::size_t>(rows) * net.output_dim());
  for (std::size_t li = n_layers; li-- > 0;) {
    const Layer& l = net.layers[li];
    const auto& slot = cache.layers[li];
    std::size_t n = static_cast<std::size_t>(rows) * l.n_out;

    // Activation slope from the saved outputs.
    if (l.act == Activation::relu) {
      for (std::size_t i = 0; i < n; ++i)
        if (slot.post[i] <= 0.0) cot[i] = 0.0;
    } else if (l.act == Activation::tanh_act) {
      for (std::size_t i = 0; i < n; ++i) cot[i] *= 1.0 - slot.post[i] * slot.post[i];
    }

    std::vector<double> dz;
    if (l.bn) {
      dz.resize(n);
      detail::bn_backward(l.norm, cot.data(), slot.zhat.data(),
                          cache.mode == NetMode::train ? slot.var.data() : nullptr, rows,
                          l.n_out, cache.mode, grad_flat + g_off[li], grad_flat + be_off[li],
                          dz.data());
    } else {
      dz = std::move(cot);
    }

    const double* in =
        li == 0 ? cache.in_post.data() : cache.layers[li - 1].post.data();
    matmul_grad_w(dz.data(), in, grad_flat + w_off[li], rows, l.n_in, l.n_out);
    double* db = grad_flat + b_off[li];
    for (int r = 0; r < rows; ++r) {
      const double* dzr = dz.data() + static_cast<std::size_t>(r) * l.n_out;
      for (int o = 0; o < l.n_out; ++o) db[o] += dzr[o];
    }
    bool need_din = li > 0 || net.input_bn || dx != nullptr;
    if (!need_din) return;
    std::vector<double> din(static_cast<std::size_t>(rows) * l.n_in);
    matmul_grad_in(dz.data(), l.w.data(), din.data(), rows, l.n_in, l.n_out);
    cot = std::move(din);
  }

  if (net.input_bn) {
    std::vector<double> dz(static_cast<std::size_t>(rows) * net.input_dim);
    detail::bn_backward(net.in_norm, cot.data(), cache.in_hat.data(),
                        cache.mode == NetMode::train ? cache.in_var.data() : nullptr, rows,
                        net.input_dim, cache.mode, grad_flat + in_g_off, grad_flat + in_b_off,
                        dz.data());
    cot = std::move(dz);
  }
  if (dx) std::copy(cot.begin(), cot.end(), dx);
}

// Single-row convenience wrappers.
inline std::vector<double> forward_one(Network& net, const std::vector<double>& x,
                                       NetMode mode = NetMode::eval) {
  std::vector<double> y(static_cast<std::size_t>(net.output_dim()));
  forward(net, x.data(), 1, mode, y.data(), nullptr, false);
  return y;
}

// --- Max composition ------------------------------------------------------
//
// Combines scalar-output ReLU networks into one network computing their
// pointwise max, via the exact two-layer gadget
//   max(a,b) = ReLU(a-b) + ReLU(b) - ReLU(-b)
// (4 nonzeros in, 3 out: 7 per pairing). Members run stacked side by side;
// a tournament of gadgets reduces their output wires. When member depths
// admit a perfect tournament (equal depths, M a power of two, or staggered
// so every bye arrives exactly when a gadget output emerges), the result
// has size <= 7(M-1) + sum of member sizes, with equality in the gadget
// term. Other depth multisets add one identity carry unit (one nonzero)
// per level a value has to wait; identity units stand in for the
// ReLU(x) - ReLU(-x) pair and make the composed network evaluation-only.

namespace detail {

struct BuildUnit {
  // Weighted taps into the previous level's units.
  std::vector<std::pair<int, double>> taps;
  double bias = 0.0;
  Activation act = Activation::identity;
};

}  // namespace detail

inline Network max_network(const std::vector<Network>& nets) {
  if (nets.empty()) throw config_error("max_network: no members");
  int input_dim = nets.front().input_dim;
  for (const auto& n : nets) {
    if (n.input_dim != input_dim)
      throw config_error("max_network: members disagree on input dim");
    if (n.output_dim() != 1)
      throw config_error("max_network: members must have scalar output");
    if (n.input_bn) throw config_error("max_network: members must not use batch norm");
    for (const auto& l : n.layers) {
      if (l.bn) throw config_error("max_network: members must not use batch norm");
      if (!l.unit_act.empty() || (l.act != Activation::relu && l.act != Activation::identity))
        throw config_error("max_network: members must be plain ReLU networks");
    }
  }
  if (nets.size() == 1) return nets.front();

  // Level u holds the units output by combined layer u (level 0 = input).
  // Each member's layer k occupies a contiguous block at level k.
  std::vector<std::vector<detail::BuildUnit>> levels(1);  // levels[0] unused placeholder
  auto unit_count = [&](std::size_t level) {
    return level == 0 ? input_dim : static_cast<int>(levels[level].size());
  };
  auto add_level_if_needed = [&](std::size_t level) {
    while (levels.size() <= level) levels.emplace_back();
  };

  struct Value {
    std::size_t level;
    int unit;
  };
  std::vector<Value> values;

  for (const auto& net : nets) {
    int prev_base = 0;  // offset of this member's units at the previous level
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      const Layer& l = net.layers[k];
      std::size_t level = k + 1;
      add_level_if_needed(level);
      int base = static_cast<int>(levels[level].size());
      for (int o = 0; o < l.n_out; ++o) {
        detail::BuildUnit u;
        u.act = l.act;
        u.bias = l.b[static_cast<std::size_t>(o)];
        u.taps.reserve(static_cast<std::size_t>(l.n_in));
        for (int i = 0; i < l.n_in; ++i) {
          double wv = l.w[static_cast<std::size_t>(o) * l.n_in + i];
          if (wv != 0.0) u.taps.emplace_back(prev_base + i, wv);
        }
        levels[level].push_back(std::move(u));
      }
      prev_base = base;
    }
    values.push_back({net.layers.size(), static_cast<int>(levels[net.layers.size()].size()) - 1});
  }

  // Tournament: repeatedly merge the two shallowest values. A value waiting
  // for a deeper partner is carried level by level with identity units.
  auto carry_to = [&](Value v, std::size_t target) {
    while (v.level < target) {
      std::size_t nxt = v.level + 1;
      add_level_if_needed(nxt);
      detail::BuildUnit u;
      u.act = Activation::identity;
      u.taps.emplace_back(v.unit, 1.0);
      levels[nxt].push_back(std::move(u));
      v = {nxt, static_cast<int>(levels[nxt].size()) - 1};
    }
    return v;
  };

  std::vector<Value> pool = values;
  while (pool.size() > 1) {
    std::size_t ia = 0, ib = 1;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i].level < pool[ia].level) ia = i;
    ib = ia == 0 ? 1 : 0;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (i != ia && pool[i].level < pool[ib].level) ib = i;
    Value a = pool[ia], b = pool[ib];
    if (a.level > b.level) std::swap(a, b);
    a = carry_to(a, b.level);

    std::size_t l1 = b.level + 1, l2 = b.level + 2;
    add_level_if_needed(l2);
    int u0 = static_cast<int>(levels[l1].size());
    {
      detail::BuildUnit d;  // a - b
      d.act = Activation::relu;
      d.taps.emplace_back(a.unit, 1.0);
      d.taps.emplace_back(b.unit, -1.0);
      levels[l1].push_back(std::move(d));
      detail::BuildUnit p;  // b
      p.act = Activation::relu;
      p.taps.emplace_back(b.unit, 1.0);
      levels[l1].push_back(std::move(p));
      detail::BuildUnit m;  // -b
      m.act = Activation::relu;
      m.taps.emplace_back(b.unit, -1.0);
      levels[l1].push_back(std::move(m));
    }
    detail::BuildUnit out;  // ReLU(a-b) + ReLU(b) - ReLU(-b)
    out.act = Activation::identity;
    out.taps.emplace_back(u0, 1.0);
    out.taps.emplace_back(u0 + 1, 1.0);
    out.taps.emplace_back(u0 + 2, -1.0);
    levels[l2].push_back(std::move(out));
    Value merged{l2, static_cast<int>(levels[l2].size()) - 1};

    if (ia > ib) std::swap(ia, ib);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(ib));
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(ia));
    pool.push_back(merged);
  }

  // The final value must be the last unit of the last level; carry if the
  // tournament left trailing levels (cannot happen with this scheduler, but
  // keep it safe).
  Value result = carry_to(pool.front(), levels.size() - 1);

  Network out;
  out.input_dim = input_dim;
  out.input_bn = false;
  for (std::size_t level = 1; level < levels.size(); ++level) {
    Layer l;
    l.n_in = unit_count(level - 1);
    l.n_out = unit_count(level);
    l.w.assign(static_cast<std::size_t>(l.n_in) * l.n_out, 0.0);
    l.b.assign(static_cast<std::size_t>(l.n_out), 0.0);
    l.unit_act.resize(static_cast<std::size_t>(l.n_out));
    for (int o = 0; o < l.n_out; ++o) {
      const auto& u = levels[level][static_cast<std::size_t>(o)];
      l.unit_act[static_cast<std::size_t>(o)] = u.act;
      for (auto [src, wv] : u.taps) l.w[static_cast<std::size_t>(o) * l.n_in + src] = wv;
      l.b[static_cast<std::size_t>(o)] = u.bias;
    }
    // Collapse to a uniform activation tag when possible so plain stacked
    // members keep their exact layer semantics.
    bool all_same = true;
    for (int o = 1; o < l.n_out; ++o)
      if (l.unit_act[static_cast<std::size_t>(o)] != l.unit_act[0]) all_same = false;
    if (all_same) {
      l.act = l.unit_act[0];
      l.unit_act.clear();
    }
    out.layers.push_back(std::move(l));
  }
  if (result.unit != out.layers.back().n_out - 1)
    throw numeric_error("max_network: internal wiring error");
  return out;
}

}  // namespace deepswitch
