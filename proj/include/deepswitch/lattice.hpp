#pragma once
// Exact finite-tree oracle. A non-recombining b-ary tree realizes the full
// filtration, so conditional expectations are finite sums and every duality
// statement becomes a checkable identity: backward DP values, Doob penalty
// increments, pathwise dual recursions, greedy switching rules, and
// brute-force enumeration over all adapted regime-decision rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepswitch/common.hpp"

namespace deepswitch {

// Heap-style indexing: root 0, children of g are b*g+1+c, parent (g-1)/b.
// Depth n occupies [offset(n), offset(n+1)); descendants stay contiguous.
struct LatticeModel {
  int branching = 2;  // b >= 1
  int n_dates = 1;    // N >= 1 decision dates 0..N-1, horizon at N
  int n_regimes = 1;  // J
  int dim = 1;        // state dimension, metadata for exports

  std::vector<double> prob;      // [internal][b] child probabilities
  std::vector<double> state;     // [node][dim] optional display states
  std::vector<double> running;   // [internal][J] stage payoff totals
  std::vector<double> cost;      // [internal][J][J] switch costs at the node
  std::vector<double> terminal;  // [leaf][J]

  std::int64_t nodes_at(int depth) const {
    std::int64_t n = 1;
    for (int k = 0; k < depth; ++k) n *= branching;
    return n;
  }
  std::int64_t offset(int depth) const {
    std::int64_t total = 0, layer = 1;
    for (int k = 0; k < depth; ++k) {
      total += layer;
      layer *= branching;
    }
    return total;
  }
  std::int64_t n_internal() const { return offset(n_dates); }
  std::int64_t n_leaves() const { return nodes_at(n_dates); }
  std::int64_t n_total() const { return offset(n_dates + 1); }
  std::int64_t child(std::int64_t g, int c) const {
    return static_cast<std::int64_t>(branching) * g + 1 + c;
  }
  std::int64_t parent(std::int64_t g) const { return (g - 1) / branching; }

  double p(std::int64_t internal_g, int c) const {
    return prob[static_cast<std::size_t>(internal_g) * branching + c];
  }
  double run(std::int64_t internal_g, int j) const {
    return running[static_cast<std::size_t>(internal_g) * n_regimes + j];
  }
  double l(std::int64_t internal_g, int i, int j) const {
    return cost[(static_cast<std::size_t>(internal_g) * n_regimes + i) * n_regimes + j];
  }
  double phi(std::int64_t leaf, int i) const {
    return terminal[static_cast<std::size_t>(leaf) * n_regimes + i];
  }

  void validate() const {
    if (branching < 1) throw config_error("/lattice/branching: must be >= 1");
    if (n_dates < 1) throw config_error("/lattice/dates: must be >= 1");
    if (n_regimes < 1) throw config_error("/lattice/regimes: must be >= 1");
    const auto ni = static_cast<std::size_t>(n_internal());
    const auto nl = static_cast<std::size_t>(n_leaves());
    if (prob.size() != ni * branching) throw config_error("/lattice/prob: size mismatch");
    if (running.size() != ni * n_regimes) throw config_error("/lattice/running: size mismatch");
    if (cost.size() != ni * n_regimes * n_regimes)
      throw config_error("/lattice/cost: size mismatch");
    if (terminal.size() != nl * n_regimes) throw config_error("/lattice/terminal: size mismatch");
    if (!state.empty() && state.size() != static_cast<std::size_t>(n_total()) * dim)
      throw config_error("/lattice/state: size mismatch");
    for (std::size_t g = 0; g < ni; ++g) {
      double s = 0.0;
      for (int c = 0; c < branching; ++c) {
        double pc = prob[g * branching + c];
        if (pc < 0.0) throw config_error("/lattice/prob: negative probability");
        s += pc;
      }
      if (std::abs(s - 1.0) > 1e-12)
        throw config_error("/lattice/prob: node " + std::to_string(g) + " sums to " +
                           std::to_string(s));
    }
    for (std::size_t g = 0; g < ni; ++g)
      for (int i = 0; i < n_regimes; ++i)
        if (cost[(g * n_regimes + i) * n_regimes + i] != 0.0)
          throw config_error("/lattice/cost: nonzero diagonal at node " + std::to_string(g));
  }

  // Unconditional node probabilities, root = 1.
  std::vector<double> node_probabilities() const {
    std::vector<double> P(static_cast<std::size_t>(n_total()), 0.0);
    P[0] = 1.0;
    for (std::int64_t g = 0; g < n_internal(); ++g)
      for (int c = 0; c < branching; ++c)
        P[static_cast<std::size_t>(child(g, c))] = P[static_cast<std::size_t>(g)] * p(g, c);
    return P;
  }
};

// Backward DP over the tree: values[node][i], leaves carry the terminal
// payoff, internal nodes the one-stage maximum over the next regime.
inline std::vector<double> exact_value(const LatticeModel& m) {
  const int J = m.n_regimes;
  std::vector<double> Y(static_cast<std::size_t>(m.n_total()) * J, 0.0);
  for (std::int64_t leaf = 0; leaf < m.n_leaves(); ++leaf) {
    const std::int64_t g = m.offset(m.n_dates) + leaf;
    for (int i = 0; i < J; ++i) Y[static_cast<std::size_t>(g) * J + i] = m.phi(leaf, i);
  }
  std::vector<double> cont(static_cast<std::size_t>(J));
  for (std::int64_t g = m.n_internal() - 1; g >= 0; --g) {
    for (int j = 0; j < J; ++j) {
      double e = 0.0;
      for (int c = 0; c < m.branching; ++c)
        e += m.p(g, c) * Y[static_cast<std::size_t>(m.child(g, c)) * J + j];
      cont[static_cast<std::size_t>(j)] = e;
    }
    for (int i = 0; i < J; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < J; ++j)
        best = std::max(best, m.run(g, j) - m.l(g, i, j) + cont[static_cast<std::size_t>(j)]);
      Y[static_cast<std::size_t>(g) * J + i] = best;
    }
  }
  return Y;
}

// Smallest-index maximizer of the stage objective at every internal node:
// rule[internal*J + i] = argmax_j (F[g][j] - l[g][i][j] + E_g[Y^j]).
inline std::vector<int> greedy_rule(const LatticeModel& m, const std::vector<double>& Y) {
  const int J = m.n_regimes;
  std::vector<int> rule(static_cast<std::size_t>(m.n_internal()) * J, 0);
  std::vector<double> cont(J);
  for (std::int64_t g = 0; g < m.n_internal(); ++g) {
    for (int j = 0; j < J; ++j) {
      double e = 0.0;
      for (int c = 0; c < m.branching; ++c)
        e += m.p(g, c) * Y[static_cast<std::size_t>(m.child(g, c)) * J + j];
      cont[j] = e;
    }
    for (int i = 0; i < J; ++i) {
      int arg = 0;
      double best = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < J; ++j) {
        double v = m.run(g, j) - m.l(g, i, j) + cont[j];
        if (v > best) {
          best = v;
          arg = j;
        }
      }
      rule[static_cast<std::size_t>(g) * J + i] = arg;
    }
  }
  return rule;
}

// Doob increments per edge and regime: dm[(internal*b + c)*J + i]
//   = Y[child_c][i] - E_node[Y^i]. Conditionally centered by construction.
inline std::vector<double> doob_increments(const LatticeModel& m, const std::vector<double>& Y) {
  const int J = m.n_regimes;
  std::vector<double> dm(static_cast<std::size_t>(m.n_internal()) * m.branching * J, 0.0);
  for (std::int64_t g = 0; g < m.n_internal(); ++g) {
    for (int i = 0; i < J; ++i) {
      double e = 0.0;
      for (int c = 0; c < m.branching; ++c)
        e += m.p(g, c) * Y[static_cast<std::size_t>(m.child(g, c)) * J + i];
      for (int c = 0; c < m.branching; ++c)
        dm[(static_cast<std::size_t>(g) * m.branching + c) * J + i] =
            Y[static_cast<std::size_t>(m.child(g, c)) * J + i] - e;
    }
  }
  return dm;
}

// Exact maximum over all adapted regime-decision rules (one choice per
// internal node), by enumeration. Returns root values per start regime.
inline std::vector<double> brute_force_value(const LatticeModel& m,
                                             std::int64_t guard = 10'000'000) {
  const int J = m.n_regimes;
  const std::int64_t n_int = m.n_internal();
  double count = 1.0;
  for (std::int64_t k = 0; k < n_int; ++k) {
    count *= J;
    if (count > static_cast<double>(guard))
      throw numeric_error("brute force: " + std::to_string(J) + "^" + std::to_string(n_int) +
                          " rules exceed the enumeration guard of " + std::to_string(guard));
  }

  std::vector<int> choice(static_cast<std::size_t>(n_int), 0);
  std::vector<double> best(static_cast<std::size_t>(J),
                           -std::numeric_limits<double>::infinity());

  // Expected payoff from node g onward, where j_prev is the regime chosen at
  // g's parent (regime in force when arriving at g).
  auto value_from = [&](auto&& self, std::int64_t g) -> double {
    // Returns F[g][j] + E[continuation] with j = choice[g]; the caller
    // subtracts the switching cost into j.
    const int j = choice[static_cast<std::size_t>(g)];
    double v = m.run(g, j);
    for (int c = 0; c < m.branching; ++c) {
      const std::int64_t ch = m.child(g, c);
      double contribution;
      if (ch >= n_int) {
        contribution = m.phi(ch - m.offset(m.n_dates), j);
      } else {
        contribution = -m.l(ch, j, choice[static_cast<std::size_t>(ch)]) + self(self, ch);
      }
      v += m.p(g, c) * contribution;
    }
    return v;
  };

  for (;;) {
    const double core = value_from(value_from, 0);
    const int j0 = choice[0];
    for (int i = 0; i < J; ++i)
      best[static_cast<std::size_t>(i)] =
          std::max(best[static_cast<std::size_t>(i)], core - m.l(0, i, j0));
    // odometer over rules
    std::int64_t pos = 0;
    while (pos < n_int) {
      if (++choice[static_cast<std::size_t>(pos)] < J) break;
      choice[static_cast<std::size_t>(pos)] = 0;
      ++pos;
    }
    if (pos == n_int) break;
  }
  return best;
}

// Pathwise dual recursion for arbitrary penalty increments dm (same layout
// as doob_increments). Returns u[leaf][n][i] for n = 0..N.
inline std::vector<double> dual_pathwise(const LatticeModel& m, const std::vector<double>& dm) {
  const int J = m.n_regimes;
  const int N = m.n_dates;
  const std::int64_t L = m.n_leaves();
  std::vector<double> u(static_cast<std::size_t>(L) * (N + 1) * J, 0.0);
  std::vector<std::int64_t> path(static_cast<std::size_t>(N) + 1);
  for (std::int64_t leaf = 0; leaf < L; ++leaf) {
    std::int64_t g = m.offset(N) + leaf;
    for (int n = N; n >= 0; --n) {
      path[static_cast<std::size_t>(n)] = g;
      if (n > 0) g = m.parent(g);
    }
    auto at = [&](int n, int i) -> double& {
      return u[(static_cast<std::size_t>(leaf) * (N + 1) + n) * J + i];
    };
    for (int i = 0; i < J; ++i) at(N, i) = m.phi(leaf, i);
    for (int n = N - 1; n >= 0; --n) {
      const std::int64_t gn = path[static_cast<std::size_t>(n)];
      const std::int64_t gnext = path[static_cast<std::size_t>(n) + 1];
      const int c = static_cast<int>(gnext - m.child(gn, 0));
      for (int i = 0; i < J; ++i) {
        double bestv = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < J; ++j) {
          const double xi = dm[(static_cast<std::size_t>(gn) * m.branching + c) * J + j];
          bestv = std::max(bestv, m.run(gn, j) - m.l(gn, i, j) - xi + at(n + 1, j));
        }
        at(n, i) = bestv;
      }
    }
  }
  return u;
}

// Conditional expectation of pathwise quantities: for values u[leaf][n][i]
// as produced by dual_pathwise, returns e[node][i] = E[u_n | node] where n
// is the node's depth (descendant leaves are contiguous under heap order).
inline std::vector<double> conditional_mean(const LatticeModel& m, const std::vector<double>& u) {
  const int J = m.n_regimes;
  const int N = m.n_dates;
  std::vector<double> P = m.node_probabilities();
  std::vector<double> e(static_cast<std::size_t>(m.n_total()) * J, 0.0);
  for (int n = 0; n <= N; ++n) {
    const std::int64_t first = m.offset(n);
    const std::int64_t width = m.n_leaves() / m.nodes_at(n);  // leaves per subtree
    for (std::int64_t q = 0; q < m.nodes_at(n); ++q) {
      const std::int64_t g = first + q;
      const double pg = P[static_cast<std::size_t>(g)];
      if (pg <= 0.0) continue;  // unreachable node, conditioning is vacuous
      for (int i = 0; i < J; ++i) {
        double s = 0.0;
        for (std::int64_t leaf = q * width; leaf < (q + 1) * width; ++leaf)
          s += P[static_cast<std::size_t>(m.offset(N) + leaf)] *
               u[(static_cast<std::size_t>(leaf) * (N + 1) + n) * J + i];
        e[static_cast<std::size_t>(g) * J + i] = s / pg;
      }
    }
  }
  return e;
}

// Random conditionally-centered penalty increments with the doob layout.
inline std::vector<double> random_penalty(const LatticeModel& m, std::uint64_t seed,
                                          double scale = 1.0) {
  const int J = m.n_regimes;
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> dm(static_cast<std::size_t>(m.n_internal()) * m.branching * J);
  for (auto& v : dm) v = u(eng);
  for (std::int64_t g = 0; g < m.n_internal(); ++g)
    for (int i = 0; i < J; ++i) {
      double e = 0.0;
      for (int c = 0; c < m.branching; ++c)
        e += m.p(g, c) * dm[(static_cast<std::size_t>(g) * m.branching + c) * J + i];
      for (int c = 0; c < m.branching; ++c)
        dm[(static_cast<std::size_t>(g) * m.branching + c) * J + i] -= e;
    }
  return dm;
}

struct CertifyReport {
  int branching = 0, n_dates = 0, n_regimes = 0;
  bool preconditions_met = false;  // strict triangular costs on every node
  double min_triangle_slack = 0.0;

  bool strong_duality = false;     // pathwise equality with the Doob penalty
  bool weak_duality = false;       // E[u(M)] >= Y at every node, random M
  bool greedy_idempotent = false;  // g(node, g(node,i)) = g(node,i)
  bool restriction_equal = false;  // max over {j: g(j)=j} reproduces Y
  bool error_propagation = false;  // two-step pathwise inequality chain
  bool terminal_match = false;     // u_N = Phi
  bool doob_centered = false;      // E_node[dM] = 0
  bool supermartingale = false;    // Y^i >= max_{j!=i}(Y^j - l_ij)

  double strong_residual = 0.0;
  double weak_violation = 0.0;  // most negative slack seen (0 if none)
  double restriction_residual = 0.0;
  double propagation_violation = 0.0;
  double centering_residual = 0.0;
  double supermartingale_violation = 0.0;

  bool all_pass() const {
    return preconditions_met && strong_duality && weak_duality && greedy_idempotent &&
           restriction_equal && error_propagation && terminal_match && doob_centered &&
           supermartingale;
  }
};

inline CertifyReport certify(const LatticeModel& m, int n_penalties = 100, int n_pairs = 100,
                             std::uint64_t seed = 1, double tol_strong = 1e-10,
                             double tol_weak = 1e-10, double tol_prop = 1e-9) {
  m.validate();
  const int J = m.n_regimes;
  const int N = m.n_dates;
  CertifyReport rep;
  rep.branching = m.branching;
  rep.n_dates = N;
  rep.n_regimes = J;

  // Precondition: strict triangular costs at every internal node.
  rep.min_triangle_slack = std::numeric_limits<double>::infinity();
  for (std::int64_t g = 0; g < m.n_internal(); ++g)
    for (int i = 0; i < J; ++i)
      for (int j = 0; j < J; ++j) {
        if (j == i) continue;
        for (int k = 0; k < J; ++k) {
          if (k == j) continue;
          rep.min_triangle_slack =
              std::min(rep.min_triangle_slack, m.l(g, i, j) + m.l(g, j, k) - m.l(g, i, k));
        }
      }
  if (J < 2) rep.min_triangle_slack = std::numeric_limits<double>::infinity();
  rep.preconditions_met = J < 2 || rep.min_triangle_slack > 0.0;
  if (!rep.preconditions_met) return rep;  // certification skipped, see flag

  const std::vector<double> Y = exact_value(m);
  const std::vector<double> doob = doob_increments(m, Y);
  const std::vector<double> P = m.node_probabilities();

  // (f) terminal identity and (a) pathwise strong duality with Doob penalty.
  {
    const std::vector<double> u = dual_pathwise(m, doob);
    double worst = 0.0, worst_term = 0.0;
    for (std::int64_t leaf = 0; leaf < m.n_leaves(); ++leaf) {
      std::int64_t g = m.offset(N) + leaf;
      for (int n = N; n >= 0; --n) {
        for (int i = 0; i < J; ++i) {
          const double diff = std::abs(u[(static_cast<std::size_t>(leaf) * (N + 1) + n) * J + i] -
                                       Y[static_cast<std::size_t>(g) * J + i]);
          worst = std::max(worst, diff);
          if (n == N)
            worst_term = std::max(
                worst_term, std::abs(u[(static_cast<std::size_t>(leaf) * (N + 1) + N) * J + i] -
                                     m.phi(leaf, i)));
        }
        if (n > 0) g = m.parent(g);
      }
    }
    rep.strong_residual = worst;
    rep.strong_duality = worst <= tol_strong;
    rep.terminal_match = worst_term == 0.0;
  }

  // Doob centering at every node and regime.
  {
    double worst = 0.0;
    for (std::int64_t g = 0; g < m.n_internal(); ++g)
      for (int i = 0; i < J; ++i) {
        double e = 0.0;
        for (int c = 0; c < m.branching; ++c)
          e += m.p(g, c) * doob[(static_cast<std::size_t>(g) * m.branching + c) * J + i];
        worst = std::max(worst, std::abs(e));
      }
    rep.centering_residual = worst;
    rep.doob_centered = worst <= 1e-12;
  }

  // (b) weak duality for random penalties, checked at every node.
  {
    double worst = 0.0;  // most negative slack E[u] - Y
    for (int r = 0; r < n_penalties; ++r) {
      const auto dm = random_penalty(m, stream_seed(seed, static_cast<std::uint64_t>(r)));
      const auto u = dual_pathwise(m, dm);
      const auto e = conditional_mean(m, u);
      for (std::int64_t g = 0; g < m.n_internal(); ++g) {
        if (P[static_cast<std::size_t>(g)] <= 0.0) continue;
        for (int i = 0; i < J; ++i)
          worst = std::min(worst, e[static_cast<std::size_t>(g) * J + i] -
                                      Y[static_cast<std::size_t>(g) * J + i]);
      }
    }
    rep.weak_violation = worst;
    rep.weak_duality = worst >= -tol_weak;
  }

  // (c) greedy idempotence and (d) restriction to self-consistent regimes.
  {
    const auto rule = greedy_rule(m, Y);
    bool idem = true;
    double worst = 0.0;
    std::vector<double> cont(static_cast<std::size_t>(J));
    for (std::int64_t g = 0; g < m.n_internal(); ++g) {
      for (int j = 0; j < J; ++j) {
        double e = 0.0;
        for (int c = 0; c < m.branching; ++c)
          e += m.p(g, c) * Y[static_cast<std::size_t>(m.child(g, c)) * J + j];
        cont[static_cast<std::size_t>(j)] = e;
      }
      for (int i = 0; i < J; ++i) {
        const int gi = rule[static_cast<std::size_t>(g) * J + i];
        if (rule[static_cast<std::size_t>(g) * J + gi] != gi) idem = false;
      }
      for (int i = 0; i < J; ++i) {
        double restricted = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < J; ++j) {
          if (rule[static_cast<std::size_t>(g) * J + j] != j) continue;
          restricted =
              std::max(restricted, m.run(g, j) - m.l(g, i, j) + cont[static_cast<std::size_t>(j)]);
        }
        worst = std::max(worst,
                         std::abs(restricted - Y[static_cast<std::size_t>(g) * J + i]));
      }
    }
    rep.greedy_idempotent = idem;
    rep.restriction_residual = worst;
    rep.restriction_equal = worst <= 1e-12;
  }

  // (e) two-step error-propagation chain, pathwise for penalty pairs.
  {
    double worst = 0.0;  // largest violation of either inequality
    for (int r = 0; r < n_pairs; ++r) {
      const auto dma = random_penalty(m, stream_seed(seed ^ 0x9e3779b97f4a7c15ull,
                                                     static_cast<std::uint64_t>(2 * r)));
      const auto dmb = random_penalty(m, stream_seed(seed ^ 0x9e3779b97f4a7c15ull,
                                                     static_cast<std::uint64_t>(2 * r + 1)));
      const auto ua = dual_pathwise(m, dma);
      const auto ub = dual_pathwise(m, dmb);
      std::vector<std::int64_t> path(static_cast<std::size_t>(N) + 1);
      for (std::int64_t leaf = 0; leaf < m.n_leaves(); ++leaf) {
        std::int64_t g = m.offset(N) + leaf;
        for (int n = N; n >= 0; --n) {
          path[static_cast<std::size_t>(n)] = g;
          if (n > 0) g = m.parent(g);
        }
        for (int n = 0; n < N; ++n) {
          auto level_diff = [&](int lvl) {
            double md = 0.0;
            for (int i = 0; i < J; ++i)
              md = std::max(md,
                            std::abs(ua[(static_cast<std::size_t>(leaf) * (N + 1) + lvl) * J + i] -
                                     ub[(static_cast<std::size_t>(leaf) * (N + 1) + lvl) * J + i]));
            return md;
          };
          const std::int64_t gn = path[static_cast<std::size_t>(n)];
          const int c = static_cast<int>(path[static_cast<std::size_t>(n) + 1] - m.child(gn, 0));
          double xi_max = 0.0, xi_sum = 0.0;
          for (int i = 0; i < J; ++i) {
            const double d =
                std::abs(dma[(static_cast<std::size_t>(gn) * m.branching + c) * J + i] -
                         dmb[(static_cast<std::size_t>(gn) * m.branching + c) * J + i]);
            xi_max = std::max(xi_max, d);
            xi_sum += d;
          }
          const double lhs = level_diff(n);
          const double mid = level_diff(n + 1) + xi_max;
          worst = std::max(worst, lhs - mid);
          worst = std::max(worst, mid - (level_diff(n + 1) + xi_sum));
        }
      }
    }
    rep.propagation_violation = worst;
    rep.error_propagation = worst <= tol_prop;
  }

  // Supermartingale domination of the exact values at decision nodes.
  {
    double worst = 0.0;
    for (std::int64_t g = 0; g < m.n_internal(); ++g)
      for (int i = 0; i < J; ++i)
        for (int j = 0; j < J; ++j) {
          if (j == i) continue;
          worst = std::max(worst, (Y[static_cast<std::size_t>(g) * J + j] - m.l(g, i, j)) -
                                      Y[static_cast<std::size_t>(g) * J + i]);
        }
    rep.supermartingale_violation = worst;
    rep.supermartingale = worst <= 1e-12;
  }

  return rep;
}

// Random strictly-triangular instance: per-node costs delta*1_{i!=j} plus
// U[0, delta/2) noise keep every triangle slack at least delta/2.
inline LatticeModel random_lattice(int branching, int n_dates, int n_regimes, int dim,
                                   std::uint64_t seed) {
  LatticeModel m;
  m.branching = branching;
  m.n_dates = n_dates;
  m.n_regimes = n_regimes;
  m.dim = dim;
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  const auto ni = static_cast<std::size_t>(m.n_internal());
  const auto nl = static_cast<std::size_t>(m.n_leaves());
  const auto nt = static_cast<std::size_t>(m.n_total());

  m.prob.resize(ni * branching);
  for (std::size_t g = 0; g < ni; ++g) {
    double s = 0.0;
    for (int c = 0; c < branching; ++c) {
      const double w = 0.1 + u01(eng);
      m.prob[g * branching + c] = w;
      s += w;
    }
    for (int c = 0; c < branching; ++c) m.prob[g * branching + c] /= s;
  }

  m.state.resize(nt * dim);
  for (int k = 0; k < dim; ++k) m.state[static_cast<std::size_t>(k)] = 1.0 + u01(eng);
  for (std::size_t g = 0; g < ni; ++g)
    for (int c = 0; c < branching; ++c) {
      const std::size_t ch = static_cast<std::size_t>(m.child(static_cast<std::int64_t>(g), c));
      for (int k = 0; k < dim; ++k)
        m.state[ch * dim + k] =
            m.state[g * dim + k] * std::exp(0.6 * (u01(eng) - 0.5));
    }

  m.running.resize(ni * n_regimes);
  for (auto& v : m.running) v = 2.0 * u01(eng) - 1.0;

  m.cost.assign(ni * n_regimes * n_regimes, 0.0);
  for (std::size_t g = 0; g < ni; ++g) {
    const double delta = 0.1 * (1.0 + u01(eng));
    for (int i = 0; i < n_regimes; ++i)
      for (int j = 0; j < n_regimes; ++j)
        if (i != j)
          m.cost[(g * n_regimes + i) * n_regimes + j] = delta * (1.0 + 0.5 * u01(eng));
  }

  m.terminal.resize(nl * n_regimes);
  for (auto& v : m.terminal) v = 2.0 * u01(eng) - 1.0;
  return m;
}

inline void save_lattice(const LatticeModel& m, const std::string& path) {
  nlohmann::json j;
  j["format"] = "deepswitch-lattice-v1";
  j["branching"] = m.branching;
  j["dates"] = m.n_dates;
  j["regimes"] = m.n_regimes;
  j["dim"] = m.dim;
  j["prob"] = m.prob;
  j["state"] = m.state;
  j["running"] = m.running;
  j["cost"] = m.cost;
  j["terminal"] = m.terminal;
  std::ofstream out(path);
  if (!out) throw config_error("cannot write lattice file: " + path);
  out << j.dump(2) << "\n";
}

inline LatticeModel load_lattice(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read lattice file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != std::string("deepswitch-lattice-v1"))
    throw config_error(path + ": not a lattice file");
  LatticeModel m;
  m.branching = j.at("branching").get<int>();
  m.n_dates = j.at("dates").get<int>();
  m.n_regimes = j.at("regimes").get<int>();
  m.dim = j.value("dim", 1);
  m.prob = j.at("prob").get<std::vector<double>>();
  m.state = j.value("state", std::vector<double>{});
  m.running = j.at("running").get<std::vector<double>>();
  m.cost = j.at("cost").get<std::vector<double>>();
  m.terminal = j.at("terminal").get<std::vector<double>>();
  m.validate();
  return m;
}

}  // namespace deepswitch
