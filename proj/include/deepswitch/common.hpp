#pragma once
// Shared plumbing: error types, seed derivation, running statistics,
// a small worker pool, and the allocation guard.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace deepswitch {

// Configuration problems (bad JSON, out-of-range values). The what() string
// carries a JSON-pointer-like path to the offending field where possible.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failures at run time: NaN/Inf state, allocation over budget,
// singular solves. Messages locate the step/path where it happened.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Divergence or invalid gradients during training.
struct training_error : std::runtime_error {
  explicit training_error(const std::string& msg) : std::runtime_error(msg) {}
};

// SplitMix64; used to spread user seeds into independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Per-path stream seed. Two rounds of mixing so that nearby (seed, index)
// pairs land far apart; the path count never reshuffles existing streams.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed ^ 0x6a09e667f3bcc909ULL;
  (void)splitmix64(s);
  s ^= index * 0x9e3779b97f4a7c15ULL;
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  return a ^ (b << 1);
}

// Named sub-seed (train/eval/regions...), FNV-1a over the label then mixed.
inline std::uint64_t labeled_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return stream_seed(seed ^ h, 0x5eedULL);
}

// Mean / variance / standard error accumulator (Welford). merge() keeps
// shard reductions deterministic when combined in a fixed order.
struct RunningStats {
  long long n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  void merge(const RunningStats& o) {
    if (o.n == 0) return;
    if (n == 0) { *this = o; return; }
    double d = o.mean - mean;
    long long tot = n + o.n;
    mean += d * static_cast<double>(o.n) / static_cast<double>(tot);
    m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) /
                     static_cast<double>(tot);
    n = tot;
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  double sem() const { return n > 0 ? stddev() / std::sqrt(static_cast<double>(n)) : 0.0; }
};

// Runs fn(begin, end, shard_index) over [0, count) split into contiguous
// shards. Shard boundaries depend only on (count, workers), never on timing,
// so any reduction done per shard and merged in shard order is reproducible.
inline void parallel_for(std::int64_t count, int workers,
                         const std::function<void(std::int64_t, std::int64_t, int)>& fn) {
  if (count <= 0) return;
  if (workers <= 1) {
    fn(0, count, 0);
    return;
  }
  int shards = workers;
  if (static_cast<std::int64_t>(shards) > count) shards = static_cast<int>(count);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(shards));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(shards));
  std::int64_t base = count / shards, rem = count % shards;
  std::int64_t begin = 0;
  for (int s = 0; s < shards; ++s) {
    std::int64_t len = base + (s < rem ? 1 : 0);
    std::int64_t end = begin + len;
    pool.emplace_back([&fn, &errors, begin, end, s] {
      try {
        fn(begin, end, s);
      } catch (...) {
        errors[static_cast<std::size_t>(s)] = std::current_exception();
      }
    });
    begin = end;
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Allocation guard: large path/table buffers go through here so an oversized
// request fails with a clear message instead of thrashing the host.
inline double& memory_budget_bytes() {
  static double budget = 3.5e9;
  return budget;
}

inline void check_allocation(std::size_t bytes, const char* what) {
  if (static_cast<double>(bytes) > memory_budget_bytes()) {
    throw numeric_error(std::string(what) + ": requested " +
                        std::to_string(bytes / (1024.0 * 1024.0)) +
                        " MiB exceeds memory budget of " +
                        std::to_string(memory_budget_bytes() / (1024.0 * 1024.0)) + " MiB");
  }
}

inline bool is_finite(double x) { return std::isfinite(x); }

}  // namespace deepswitch
