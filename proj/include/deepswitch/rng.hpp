#pragma once
// Per-path random streams. Each path owns an engine seeded from
// (root seed, path index), so results never depend on batch size,
// shard layout, or worker count.

#include <cstdint>
#include <random>

#include "deepswitch/common.hpp"

namespace deepswitch {

class PathRng {
 public:
  PathRng(std::uint64_t seed, std::uint64_t path_index)
      : eng_(stream_seed(seed, path_index)) {}

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }

  long poisson(double mean) {
    if (mean <= 0.0) return 0;
    std::poisson_distribution<long> d(mean);
    return d(eng_);
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace deepswitch
