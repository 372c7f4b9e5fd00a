#pragma once
// Uniform two-level time grid: n_dates intervention dates splitting [0, T],
// each interval refined into `substeps` simulation steps.

#include <string>

#include "deepswitch/common.hpp"

namespace deepswitch {

struct TimeGrid {
  double horizon = 1.0;  // T
  int n_dates = 1;       // N, decision dates t_0..t_{N-1}, terminal t_N = T
  int substeps = 1;      // K, simulation steps per date interval

  void validate() const {
    if (!(horizon > 0.0)) throw config_error("/grid/horizon: must be > 0");
    if (n_dates < 1) throw config_error("/grid/n_dates: must be >= 1");
    if (substeps < 1) throw config_error("/grid/substeps: must be >= 1");
  }

  int total_steps() const { return n_dates * substeps; }
  double dt() const { return horizon / static_cast<double>(total_steps()); }

  // Time at global substep index s in [0, total_steps]. Computed from the
  // index so t at (date n, substep K) and (date n+1, substep 0) are the
  // same double, bit for bit.
  double time_at_step(int s) const {
    return horizon * static_cast<double>(s) / static_cast<double>(total_steps());
  }
  int date_step(int n) const { return n * substeps; }
  double date_time(int n) const { return time_at_step(date_step(n)); }
};

}  // namespace deepswitch
