#pragma once

#include <string>
#include <vector>

#include "lvae/models.hpp"

namespace lvae {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass() const { return max_rel_err < 1e-3; }
};

/// Tiny architecture used by the suite's full-model checks; small enough that
/// exhaustive per-coordinate differencing stays fast.
ArchitectureSpec grad_suite_spec();

/// Worst finite-difference error of every model parameter for one loss
/// evaluation on random data (eps 1e-3 central differences).
double model_grad_check(const ArchitectureSpec& spec, ModelKind kind, uint64_t seed,
                        double eps);

/// Per-operation and full-model finite-difference checks across `seeds`
/// random draws. Every entry must come back below 1e-3.
std::vector<GradCheckEntry> run_grad_suite(int seeds);

}  // namespace lvae
