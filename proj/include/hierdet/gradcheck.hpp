#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hierdet {

struct GradCheckResult {
  std::string name;
  int instances = 0;
  double max_rel_err = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  int instances = 50;
  std::uint64_t seed = 20240817;
  double fd_step = 1e-5;
  // Test hook: perturb one analytic gradient so the suite must fail.
  bool corrupt = false;
};

// Central-difference verification of every analytic gradient in the
// library: projection loss, softmax-KL, hierarchical coupling (both parent
// modes, including the strength parameter), masked cross-entropy, box
// overlap, and the fully composed training step.
std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& options = {});

bool all_passed(const std::vector<GradCheckResult>& results);

std::string gradcheck_summary(const std::vector<GradCheckResult>& results);

}  // namespace hierdet
