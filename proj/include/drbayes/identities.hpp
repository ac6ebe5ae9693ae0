#pragma once

#include <string>
#include <vector>

namespace drbayes {

struct IdentityCheck {
  std::string name;
  double residual = 0.0;  // largest discrepancy found
  double tolerance = 0.0;
  bool passed = false;
};

struct SelfCheckOptions {
  /// Flip the control-arm sign of the DR residual weight; Identity 3 must fail.
  bool mutate_dr_sign = false;
};

/// Identities 1-5, the treatment-model isolation property and the weighted
/// GLM invariants, each on fixed small instances.
std::vector<IdentityCheck> run_identity_checks(const SelfCheckOptions& options = {});

}  // namespace drbayes
