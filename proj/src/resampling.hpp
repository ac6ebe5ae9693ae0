#pragma once

#include "drbayes/data.hpp"
#include "drbayes/numerics.hpp"

#include <functional>

namespace drbayes::detail {

struct BootstrapSummary {
  Vector points;
  double se = 0.0;
  int failures = 0;
  int degenerate = 0;  // single-arm resamples that were redrawn
};

/// Nonparametric bootstrap of `statistic`; resample b draws row indices from
/// rng.substream(b).
BootstrapSummary bootstrap(const Dataset& data, int resamples, const RngStream& rng,
                           const std::function<double(const Dataset&)>& statistic);

struct DrawSummary {
  Matrix values;  // one row per successful draw
  int failures = 0;
};

/// Evaluates `draw` on rng.substream(j) for j < count; each draw yields
/// `width` numbers. Draws that throw are skipped; more than 10% failures
/// raises EstimationError.
DrawSummary collect_draws(int count, Index width, const RngStream& rng,
                          const std::function<Vector(RngStream&)>& draw);

/// Throws EstimationError when failures exceed 10% of attempts.
void check_failure_rate(int failures, int attempts, const char* what);

}  // namespace drbayes::detail
