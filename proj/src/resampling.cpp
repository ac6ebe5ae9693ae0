#include "resampling.hpp"

#include "drbayes/estimators.hpp"

#include <string>

namespace drbayes::detail {

void check_failure_rate(int failures, int attempts, const char* what) {
  if (attempts > 0 && 10 * failures > attempts) {
    throw EstimationError(std::string(what) + ": " + std::to_string(failures) + " of " +
                          std::to_string(attempts) + " fits failed (more than 10%)");
  }
}

BootstrapSummary bootstrap(const Dataset& data, int resamples, const RngStream& rng,
                           const std::function<double(const Dataset&)>& statistic) {
  const Index n = data.size();
  BootstrapSummary out;
  std::vector<double> points;
  points.reserve(static_cast<std::size_t>(resamples));
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (int b = 0; b < resamples; ++b) {
    RngStream stream = rng.substream(static_cast<std::uint64_t>(b));
    for (;;) {
      Index treated = 0;
      for (auto& r : rows) {
        r = static_cast<Index>(stream.below(static_cast<std::uint64_t>(n)));
        treated += data.z[r] == 1.0 ? 1 : 0;
      }
      if (treated > 0 && treated < n) break;
      ++out.degenerate;
    }
    try {
      points.push_back(statistic(take_rows(data, rows)));
    } catch (const std::exception&) {
      ++out.failures;
    }
  }
  check_failure_rate(out.failures, resamples, "bootstrap");
  out.points = Eigen::Map<const Vector>(points.data(), static_cast<Index>(points.size()));
  out.se = sample_sd(out.points);
  return out;
}

DrawSummary collect_draws(int count, Index width, const RngStream& rng,
                          const std::function<Vector(RngStream&)>& draw) {
  DrawSummary out;
  out.values.resize(count, width);
  Index kept = 0;
  for (int j = 0; j < count; ++j) {
    RngStream stream = rng.substream(static_cast<std::uint64_t>(j));
    try {
      out.values.row(kept) = draw(stream).transpose();
      ++kept;
    } catch (const std::exception&) {
      ++out.failures;
    }
  }
  check_failure_rate(out.failures, count, "posterior draws");
  out.values.conservativeResize(kept, width);
  return out;
}

}  // namespace drbayes::detail
