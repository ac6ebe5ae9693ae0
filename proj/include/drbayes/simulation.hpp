#pragma once

#include "drbayes/data.hpp"
#include "drbayes/estimators.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace drbayes {

inline constexpr double kTrueEffect = 1.0;

enum class Scenario { kI, kII };

/// kTable: I uses S = (x1, x2, x4), B = (c1, x2, x3); II uses S = (c1, x2, x4),
/// B = (x1, x2, x3). kPrinted swaps x3 and x4 between S and B in both.
enum class ScenarioLayout { kTable, kPrinted };

std::optional<Scenario> parse_scenario(std::string_view s);
std::string_view scenario_name(Scenario s);
std::optional<ScenarioLayout> parse_layout(std::string_view s);
std::string_view layout_name(ScenarioLayout l);

/// n rows: x_j ~ N(0, 1) for j = 1..4, Z ~ Bernoulli(expit(0.4 c1 + 0.4 x2 + 0.8 x3)),
/// Y ~ N(z - c1 - x2 - x4, 1), c1 = |x1| / sqrt(1 - 2/pi). Raw x is stored.
Dataset generate_data(Index n, RngStream& rng);

CovariateSpec apply_scenario(Scenario scenario, ScenarioLayout layout = ScenarioLayout::kTable);
inline CovariateSpec apply_scenario(const Dataset&, Scenario scenario,
                                    ScenarioLayout layout = ScenarioLayout::kTable) {
  return apply_scenario(scenario, layout);
}

struct SimConfig {
  Index n = 500;
  int reps = 1000;
  std::uint64_t seed = 42;
  Scenario scenario = Scenario::kI;
  ScenarioLayout layout = ScenarioLayout::kTable;
  std::vector<Estimator> estimators{kAllEstimators.begin(), kAllEstimators.end()};
  ResamplingConfig resampling;
  int threads = 1;

  void validate() const;
};

struct ReplicationRecord {
  int rep = 0;
  Estimator estimator = Estimator::kNaive;
  double point = 0.0;
  double se = 0.0;
  bool covered = false;
  bool failed = false;
  std::string error;
};

/// |point - truth| <= 1.96 se.
bool covers(double point, double se, double truth = kTrueEffect);

/// One dataset from RngStream(seed, rep); every configured estimator runs on it.
std::vector<ReplicationRecord> run_replication(const SimConfig& config, int rep);

/// All replications, ordered by rep and then by estimator. Worker threads take
/// replications from a shared counter; the output does not depend on
/// `config.threads`.
std::vector<ReplicationRecord> run_simulation(const SimConfig& config,
                                              const std::function<void(int)>& on_done = {});

struct SimulationRow {
  Estimator estimator = Estimator::kNaive;
  double mean_point = 0.0;
  double rel_bias_pct = 0.0;
  double mc_sd = 0.0;
  double mean_se = 0.0;
  double mc_error = 0.0;  // batch-means error of mean_point
  double coverage_pct = 0.0;
  int n_ok = 0;
  int n_failed = 0;
  bool incomplete = false;  // more than 10% failed replications
};

std::vector<SimulationRow> summarize(const std::vector<ReplicationRecord>& records,
                                     const std::vector<Estimator>& order);

/// Per-estimator failure counts.
std::vector<std::pair<Estimator, int>> failure_counts(const std::vector<ReplicationRecord>& records,
                                                      const std::vector<Estimator>& order);

/// Numbers are printed with 17 significant digits.
std::string format_number(double v);
void write_replications_csv(std::ostream& out, const std::vector<ReplicationRecord>& records);
void write_summary_csv(std::ostream& out, const std::vector<SimulationRow>& rows);
std::string format_summary_table(const std::vector<SimulationRow>& rows);

}  // namespace drbayes
