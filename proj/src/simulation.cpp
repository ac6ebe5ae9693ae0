#include "drbayes/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace drbayes {

std::optional<Scenario> parse_scenario(std::string_view s) {
  if (s == "I" || s == "i" || s == "1") return Scenario::kI;
  if (s == "II" || s == "ii" || s == "2") return Scenario::kII;
  return std::nullopt;
}

std::string_view scenario_name(Scenario s) { return s == Scenario::kI ? "I" : "II"; }

std::optional<ScenarioLayout> parse_layout(std::string_view s) {
  if (s == "table") return ScenarioLayout::kTable;
  if (s == "printed") return ScenarioLayout::kPrinted;
  return std::nullopt;
}

std::string_view layout_name(ScenarioLayout l) { return l == ScenarioLayout::kTable ? "table" : "printed"; }

Dataset generate_data(Index n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("generate_data: n must be positive");
  Dataset d;
  d.y.resize(n);
  d.z.resize(n);
  d.x.resize(n, 4);
  d.names = {"x1", "x2", "x3", "x4"};
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 4; ++j) d.x(i, j) = rng.normal();
    const double c1 = apply_transform(Transform::kAbsStandardized, d.x(i, 0));
    const double p = expit(0.4 * c1 + 0.4 * d.x(i, 1) + 0.8 * d.x(i, 2));
    d.z[i] = rng.uniform() < p ? 1.0 : 0.0;
    d.y[i] = d.z[i] - c1 - d.x(i, 1) - d.x(i, 3) + rng.normal();
  }
  return d;
}

CovariateSpec apply_scenario(Scenario scenario, ScenarioLayout layout) {
  const CovariateRef x1{0, Transform::kIdentity};
  const CovariateRef c1{0, Transform::kAbsStandardized};
  const CovariateRef x2{1, Transform::kIdentity};
  const CovariateRef x3{2, Transform::kIdentity};
  const CovariateRef x4{3, Transform::kIdentity};
  const bool table = layout == ScenarioLayout::kTable;
  const CovariateRef s_last = table ? x4 : x3;
  const CovariateRef b_last = table ? x3 : x4;
  if (scenario == Scenario::kI) return {{x1, x2, s_last}, {c1, x2, b_last}};
  return {{c1, x2, s_last}, {x1, x2, b_last}};
}

void SimConfig::validate() const {
  if (n < 50) throw std::invalid_argument("simulation: n must be at least 50");
  if (reps < 2) throw std::invalid_argument("simulation: reps must be at least 2");
  if (threads < 1) throw std::invalid_argument("simulation: threads must be at least 1");
  if (estimators.empty()) throw std::invalid_argument("simulation: no estimators configured");
  resampling.validate();
}

bool covers(double point, double se, double truth) { return std::abs(point - truth) <= kWaldZ * se; }

std::vector<ReplicationRecord> run_replication(const SimConfig& config, int rep) {
  RngStream rng(config.seed, static_cast<std::uint64_t>(rep));
  const Dataset data = generate_data(config.n, rng);
  const CovariateSpec spec = apply_scenario(config.scenario, config.layout);
  const auto outcomes = estimate_many(config.estimators, data, spec, config.resampling, rng);
  std::vector<ReplicationRecord> rows;
  rows.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    ReplicationRecord r;
    r.rep = rep;
    r.estimator = o.method;
    if (o.result && std::isfinite(o.result->point) && std::isfinite(o.result->se)) {
      r.point = o.result->point;
      r.se = o.result->se;
      r.covered = covers(r.point, r.se);
    } else {
      r.failed = true;
      r.point = r.se = std::nan("");
      r.error = o.result ? "non-finite estimate" : o.error;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ReplicationRecord> run_simulation(const SimConfig& config, const std::function<void(int)>& on_done) {
  config.validate();
  std::vector<std::vector<ReplicationRecord>> per_rep(static_cast<std::size_t>(config.reps));
  std::atomic<int> next{0};
  std::mutex callback_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (int rep = next++; rep < config.reps; rep = next++) {
      try {
        per_rep[static_cast<std::size_t>(rep)] = run_replication(config, rep);
      } catch (...) {
        std::lock_guard lock(callback_mutex);
        if (!first_error) first_error = std::current_exception();
        continue;
      }
      if (on_done) {
        std::lock_guard lock(callback_mutex);
        on_done(rep);
      }
    }
  };
  const int workers = std::min(config.threads, config.reps);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<ReplicationRecord> out;
  out.reserve(static_cast<std::size_t>(config.reps) * config.estimators.size());
  for (auto& rows : per_rep) {
    for (auto& r : rows) out.push_back(std::move(r));
  }
  return out;
}

std::vector<SimulationRow> summarize(const std::vector<ReplicationRecord>& records,
                                     const std::vector<Estimator>& order) {
  std::vector<SimulationRow> rows;
  for (Estimator e : order) {
    std::vector<double> points, ses;
    int failed = 0, covered = 0;
    for (const auto& r : records) {
      if (r.estimator != e) continue;
      if (r.failed) {
        ++failed;
        continue;
      }
      points.push_back(r.point);
      ses.push_back(r.se);
      covered += r.covered ? 1 : 0;
    }
    SimulationRow row;
    row.estimator = e;
    row.n_ok = static_cast<int>(points.size());
    row.n_failed = failed;
    const int total = row.n_ok + failed;
    row.incomplete = total == 0 || 10 * failed > total;
    if (!points.empty()) {
      const Vector p = Eigen::Map<const Vector>(points.data(), row.n_ok);
      const Vector s = Eigen::Map<const Vector>(ses.data(), row.n_ok);
      row.mean_point = sample_mean(p);
      row.rel_bias_pct = 100.0 * (row.mean_point - kTrueEffect) / kTrueEffect;
      row.mc_sd = row.n_ok > 1 ? sample_sd(p) : 0.0;
      row.mean_se = sample_mean(s);
      // Batch means needs two batches of two; tiny runs report nan.
      row.mc_error = row.n_ok >= 4 ? batch_means_error(p, default_batch_count(row.n_ok)) : std::nan("");
      row.coverage_pct = 100.0 * covered / row.n_ok;
    } else {
      row.mean_point = row.rel_bias_pct = row.mc_sd = row.mean_se = row.mc_error = row.coverage_pct =
          std::nan("");
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<std::pair<Estimator, int>> failure_counts(const std::vector<ReplicationRecord>& records,
                                                      const std::vector<Estimator>& order) {
  std::vector<std::pair<Estimator, int>> out;
  for (Estimator e : order) {
    const auto n = std::count_if(records.begin(), records.end(),
                                 [e](const ReplicationRecord& r) { return r.estimator == e && r.failed; });
    out.emplace_back(e, static_cast<int>(n));
  }
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_replications_csv(std::ostream& out, const std::vector<ReplicationRecord>& records) {
  out << "rep,estimator,point,se,covered\n";
  for (const auto& r : records) {
    out << r.rep << ',' << tag(r.estimator) << ',' << format_number(r.point) << ',' << format_number(r.se) << ','
        << (r.failed ? "" : (r.covered ? "1" : "0")) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const std::vector<SimulationRow>& rows) {
  out << "estimator,mean_point,rel_bias_pct,mc_sd,mean_se,mc_error,coverage_pct,n_ok,n_failed,incomplete\n";
  for (const auto& r : rows) {
    out << tag(r.estimator) << ',' << format_number(r.mean_point) << ',' << format_number(r.rel_bias_pct) << ','
        << format_number(r.mc_sd) << ',' << format_number(r.mean_se) << ',' << format_number(r.mc_error) << ','
        << format_number(r.coverage_pct) << ',' << r.n_ok << ',' << r.n_failed << ',' << (r.incomplete ? 1 : 0)
        << '\n';
  }
}

std::string format_summary_table(const std::vector<SimulationRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-34s %8s %9s %7s %7s %8s %9s\n", "Method", "Est.", "Bias(%)", "SD", "SE",
                "MC err", "Cov.(%)");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-34s %8.3f %9.1f %7.3f %7.3f %8.4f %9.1f%s\n",
                  std::string(display_name(r.estimator)).c_str(), r.mean_point, r.rel_bias_pct, r.mc_sd, r.mean_se,
                  r.mc_error, r.coverage_pct, r.incomplete ? "  (incomplete)" : "");
    out << line;
  }
  return out.str();
}

}  // namespace drbayes
