#include "drbayes/cli.hpp"

#include "drbayes/estimators.hpp"
#include "drbayes/identities.hpp"
#include "drbayes/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#ifndef DRBAYES_VERSION
#define DRBAYES_VERSION "unknown"
#endif

namespace drbayes {

namespace {

using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item.erase(0, item.find_first_not_of(" \t\r"));
    item.erase(item.find_last_not_of(" \t\r") + 1);
    out.push_back(item);
  }
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> split_nonempty(const std::string& s) {
  std::vector<std::string> out;
  for (auto& item : split(s, ',')) {
    if (!item.empty()) out.push_back(std::move(item));
  }
  return out;
}

std::string join_estimators(const std::vector<Estimator>& list) {
  std::string s;
  for (Estimator e : list) s += (s.empty() ? "" : ",") + std::string(tag(e));
  return s;
}

std::string diagnostics_field(const Diagnostics& diag) {
  std::string s;
  for (const auto& [k, v] : diag) s += (s.empty() ? "" : ";") + k + "=" + format_number(v);
  return s;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

// --- simulate --------------------------------------------------------------

struct SimulateArgs {
  std::string config_path;
  Index n = 500;
  int reps = 1000;
  std::uint64_t seed = 42;
  std::string scenario = "I";
  std::string layout = "table";
  std::string estimators = "all";
  int draws = 200;
  int boot = 200;
  int threads = 1;
  std::string out = "simulation_out";
  bool no_stabilize = false;
  bool quiet = false;
};

// Config keys mirror the flag names; flags given on the command line win.
void merge_config(SimulateArgs& args, const CLI::App& cmd) {
  if (args.config_path.empty()) return;
  std::ifstream in(args.config_path);
  if (!in) throw UsageError("cannot open config file '" + args.config_path + "'");
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& ex) {
    throw UsageError("config file '" + args.config_path + "' is not valid JSON: " + ex.what());
  }
  if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
  auto given = [&](const char* flag) { return cmd.get_option(flag)->count() > 0; };
  try {
    for (const auto& [key, value] : cfg.items()) {
      if (key == "n") {
        if (!given("--n")) args.n = value.get<Index>();
      } else if (key == "reps") {
        if (!given("--reps")) args.reps = value.get<int>();
      } else if (key == "seed") {
        if (!given("--seed")) args.seed = value.get<std::uint64_t>();
      } else if (key == "scenario") {
        if (!given("--scenario")) args.scenario = value.get<std::string>();
      } else if (key == "layout") {
        if (!given("--layout")) args.layout = value.get<std::string>();
      } else if (key == "estimators") {
        if (given("--estimators")) continue;
        if (value.is_array()) {
          std::string joined;
          for (const auto& v : value) joined += (joined.empty() ? "" : ",") + v.get<std::string>();
          args.estimators = joined;
        } else {
          args.estimators = value.get<std::string>();
        }
      } else if (key == "draws") {
        if (!given("--draws")) args.draws = value.get<int>();
      } else if (key == "boot") {
        if (!given("--boot")) args.boot = value.get<int>();
      } else if (key == "threads") {
        if (!given("--threads")) args.threads = value.get<int>();
      } else if (key == "out") {
        if (!given("--out")) args.out = value.get<std::string>();
      } else if (key == "stabilize") {
        if (!given("--no-stabilize")) args.no_stabilize = !value.get<bool>();
      } else {
        throw UsageError("unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& ex) {
    throw UsageError("bad value in config file: " + std::string(ex.what()));
  }
}

SimConfig to_sim_config(const SimulateArgs& args) {
  SimConfig c;
  c.n = args.n;
  c.reps = args.reps;
  c.seed = args.seed;
  const auto scenario = parse_scenario(args.scenario);
  if (!scenario) throw UsageError("scenario must be I or II, got '" + args.scenario + "'");
  c.scenario = *scenario;
  const auto layout = parse_layout(args.layout);
  if (!layout) throw UsageError("layout must be table or printed, got '" + args.layout + "'");
  c.layout = *layout;
  try {
    c.estimators = parse_estimator_list(args.estimators);
  } catch (const std::invalid_argument& ex) {
    throw UsageError(ex.what());
  }
  c.resampling = {args.draws, args.boot, !args.no_stabilize};
  c.threads = args.threads;
  try {
    c.validate();
  } catch (const std::invalid_argument& ex) {
    throw UsageError(ex.what());
  }
  return c;
}

json config_json(const SimConfig& c) {
  return {{"n", c.n},
          {"reps", c.reps},
          {"seed", c.seed},
          {"scenario", scenario_name(c.scenario)},
          {"layout", layout_name(c.layout)},
          {"estimators", join_estimators(c.estimators)},
          {"draws", c.resampling.n_draws},
          {"boot", c.resampling.n_boot},
          {"stabilize", c.resampling.stabilize},
          {"threads", c.threads}};
}

int cmd_simulate(const SimulateArgs& raw, const CLI::App& cmd, std::ostream& out, std::ostream& err) {
  SimulateArgs args = raw;
  merge_config(args, cmd);
  const SimConfig config = to_sim_config(args);

  const std::filesystem::path dir(args.out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory '" + args.out + "': " + ec.message());

  const auto start = std::chrono::steady_clock::now();
  int done = 0;
  const int step = std::max(1, config.reps / 10);
  const auto records = run_simulation(config, [&](int) {
    ++done;
    if (!args.quiet && (done % step == 0 || done == config.reps)) {
      err << "replications " << done << "/" << config.reps << "\n" << std::flush;
    }
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto rows = summarize(records, config.estimators);

  std::ofstream reps_csv(dir / "replications.csv");
  write_replications_csv(reps_csv, records);
  std::ofstream summary_csv(dir / "summary.csv");
  write_summary_csv(summary_csv, rows);

  json failures = json::object();
  json warnings = json::array();
  for (const auto& [e, count] : failure_counts(records, config.estimators)) {
    failures[std::string(tag(e))] = count;
    if (count > 0) warnings.push_back(std::string(tag(e)) + ": " + std::to_string(count) + " failed replications");
  }
  const json manifest = {{"version", version_string()},
                         {"command", "simulate"},
                         {"config", config_json(config)},
                         {"seed", config.seed},
                         {"wall_clock_seconds", seconds},
                         {"failures", failures},
                         {"warnings", warnings},
                         {"files", {"replications.csv", "summary.csv"}}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  if (!reps_csv || !summary_csv) throw UsageError("failed writing output files in '" + args.out + "'");

  out << "Scenario " << scenario_name(config.scenario) << ", n = " << config.n << ", " << config.reps
      << " replications, seed " << config.seed << "\n"
      << format_summary_table(rows);
  for (const auto& w : warnings) err << "warning: " << w.get<std::string>() << "\n";
  return kExitOk;
}

// --- estimate ----------------------------------------------------------------

struct EstimateArgs {
  std::string data_path;
  std::string outcome = "y";
  std::string treatment = "z";
  std::string s_cols;
  std::string b_cols;
  std::string estimators = "all";
  std::string out;
  int draws = 200;
  int boot = 200;
  std::uint64_t seed = 42;
  bool no_stabilize = false;
};

int cmd_estimate(const EstimateArgs& args, std::ostream& out, std::ostream& err) {
  std::vector<Estimator> list;
  try {
    list = parse_estimator_list(args.estimators);
  } catch (const std::invalid_argument& ex) {
    throw UsageError(ex.what());
  }
  std::ifstream in(args.data_path);
  if (!in) throw DataError("cannot open data file '" + args.data_path + "'");
  const CsvSelection sel =
      read_dataset_csv(in, args.outcome, args.treatment, split_nonempty(args.s_cols), split_nonempty(args.b_cols));
  sel.data.validate();
  const ResamplingConfig cfg{args.draws, args.boot, !args.no_stabilize};
  try {
    cfg.validate();
  } catch (const std::invalid_argument& ex) {
    throw UsageError(ex.what());
  }

  const auto outcomes = estimate_many(list, sel.data, sel.spec, cfg, RngStream(args.seed, 0));
  std::ostringstream csv;
  csv << "method,point,se,ci_low,ci_high,diagnostics\n";
  for (const auto& o : outcomes) {
    csv << tag(o.method) << ',';
    if (o.result) {
      const auto& r = *o.result;
      csv << format_number(r.point) << ',' << format_number(r.se) << ',' << format_number(r.ci_low) << ','
          << format_number(r.ci_high) << ',' << csv_quote(diagnostics_field(r.diagnostics)) << '\n';
    } else {
      csv << "nan,nan,nan,nan," << csv_quote("error=" + o.error) << '\n';
      err << "warning: " << tag(o.method) << " failed: " << o.error << "\n";
    }
  }
  if (args.out.empty()) {
    out << csv.str();
  } else {
    std::ofstream file(args.out);
    file << csv.str();
    if (!file) throw UsageError("cannot write '" + args.out + "'");
    const json manifest = {{"version", version_string()},
                           {"command", "estimate"},
                           {"data", args.data_path},
                           {"outcome", args.outcome},
                           {"treatment", args.treatment},
                           {"s_cols", args.s_cols},
                           {"b_cols", args.b_cols},
                           {"estimators", join_estimators(list)},
                           {"draws", cfg.n_draws},
                           {"boot", cfg.n_boot},
                           {"stabilize", cfg.stabilize},
                           {"seed", args.seed}};
    std::ofstream(args.out + ".manifest.json") << manifest.dump(2) << "\n";
  }
  return kExitOk;
}

// --- selfcheck ---------------------------------------------------------------

int cmd_selfcheck(bool mutate, std::ostream& out) {
  const auto checks = run_identity_checks({mutate});
  bool all = true;
  for (const auto& c : checks) {
    char line[64];
    std::snprintf(line, sizeof line, "residual %.3e (tol %.0e)", c.residual, c.tolerance);
    out << (c.passed ? "PASS  " : "FAIL  ") << c.name << "  " << line << "\n";
    all = all && c.passed;
  }
  out << (all ? "all identities hold\n" : "identity failures detected\n");
  return all ? kExitOk : kExitIdentityFailure;
}

}  // namespace

std::string version_string() { return std::string("drbayes ") + DRBAYES_VERSION; }

CsvSelection read_dataset_csv(std::istream& in, const std::string& outcome, const std::string& treatment,
                              const std::vector<std::string>& s_cols, const std::vector<std::string>& b_cols) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("data file is empty");
  const auto header = split(line, ',');
  std::unordered_map<std::string, Index> index;
  for (std::size_t j = 0; j < header.size(); ++j) index.emplace(header[j], static_cast<Index>(j));
  auto find = [&](const std::string& name) {
    const auto it = index.find(name);
    if (it == index.end()) throw DataError("column '" + name + "' not found in header");
    return it->second;
  };

  // Covariate columns are stored once each, in first-use order.
  CsvSelection sel;
  std::vector<Index> source;
  auto parse_refs = [&](const std::vector<std::string>& cols) {
    std::vector<CovariateRef> refs;
    for (const auto& c : cols) {
      CovariateRef ref;
      std::string name = c;
      if (name.rfind("abs:", 0) == 0) {
        name = name.substr(4);
        ref.transform = Transform::kAbsStandardized;
      }
      const Index src = find(name);
      const auto pos = std::find(source.begin(), source.end(), src);
      ref.column = static_cast<Index>(pos - source.begin());
      if (pos == source.end()) {
        source.push_back(src);
        sel.data.names.push_back(name);
      }
      refs.push_back(ref);
    }
    return refs;
  };
  const Index y_col = find(outcome);
  const Index z_col = find(treatment);
  sel.spec.s_columns = parse_refs(s_cols);
  sel.spec.b_columns = parse_refs(b_cols);

  std::vector<std::vector<double>> rows;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row_number) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(fields.size()));
    }
    auto value = [&](Index col) {
      const std::string& f = fields[static_cast<std::size_t>(col)];
      const std::string& name = header[static_cast<std::size_t>(col)];
      if (f.empty() || f == "NA" || f == "NaN" || f == "nan") {
        throw DataError("missing value in column '" + name + "' at row " + std::to_string(row_number));
      }
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f.size() || !std::isfinite(v)) {
        throw DataError("non-numeric value '" + f + "' in column '" + name + "' at row " +
                        std::to_string(row_number));
      }
      return v;
    };
    std::vector<double> r{value(y_col), value(z_col)};
    for (Index src : source) r.push_back(value(src));
    const double z = r[1];
    if (z != 0.0 && z != 1.0) {
      throw DataError("treatment column '" + treatment + "' has value " + fields[static_cast<std::size_t>(z_col)] +
                      " at row " + std::to_string(row_number) + " (must be 0 or 1)");
    }
    rows.push_back(std::move(r));
  }
  const Index n = static_cast<Index>(rows.size());
  if (n == 0) throw DataError("data file has no rows");
  sel.data.y.resize(n);
  sel.data.z.resize(n);
  sel.data.x.resize(n, static_cast<Index>(source.size()));
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    sel.data.y[i] = r[0];
    sel.data.z[i] = r[1];
    for (Index j = 0; j < sel.data.x.cols(); ++j) sel.data.x(i, j) = r[static_cast<std::size_t>(j) + 2];
  }
  return sel;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "y,z";
  for (const auto& name : data.names) out << ',' << name;
  out << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    out << format_number(data.y[i]) << ',' << format_number(data.z[i]);
    for (Index j = 0; j < data.x.cols(); ++j) out << ',' << format_number(data.x(i, j));
    out << '\n';
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian and frequentist doubly robust causal contrast estimators"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run the simulation study and summarize it");
  simulate->add_option("--config", sim.config_path, "JSON config file (flags override it)");
  simulate->add_option("--n", sim.n, "Sample size per replication");
  simulate->add_option("--reps", sim.reps, "Number of replications");
  simulate->add_option("--seed", sim.seed, "Random seed");
  simulate->add_option("--scenario", sim.scenario, "I or II");
  simulate->add_option("--layout", sim.layout, "Covariate layout: table or printed");
  simulate->add_option("--estimators", sim.estimators, "Comma-separated estimator tags or 'all'");
  simulate->add_option("--draws", sim.draws, "Posterior draws per Bayesian estimate");
  simulate->add_option("--boot", sim.boot, "Bootstrap resamples per frequentist estimate");
  simulate->add_option("--threads", sim.threads, "Worker threads");
  simulate->add_option("--out", sim.out, "Output directory");
  simulate->add_flag("--no-stabilize", sim.no_stabilize, "Use unstabilized IPT weights");
  simulate->add_flag("--quiet", sim.quiet, "No progress output");

  EstimateArgs est;
  auto* estimate_cmd = app.add_subcommand("estimate", "Run estimators on a CSV dataset");
  estimate_cmd->add_option("--data", est.data_path, "CSV file with a header row")->required();
  estimate_cmd->add_option("--outcome", est.outcome, "Outcome column");
  estimate_cmd->add_option("--treatment", est.treatment, "Binary treatment column");
  estimate_cmd->add_option("--s-cols", est.s_cols, "Outcome-model covariates, comma-separated (abs: prefix allowed)");
  estimate_cmd->add_option("--b-cols", est.b_cols, "Treatment-model covariates, comma-separated (abs: prefix allowed)");
  estimate_cmd->add_option("--estimators", est.estimators, "Comma-separated estimator tags or 'all'");
  estimate_cmd->add_option("--draws", est.draws, "Posterior draws");
  estimate_cmd->add_option("--boot", est.boot, "Bootstrap resamples");
  estimate_cmd->add_option("--seed", est.seed, "Random seed");
  estimate_cmd->add_option("--out", est.out, "Output CSV (default: stdout)");
  estimate_cmd->add_flag("--no-stabilize", est.no_stabilize, "Use unstabilized IPT weights");

  bool mutate = false;
  auto* selfcheck = app.add_subcommand("selfcheck", "Verify the estimator identities on fixed instances");
  selfcheck->add_flag("--mutate-dr-sign", mutate, "Corrupt the DR residual sign (the check must then fail)");

  Index gen_n = 500;
  std::uint64_t gen_seed = 42;
  std::uint64_t gen_rep = 0;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "Write one simulated dataset as CSV");
  generate->add_option("--n", gen_n, "Rows");
  generate->add_option("--seed", gen_seed, "Random seed");
  generate->add_option("--rep", gen_rep, "Replication index (stream id)");
  generate->add_option("--out", gen_out, "Output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(sim, *simulate, out, err);
    if (*estimate_cmd) return cmd_estimate(est, out, err);
    if (*selfcheck) return cmd_selfcheck(mutate, out);
    if (*generate) {
      if (gen_n < 1) throw UsageError("--n must be positive");
      RngStream rng(gen_seed, gen_rep);
      const Dataset d = generate_data(gen_n, rng);
      if (gen_out.empty()) {
        write_dataset_csv(out, d);
      } else {
        std::ofstream file(gen_out);
        write_dataset_csv(file, d);
        if (!file) throw UsageError("cannot write '" + gen_out + "'");
      }
      return kExitOk;
    }
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace drbayes
