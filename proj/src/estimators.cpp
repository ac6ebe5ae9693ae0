#include "drbayes/estimators.hpp"

#include "resampling.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace drbayes {

namespace {

std::atomic<bool> dr_control_sign_mutation{false};

struct EstimatorInfo {
  Estimator id;
  std::string_view tag;
  std::string_view name;
  std::uint64_t family;
  bool deterministic_point;
};

constexpr std::array<EstimatorInfo, 13> kInfo = {{
    {Estimator::kNaive, "naive", "Naive", 1, true},
    {Estimator::kAdjusted, "adjusted", "Adjusted", 2, true},
    {Estimator::kIptw, "iptw", "IPTW", 3, true},
    {Estimator::kOrPsObsInfo, "or_ps_obs", "OR/PS (obs. information)", 4, true},
    {Estimator::kOrPsSandwich, "or_ps_sandwich", "OR/PS (adj. sandwich)", 4, true},
    {Estimator::kDr, "dr", "DR", 5, true},
    {Estimator::kCleverCovariate, "clever_covariate", "Clever covariate", 6, true},
    {Estimator::kOrIptw, "or_iptw", "OR/IPTW", 7, true},
    {Estimator::kTwoStepForward, "two_step_forward", "Two-step (forward sampling)", 8, false},
    {Estimator::kTwoStepVarDecomp, "two_step_vardecomp", "Two-step (variance decomposition)", 8, false},
    {Estimator::kJoint, "joint", "Joint estimation", 9, false},
    {Estimator::kImportanceSampling, "is", "Importance sampling", 10, false},
    {Estimator::kImportanceSamplingDr, "is_dr", "Importance sampling/DR", 11, false},
}};

const EstimatorInfo& info(Estimator e) {
  for (const auto& i : kInfo) {
    if (i.id == e) return i;
  }
  throw std::invalid_argument("unknown estimator");
}

// mean over rows of (treated - control): the standardisation contrast vector.
Vector contrast_vector(const OutcomeDesigns& d) {
  return (d.treated - d.control).colwise().mean().transpose();
}

Matrix with_z(const DesignMatrix& observed, double z_value) {
  Matrix m = observed.values;
  m.col(1).setConstant(z_value);
  return m;
}

void record_weight_range(Diagnostics& diag, const Vector& w) {
  diag["weight_max"] = w.maxCoeff();
  diag["weight_min"] = w.minCoeff();
  diag["weight_ratio"] = w.maxCoeff() / w.minCoeff();
}

void record_ps_fit(Diagnostics& diag, const FittedLogistic& ps) {
  diag["ps_converged"] = ps.converged ? 1.0 : 0.0;
  diag["ps_iterations"] = ps.iterations;
  diag["ps_separation"] = ps.separation_warning ? 1.0 : 0.0;
}

struct PointFit {
  double point = 0.0;
  FittedLogistic ps;
  FittedLinear outcome;
  Diagnostics diag;
};

Vector fitted_propensity(const FittedLogistic& ps, const Dataset& data, const CovariateSpec& spec) {
  return clamp_propensity(propensity(ps, treatment_design(data, spec)));
}

PointFit adjusted_fit(const Dataset& data, const CovariateSpec& spec) {
  const OutcomeDesigns d = linear_outcome_designs(data, spec);
  PointFit f;
  f.outcome = fit_linear_weighted(d.observed, data.y, Vector::Ones(data.size()));
  f.point = contrast_vector(d).dot(f.outcome.phi);
  return f;
}

PointFit iptw_fit(const Dataset& data, const CovariateSpec& spec) {
  PointFit f;
  f.ps = fit_propensity(data, spec);
  const Vector e = fitted_propensity(f.ps, data, spec);
  f.point = iptw_contrast(data.y, data.z, e);
  record_ps_fit(f.diag, f.ps);
  record_weight_range(f.diag, ipt_weights(data.z, e, 0.5, false));
  return f;
}

struct OrPsFit : PointFit {
  bool basis_dropped = false;
};

OrPsFit or_ps_fit(const Dataset& data, const CovariateSpec& spec) {
  OrPsFit f;
  f.ps = fit_propensity(data, spec);
  const Vector e = fitted_propensity(f.ps, data, spec);
  OutcomeDesigns d = ps_cubic_outcome_designs(data, spec, e);
  const Vector ones = Vector::Ones(data.size());
  try {
    f.outcome = fit_linear_weighted(d.observed, data.y, ones);
  } catch (const SingularDesignError&) {
    // Degenerate propensity (e.g. constant): fall back to the plain model.
    d = linear_outcome_designs(data, spec);
    f.outcome = fit_linear_weighted(d.observed, data.y, ones);
    f.basis_dropped = true;
  }
  f.point = contrast_vector(d).dot(f.outcome.phi);
  record_ps_fit(f.diag, f.ps);
  f.diag["ps_basis_dropped"] = f.basis_dropped ? 1.0 : 0.0;
  return f;
}

PointFit dr_fit(const Dataset& data, const CovariateSpec& spec) {
  PointFit f;
  f.ps = fit_propensity(data, spec);
  const Vector e = fitted_propensity(f.ps, data, spec);
  const OutcomeDesigns d = linear_outcome_designs(data, spec);
  f.outcome = fit_linear_weighted(d.observed, data.y, Vector::Ones(data.size()));
  const DrTerms t = dr_contrast(data.y, data.z, e, d.observed.values * f.outcome.phi,
                                d.treated * f.outcome.phi, d.control * f.outcome.phi);
  f.point = t.total();
  f.diag["residual_term"] = t.residual;
  f.diag["model_term"] = t.model;
  record_ps_fit(f.diag, f.ps);
  return f;
}

PointFit clever_fit(const Dataset& data, const CovariateSpec& spec) {
  PointFit f;
  f.ps = fit_propensity(data, spec);
  const Vector e = fitted_propensity(f.ps, data, spec);
  const OutcomeDesigns d = clever_outcome_designs(data, spec, e);
  const Index clever_col = d.observed.cols() - 1;
  f.diag["max_abs_clever"] = d.observed.values.col(clever_col).cwiseAbs().maxCoeff();
  record_ps_fit(f.diag, f.ps);
  const Vector ones = Vector::Ones(data.size());
  try {
    f.outcome = fit_linear_weighted(d.observed, data.y, ones);
    f.point = clever_covariate_contrast(f.outcome.phi[1], f.outcome.phi[clever_col], e);
    f.diag["clever_dropped"] = 0.0;
  } catch (const SingularDesignError&) {
    // Constant propensity: c(z, e) is affine in z and adds nothing.
    f.outcome = fit_linear_weighted(linear_outcome_design(data, spec), data.y, ones);
    f.point = f.outcome.phi[1];
    f.diag["clever_dropped"] = 1.0;
  }
  return f;
}

PointFit or_iptw_fit(const Dataset& data, const CovariateSpec& spec, bool stabilize) {
  PointFit f;
  f.ps = fit_propensity(data, spec);
  const Vector e = fitted_propensity(f.ps, data, spec);
  const double share = data.z.mean();
  const Vector w = ipt_weights(data.z, e, share, stabilize);
  const OutcomeDesigns d = linear_outcome_designs(data, spec);
  f.outcome = fit_linear_weighted(d.observed, data.y, w);
  f.point = contrast_vector(d).dot(f.outcome.phi);
  record_ps_fit(f.diag, f.ps);
  record_weight_range(f.diag, w);
  return f;
}

EstimateResult with_bootstrap(Estimator method, const PointFit& fit, const Dataset& data,
                              const CovariateSpec& spec, const ResamplingConfig& cfg, const RngStream& rng) {
  const auto boot = detail::bootstrap(data, cfg.n_boot, rng, [&](const Dataset& d) {
    return point_estimate(method, d, spec, cfg);
  });
  EstimateResult r = make_result(method, fit.point, boot.se);
  r.diagnostics = fit.diag;
  r.diagnostics["bootstrap_failures"] = boot.failures;
  r.diagnostics["bootstrap_degenerate"] = boot.degenerate;
  if (fit.ps.gamma.size() > 0) r.ps_coefficients = fit.ps.gamma;
  return r;
}

}  // namespace

std::string_view tag(Estimator e) { return info(e).tag; }
std::string_view display_name(Estimator e) { return info(e).name; }
std::uint64_t family_key(Estimator e) { return info(e).family; }
bool has_deterministic_point(Estimator e) { return info(e).deterministic_point; }

std::optional<Estimator> parse_estimator(std::string_view t) {
  for (const auto& i : kInfo) {
    if (i.tag == t) return i.id;
  }
  return std::nullopt;
}

std::vector<Estimator> parse_estimator_list(std::string_view list) {
  std::vector<Estimator> out;
  auto add = [&](Estimator e) {
    if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
  };
  std::string item;
  std::istringstream in{std::string(list)};
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "all") {
      for (Estimator e : kAllEstimators) add(e);
    } else if (item == "or_ps") {
      add(Estimator::kOrPsObsInfo);
      add(Estimator::kOrPsSandwich);
    } else if (item == "two_step") {
      add(Estimator::kTwoStepForward);
      add(Estimator::kTwoStepVarDecomp);
    } else if (auto e = parse_estimator(item)) {
      add(*e);
    } else {
      throw std::invalid_argument("unknown estimator '" + item + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("empty estimator list");
  return out;
}

void ResamplingConfig::validate() const {
  if (n_draws < 2) throw std::invalid_argument("number of posterior draws must be at least 2");
  if (n_boot < 2) throw std::invalid_argument("number of bootstrap resamples must be at least 2");
}

EstimateResult make_result(Estimator method, double point, double se) {
  EstimateResult r;
  r.method = method;
  r.point = point;
  r.se = se;
  r.ci_low = point - kWaldZ * se;
  r.ci_high = point + kWaldZ * se;
  return r;
}

OutcomeDesigns linear_outcome_designs(const Dataset& data, const CovariateSpec& spec) {
  OutcomeDesigns d;
  d.observed = linear_outcome_design(data, spec);
  d.treated = with_z(d.observed, 1.0);
  d.control = with_z(d.observed, 0.0);
  return d;
}

OutcomeDesigns ps_cubic_outcome_designs(const Dataset& data, const CovariateSpec& spec, const Vector& e) {
  const DesignMatrix base = linear_outcome_design(data, spec);
  const Matrix g = cubic_ps_basis(e);
  OutcomeDesigns d;
  d.observed.values.resize(base.rows(), base.cols() + 3);
  d.observed.values << base.values, g;
  d.observed.labels = base.labels;
  for (const char* l : {"ps", "ps^2", "ps^3"}) d.observed.labels.emplace_back(l);
  d.treated = with_z(d.observed, 1.0);
  d.control = with_z(d.observed, 0.0);
  return d;
}

OutcomeDesigns clever_outcome_designs(const Dataset& data, const CovariateSpec& spec, const Vector& e) {
  const DesignMatrix base = linear_outcome_design(data, spec);
  const Index n = base.rows();
  const Index last = base.cols();
  OutcomeDesigns d;
  d.observed.values.resize(n, last + 1);
  d.observed.values.leftCols(last) = base.values;
  d.observed.labels = base.labels;
  d.observed.labels.emplace_back("clever");
  d.treated = with_z(d.observed, 1.0);
  d.control = with_z(d.observed, 0.0);
  for (Index i = 0; i < n; ++i) {
    d.observed.values(i, last) = clever_covariate(data.z[i], e[i]);
    d.treated(i, last) = clever_covariate(1.0, e[i]);
    d.control(i, last) = clever_covariate(0.0, e[i]);
  }
  return d;
}

FittedLogistic fit_propensity(const Dataset& data, const CovariateSpec& spec) {
  return fit_logistic_weighted(treatment_design(data, spec), data.z, Vector::Ones(data.size()));
}

double iptw_contrast(const Vector& y, const Vector& z, const Vector& e) {
  const Index n = y.size();
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) sum += y[i] * z[i] / e[i] - y[i] * (1.0 - z[i]) / (1.0 - e[i]);
  return sum / static_cast<double>(n);
}

DrTerms dr_contrast(const Vector& y, const Vector& z, const Vector& e, const Vector& m_observed,
                    const Vector& m_treated, const Vector& m_control) {
  const Index n = y.size();
  const bool mutated = dr_control_sign_mutation.load();
  DrTerms t;
  for (Index i = 0; i < n; ++i) {
    const double c = mutated ? z[i] / e[i] + (1.0 - z[i]) / (1.0 - e[i]) : clever_covariate(z[i], e[i]);
    t.residual += c * (y[i] - m_observed[i]);
    t.model += m_treated[i] - m_control[i];
  }
  t.residual /= static_cast<double>(n);
  t.model /= static_cast<double>(n);
  return t;
}

void set_dr_control_sign_mutation(bool enabled) { dr_control_sign_mutation.store(enabled); }

double clever_covariate_contrast(double phi1, double phi3, const Vector& e) {
  const double mean_term = (e.array().inverse() + (1.0 - e.array()).inverse()).mean();
  return phi1 + phi3 * mean_term;
}

Vector ipt_weights(const Vector& z, const Vector& e, double treated_share, bool stabilize) {
  const double p1 = stabilize ? treated_share : 1.0;
  const double p0 = stabilize ? 1.0 - treated_share : 1.0;
  Vector w(z.size());
  for (Index i = 0; i < z.size(); ++i) w[i] = z[i] == 1.0 ? p1 / e[i] : p0 / (1.0 - e[i]);
  return w;
}

EstimateResult naive(const Dataset& data, const CovariateSpec&, const ResamplingConfig&, const RngStream&) {
  data.validate();
  double s1 = 0.0, s0 = 0.0;
  Index n1 = 0, n0 = 0;
  for (Index i = 0; i < data.size(); ++i) {
    if (data.z[i] == 1.0) {
      s1 += data.y[i];
      ++n1;
    } else {
      s0 += data.y[i];
      ++n0;
    }
  }
  const double m1 = s1 / static_cast<double>(n1);
  const double m0 = s0 / static_cast<double>(n0);
  double v1 = 0.0, v0 = 0.0;
  for (Index i = 0; i < data.size(); ++i) {
    const double dev = data.y[i] - (data.z[i] == 1.0 ? m1 : m0);
    (data.z[i] == 1.0 ? v1 : v0) += dev * dev;
  }
  v1 = n1 > 1 ? v1 / static_cast<double>(n1 - 1) : 0.0;
  v0 = n0 > 1 ? v0 / static_cast<double>(n0 - 1) : 0.0;
  const double se = std::sqrt(v1 / static_cast<double>(n1) + v0 / static_cast<double>(n0));
  EstimateResult r = make_result(Estimator::kNaive, m1 - m0, se);
  r.diagnostics["n_treated"] = static_cast<double>(n1);
  r.diagnostics["n_control"] = static_cast<double>(n0);
  return r;
}

EstimateResult g_formula_adjusted(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig&,
                                  const RngStream&) {
  data.validate();
  const OutcomeDesigns d = linear_outcome_designs(data, spec);
  const FittedLinear fit = fit_linear_weighted(d.observed, data.y, Vector::Ones(data.size()));
  const Vector c = contrast_vector(d);
  EstimateResult r = make_result(Estimator::kAdjusted, c.dot(fit.phi), std::sqrt(c.dot(fit.cov * c)));
  r.diagnostics["sigma2"] = fit.sigma2;
  return r;
}

EstimateResult iptw(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                    const RngStream& rng) {
  data.validate();
  return with_bootstrap(Estimator::kIptw, iptw_fit(data, spec), data, spec, cfg, rng);
}

OrPsResult or_ps(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig&, const RngStream&) {
  data.validate();
  const OrPsFit fit = or_ps_fit(data, spec);
  const Matrix b = treatment_design(data, spec).values;
  OutcomeDesignFn design;
  if (fit.basis_dropped) {
    const Matrix fixed = linear_outcome_design(data, spec).values;
    design = [fixed](const Vector&) { return fixed; };
  } else {
    design = [&](const Vector& g) { return ps_adjusted_design(data, spec, g).values; };
  }
  const SandwichVariance sv = sandwich_variances_phi1(fit.outcome, fit.ps, b, data.y, data.z, design);

  OrPsResult out{make_result(Estimator::kOrPsObsInfo, fit.point, observed_info_se_phi1(fit.outcome)),
                 make_result(Estimator::kOrPsSandwich, fit.point, std::sqrt(sv.adjusted))};
  for (EstimateResult* r : {&out.obs_info, &out.sandwich}) {
    r->diagnostics = fit.diag;
    r->diagnostics["sandwich_uncorrected_var"] = sv.uncorrected;
    r->diagnostics["sandwich_adjusted_var"] = sv.adjusted;
    r->ps_coefficients = fit.ps.gamma;
  }
  return out;
}

EstimateResult dr(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                  const RngStream& rng) {
  data.validate();
  return with_bootstrap(Estimator::kDr, dr_fit(data, spec), data, spec, cfg, rng);
}

EstimateResult clever_covariate_estimator(const Dataset& data, const CovariateSpec& spec,
                                          const ResamplingConfig& cfg, const RngStream& rng) {
  data.validate();
  return with_bootstrap(Estimator::kCleverCovariate, clever_fit(data, spec), data, spec, cfg, rng);
}

EstimateResult or_iptw(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                       const RngStream& rng) {
  data.validate();
  return with_bootstrap(Estimator::kOrIptw, or_iptw_fit(data, spec, cfg.stabilize), data, spec, cfg, rng);
}

double point_estimate(Estimator estimator, const Dataset& data, const CovariateSpec& spec,
                      const ResamplingConfig& cfg) {
  switch (estimator) {
    case Estimator::kNaive:
      return naive(data, spec, cfg, RngStream(0, 0)).point;
    case Estimator::kAdjusted:
      return adjusted_fit(data, spec).point;
    case Estimator::kIptw:
      return iptw_fit(data, spec).point;
    case Estimator::kOrPsObsInfo:
    case Estimator::kOrPsSandwich:
      return or_ps_fit(data, spec).point;
    case Estimator::kDr:
      return dr_fit(data, spec).point;
    case Estimator::kCleverCovariate:
      return clever_fit(data, spec).point;
    case Estimator::kOrIptw:
      return or_iptw_fit(data, spec, cfg.stabilize).point;
    default:
      throw std::invalid_argument("point_estimate: '" + std::string(tag(estimator)) +
                                  "' has no deterministic point estimate");
  }
}

double bootstrap_se(Estimator estimator, const Dataset& data, const CovariateSpec& spec,
                    const ResamplingConfig& cfg, const RngStream& rng) {
  if (!has_deterministic_point(estimator)) {
    throw std::invalid_argument("bootstrap_se: '" + std::string(tag(estimator)) +
                                "' is a posterior-sampling estimator");
  }
  cfg.validate();
  return detail::bootstrap(data, cfg.n_boot, rng, [&](const Dataset& d) {
           return point_estimate(estimator, d, spec, cfg);
         }).se;
}

EstimateResult estimate(Estimator estimator, const Dataset& data, const CovariateSpec& spec,
                        const ResamplingConfig& cfg, const RngStream& rng) {
  cfg.validate();
  spec.validate(data.x.cols());
  const RngStream stream = rng.substream(family_key(estimator));
  switch (estimator) {
    case Estimator::kNaive:
      return naive(data, spec, cfg, stream);
    case Estimator::kAdjusted:
      return g_formula_adjusted(data, spec, cfg, stream);
    case Estimator::kIptw:
      return iptw(data, spec, cfg, stream);
    case Estimator::kOrPsObsInfo:
      return or_ps(data, spec, cfg, stream).obs_info;
    case Estimator::kOrPsSandwich:
      return or_ps(data, spec, cfg, stream).sandwich;
    case Estimator::kDr:
      return dr(data, spec, cfg, stream);
    case Estimator::kCleverCovariate:
      return clever_covariate_estimator(data, spec, cfg, stream);
    case Estimator::kOrIptw:
      return or_iptw(data, spec, cfg, stream);
    case Estimator::kTwoStepForward:
      return two_step_forward(data, spec, cfg, stream);
    case Estimator::kTwoStepVarDecomp:
      return two_step_vardecomp(data, spec, cfg, stream);
    case Estimator::kJoint:
      return joint_estimation(data, spec, cfg, stream);
    case Estimator::kImportanceSampling:
      return is_bayes(data, spec, cfg, stream);
    case Estimator::kImportanceSamplingDr:
      return is_dr_bayes(data, spec, cfg, stream);
  }
  throw std::invalid_argument("estimate: unknown estimator");
}

std::vector<EstimateOutcome> estimate_many(const std::vector<Estimator>& estimators, const Dataset& data,
                                           const CovariateSpec& spec, const ResamplingConfig& cfg,
                                           const RngStream& rng) {
  std::optional<OrPsResult> or_ps_cache;
  std::optional<TwoStepResult> two_step_cache;
  std::string or_ps_error, two_step_error;
  std::vector<EstimateOutcome> out;
  out.reserve(estimators.size());
  for (Estimator e : estimators) {
    EstimateOutcome o{e, std::nullopt, {}};
    const RngStream stream = rng.substream(family_key(e));
    try {
      if (e == Estimator::kOrPsObsInfo || e == Estimator::kOrPsSandwich) {
        if (!or_ps_cache && or_ps_error.empty()) {
          try {
            spec.validate(data.x.cols());
            or_ps_cache = or_ps(data, spec, cfg, stream);
          } catch (const std::exception& ex) {
            or_ps_error = ex.what();
          }
        }
        if (!or_ps_cache) throw EstimationError(or_ps_error);
        o.result = e == Estimator::kOrPsObsInfo ? or_ps_cache->obs_info : or_ps_cache->sandwich;
      } else if (e == Estimator::kTwoStepForward || e == Estimator::kTwoStepVarDecomp) {
        if (!two_step_cache && two_step_error.empty()) {
          try {
            cfg.validate();
            spec.validate(data.x.cols());
            two_step_cache = two_step(data, spec, cfg, stream);
          } catch (const std::exception& ex) {
            two_step_error = ex.what();
          }
        }
        if (!two_step_cache) throw EstimationError(two_step_error);
        o.result = e == Estimator::kTwoStepForward ? two_step_cache->forward : two_step_cache->vardecomp;
      } else {
        o.result = estimate(e, data, spec, cfg, rng);
      }
    } catch (const std::exception& ex) {
      o.error = ex.what();
      if (o.error.empty()) o.error = "estimation failed";
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace drbayes
