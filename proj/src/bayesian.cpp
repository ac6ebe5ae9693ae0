#include "drbayes/estimators.hpp"

#include "resampling.hpp"

namespace drbayes {

namespace {

Vector contrast_vector(const OutcomeDesigns& d) {
  return (d.treated - d.control).colwise().mean().transpose();
}

// Treatment model refitted with Dirichlet weights, probabilities clamped.
Vector weighted_propensity(const DesignMatrix& b, const Vector& z, const Vector& xi) {
  const FittedLogistic fit = fit_logistic_weighted(b, z, xi);
  return clamp_propensity(propensity(fit, b));
}

EstimateResult summarize_draws(Estimator method, const Vector& draws, int failures) {
  EstimateResult r = make_result(method, sample_mean(draws), sample_sd(draws));
  r.draws = draws;
  r.diagnostics["draw_failures"] = failures;
  r.diagnostics["draws_kept"] = static_cast<double>(draws.size());
  return r;
}

struct IsDrDrawFull {
  IsDrDraw terms;
  Vector weights;
};

IsDrDrawFull is_dr_draw_impl(const DesignMatrix& b, const OutcomeDesigns& outcome, const Vector& y,
                             const Vector& z, const Vector& xi, const IsDrOptions& opts) {
  const Vector e = weighted_propensity(b, z, xi);
  IsDrDrawFull out;
  out.weights = xi;
  if (opts.ipt_weighted_outcome) {
    out.weights = xi.cwiseProduct(ipt_weights(z, e, xi.dot(z) / xi.sum(), opts.stabilize));
  }
  const FittedLinear fit = fit_linear_weighted(outcome.observed, y, out.weights);
  const Vector m = outcome.observed.values * fit.phi;
  const Vector m1 = outcome.treated * fit.phi;
  const Vector m0 = outcome.control * fit.phi;
  for (Index k = 0; k < y.size(); ++k) {
    out.terms.residual += xi[k] * (y[k] - m[k]) * clever_covariate(z[k], e[k]);
    out.terms.model += xi[k] * (m1[k] - m0[k]);
  }
  return out;
}

}  // namespace

double is_bayes_draw(const DesignMatrix& b, const OutcomeDesigns& outcome, const Vector& y, const Vector& z,
                     const Vector& xi, bool stabilize) {
  const Vector e = weighted_propensity(b, z, xi);
  const Vector w = xi.cwiseProduct(ipt_weights(z, e, xi.dot(z) / xi.sum(), stabilize));
  const FittedLinear fit = fit_linear_weighted(outcome.observed, y, w);
  return xi.dot((outcome.treated - outcome.control) * fit.phi);
}

IsDrDraw is_dr_bayes_draw(const DesignMatrix& b, const OutcomeDesigns& outcome, const Vector& y,
                          const Vector& z, const Vector& xi, const IsDrOptions& opts) {
  return is_dr_draw_impl(b, outcome, y, z, xi, opts).terms;
}

EstimateResult is_bayes(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                        const RngStream& rng) {
  data.validate();
  cfg.validate();
  const DesignMatrix b = treatment_design(data, spec);
  const OutcomeDesigns outcome = linear_outcome_designs(data, spec);
  const auto draws = detail::collect_draws(cfg.n_draws, 1, rng, [&](RngStream& s) {
    const Vector xi = sample_dirichlet(data.size(), s).weights;
    return Vector::Constant(1, is_bayes_draw(b, outcome, data.y, data.z, xi, cfg.stabilize));
  });
  EstimateResult r = summarize_draws(Estimator::kImportanceSampling, draws.values.col(0), draws.failures);
  r.ps_coefficients = fit_propensity(data, spec).gamma;
  return r;
}

EstimateResult is_dr_bayes(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                           const RngStream& rng) {
  data.validate();
  cfg.validate();
  const DesignMatrix b = treatment_design(data, spec);
  const OutcomeDesigns outcome = linear_outcome_designs(data, spec);
  const IsDrOptions opts{cfg.stabilize, true};
  const auto draws = detail::collect_draws(cfg.n_draws, 3, rng, [&](RngStream& s) {
    const Vector xi = sample_dirichlet(data.size(), s).weights;
    const auto d = is_dr_draw_impl(b, outcome, data.y, data.z, xi, opts);
    Vector v(3);
    v << d.terms.total(), d.terms.residual, d.weights.maxCoeff() / d.weights.minCoeff();
    return v;
  });
  EstimateResult r = summarize_draws(Estimator::kImportanceSamplingDr, draws.values.col(0), draws.failures);
  r.diagnostics["mean_residual_term"] = sample_mean(draws.values.col(1));
  r.diagnostics["max_weight_ratio"] = draws.values.col(2).maxCoeff();
  r.ps_coefficients = fit_propensity(data, spec).gamma;
  return r;
}

TwoStepResult two_step(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                       const RngStream& rng) {
  data.validate();
  cfg.validate();
  const DesignMatrix b = treatment_design(data, spec);
  const Vector ones = Vector::Ones(data.size());
  int basis_dropped = 0;
  // Columns: forward draw, c' phi_hat, c' S c.
  const auto draws = detail::collect_draws(cfg.n_draws, 3, rng, [&](RngStream& s) {
    const Vector xi = sample_dirichlet(data.size(), s).weights;
    const Vector e = weighted_propensity(b, data.z, xi);
    OutcomeDesigns d = ps_cubic_outcome_designs(data, spec, e);
    FittedLinear fit;
    try {
      fit = fit_linear_weighted(d.observed, data.y, ones);
    } catch (const SingularDesignError&) {
      d = linear_outcome_designs(data, spec);
      fit = fit_linear_weighted(d.observed, data.y, ones);
      ++basis_dropped;
    }
    const Vector c = contrast_vector(d);
    const Vector phi = sample_mvn(fit.phi, fit.cov, s);
    Vector v(3);
    v << c.dot(phi), c.dot(fit.phi), c.dot(fit.cov * c);
    return v;
  });

  const Vector forward = draws.values.col(0);
  const Vector plug_in = draws.values.col(1);
  const double within = sample_mean(draws.values.col(2));
  const double between = plug_in.size() > 1 ? sample_sd(plug_in) * sample_sd(plug_in) : 0.0;

  TwoStepResult out{summarize_draws(Estimator::kTwoStepForward, forward, draws.failures),
                    make_result(Estimator::kTwoStepVarDecomp, sample_mean(plug_in), std::sqrt(within + between))};
  const Vector gamma = fit_propensity(data, spec).gamma;
  for (EstimateResult* r : {&out.forward, &out.vardecomp}) {
    r->diagnostics["draw_failures"] = draws.failures;
    r->diagnostics["within_variance"] = within;
    r->diagnostics["between_variance"] = between;
    r->diagnostics["ps_basis_dropped"] = basis_dropped;
    r->ps_coefficients = gamma;
  }
  return out;
}

EstimateResult two_step_forward(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                                const RngStream& rng) {
  return two_step(data, spec, cfg, rng).forward;
}

EstimateResult two_step_vardecomp(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                                  const RngStream& rng) {
  return two_step(data, spec, cfg, rng).vardecomp;
}

}  // namespace drbayes
