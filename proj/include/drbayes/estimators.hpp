#pragma once

#include "drbayes/data.hpp"
#include "drbayes/glm.hpp"
#include "drbayes/numerics.hpp"

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace drbayes {

/// Estimators of the marginal contrast E(Y1) - E(Y0). The two OR/PS rows
/// share one point estimate and differ only in the standard error.
enum class Estimator {
  kNaive,
  kAdjusted,
  kIptw,
  kOrPsObsInfo,
  kOrPsSandwich,
  kDr,
  kCleverCovariate,
  kOrIptw,
  kTwoStepForward,
  kTwoStepVarDecomp,
  kJoint,
  kImportanceSampling,
  kImportanceSamplingDr,
};

inline constexpr std::array<Estimator, 13> kAllEstimators = {
    Estimator::kNaive,           Estimator::kAdjusted,         Estimator::kIptw,
    Estimator::kOrPsObsInfo,     Estimator::kOrPsSandwich,     Estimator::kDr,
    Estimator::kCleverCovariate, Estimator::kOrIptw,           Estimator::kTwoStepForward,
    Estimator::kTwoStepVarDecomp, Estimator::kJoint,           Estimator::kImportanceSampling,
    Estimator::kImportanceSamplingDr,
};

std::string_view tag(Estimator e);
std::string_view display_name(Estimator e);
std::optional<Estimator> parse_estimator(std::string_view tag);
/// Comma-separated tags; also accepts "all", "or_ps" (both OR/PS rows) and
/// "two_step" (both two-step rows). Throws std::invalid_argument on unknown tags.
std::vector<Estimator> parse_estimator_list(std::string_view list);

/// Estimators whose point and SE come from a deterministic fit of the full
/// sample (their SE may still be bootstrapped).
bool has_deterministic_point(Estimator e);

/// Estimators sharing a family key share their random stream.
std::uint64_t family_key(Estimator e);

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ResamplingConfig {
  int n_draws = 200;  // posterior draws M
  int n_boot = 200;   // bootstrap resamples B
  bool stabilize = true;

  void validate() const;
};

using Diagnostics = std::map<std::string, double>;

struct EstimateResult {
  Estimator method = Estimator::kNaive;
  double point = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Posterior draws; present only when point = mean(draws) and se = sd(draws).
  std::optional<Vector> draws;
  /// Treatment-model coefficients fitted on the full sample, when used.
  std::optional<Vector> ps_coefficients;
  Diagnostics diagnostics;
};

inline constexpr double kWaldZ = 1.96;

/// Wald interval point +/- 1.96 se.
EstimateResult make_result(Estimator method, double point, double se);

// ---------------------------------------------------------------------------
// Building blocks shared by the frequentist and Bayesian estimators.

/// Observed outcome design plus its counterfactual versions with z set to 1
/// and to 0 (derived regressors re-evaluated at the counterfactual z).
struct OutcomeDesigns {
  DesignMatrix observed;
  Matrix treated;
  Matrix control;
};

OutcomeDesigns linear_outcome_designs(const Dataset& data, const CovariateSpec& spec);
/// [1, z, S, g(e)] with g centred at the plain mean of e.
OutcomeDesigns ps_cubic_outcome_designs(const Dataset& data, const CovariateSpec& spec, const Vector& e);
/// [1, z, S, c(z, e)] with c the clever covariate.
OutcomeDesigns clever_outcome_designs(const Dataset& data, const CovariateSpec& spec, const Vector& e);

/// Unweighted treatment-model fit on (B, z); outcomes never enter.
FittedLogistic fit_propensity(const Dataset& data, const CovariateSpec& spec);

/// (1/n) sum [y z / e - y (1 - z) / (1 - e)].
double iptw_contrast(const Vector& y, const Vector& z, const Vector& e);

struct DrTerms {
  double residual = 0.0;  // (1/n) sum c(z, e) (y - m(z, s))
  double model = 0.0;     // (1/n) sum m(1, s) - m(0, s)
  double total() const { return residual + model; }
};

/// Semi-parametric doubly robust contrast from fitted values.
DrTerms dr_contrast(const Vector& y, const Vector& z, const Vector& e, const Vector& m_observed,
                    const Vector& m_treated, const Vector& m_control);

/// Mutation hook for the self-check sensitivity test: when set, dr_contrast
/// uses +1/(1 - e) for control rows instead of -1/(1 - e).
void set_dr_control_sign_mutation(bool enabled);

/// (1/n) sum m(1, s) - m(0, s) for the clever-covariate model:
/// phi1 + phi3 (1/n) sum [1/e + 1/(1 - e)], since c(1, e) - c(0, e) = 1/e + 1/(1 - e).
double clever_covariate_contrast(double phi1, double phi3, const Vector& e);

/// IPT weights P_E(z_i) / P(Z = z_i | b_i). With stabilize, P_E(z = 1) is
/// `treated_share`; otherwise P_E = 1.
Vector ipt_weights(const Vector& z, const Vector& e, double treated_share, bool stabilize);

// ---------------------------------------------------------------------------
// Estimators. Each takes its own random stream; resampling draw j uses
// rng.substream(j), so results do not depend on scheduling.

EstimateResult naive(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                     const RngStream& rng);
EstimateResult g_formula_adjusted(const Dataset& data, const CovariateSpec& spec,
                                  const ResamplingConfig& cfg, const RngStream& rng);
EstimateResult iptw(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                    const RngStream& rng);

struct OrPsResult {
  EstimateResult obs_info;
  EstimateResult sandwich;
};
OrPsResult or_ps(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                 const RngStream& rng);

EstimateResult dr(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                  const RngStream& rng);
EstimateResult clever_covariate_estimator(const Dataset& data, const CovariateSpec& spec,
                                          const ResamplingConfig& cfg, const RngStream& rng);
EstimateResult or_iptw(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                       const RngStream& rng);

struct TwoStepResult {
  EstimateResult forward;
  EstimateResult vardecomp;
};
/// Both two-step summaries from one set of weighted-likelihood-bootstrap
/// draws of the treatment-model coefficients.
TwoStepResult two_step(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                       const RngStream& rng);
EstimateResult two_step_forward(const Dataset& data, const CovariateSpec& spec,
                                const ResamplingConfig& cfg, const RngStream& rng);
EstimateResult two_step_vardecomp(const Dataset& data, const CovariateSpec& spec,
                                  const ResamplingConfig& cfg, const RngStream& rng);

EstimateResult joint_estimation(const Dataset& data, const CovariateSpec& spec,
                                const ResamplingConfig& cfg, const RngStream& rng);

EstimateResult is_bayes(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                        const RngStream& rng);

struct IsDrOptions {
  bool stabilize = true;
  /// Fit the outcome model with xi_k w_k (true) or xi_k alone (false).
  bool ipt_weighted_outcome = true;
};
EstimateResult is_dr_bayes(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                           const RngStream& rng);

/// One importance-sampling draw for a given Dirichlet weight vector xi.
double is_bayes_draw(const DesignMatrix& b, const OutcomeDesigns& outcome, const Vector& y,
                     const Vector& z, const Vector& xi, bool stabilize);

struct IsDrDraw {
  double residual = 0.0;  // sum xi_k (y_k - m_k) c(z_k, e_k)
  double model = 0.0;     // sum xi_k (m(1, s_k) - m(0, s_k))
  double total() const { return residual + model; }
};
IsDrDraw is_dr_bayes_draw(const DesignMatrix& b, const OutcomeDesigns& outcome, const Vector& y,
                          const Vector& z, const Vector& xi, const IsDrOptions& opts);

/// Bootstrap SE of an estimator with a deterministic point estimate: B
/// resamples with replacement, both models refitted on each. Single-arm
/// resamples are redrawn; more than 10% failed fits is an error.
double bootstrap_se(Estimator estimator, const Dataset& data, const CovariateSpec& spec,
                    const ResamplingConfig& cfg, const RngStream& rng);

/// Full-sample point estimate of a deterministic-point estimator.
double point_estimate(Estimator estimator, const Dataset& data, const CovariateSpec& spec,
                      const ResamplingConfig& cfg = {});

/// Runs one estimator on stream rng.substream(family_key(estimator)).
EstimateResult estimate(Estimator estimator, const Dataset& data, const CovariateSpec& spec,
                        const ResamplingConfig& cfg, const RngStream& rng);

/// Runs several estimators, computing shared families (OR/PS, two-step) once.
/// Failures are reported per estimator instead of aborting the batch.
struct EstimateOutcome {
  Estimator method;
  std::optional<EstimateResult> result;
  std::string error;
};
std::vector<EstimateOutcome> estimate_many(const std::vector<Estimator>& estimators, const Dataset& data,
                                           const CovariateSpec& spec, const ResamplingConfig& cfg,
                                           const RngStream& rng);

}  // namespace drbayes
