#pragma once

#include "drbayes/data.hpp"
#include "drbayes/numerics.hpp"

#include <functional>
#include <string>
#include <vector>

namespace drbayes {

/// Regressor matrix whose first column is the intercept.
struct DesignMatrix {
  Matrix values;
  std::vector<std::string> labels;

  Index rows() const noexcept { return values.rows(); }
  Index cols() const noexcept { return values.cols(); }
};

/// Prepends an intercept column labelled "(intercept)".
DesignMatrix with_intercept(const Matrix& covariates, std::vector<std::string> labels);

class SingularDesignError : public std::runtime_error {
 public:
  SingularDesignError(const std::string& what, std::vector<std::string> columns)
      : std::runtime_error(what), columns_(std::move(columns)) {}
  /// Columns judged linearly dependent on the others.
  const std::vector<std::string>& columns() const noexcept { return columns_; }

 private:
  std::vector<std::string> columns_;
};

/// IRLS gave up; carries the last iterate.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, Vector last, int iterations)
      : std::runtime_error(what), last_(std::move(last)), iterations_(iterations) {}
  const Vector& last_iterate() const noexcept { return last_; }
  int iterations() const noexcept { return iterations_; }

 private:
  Vector last_;
  int iterations_;
};

struct FittedLogistic {
  Vector gamma;
  Matrix cov;  // inverse weighted observed information
  bool converged = false;
  int iterations = 0;
  double max_abs_score = 0.0;
  bool separation_warning = false;  // some |gamma_j| > 30
};

struct FittedLinear {
  Vector phi;
  double sigma2 = 0.0;  // weighted RSS / sum(weights)
  Matrix cov;           // sigma2 (X^T W X)^{-1}
  double n_effective = 0.0;
};

inline constexpr double kScoreTolerance = 1e-8;
inline constexpr double kLoglikRelTolerance = 1e-10;
inline constexpr int kMaxIrlsIterations = 100;
inline constexpr double kSeparationThreshold = 30.0;

/// Weighted logistic MLE by IRLS with step halving.
///
/// Weights are rescaled to mean one before fitting, so the convergence test
/// (max |score| < 1e-8) and the returned covariance do not depend on the
/// overall scale of `weights`; only their ratios matter. Throws
/// ConvergenceError after 100 iterations and SingularDesignError when the
/// information matrix is not positive definite. Returns converged = false
/// (without throwing) if the log-likelihood stalls before the score test
/// passes.
FittedLogistic fit_logistic_weighted(const DesignMatrix& x, const Vector& z, const Vector& weights);

/// Weighted least squares via column-pivoted QR. Weights are rescaled to mean
/// one for the covariance, so scaling all weights leaves phi and cov unchanged.
FittedLinear fit_linear_weighted(const DesignMatrix& x, const Vector& y, const Vector& weights);

/// Weighted log-likelihood sum_i w_i log p(z_i | x_i; gamma).
double logistic_loglik(const Matrix& x, const Vector& z, const Vector& gamma, const Vector& weights);

/// expit(X gamma), clamped to [1e-12, 1 - 1e-12].
Vector propensity(const FittedLogistic& fit, const DesignMatrix& b);
Vector propensity(const Vector& gamma, const Matrix& b);

/// Probability clamp used before any inverse weighting.
inline constexpr double kPropensityClamp = 1e-6;
Vector clamp_propensity(const Vector& e);

/// Columns (e - ebar, (e - ebar)^2, (e - ebar)^3), ebar = mean(e).
Matrix cubic_ps_basis(const Vector& e);
/// Same, centred at the weighted mean sum(w e) / sum(w).
Matrix cubic_ps_basis(const Vector& e, const Vector& weights);

inline double clever_covariate(double z, double e) { return z / e - (1.0 - z) / (1.0 - e); }

/// Treatment-model design [1, B].
DesignMatrix treatment_design(const Dataset& data, const CovariateSpec& spec);

/// Outcome design [1, z, S].
DesignMatrix linear_outcome_design(const Dataset& data, const CovariateSpec& spec);

/// Outcome design [1, z, S, g(e(B; gamma))] with g the centred cubic basis of
/// the clamped propensity.
DesignMatrix ps_adjusted_design(const Dataset& data, const CovariateSpec& spec, const Vector& gamma);

/// Observed outcome design as a function of the treatment-model coefficients.
using OutcomeDesignFn = std::function<Matrix(const Vector& gamma)>;

/// Sample mean over observations of d U_i^phi / d gamma for the Gaussian
/// outcome score U_i^phi = x_i(gamma) (y_i - x_i(gamma)^T phi) / sigma2,
/// by central differences with step 1e-5 (1 + |gamma_j|).
Matrix outcome_score_cross_derivative(const Vector& phi, double sigma2, const Vector& y,
                                      const Vector& gamma, const OutcomeDesignFn& design);

struct SandwichVariance {
  double adjusted = 0.0;     // with the treatment-model correction term
  double uncorrected = 0.0;  // plain sandwich, propensity treated as known
};

/// Sandwich variance of phi_1 accounting for estimation of gamma:
/// A^{-1} mean(B_i B_i^T) A^{-1} / n with A = mean(-U_i^phiphi) and
/// B_i = U_i^phi + mean(U^phigamma) mean(-U^gammagamma)^{-1} U_i^gamma.
SandwichVariance sandwich_variances_phi1(const FittedLinear& outcome_fit,
                                         const FittedLogistic& ps_fit, const Matrix& b,
                                         const Vector& y, const Vector& z,
                                         const OutcomeDesignFn& design);

/// Adjusted sandwich for the propensity-adjusted outcome model of
/// ps_adjusted_design().
double adjusted_sandwich_var_phi1(const FittedLinear& outcome_fit, const FittedLogistic& ps_fit,
                                  const Dataset& data, const CovariateSpec& spec);

/// sqrt(cov(1, 1)); the propensity is treated as fixed.
double observed_info_se_phi1(const FittedLinear& outcome_fit);

}  // namespace drbayes
