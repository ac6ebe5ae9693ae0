#include "drbayes/glm.hpp"

#include <algorithm>
#include <cmath>

namespace drbayes {

namespace {

double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void check_weights(const Vector& w, Index n, const char* who) {
  if (w.size() != n) throw std::invalid_argument(std::string(who) + ": weight length mismatch");
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (!(w[i] >= 0.0) || !std::isfinite(w[i])) {
      throw std::invalid_argument(std::string(who) + ": weights must be finite and nonnegative");
    }
    total += w[i];
  }
  if (!(total > 0.0)) throw std::invalid_argument(std::string(who) + ": weights are all zero");
}

Vector mean_one(const Vector& w) { return w * (static_cast<double>(w.size()) / w.sum()); }

// X^T diag(v) X
Matrix weighted_gram(const Matrix& x, const Vector& v) {
  Matrix xv = x.array().colwise() * v.array();
  return x.transpose() * xv;
}

}  // namespace

DesignMatrix with_intercept(const Matrix& covariates, std::vector<std::string> labels) {
  DesignMatrix d;
  d.values.resize(covariates.rows(), covariates.cols() + 1);
  d.values.col(0).setOnes();
  d.values.rightCols(covariates.cols()) = covariates;
  d.labels.reserve(labels.size() + 1);
  d.labels.push_back("(intercept)");
  for (auto& l : labels) d.labels.push_back(std::move(l));
  return d;
}

double logistic_loglik(const Matrix& x, const Vector& z, const Vector& gamma, const Vector& weights) {
  const Vector eta = x * gamma;
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) ll += weights[i] * (z[i] * eta[i] - log1p_exp(eta[i]));
  return ll;
}

FittedLogistic fit_logistic_weighted(const DesignMatrix& design, const Vector& z, const Vector& weights) {
  const Matrix& x = design.values;
  const Index n = x.rows();
  const Index p = x.cols();
  if (z.size() != n) throw std::invalid_argument("fit_logistic_weighted: response length mismatch");
  check_weights(weights, n, "fit_logistic_weighted");
  const Vector w = mean_one(weights);

  FittedLogistic fit;
  fit.gamma = Vector::Zero(p);
  double ll = logistic_loglik(x, z, fit.gamma, w);
  Vector prob(n);
  Vector score(p);

  auto evaluate_score = [&] {
    prob = expit(x * fit.gamma);
    score = x.transpose() * w.cwiseProduct(z - prob);
    fit.max_abs_score = score.lpNorm<Eigen::Infinity>();
  };

  bool stalled = false;
  for (int iter = 1;; ++iter) {
    evaluate_score();
    if (fit.max_abs_score < kScoreTolerance) {
      fit.converged = true;
      break;
    }
    if (stalled) break;
    if (iter > kMaxIrlsIterations) {
      throw ConvergenceError("fit_logistic_weighted: IRLS did not converge in 100 iterations",
                             fit.gamma, kMaxIrlsIterations);
    }
    fit.iterations = iter;
    const Matrix info = weighted_gram(x, w.cwiseProduct(prob.cwiseProduct((1.0 - prob.array()).matrix())));
    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success) {
      throw SingularDesignError("fit_logistic_weighted: information matrix is singular", design.labels);
    }
    const Vector delta = llt.solve(score);

    double step = 1.0;
    Vector candidate = fit.gamma + delta;
    double ll_new = logistic_loglik(x, z, candidate, w);
    for (int halving = 0; halving < 30 && !(ll_new >= ll - 1e-12 * std::abs(ll)); ++halving) {
      step *= 0.5;
      candidate = fit.gamma + step * delta;
      ll_new = logistic_loglik(x, z, candidate, w);
    }
    const double change = std::abs(ll_new - ll) / std::max(std::abs(ll), 1e-300);
    fit.gamma = candidate;
    ll = ll_new;
    if (change < kLoglikRelTolerance) stalled = true;
  }

  const Vector var = prob.cwiseProduct((1.0 - prob.array()).matrix());
  const Matrix info = weighted_gram(x, w.cwiseProduct(var));
  Eigen::LDLT<Matrix> ldlt(info);
  fit.cov = ldlt.solve(Matrix::Identity(p, p));
  fit.separation_warning = fit.gamma.cwiseAbs().maxCoeff() > kSeparationThreshold;
  return fit;
}

FittedLinear fit_linear_weighted(const DesignMatrix& design, const Vector& y, const Vector& weights) {
  const Matrix& x = design.values;
  const Index n = x.rows();
  const Index p = x.cols();
  if (y.size() != n) throw std::invalid_argument("fit_linear_weighted: response length mismatch");
  check_weights(weights, n, "fit_linear_weighted");
  const Vector w = mean_one(weights);
  const Vector sw = w.cwiseSqrt();

  const Matrix xs = x.array().colwise() * sw.array();
  Eigen::ColPivHouseholderQR<Matrix> qr(xs);
  if (qr.rank() < p) {
    std::vector<std::string> collinear;
    for (Index k = qr.rank(); k < p; ++k) {
      collinear.push_back(design.labels[static_cast<std::size_t>(qr.colsPermutation().indices()[k])]);
    }
    std::string names;
    for (const auto& c : collinear) names += (names.empty() ? "" : ", ") + c;
    throw SingularDesignError("fit_linear_weighted: singular design, collinear columns: " + names,
                              std::move(collinear));
  }

  FittedLinear fit;
  fit.phi = qr.solve(y.cwiseProduct(sw));
  const Vector resid = y - x * fit.phi;
  fit.n_effective = weights.sum();
  fit.sigma2 = w.dot(resid.cwiseAbs2()) / w.sum();
  fit.cov = fit.sigma2 * (xs.transpose() * xs).ldlt().solve(Matrix::Identity(p, p));
  return fit;
}

Vector propensity(const Vector& gamma, const Matrix& b) {
  if (gamma.size() != b.cols()) throw std::invalid_argument("propensity: dimension mismatch");
  return expit(b * gamma);
}

Vector propensity(const FittedLogistic& fit, const DesignMatrix& b) { return propensity(fit.gamma, b.values); }

Vector clamp_propensity(const Vector& e) {
  return e.cwiseMax(kPropensityClamp).cwiseMin(1.0 - kPropensityClamp);
}

Matrix cubic_ps_basis(const Vector& e, const Vector& weights) {
  const double centre = weights.dot(e) / weights.sum();
  Matrix g(e.size(), 3);
  g.col(0) = (e.array() - centre).matrix();
  g.col(1) = g.col(0).cwiseAbs2();
  g.col(2) = g.col(1).cwiseProduct(g.col(0));
  return g;
}

Matrix cubic_ps_basis(const Vector& e) { return cubic_ps_basis(e, Vector::Ones(e.size())); }

DesignMatrix treatment_design(const Dataset& data, const CovariateSpec& spec) {
  return with_intercept(covariate_block(data, spec.b_columns), covariate_labels(data, spec.b_columns));
}

DesignMatrix linear_outcome_design(const Dataset& data, const CovariateSpec& spec) {
  const Matrix s = covariate_block(data, spec.s_columns);
  Matrix cov(data.size(), s.cols() + 1);
  cov.col(0) = data.z;
  cov.rightCols(s.cols()) = s;
  auto labels = covariate_labels(data, spec.s_columns);
  labels.insert(labels.begin(), "z");
  return with_intercept(cov, std::move(labels));
}

DesignMatrix ps_adjusted_design(const Dataset& data, const CovariateSpec& spec, const Vector& gamma) {
  DesignMatrix base = linear_outcome_design(data, spec);
  const Matrix b = treatment_design(data, spec).values;
  const Matrix g = cubic_ps_basis(clamp_propensity(propensity(gamma, b)));
  DesignMatrix d;
  d.values.resize(base.rows(), base.cols() + 3);
  d.values << base.values, g;
  d.labels = std::move(base.labels);
  for (const char* l : {"ps", "ps^2", "ps^3"}) d.labels.emplace_back(l);
  return d;
}

Matrix outcome_score_cross_derivative(const Vector& phi, double sigma2, const Vector& y,
                                      const Vector& gamma, const OutcomeDesignFn& design) {
  const Index p_phi = phi.size();
  const Index p_gamma = gamma.size();
  const double n = static_cast<double>(y.size());
  auto mean_score = [&](const Vector& g) -> Vector {
    const Matrix x = design(g);
    const Vector resid = y - x * phi;
    return x.transpose() * resid / (sigma2 * n);
  };
  Matrix d(p_phi, p_gamma);
  for (Index j = 0; j < p_gamma; ++j) {
    const double h = 1e-5 * (1.0 + std::abs(gamma[j]));
    Vector up = gamma;
    Vector down = gamma;
    up[j] += h;
    down[j] -= h;
    d.col(j) = (mean_score(up) - mean_score(down)) / (2.0 * h);
  }
  return d;
}

SandwichVariance sandwich_variances_phi1(const FittedLinear& outcome_fit, const FittedLogistic& ps_fit,
                                         const Matrix& b, const Vector& y, const Vector& z,
                                         const OutcomeDesignFn& design) {
  const Index n = y.size();
  const double nd = static_cast<double>(n);
  const double sigma2 = outcome_fit.sigma2;
  const Matrix x = design(ps_fit.gamma);
  const Vector resid = y - x * outcome_fit.phi;

  // Per-observation scores, one row per observation.
  const Matrix u_phi = x.array().colwise() * (resid / sigma2).array();
  const Vector e = propensity(ps_fit.gamma, b);
  const Matrix u_gamma = b.array().colwise() * (z - e).array();

  const Matrix a = x.transpose() * x / (sigma2 * nd);
  const Matrix info_gamma = weighted_gram(b, e.cwiseProduct((1.0 - e.array()).matrix())) / nd;
  Eigen::LLT<Matrix> info_llt(info_gamma);
  if (info_llt.info() != Eigen::Success) {
    throw SingularMatrixError("adjusted sandwich: treatment-model information is singular", 0);
  }
  const Matrix cross = outcome_score_cross_derivative(outcome_fit.phi, sigma2, y, ps_fit.gamma, design);
  // B_i^T = U_i^phi^T + U_i^gamma^T I_gamma^{-1} cross^T
  const Matrix correction = info_llt.solve(cross.transpose());
  const Matrix b_rows = u_phi + u_gamma * correction;

  Eigen::LDLT<Matrix> a_ldlt(a);
  const Matrix a_inv = a_ldlt.solve(Matrix::Identity(a.rows(), a.cols()));
  auto phi1_variance = [&](const Matrix& rows) {
    const Matrix meat = rows.transpose() * rows / nd;
    return (a_inv * meat * a_inv)(1, 1) / nd;
  };
  return {phi1_variance(b_rows), phi1_variance(u_phi)};
}

double adjusted_sandwich_var_phi1(const FittedLinear& outcome_fit, const FittedLogistic& ps_fit,
                                  const Dataset& data, const CovariateSpec& spec) {
  const Matrix b = treatment_design(data, spec).values;
  auto design = [&](const Vector& g) { return ps_adjusted_design(data, spec, g).values; };
  return sandwich_variances_phi1(outcome_fit, ps_fit, b, data.y, data.z, design).adjusted;
}

double observed_info_se_phi1(const FittedLinear& outcome_fit) { return std::sqrt(outcome_fit.cov(1, 1)); }

}  // namespace drbayes
