#include "drbayes/estimators.hpp"

#include "resampling.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace drbayes {

namespace {

constexpr double kJointTolerance = 1e-8;
constexpr int kMaxOuterIterations = 500;
constexpr int kMaxBfgsIterations = 50;

// Joint log-likelihood with the Gaussian variance profiled out:
// -(n/2) log(2 pi RSS/n) - n/2 + sum log p(z | b; gamma).
class JointLikelihood {
 public:
  JointLikelihood(const Dataset& data, const CovariateSpec& spec)
      : data_(data), spec_(spec), b_(treatment_design(data, spec).values), ones_(Vector::Ones(data.size())) {}

  Index n() const { return data_.size(); }
  Index p_gamma() const { return b_.cols(); }

  Matrix design(const Vector& gamma) const { return ps_adjusted_design(data_, spec_, gamma).values; }

  double value(const Vector& phi, const Vector& gamma) const {
    const double nd = static_cast<double>(n());
    const double rss = (data_.y - design(gamma) * phi).squaredNorm();
    const double outcome = -0.5 * nd * (std::log(2.0 * std::numbers::pi * rss / nd) + 1.0);
    return outcome + logistic_loglik(b_, data_.z, gamma, ones_);
  }

  double value(const Vector& theta, Index p_phi) const {
    return value(theta.head(p_phi), theta.tail(theta.size() - p_phi));
  }

  // Closed-form phi block: OLS of y on the design at gamma.
  Vector best_phi(const Vector& gamma) const {
    DesignMatrix d = ps_adjusted_design(data_, spec_, gamma);
    return fit_linear_weighted(d, data_.y, ones_).phi;
  }

 private:
  const Dataset& data_;
  const CovariateSpec& spec_;
  Matrix b_;
  Vector ones_;
};

template <typename F>
Vector central_gradient(const F& f, const Vector& x) {
  Vector g(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double h = 1e-5 * (1.0 + std::abs(x[j]));
    Vector up = x, down = x;
    up[j] += h;
    down[j] -= h;
    g[j] = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

template <typename F>
Matrix central_hessian(const F& f, const Vector& x) {
  const Index d = x.size();
  Vector h(d);
  for (Index j = 0; j < d; ++j) h[j] = 1e-5 * (1.0 + std::abs(x[j]));
  Matrix hess(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = i; j < d; ++j) {
      auto at = [&](double si, double sj) {
        Vector t = x;
        t[i] += si * h[i];
        t[j] += sj * h[j];
        return f(t);
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h[i] * h[j]);
      hess(i, j) = hess(j, i) = v;
    }
  }
  return hess;
}

// Maximises f by BFGS on -f with a backtracking line search. `inv_hess` is the
// starting inverse Hessian of -f and is updated in place.
template <typename F>
Vector bfgs_maximize(const F& f, Vector x, Matrix& inv_hess) {
  double fx = f(x);
  Vector g = -central_gradient(f, x);
  for (int iter = 0; iter < kMaxBfgsIterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < 1e-7) break;
    Vector dir = -inv_hess * g;
    if (dir.dot(g) >= 0.0) {
      inv_hess.setIdentity();
      dir = -g;
    }
    double step = 1.0;
    Vector next = x + dir;
    double f_next = f(next);
    while (!(f_next >= fx + 1e-4 * step * (-g.dot(dir))) && step > 1e-12) {
      step *= 0.5;
      next = x + step * dir;
      f_next = f(next);
    }
    if (!(f_next >= fx)) break;
    const Vector g_next = -central_gradient(f, next);
    const Vector s = next - x;
    const Vector yv = g_next - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Matrix eye = Matrix::Identity(x.size(), x.size());
      inv_hess = (eye - rho * s * yv.transpose()) * inv_hess * (eye - rho * yv * s.transpose()) +
                 rho * s * s.transpose();
    }
    const double gain = f_next - fx;
    x = next;
    fx = f_next;
    g = g_next;
    if (gain < 1e-12 * (1.0 + std::abs(fx))) break;
  }
  return x;
}

Matrix invert_negative_hessian(const Matrix& hess, double& jitter_used) {
  const Index d = hess.rows();
  const Matrix neg = -0.5 * (hess + hess.transpose());
  for (double jitter : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
    Eigen::LLT<Matrix> llt(neg + jitter * Matrix::Identity(d, d));
    if (llt.info() == Eigen::Success) {
      jitter_used = jitter;
      return llt.solve(Matrix::Identity(d, d));
    }
  }
  throw EstimationError("joint estimation: Hessian is not negative definite even with jitter 1e-6");
}

}  // namespace

EstimateResult joint_estimation(const Dataset& data, const CovariateSpec& spec, const ResamplingConfig& cfg,
                                const RngStream& rng) {
  data.validate();
  cfg.validate();
  const JointLikelihood lik(data, spec);

  const FittedLogistic start = fit_propensity(data, spec);
  Vector gamma = start.gamma;
  Vector phi = lik.best_phi(gamma);
  Matrix inv_hess = start.cov;
  double current = lik.value(phi, gamma);
  std::vector<double> trace{current};
  bool converged = false;
  int outer = 0;
  while (outer < kMaxOuterIterations) {
    ++outer;
    // Plain alternation zig-zags because phi and gamma are coupled through the
    // propensity basis; the gamma block therefore sees phi at its closed form.
    gamma = bfgs_maximize([&](const Vector& g) { return lik.value(lik.best_phi(g), g); }, gamma, inv_hess);
    phi = lik.best_phi(gamma);
    const double next = lik.value(phi, gamma);
    trace.push_back(next);
    const double gain = next - current;
    current = next;
    if (gain < kJointTolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "joint estimation did not converge in " << kMaxOuterIterations << " iterations; last log-likelihoods:";
    for (std::size_t k = trace.size() > 5 ? trace.size() - 5 : 0; k < trace.size(); ++k) msg << ' ' << trace[k];
    throw EstimationError(msg.str());
  }

  const Index p_phi = phi.size();
  Vector theta(p_phi + gamma.size());
  theta << phi, gamma;
  const Matrix hess = central_hessian([&](const Vector& t) { return lik.value(t, p_phi); }, theta);
  double jitter = 0.0;
  const Matrix cov = invert_negative_hessian(hess, jitter);

  const auto draws = detail::collect_draws(cfg.n_draws, 1, rng, [&](RngStream& s) {
    const Vector t = sample_mvn(theta, cov, s);
    const Vector e = clamp_propensity(propensity(t.tail(gamma.size()), treatment_design(data, spec).values));
    const OutcomeDesigns d = ps_cubic_outcome_designs(data, spec, e);
    const Vector phi_draw = t.head(p_phi);
    return Vector::Constant(1, ((d.treated - d.control) * phi_draw).mean());
  });

  const Vector values = draws.values.col(0);
  EstimateResult r = make_result(Estimator::kJoint, sample_mean(values), sample_sd(values));
  r.draws = values;
  r.diagnostics["draw_failures"] = draws.failures;
  r.diagnostics["outer_iterations"] = outer;
  r.diagnostics["joint_loglik"] = current;
  r.diagnostics["hessian_jitter"] = jitter;
  r.diagnostics["gamma_shift"] = (gamma - start.gamma).lpNorm<Eigen::Infinity>();
  r.ps_coefficients = gamma;
  return r;
}

}  // namespace drbayes
