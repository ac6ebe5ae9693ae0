#include "drbayes/identities.hpp"

#include "drbayes/estimators.hpp"
#include "drbayes/simulation.hpp"

#include <array>
#include <cmath>

namespace drbayes {

namespace {

constexpr double kExact = 1e-8;
constexpr std::uint64_t kSeed = 20240601;

IdentityCheck make_check(std::string name, double residual, double tolerance) {
  return {std::move(name), residual, tolerance, std::isfinite(residual) && residual < tolerance};
}

Vector uniform_xi(Index n) { return Vector::Constant(n, 1.0 / static_cast<double>(n)); }

struct Instance {
  Dataset data;
  CovariateSpec spec;
};

Instance simulated_instance(Scenario scenario) {
  RngStream rng(kSeed, 7);
  Instance inst{generate_data(200, rng), apply_scenario(scenario)};
  return inst;
}

// Identity 4 instance: binary s, 12 rows with every (z, s) cell populated.
// Saturated outcome model [1, z, s, z s]; intercept-only treatment model.
struct DiscreteInstance {
  Vector y, z, s;
};

DiscreteInstance saturated_outcome_instance() {
  DiscreteInstance d;
  d.z = (Vector(12) << 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 0).finished();
  d.s = (Vector(12) << 0, 0, 1, 1, 0, 1, 1, 1, 0, 1, 0, 1).finished();
  d.y = (Vector(12) << 1.3, 0.2, 2.9, -0.4, 0.7, 1.1, 3.6, 2.2, -1.5, 0.05, 0.9, -0.8).finished();
  return d;
}

OutcomeDesigns saturated_designs(const Vector& z, const Vector& s) {
  const Index n = z.size();
  auto build = [&](const Vector& zz) {
    Matrix m(n, 4);
    m.col(0).setOnes();
    m.col(1) = zz;
    m.col(2) = s;
    m.col(3) = zz.cwiseProduct(s);
    return m;
  };
  OutcomeDesigns d;
  d.observed = {build(z), {"(intercept)", "z", "s", "z:s"}};
  d.treated = build(Vector::Ones(n));
  d.control = build(Vector::Zero(n));
  return d;
}

// Brute force: xi-weighted cell means give the saturated fit; the model term
// is the xi-average of the treated-minus-control cell means at each s.
double brute_force_model_term(const DiscreteInstance& d, const Vector& xi) {
  double cell_mean[2][2];
  for (int zv = 0; zv < 2; ++zv) {
    for (int sv = 0; sv < 2; ++sv) {
      double num = 0.0, den = 0.0;
      for (Index k = 0; k < d.y.size(); ++k) {
        if (d.z[k] == zv && d.s[k] == sv) {
          num += xi[k] * d.y[k];
          den += xi[k];
        }
      }
      cell_mean[zv][sv] = num / den;
    }
  }
  double total = 0.0;
  for (Index k = 0; k < d.y.size(); ++k) {
    const int sv = static_cast<int>(d.s[k]);
    total += xi[k] * (cell_mean[1][sv] - cell_mean[0][sv]);
  }
  return total;
}

IdentityCheck identity4() {
  const DiscreteInstance d = saturated_outcome_instance();
  const Index n = d.y.size();
  const OutcomeDesigns outcome = saturated_designs(d.z, d.s);
  const DesignMatrix b{Matrix::Ones(n, 1), {"(intercept)"}};
  RngStream rng(kSeed, 4);
  double worst = 0.0;
  for (int draw = 0; draw < 25; ++draw) {
    const Vector xi = draw == 0 ? uniform_xi(n) : sample_dirichlet(n, rng).weights;
    for (bool weighted : {true, false}) {
      const IsDrDraw r = is_dr_bayes_draw(b, outcome, d.y, d.z, xi, {true, weighted});
      worst = std::max({worst, std::abs(r.residual), std::abs(r.model - brute_force_model_term(d, xi))});
    }
  }
  return make_check("Identity 4: saturated outcome model, IS/DR residual term vanishes", worst, kExact);
}

// Identity 5: saturated treatment model on binary (x1, x2); outcome model
// [1, z, x1] omits x2 so it is misspecified.
IdentityCheck identity5() {
  RngStream rng(kSeed, 5);
  double worst = 0.0;
  constexpr Index n = 16;
  for (int instance = 0; instance < 20; ++instance) {
    Vector x1(n), x2(n), z(n), y(n);
    for (Index k = 0; k < n; ++k) {
      x1[k] = static_cast<double>((k / 2) % 2);
      x2[k] = static_cast<double>(k % 2);
    }
    // Each of the four cells holds four rows; give each cell 1-3 treated.
    for (int cell = 0; cell < 4; ++cell) {
      const auto treated = 1 + rng.below(3);
      std::array<Index, 4> rows{};
      int found = 0;
      for (Index k = 0; k < n; ++k) {
        if (static_cast<int>(2 * x1[k] + x2[k]) == cell) rows[static_cast<std::size_t>(found++)] = k;
      }
      for (std::size_t j = 0; j < rows.size(); ++j) z[rows[j]] = j < treated ? 1.0 : 0.0;
    }
    for (Index k = 0; k < n; ++k) y[k] = 0.5 + z[k] + 1.5 * x1[k] - 2.0 * x2[k] + 0.7 * x1[k] * x2[k] + rng.normal();

    Matrix bv(n, 4);
    bv << Vector::Ones(n), x1, x2, x1.cwiseProduct(x2);
    const DesignMatrix b{bv, {"(intercept)", "x1", "x2", "x1:x2"}};
    OutcomeDesigns outcome;
    auto build = [&](const Vector& zz) {
      Matrix m(n, 3);
      m << Vector::Ones(n), zz, x1;
      return m;
    };
    outcome.observed = {build(z), {"(intercept)", "z", "x1"}};
    outcome.treated = build(Vector::Ones(n));
    outcome.control = build(Vector::Zero(n));

    // Enumerate cells: the saturated fit reproduces the treated share per cell.
    double ipt_sum = 0.0;
    for (Index k = 0; k < n; ++k) {
      double treated = 0.0, size = 0.0;
      for (Index j = 0; j < n; ++j) {
        if (x1[j] == x1[k] && x2[j] == x2[k]) {
          size += 1.0;
          treated += z[j];
        }
      }
      const double e = treated / size;
      ipt_sum += y[k] * (z[k] / e - (1.0 - z[k]) / (1.0 - e)) / static_cast<double>(n);
    }
    for (bool weighted : {true, false}) {
      const IsDrDraw r = is_dr_bayes_draw(b, outcome, y, z, uniform_xi(n), {true, weighted});
      worst = std::max(worst, std::abs(r.total() - ipt_sum));
    }
  }
  return make_check("Identity 5: saturated treatment model, IS/DR equals IPT-weighted sum", worst, kExact);
}

IdentityCheck identity1(const Instance& inst) {
  const Dataset& d = inst.data;
  const double draw = is_bayes_draw(treatment_design(d, inst.spec), linear_outcome_designs(d, inst.spec), d.y, d.z,
                                    uniform_xi(d.size()), true);
  const double reference = point_estimate(Estimator::kOrIptw, d, inst.spec);
  return make_check("Identity 1: IS with uniform weights equals OR/IPTW", std::abs(draw - reference), kExact);
}

IdentityCheck identity2(const Instance& inst) {
  const Dataset& d = inst.data;
  const IsDrDraw draw = is_dr_bayes_draw(treatment_design(d, inst.spec), linear_outcome_designs(d, inst.spec), d.y,
                                         d.z, uniform_xi(d.size()), {true, false});
  const double reference = point_estimate(Estimator::kDr, d, inst.spec);
  return make_check("Identity 2: IS/DR with uniform weights equals DR", std::abs(draw.total() - reference), kExact);
}

IdentityCheck identity3(const Instance& inst) {
  const Dataset& d = inst.data;
  const FittedLogistic ps = fit_propensity(d, inst.spec);
  const Vector e = clamp_propensity(propensity(ps, treatment_design(d, inst.spec)));
  const OutcomeDesigns outcome = clever_outcome_designs(d, inst.spec, e);
  const FittedLinear fit = fit_linear_weighted(outcome.observed, d.y, Vector::Ones(d.size()));
  const DrTerms terms = dr_contrast(d.y, d.z, e, outcome.observed.values * fit.phi, outcome.treated * fit.phi,
                                    outcome.control * fit.phi);
  const double reference = point_estimate(Estimator::kCleverCovariate, d, inst.spec);
  const double residual = std::max(std::abs(terms.residual), std::abs(terms.total() - reference));
  return make_check("Identity 3: DR with clever-covariate model equals clever covariate", residual, kExact);
}

IdentityCheck treatment_model_isolation(const Instance& inst) {
  const Dataset& d = inst.data;
  Dataset shifted = d;
  shifted.y = d.y.array() * 3.0 + 11.0;
  const Vector reference = fit_propensity(d, inst.spec).gamma;
  const ResamplingConfig cfg{20, 20, true};
  const RngStream rng(kSeed, 3);
  double mismatches = 0.0;
  for (const Dataset* data : {&d, static_cast<const Dataset*>(&shifted)}) {
    const auto outcomes = estimate_many({kAllEstimators.begin(), kAllEstimators.end()}, *data, inst.spec, cfg, rng);
    for (const auto& o : outcomes) {
      if (o.method == Estimator::kJoint) continue;  // outcome feeds back into gamma by design
      if (!o.result) {
        mismatches += 1.0;
        continue;
      }
      if (!o.result->ps_coefficients) continue;
      const Vector& g = *o.result->ps_coefficients;
      if (g.size() != reference.size() || !(g.array() == reference.array()).all()) mismatches += 1.0;
    }
  }
  return make_check("Treatment-model fit is bit-identical inside every cut estimator", mismatches, 0.5);
}

IdentityCheck irls_score(const Instance& inst) {
  const Dataset& d = inst.data;
  RngStream rng(kSeed, 11);
  Vector w(d.size());
  for (Index i = 0; i < d.size(); ++i) w[i] = rng.exponential();
  const DesignMatrix b = treatment_design(d, inst.spec);
  const FittedLogistic fit = fit_logistic_weighted(b, d.z, w);
  const Vector wn = w * (static_cast<double>(d.size()) / w.sum());
  const Vector score = b.values.transpose() * wn.cwiseProduct(d.z - propensity(fit, b));
  return make_check("Weighted IRLS score at convergence", score.lpNorm<Eigen::Infinity>(), kExact);
}

IdentityCheck wls_normal_equations(const Instance& inst) {
  const Dataset& d = inst.data;
  RngStream rng(kSeed, 12);
  Vector w(d.size());
  for (Index i = 0; i < d.size(); ++i) w[i] = rng.exponential();
  const DesignMatrix x = linear_outcome_design(d, inst.spec);
  const FittedLinear fit = fit_linear_weighted(x, d.y, w);
  const Vector wn = w * (static_cast<double>(d.size()) / w.sum());
  const Vector normal = x.values.transpose() * wn.cwiseProduct(d.y - x.values * fit.phi);
  return make_check("Weighted least-squares normal equations", normal.lpNorm<Eigen::Infinity>(), kExact);
}

// Closed-form d/dgamma of mean_i x_i(gamma) (y_i - x_i(gamma)' phi) / sigma2 for
// the design [1, z, s, g(e)] with g the centred cubic basis.
IdentityCheck cross_derivative() {
  constexpr Index n = 5;
  const Vector z = (Vector(n) << 1, 0, 1, 0, 1).finished();
  const Vector s = (Vector(n) << 0.3, -1.2, 0.8, 0.1, -0.4).finished();
  const Vector y = (Vector(n) << 1.1, -0.7, 2.3, 0.2, 0.4).finished();
  Matrix b(n, 2);
  b << Vector::Ones(n), (Vector(n) << -0.5, 1.4, 0.2, -1.1, 0.9).finished();
  const Vector gamma = (Vector(2) << 0.2, -0.6).finished();
  const Vector phi = (Vector(6) << 0.1, 0.9, -0.4, 1.7, -2.2, 3.1).finished();
  const double sigma2 = 0.8;

  auto design = [&](const Vector& g) {
    const Vector e = clamp_propensity(propensity(g, b));
    Matrix x(n, 6);
    x << Vector::Ones(n), z, s, cubic_ps_basis(e);
    return x;
  };
  const Matrix numeric = outcome_score_cross_derivative(phi, sigma2, y, gamma, design);

  const Vector e = propensity(gamma, b);
  const Vector dev = (e.array() - e.mean()).matrix();
  const Matrix de = b.array().colwise() * (e.array() * (1.0 - e.array()));  // n x p_gamma
  const Matrix dd = de.rowwise() - de.colwise().mean();
  const Matrix x = design(gamma);
  const Vector resid = y - x * phi;
  Matrix analytic = Matrix::Zero(6, 2);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < 2; ++j) {
      Vector dx = Vector::Zero(6);
      dx[3] = dd(i, j);
      dx[4] = 2.0 * dev[i] * dd(i, j);
      dx[5] = 3.0 * dev[i] * dev[i] * dd(i, j);
      analytic.col(j) += (dx * resid[i] - x.row(i).transpose() * dx.dot(phi)) / sigma2;
    }
  }
  analytic /= static_cast<double>(n);
  return make_check("Finite-difference outcome/treatment score cross-derivative", (numeric - analytic).cwiseAbs().maxCoeff(),
                    1e-6);
}

}  // namespace

std::vector<IdentityCheck> run_identity_checks(const SelfCheckOptions& options) {
  set_dr_control_sign_mutation(options.mutate_dr_sign);
  struct Reset {
    ~Reset() { set_dr_control_sign_mutation(false); }
  } reset;

  const Instance scenario_one = simulated_instance(Scenario::kI);
  const Instance scenario_two = simulated_instance(Scenario::kII);
  std::vector<IdentityCheck> checks;
  auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      checks.push_back(fn());
    } catch (const std::exception& ex) {
      checks.push_back({name + " (error: " + ex.what() + ")", std::nan(""), 0.0, false});
    }
  };
  for (const Instance* inst : {&scenario_one, &scenario_two}) {
    const std::string suffix = inst == &scenario_one ? " [scenario I]" : " [scenario II]";
    guarded("Identity 1", [&] { auto c = identity1(*inst); c.name += suffix; return c; });
    guarded("Identity 2", [&] { auto c = identity2(*inst); c.name += suffix; return c; });
    guarded("Identity 3", [&] { auto c = identity3(*inst); c.name += suffix; return c; });
  }
  guarded("Identity 4", identity4);
  guarded("Identity 5", identity5);
  guarded("Treatment-model isolation", [&] { return treatment_model_isolation(scenario_one); });
  guarded("IRLS score", [&] { return irls_score(scenario_one); });
  guarded("WLS normal equations", [&] { return wls_normal_equations(scenario_one); });
  guarded("Cross-derivative", cross_derivative);
  return checks;
}

}  // namespace drbayes
