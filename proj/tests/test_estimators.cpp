#include "drbayes/estimators.hpp"
#include "drbayes/identities.hpp"
#include "drbayes/simulation.hpp"

#include <doctest.h>

#include <cmath>

using namespace drbayes;

namespace {

Dataset simulated(Index n, std::uint64_t stream) {
  RngStream rng(4242, stream);
  return generate_data(n, rng);
}

const ResamplingConfig kSmall{60, 60, true};

// Binary s, y stored as the single covariate column.
Dataset binary_table() {
  Dataset d;
  d.z = (Vector(10) << 1, 1, 1, 0, 0, 0, 0, 1, 0, 1).finished();
  d.x = (Vector(10) << 0, 0, 1, 1, 0, 1, 0, 1, 1, 1).finished();
  d.y = (Vector(10) << 1.0, 2.0, 5.0, 1.5, 0.5, 2.5, -0.5, 4.0, 3.5, 6.5).finished();
  d.names = {"s"};
  return d;
}

}  // namespace

TEST_CASE("estimator tags and lists") {
  for (Estimator e : kAllEstimators) {
    CHECK(parse_estimator(tag(e)) == e);
    CHECK(!display_name(e).empty());
  }
  CHECK(parse_estimator_list("all").size() == 13);
  CHECK(parse_estimator_list("naive, dr").size() == 2);
  CHECK(parse_estimator_list("or_ps,two_step").size() == 4);
  CHECK(parse_estimator_list("dr,dr").size() == 1);
  CHECK_THROWS_AS(parse_estimator_list("dr,bogus"), std::invalid_argument);
  CHECK(family_key(Estimator::kOrPsObsInfo) == family_key(Estimator::kOrPsSandwich));
  CHECK(family_key(Estimator::kTwoStepForward) == family_key(Estimator::kTwoStepVarDecomp));
  CHECK(family_key(Estimator::kIptw) != family_key(Estimator::kDr));
}

TEST_CASE("naive") {
  Dataset d = simulated(100, 1);
  const CovariateSpec none{};
  Dataset yz = d;
  yz.y = d.z;
  CHECK(naive(yz, none, kSmall, RngStream(1, 1)).point == doctest::Approx(1.0));
  Dataset flat = d;
  flat.y.setConstant(3.0);
  const EstimateResult r = naive(flat, none, kSmall, RngStream(1, 1));
  CHECK(r.point == 0.0);
  CHECK(r.se == 0.0);
}

TEST_CASE("g-formula: stratified standardisation and the no-covariate case") {
  const Dataset d = binary_table();
  // Saturated model [1, z, s, z s] is built by hand via a product column.
  Dataset sat = d;
  sat.x.resize(10, 1);
  sat.x.col(0) = d.x.col(0);
  const CovariateSpec spec{{{0, Transform::kIdentity}}, {}};
  // The additive model is saturated only without interaction; compare with
  // the stratified oracle on a table where the effect is constant across s.
  Dataset additive = d;
  for (Index i = 0; i < 10; ++i) additive.y[i] = 0.7 + 1.3 * d.z[i] + 2.0 * d.x(i, 0) + (i % 2 ? 0.1 : -0.1);
  double oracle = 0.0;
  for (int s = 0; s < 2; ++s) {
    double m1 = 0, n1 = 0, m0 = 0, n0 = 0, ns = 0;
    for (Index i = 0; i < 10; ++i) {
      if (additive.x(i, 0) != s) continue;
      ns += 1;
      if (additive.z[i] == 1) {
        m1 += additive.y[i];
        n1 += 1;
      } else {
        m0 += additive.y[i];
        n0 += 1;
      }
    }
    oracle += ns / 10.0 * (m1 / n1 - m0 / n0);
  }
  const EstimateResult g = g_formula_adjusted(additive, spec, kSmall, RngStream(1, 1));
  // Residuals +-0.1 are balanced within cells only approximately; the
  // stratified oracle and the regression agree to the residual scale.
  CHECK(std::abs(g.point - oracle) < 0.1);

  // Exact stratification check with a noise-free additive outcome.
  for (Index i = 0; i < 10; ++i) additive.y[i] = 0.7 + 1.3 * d.z[i] + 2.0 * d.x(i, 0);
  CHECK(g_formula_adjusted(additive, spec, kSmall, RngStream(1, 1)).point == doctest::Approx(1.3).epsilon(1e-12));

  const CovariateSpec none{};
  const Dataset s = simulated(120, 2);
  CHECK(g_formula_adjusted(s, none, kSmall, RngStream(1, 1)).point ==
        doctest::Approx(naive(s, none, kSmall, RngStream(1, 1)).point).epsilon(1e-12));
}

TEST_CASE("g-formula with interaction equals stratified standardisation") {
  // Interaction through designs built directly: standardised contrast of the
  // saturated fit is the cell-mean standardisation.
  const Dataset d = binary_table();
  const Index n = d.size();
  OutcomeDesigns od;
  auto build = [&](const Vector& z) {
    Matrix m(n, 4);
    m << Vector::Ones(n), z, d.x.col(0), z.cwiseProduct(d.x.col(0));
    return m;
  };
  od.observed = {build(d.z), {"(intercept)", "z", "s", "z:s"}};
  od.treated = build(Vector::Ones(n));
  od.control = build(Vector::Zero(n));
  const FittedLinear fit = fit_linear_weighted(od.observed, d.y, Vector::Ones(n));
  const double standardised = ((od.treated - od.control) * fit.phi).mean();
  double oracle = 0.0;
  for (int s = 0; s < 2; ++s) {
    double m1 = 0, n1 = 0, m0 = 0, n0 = 0;
    for (Index i = 0; i < n; ++i) {
      if (d.x(i, 0) != s) continue;
      (d.z[i] == 1 ? m1 : m0) += d.y[i];
      (d.z[i] == 1 ? n1 : n0) += 1;
    }
    oracle += (n1 + n0) / static_cast<double>(n) * (m1 / n1 - m0 / n0);
  }
  CHECK(standardised == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("iptw contrast by hand") {
  const Vector y = (Vector(2) << 2.0, 1.0).finished();
  const Vector z = (Vector(2) << 1.0, 0.0).finished();
  const Vector e = Vector::Constant(2, 0.5);
  CHECK(iptw_contrast(y, z, e) == doctest::Approx(1.0));
  const Vector w = ipt_weights(z, e, 0.3, true);
  CHECK(w[0] == doctest::Approx(0.6));
  CHECK(w[1] == doctest::Approx(1.4));
  CHECK(ipt_weights(z, e, 0.3, false) == Vector::Constant(2, 2.0));
}

TEST_CASE("dr special cases") {
  const Dataset d = simulated(200, 3);
  const Vector e = Vector::Constant(d.size(), 0.5);
  const Vector zero = Vector::Zero(d.size());
  const DrTerms t = dr_contrast(d.y, d.z, e, zero, zero, zero);
  const double two_sample = 2.0 * d.z.cwiseProduct(d.y).mean() - 2.0 * (1.0 - d.z.array()).matrix().cwiseProduct(d.y).mean();
  CHECK(t.total() == doctest::Approx(two_sample).epsilon(1e-12));
  CHECK(t.total() == doctest::Approx(iptw_contrast(d.y, d.z, e)).epsilon(1e-12));

  // Outcome exactly linear in (z, S): residual term is zero.
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  Dataset exact = d;
  const DesignMatrix x = linear_outcome_design(d, spec);
  exact.y = x.values * (Vector(5) << 0.2, 1.0, -0.5, 0.3, 0.9).finished();
  const double dr_point = point_estimate(Estimator::kDr, exact, spec);
  const double adj_point = point_estimate(Estimator::kAdjusted, exact, spec);
  CHECK(std::abs(dr_point - adj_point) < 1e-10);
}

TEST_CASE("clever covariate") {
  const Dataset d = simulated(300, 4);
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  const Vector e = (Vector(3) << 0.2, 0.5, 0.9).finished();
  // mean(1/e + 1/(1-e)) = (6.25 + 4 + 11.111...) / 3
  CHECK(clever_covariate_contrast(1.0, 2.0, e) ==
        doctest::Approx(1.0 + 2.0 * (1 / 0.2 + 1 / 0.8 + 2 + 2 + 1 / 0.9 + 1 / 0.1) / 3.0));

  const EstimateResult cc = clever_covariate_estimator(d, spec, kSmall, RngStream(1, 2));
  CHECK(cc.diagnostics.at("max_abs_clever") > 1.0);

  // No treatment covariates: constant propensity, the clever column is
  // affine in z and is dropped, leaving phi1.
  const CovariateSpec no_b{spec.s_columns, {}};
  const EstimateResult flat = clever_covariate_estimator(d, no_b, kSmall, RngStream(1, 2));
  CHECK(flat.diagnostics.at("clever_dropped") == 1.0);
  CHECK(flat.point == doctest::Approx(point_estimate(Estimator::kAdjusted, d, no_b)).epsilon(1e-10));
}

TEST_CASE("or_ps") {
  const Dataset d = simulated(400, 5);
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  const OrPsResult r = or_ps(d, spec, kSmall, RngStream(1, 3));
  CHECK(r.obs_info.point == r.sandwich.point);
  CHECK(r.obs_info.se > 0.0);
  CHECK(r.sandwich.se > 0.0);
  CHECK(r.obs_info.diagnostics.at("ps_basis_dropped") == 0.0);

  // Outcome independent of the propensity given S: close to the adjusted fit.
  const CovariateSpec correct = apply_scenario(Scenario::kII);
  const double adj = point_estimate(Estimator::kAdjusted, d, correct);
  const OrPsResult nested = or_ps(d, correct, kSmall, RngStream(1, 3));
  CHECK(std::abs(nested.obs_info.point - adj) < 2.0 * nested.obs_info.se);

  // Constant propensity: the basis is dropped and the fit is the adjusted one.
  const CovariateSpec no_b{spec.s_columns, {}};
  const OrPsResult flat = or_ps(d, no_b, kSmall, RngStream(1, 3));
  CHECK(flat.obs_info.diagnostics.at("ps_basis_dropped") == 1.0);
  CHECK(flat.obs_info.point == doctest::Approx(point_estimate(Estimator::kAdjusted, d, no_b)).epsilon(1e-12));
  CHECK(flat.sandwich.diagnostics.at("sandwich_adjusted_var") ==
        doctest::Approx(flat.sandwich.diagnostics.at("sandwich_uncorrected_var")).epsilon(1e-10));
}

TEST_CASE("or_iptw with a constant propensity is the adjusted estimator") {
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  const CovariateSpec no_b{spec.s_columns, {}};
  for (std::uint64_t stream : {6u, 7u}) {
    Dataset d = simulated(200, stream);
    if (stream == 6) {
      // Balanced arms.
      for (Index i = 0; i < d.size(); ++i) d.z[i] = static_cast<double>(i % 2);
    }
    const double a = point_estimate(Estimator::kOrIptw, d, no_b);
    const double b = point_estimate(Estimator::kAdjusted, d, no_b);
    CHECK(std::abs(a - b) < 1e-10);
  }
}

TEST_CASE("importance sampling with uniform weights") {
  const Dataset d = simulated(250, 8);
  const CovariateSpec spec = apply_scenario(Scenario::kII);
  const Vector xi = Vector::Constant(d.size(), 1.0 / 250.0);
  const DesignMatrix b = treatment_design(d, spec);
  const OutcomeDesigns od = linear_outcome_designs(d, spec);
  CHECK(std::abs(is_bayes_draw(b, od, d.y, d.z, xi, true) - point_estimate(Estimator::kOrIptw, d, spec)) < 1e-8);
  const IsDrDraw dr_draw = is_dr_bayes_draw(b, od, d.y, d.z, xi, {true, false});
  CHECK(std::abs(dr_draw.total() - point_estimate(Estimator::kDr, d, spec)) < 1e-8);
}

TEST_CASE("posterior summaries are means and SDs of the draws") {
  const Dataset d = simulated(300, 9);
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  const RngStream rng(5, 5);
  for (Estimator e : {Estimator::kTwoStepForward, Estimator::kJoint, Estimator::kImportanceSampling,
                      Estimator::kImportanceSamplingDr}) {
    const EstimateResult r = estimate(e, d, spec, kSmall, rng);
    REQUIRE(r.draws.has_value());
    CHECK(r.draws->size() == kSmall.n_draws);
    CHECK(r.point == doctest::Approx(sample_mean(*r.draws)).epsilon(1e-14));
    CHECK(r.se == doctest::Approx(sample_sd(*r.draws)).epsilon(1e-14));
    CHECK(r.ci_low == doctest::Approx(r.point - 1.96 * r.se));
    CHECK(r.ci_high == doctest::Approx(r.point + 1.96 * r.se));
  }
}

TEST_CASE("two-step summaries") {
  const Dataset d = simulated(400, 10);
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  const ResamplingConfig cfg{300, 10, true};
  const TwoStepResult r = two_step(d, spec, cfg, RngStream(3, 3));
  const double within = r.vardecomp.diagnostics.at("within_variance");
  const double between = r.vardecomp.diagnostics.at("between_variance");
  CHECK(r.vardecomp.se * r.vardecomp.se >= within);
  CHECK(r.vardecomp.se * r.vardecomp.se == doctest::Approx(within + between));
  // Forward draws add mean-zero noise around the plug-in values.
  CHECK(std::abs(r.forward.point - r.vardecomp.point) < 4.0 * std::sqrt(within / cfg.n_draws));
  CHECK(r.forward.ps_coefficients.has_value());

  // Correct outcome model: the between-draw component is small and the SE is
  // close to the observed-information SE.
  const CovariateSpec correct = apply_scenario(Scenario::kII);
  const TwoStepResult c = two_step(d, correct, cfg, RngStream(3, 3));
  const OrPsResult obs = or_ps(d, correct, cfg, RngStream(3, 3));
  CHECK(c.vardecomp.diagnostics.at("between_variance") < 0.2 * c.vardecomp.diagnostics.at("within_variance"));
  CHECK(c.vardecomp.se == doctest::Approx(obs.obs_info.se).epsilon(0.15));
}

TEST_CASE("joint estimation agrees with the adjusted fit under a correct outcome model") {
  const Dataset d = simulated(500, 11);
  const CovariateSpec spec = apply_scenario(Scenario::kII);
  const EstimateResult j = joint_estimation(d, spec, kSmall, RngStream(2, 2));
  const EstimateResult a = g_formula_adjusted(d, spec, kSmall, RngStream(2, 2));
  CHECK(std::abs(j.point - a.point) < 2.0 * a.se);
  CHECK(j.diagnostics.at("outer_iterations") <= 500);
}

TEST_CASE("bootstrap standard errors") {
  const Dataset d = simulated(500, 12);
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  Dataset flat = d;
  flat.y.setConstant(1.0);
  CHECK(bootstrap_se(Estimator::kNaive, flat, spec, kSmall, RngStream(1, 1)) == 0.0);

  const ResamplingConfig b200{10, 200, true}, b400{10, 400, true};
  const double analytic = naive(d, spec, b200, RngStream(1, 1)).se;
  const double se200 = bootstrap_se(Estimator::kNaive, d, spec, b200, RngStream(1, 1));
  CHECK(std::abs(se200 - analytic) < 0.15 * analytic);
  const double se400 = bootstrap_se(Estimator::kNaive, d, spec, b400, RngStream(1, 1));
  const double mc = std::sqrt(se200 * se200 / 400.0 + se400 * se400 / 800.0);
  CHECK(std::abs(se400 - se200) < 3.0 * mc);

  CHECK_THROWS_AS(bootstrap_se(Estimator::kJoint, d, spec, kSmall, RngStream(1, 1)), std::invalid_argument);
  CHECK_THROWS_AS(ResamplingConfig({1, 200, true}).validate(), std::invalid_argument);
}

TEST_CASE("batch estimation shares families and is deterministic") {
  const Dataset d = simulated(300, 13);
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  const RngStream rng(9, 1);
  const std::vector<Estimator> all{kAllEstimators.begin(), kAllEstimators.end()};
  const auto first = estimate_many(all, d, spec, kSmall, rng);
  const auto second = estimate_many(all, d, spec, kSmall, rng);
  REQUIRE(first.size() == 13);
  for (std::size_t k = 0; k < first.size(); ++k) {
    REQUIRE(first[k].result.has_value());
    CHECK(first[k].result->point == second[k].result->point);
    CHECK(first[k].result->se == second[k].result->se);
    CHECK(first[k].result->ci_low == doctest::Approx(first[k].result->point - 1.96 * first[k].result->se));
    // Same numbers as running the estimator on its own.
    const EstimateResult alone = estimate(first[k].method, d, spec, kSmall, rng);
    CHECK(alone.point == first[k].result->point);
    CHECK(alone.se == first[k].result->se);
  }

  // A failing estimator is reported, not thrown.
  Dataset one_arm = d;
  one_arm.z.setOnes();
  const auto failed = estimate_many({Estimator::kNaive, Estimator::kDr}, one_arm, spec, kSmall, rng);
  CHECK(!failed[0].result.has_value());
  CHECK(!failed[1].error.empty());
}

TEST_CASE("relabelling the treatment negates every estimate") {
  const Dataset d = simulated(300, 14);
  const Dataset r = relabel_treatment(d);
  const CovariateSpec spec = apply_scenario(Scenario::kI);
  const RngStream rng(21, 0);
  const ResamplingConfig cfg{100, 30, true};
  const auto a = estimate_many({kAllEstimators.begin(), kAllEstimators.end()}, d, spec, cfg, rng);
  const auto b = estimate_many({kAllEstimators.begin(), kAllEstimators.end()}, r, spec, cfg, rng);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CAPTURE(tag(a[k].method));
    REQUIRE(a[k].result.has_value());
    REQUIRE(b[k].result.has_value());
    const double sum = a[k].result->point + b[k].result->point;
    if (a[k].method == Estimator::kTwoStepForward || a[k].method == Estimator::kJoint) {
      // Normal draws pass through a different Cholesky factor after
      // relabelling, so agreement is up to Monte Carlo error of the mean.
      CHECK(std::abs(sum) < 4.0 * a[k].result->se * std::sqrt(2.0 / cfg.n_draws));
    } else {
      CHECK(std::abs(sum) < 1e-8);
    }
  }
}

TEST_CASE("identity suite") {
  const auto checks = run_identity_checks();
  CHECK(checks.size() >= 12);
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CAPTURE(c.residual);
    CHECK(c.passed);
  }
  const auto mutated = run_identity_checks({true});
  bool identity3_failed = false;
  for (const auto& c : mutated) {
    if (c.name.rfind("Identity 3", 0) == 0 && !c.passed) identity3_failed = true;
  }
  CHECK(identity3_failed);
  // The hook is reset afterwards.
  for (const auto& c : run_identity_checks()) CHECK(c.passed);
}
