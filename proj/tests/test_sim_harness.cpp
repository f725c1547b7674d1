#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dualbound/math.hpp"
#include "dualbound/sim_harness.hpp"

using namespace dualbound;

namespace {

SimScenario lee_scenario(int n, std::uint64_t seed) {
  SimScenario sc;
  sc.n = n;
  sc.seed = seed;
  sc.n_reps = 5;
  return sc;
}

}  // namespace

TEST_CASE("generator: moments, selection ordering, and monotone coupling") {
  SimScenario sc = lee_scenario(4000, 7);
  sc.tau = 0.0;  // symmetric potential outcomes
  int s1_total = 0, s0_total = 0;
  for (int rep = 0; rep < 3; ++rep) {
    auto latent = generate_scenario_latent(sc, rep);
    double sum_diff = 0.0, sum_sq = 0.0;
    for (const auto& d : latent) {
      // Construction guarantees S(1) >= S(0) in every draw.
      CHECK(d.s1 >= d.s0);
      s1_total += d.s1;
      s0_total += d.s0;
      double diff = d.y1 - d.y0;
      sum_diff += diff;
      sum_sq += diff * diff;
    }
    double n = static_cast<double>(latent.size());
    double mean = sum_diff / n;
    double se = std::sqrt((sum_sq / n - mean * mean) / n);
    CHECK(std::abs(mean) < 3.0 * se);  // tau = 0 by symmetry
  }
  // tau_s1 = 1 > tau_s0 = 0 lifts the treated selection rate.
  CHECK(s1_total > s0_total);

  // Marginal outcome variance is calibrated to outcome_variance.
  SimScenario cal = lee_scenario(20000, 8);
  auto latent = generate_scenario_latent(cal, 0);
  double s = 0.0, ss = 0.0;
  for (const auto& d : latent) {
    s += d.y0;
    ss += d.y0 * d.y0;
  }
  double n = static_cast<double>(latent.size());
  double var = ss / n - (s / n) * (s / n);
  CHECK(var == doctest::Approx(cal.outcome_variance).epsilon(0.05));
}

TEST_CASE("generator: observed projection and determinism") {
  SimScenario sc = lee_scenario(200, 3);
  auto a = generate_scenario_data(sc, 4);
  auto b = generate_scenario_data(sc, 4);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].outcome == b[i].outcome);
    CHECK(a[i].treatment == b[i].treatment);
    CHECK(a[i].selection == b[i].selection);
    CHECK(a[i].propensity == 0.5);
    if (a[i].selection == 0) CHECK(a[i].outcome == 0.0);
  }
  auto c = generate_scenario_data(sc, 5);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i].outcome != c[i].outcome;
  CHECK(any_diff);
}

TEST_CASE("oracle: degenerate p = 0 matches the closed no-covariate forms") {
  // Lee: eta = logistic(0) / logistic(1); trimmed-normal closed form.
  SimScenario sc = lee_scenario(100, 1);
  sc.p = 0;
  sc.outcome_variance = 1.0;
  OracleBound lee = oracle_sharp_bound(sc, 10);
  double eta = 0.5 / (1.0 / (1.0 + std::exp(-1.0)));
  double z_eta = normal_quantile(eta);
  double m = -std::exp(-0.5 * z_eta * z_eta) / (std::sqrt(2.0 * std::acos(-1.0)) * eta);
  CHECK(lee.theta_l == doctest::Approx(sc.tau + m).epsilon(1e-12));
  CHECK(lee.mc_se == 0.0);

  // FH cell: max(Phi(t0) + Phi(t1 - tau) - 1, 0) for unit-variance marginals.
  sc.estimand = "fh_cdf";
  sc.fh_t0 = 0.8;
  sc.fh_t1 = 2.5;
  OracleBound fh = oracle_sharp_bound(sc, 10);
  double expect = std::max(normal_cdf(0.8) + normal_cdf(2.5 - sc.tau) - 1.0, 0.0);
  CHECK(fh.theta_l == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("oracle: self-consistency across seeds and exact homoskedastic var_ite") {
  SimScenario sc = lee_scenario(100, 11);
  OracleBound a = oracle_sharp_bound(sc, 150000);
  SimScenario sc2 = sc;
  sc2.seed = 12;  // different MC stream
  OracleBound b = oracle_sharp_bound(sc2, 150000);
  CHECK(a.mc_se > 0.0);
  CHECK(std::abs(a.theta_l - b.theta_l) <= 3.0 * std::hypot(a.mc_se, b.mc_se));

  // Equal conditional scales make the comonotone ITE degenerate at tau, so
  // the variance lower bound is exactly zero.
  SimScenario v = lee_scenario(100, 5);
  v.estimand = "var_ite";
  OracleBound var = oracle_sharp_bound(v, 100000);
  CHECK(std::abs(var.theta_l) < 1e-9);

  // Heteroskedastic arms separate the quantile curves.
  v.noise = NoiseDesign::HeteroI;
  OracleBound var_h = oracle_sharp_bound(v, 100000);
  CHECK(var_h.theta_l > 0.1);
}

TEST_CASE("oracle and scenario validation") {
  SimScenario sc = lee_scenario(100, 1);
  sc.estimand = "unknown_label";
  CHECK_THROWS_AS(oracle_sharp_bound(sc, 100000), std::invalid_argument);
  sc = lee_scenario(10, 1);  // n too small
  CHECK_THROWS_AS(validate_scenario(sc), std::invalid_argument);
  sc = lee_scenario(100, 1);
  CHECK_THROWS_AS(oracle_sharp_bound(sc, 5000), std::invalid_argument);
  sc.p = 0;
  sc.noise = NoiseDesign::HeteroI;
  CHECK_THROWS_AS(validate_scenario(sc), std::invalid_argument);
}

TEST_CASE("method comparison: structure, determinism, and sane coverage") {
  SimScenario sc = lee_scenario(120, 31);
  sc.n_reps = 4;
  MethodOptions opt;
  opt.pilot_reps = 15;
  opt.nvals = 10;
  opt.n_oracle = 100000;
  SimReport rep = run_method_comparison(sc, opt);
  REQUIRE(rep.methods.size() == 3);
  CHECK(rep.n_failures == 0);
  CHECK(rep.n_reps == 4);
  for (const auto& m : rep.methods) {
    CHECK(m.coverage >= 0.0);
    CHECK(m.coverage <= 1.0);
    CHECK(std::isfinite(m.mean_estimate));
    CHECK(m.mean_lcb < m.mean_estimate + 1e-12);
    CHECK(m.mean_runtime_sec >= 0.0);
  }
  CHECK(std::isfinite(rep.oracle_theta_l));
  CHECK(rep.oracle_mc_se > 0.0);

  SimReport again = run_method_comparison(sc, opt);
  for (std::size_t i = 0; i < rep.methods.size(); ++i) {
    CHECK(again.methods[i].mean_estimate == rep.methods[i].mean_estimate);
    CHECK(again.methods[i].mean_lcb == rep.methods[i].mean_lcb);
  }
  CHECK(sim_method_name(rep.methods[2].method) == "CrossfitDual");
}
