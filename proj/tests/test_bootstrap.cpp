#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dualbound/bootstrap.hpp"
#include "dualbound/math.hpp"

using namespace dualbound;

namespace {

SummandTable table_from(const Eigen::MatrixXd& values) {
  SummandTable t;
  t.values = values;
  t.fold_of.assign(values.rows(), 0);
  return t;
}

Eigen::MatrixXd normal_matrix(std::mt19937_64& rng, int n, int k) {
  std::normal_distribution<double> normal(0.0, 1.0);
  return Eigen::MatrixXd::NullaryExpr(n, k, [&](Eigen::Index, Eigen::Index) {
    return normal(rng);
  });
}

}  // namespace

TEST_CASE("multiplier_bootstrap_quantile: single column near the normal quantile") {
  std::mt19937_64 rng(3);
  SummandTable t = table_from(normal_matrix(rng, 1000, 1));
  double q = multiplier_bootstrap_quantile(t, 0.05, 20000, 99);
  CHECK(std::abs(q - normal_quantile(0.95)) < 0.05);

  // Duplicated column: the max over identical coordinates is unchanged.
  Eigen::MatrixXd dup(t.values.rows(), 2);
  dup << t.values.col(0), t.values.col(0);
  double q2 = multiplier_bootstrap_quantile(table_from(dup), 0.05, 20000, 99);
  CHECK(std::abs(q2 - q) < 0.03);

  // Independent columns: Phi(q)^2 = 0.95 gives q about 1.9545.
  SummandTable ind = table_from(normal_matrix(rng, 1000, 2));
  double qi = multiplier_bootstrap_quantile(ind, 0.05, 20000, 7);
  double target = normal_quantile(std::sqrt(0.95));
  CHECK(std::abs(qi - target) < 0.06);
}

TEST_CASE("multiplier_bootstrap_quantile: determinism, monotonicity, errors") {
  std::mt19937_64 rng(11);
  SummandTable t = table_from(normal_matrix(rng, 200, 3));
  double a = multiplier_bootstrap_quantile(t, 0.05, 2000, 5);
  double b = multiplier_bootstrap_quantile(t, 0.05, 2000, 5);
  CHECK(a == b);
  CHECK(multiplier_bootstrap_quantile(t, 0.01, 2000, 5) >=
        multiplier_bootstrap_quantile(t, 0.10, 2000, 5));

  SummandTable degen = t;
  degen.values.col(1).setConstant(2.0);
  CHECK_THROWS_WITH_AS(multiplier_bootstrap_quantile(degen, 0.05, 2000, 5),
                       doctest::Contains("column 1"), std::invalid_argument);
  CHECK_THROWS_AS(multiplier_bootstrap_quantile(t, 0.05, 999, 5), std::invalid_argument);
}

TEST_CASE("mb_select_lcb: reduction, dominance, same-quantile bound property") {
  std::mt19937_64 rng(17);
  SummandTable one = table_from(normal_matrix(rng, 1000, 1));
  MbResult r1 = mb_select_lcb(one, 0.05, 4000, 21);
  BoundEstimate os = one_sided_bound(one.values.col(0), 0.05, BoundSide::Lower);
  CHECK(std::abs(r1.lcb - os.confidence_bound) < 0.1 * os.se * std::sqrt(1000.0));
  CHECK(r1.selected_k == 0);

  // Column 1 dominates column 0 by a constant shift with the same spread.
  Eigen::MatrixXd two(one.values.rows(), 2);
  two.col(0) = one.values.col(0);
  two.col(1) = one.values.col(0).array() + 1.0;
  MbResult r2 = mb_select_lcb(table_from(two), 0.05, 4000, 21);
  CHECK(r2.selected_k == 1);
  CHECK(r2.lcb == doctest::Approx(r2.per_model[1].first -
                                  r2.q_hat * r2.per_model[1].second / std::sqrt(1000.0)));

  // The reported lcb is the max of all same-q-hat single-column bounds.
  Eigen::MatrixXd three = normal_matrix(rng, 500, 3);
  three.col(2) *= 2.0;
  MbResult r3 = mb_select_lcb(table_from(three), 0.05, 4000, 33);
  for (const auto& [theta, sig] : r3.per_model)
    CHECK(r3.lcb >= theta - r3.q_hat * sig / std::sqrt(500.0) - 1e-12);
}

TEST_CASE("crossfit_generalized_mb: reductions and closed forms") {
  std::mt19937_64 rng(23);
  auto ident = [](const Eigen::VectorXd& v) { return v[0]; };
  auto ident_g = [](const Eigen::VectorXd& v) {
    return Eigen::VectorXd::Ones(v.size()).eval();
  };

  // K = 1, identity: near the plain crossfit one-sided bound.
  Eigen::MatrixXd col = normal_matrix(rng, 1000, 1);
  MbResult r = crossfit_generalized_mb(col, Eigen::MatrixXd(), {ident}, {ident_g}, 0.05, 4000, 3);
  BoundEstimate os = one_sided_bound(col.col(0), 0.05, BoundSide::Lower);
  CHECK(std::abs(r.q_hat - normal_quantile(0.95)) < 0.05);
  CHECK(std::abs(r.lcb - os.confidence_bound) < 0.1 * os.se * std::sqrt(1000.0));

  // Perfectly correlated models collapse to the single-model quantile.
  Eigen::MatrixXd dup(col.rows(), 2);
  dup << col.col(0), col.col(0);
  MbResult rc = crossfit_generalized_mb(dup, Eigen::MatrixXd(), {ident, ident},
                                        {ident_g, ident_g}, 0.05, 4000, 5);
  CHECK(std::abs(rc.q_hat - normal_quantile(0.95)) < 0.05);

  // Independent models match Phi(q)^K = 1 - alpha.
  for (int k : {2, 3}) {
    Eigen::MatrixXd cols = normal_matrix(rng, 2000, k);
    std::vector<std::function<double(const Eigen::VectorXd&)>> hs(k, ident);
    std::vector<std::function<Eigen::VectorXd(const Eigen::VectorXd&)>> gs(k, ident_g);
    MbResult ri = crossfit_generalized_mb(cols, Eigen::MatrixXd(), hs, gs, 0.05, 8000, 11);
    double target = normal_quantile(std::pow(0.95, 1.0 / k));
    CHECK(std::abs(ri.q_hat - target) < 0.07);
  }
}

TEST_CASE("crossfit_generalized_mb: kappa columns flow through the delta method") {
  std::mt19937_64 rng(31);
  int n = 800;
  Eigen::MatrixXd beta = normal_matrix(rng, n, 1).array() + 6.0;
  Eigen::MatrixXd kappa = Eigen::MatrixXd::Constant(n, 1, 2.0);
  // Constant denominator would be flagged as zero variance in kappa only if
  // kappa drove the model variance; the ratio variance comes from beta.
  auto ratio = [](const Eigen::VectorXd& v) { return v[0] / v[1]; };
  auto ratio_g = [](const Eigen::VectorXd& v) {
    Eigen::VectorXd g(2);
    g << 1.0 / v[1], -v[0] / (v[1] * v[1]);
    return g;
  };
  MbResult r = crossfit_generalized_mb(beta, kappa, {ratio}, {ratio_g}, 0.05, 4000, 13);
  BoundEstimate dm = delta_method_bound(beta.col(0), kappa, ratio, ratio_g, 0.05, BoundSide::Lower);
  CHECK(r.per_model[0].first == doctest::Approx(dm.theta_hat));
  CHECK(r.per_model[0].second / std::sqrt(static_cast<double>(n)) == doctest::Approx(dm.se));
  CHECK(std::abs(r.lcb - dm.confidence_bound) < 0.05 * dm.se * std::sqrt(static_cast<double>(n)));
}

TEST_CASE("mb coverage stays near nominal with valid candidate models") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> normal(0.0, 1.0);
  int reps = 300, n = 400;
  int violations = 0;
  for (int r = 0; r < reps; ++r) {
    // Two valid models: both target values are at the identified bound 0.
    Eigen::MatrixXd cols(n, 2);
    for (int i = 0; i < n; ++i) {
      cols(i, 0) = normal(rng);
      cols(i, 1) = 0.5 * normal(rng) + 0.5 * cols(i, 0);
    }
    MbResult mb = mb_select_lcb(table_from(cols), 0.05, 1000, 1000 + r);
    if (mb.lcb > 0.0) ++violations;
  }
  CHECK(static_cast<double>(violations) / reps <= 0.05 + 0.03);
}
