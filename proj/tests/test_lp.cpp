#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dualbound/lp.hpp"
#include "dualbound/math.hpp"

using namespace dualbound;

namespace {

// Independent optimality certificate for max c.x s.t. Ax (<=/=) b:
// feasibility, dual feasibility of the returned multipliers, and a zero gap.
void check_certificate(const LinearProgram& lp, const LpSolution& sol, double tol = 1e-7) {
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(max_violation(lp, sol.variable_values) <= tol);
  CHECK(sol.objective_value ==
        doctest::Approx(lp.objective.dot(sol.variable_values)).epsilon(1e-9));
  const Eigen::VectorXd& lam = sol.row_duals;
  REQUIRE(lam.size() == lp.n_cons());
  for (int i = 0; i < lp.n_cons(); ++i)
    if (lp.row_sense[i] == RowSense::LessEqual) CHECK(lam[i] >= -tol);
  Eigen::VectorXd reduced = lp.constraint_matrix.transpose() * lam - lp.objective;
  for (int j = 0; j < lp.n_vars(); ++j) {
    if (lp.var_lower_bounds[j] == VarBound::NonNegative)
      CHECK(reduced[j] >= -tol);
    else
      CHECK(std::abs(reduced[j]) <= tol);
  }
  CHECK(std::abs(lp.rhs.dot(lam) - sol.objective_value) <= tol * (1.0 + std::abs(sol.objective_value)));
}

LinearProgram random_lp(std::mt19937_64& rng, int n, int m) {
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::uniform_real_distribution<double> pos(0.1, 2.0);
  LinearProgram lp;
  lp.objective.resize(n);
  lp.constraint_matrix.resize(m, n);
  lp.rhs.resize(m);
  for (int j = 0; j < n; ++j) lp.objective[j] = unif(rng);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) lp.constraint_matrix(i, j) = unif(rng);
  // x = 0 feasible; add a box so the program is bounded.
  for (int i = 0; i < m; ++i) lp.rhs[i] = pos(rng);
  lp.row_sense.assign(m, RowSense::LessEqual);
  lp.var_lower_bounds.assign(n, VarBound::NonNegative);
  return lp;
}

}  // namespace

TEST_CASE("two-variable LP with known vertex solution") {
  // max 3x + 2y  s.t.  x + y <= 4, x + 3y <= 6, x,y >= 0  ->  (4, 0), value 12
  LinearProgram lp;
  lp.objective.resize(2);
  lp.objective << 3, 2;
  lp.constraint_matrix.resize(2, 2);
  lp.constraint_matrix << 1, 1, 1, 3;
  lp.rhs.resize(2);
  lp.rhs << 4, 6;
  lp.row_sense = {RowSense::LessEqual, RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative, VarBound::NonNegative};
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective_value == doctest::Approx(12.0));
  CHECK(sol.variable_values[0] == doctest::Approx(4.0));
  CHECK(sol.variable_values[1] == doctest::Approx(0.0));
  check_certificate(lp, sol);
}

TEST_CASE("equality rows and free variables") {
  // max x - y  s.t.  x + y = 2, x - y <= 1, x >= 0, y free  ->  x=1.5, y=0.5
  LinearProgram lp;
  lp.objective.resize(2);
  lp.objective << 1, -1;
  lp.constraint_matrix.resize(2, 2);
  lp.constraint_matrix << 1, 1, 1, -1;
  lp.rhs.resize(2);
  lp.rhs << 2, 1;
  lp.row_sense = {RowSense::Equal, RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative, VarBound::Free};
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective_value == doctest::Approx(1.0));
  CHECK(sol.variable_values[0] == doctest::Approx(1.5));
  CHECK(sol.variable_values[1] == doctest::Approx(0.5));
  check_certificate(lp, sol);
}

TEST_CASE("infeasible and unbounded detection") {
  LinearProgram lp;
  lp.objective.resize(1);
  lp.objective << 1;
  lp.constraint_matrix.resize(2, 1);
  lp.constraint_matrix << 1, -1;
  lp.rhs.resize(2);
  lp.rhs << 1, -2;  // x <= 1 and x >= 2
  lp.row_sense = {RowSense::LessEqual, RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative};
  CHECK(solve_lp(lp).status == LpStatus::Infeasible);

  LinearProgram ub;
  ub.objective.resize(2);
  ub.objective << 1, 0;
  ub.constraint_matrix.resize(1, 2);
  ub.constraint_matrix << 0, 1;
  ub.rhs.resize(1);
  ub.rhs << 1;
  ub.row_sense = {RowSense::LessEqual};
  ub.var_lower_bounds = {VarBound::NonNegative, VarBound::NonNegative};
  CHECK(solve_lp(ub).status == LpStatus::Unbounded);
}

TEST_CASE("redundant equality rows are tolerated") {
  LinearProgram lp;
  lp.objective.resize(2);
  lp.objective << 1, 2;
  lp.constraint_matrix.resize(3, 2);
  lp.constraint_matrix << 1, 1, 1, 1, 1, 0;
  lp.rhs.resize(3);
  lp.rhs << 1, 1, 0.3;
  lp.row_sense = {RowSense::Equal, RowSense::Equal, RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative, VarBound::NonNegative};
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective_value == doctest::Approx(2.0));  // all mass on the second variable
}

TEST_CASE("tall program exercises the dualized path") {
  // 2 variables, 40 rows (mostly redundant): max x + y, x <= 1, y <= 1.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LinearProgram lp;
  const int m = 40;
  lp.objective.resize(2);
  lp.objective << 1, 1;
  lp.constraint_matrix.resize(m, 2);
  lp.rhs.resize(m);
  lp.constraint_matrix.row(0) << 1, 0;
  lp.rhs[0] = 1;
  lp.constraint_matrix.row(1) << 0, 1;
  lp.rhs[1] = 1;
  for (int i = 2; i < m; ++i) {
    double a = unif(rng), b = unif(rng);
    lp.constraint_matrix.row(i) << a, b;
    lp.rhs[i] = a + b + unif(rng);  // loose at (1, 1)
  }
  lp.row_sense.assign(m, RowSense::LessEqual);
  lp.var_lower_bounds.assign(2, VarBound::NonNegative);
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective_value == doctest::Approx(2.0));
  check_certificate(lp, sol);
}

TEST_CASE("random LP fuzz: optimality certificates on both code paths") {
  std::mt19937_64 rng(20240817);
  std::uniform_int_distribution<int> nvars(2, 6);
  int optimal_seen = 0;
  for (int rep = 0; rep < 1200; ++rep) {
    int n = nvars(rng);
    // Alternate between short programs (direct path) and tall ones (dualized).
    int m = (rep % 2 == 0) ? std::uniform_int_distribution<int>(1, 8)(rng)
                           : std::uniform_int_distribution<int>(2 * n + 8, 2 * n + 20)(rng);
    LinearProgram lp = random_lp(rng, n, m);
    LpSolution sol = solve_lp(lp);
    if (sol.status == LpStatus::Unbounded) continue;
    REQUIRE(sol.status == LpStatus::Optimal);  // x = 0 is always feasible here
    check_certificate(lp, sol);
    ++optimal_seen;
  }
  CHECK(optimal_seen > 300);
}

TEST_CASE("direct and dualized paths agree on padded copies of the same LP") {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 200; ++rep) {
    int n = 3;
    LinearProgram lp = random_lp(rng, n, 4);
    LpSolution direct = solve_lp(lp);
    if (direct.status != LpStatus::Optimal) continue;
    // Pad with rows that are loose at any feasible point to force dualization.
    LinearProgram tall = lp;
    int extra = 2 * n + 10;
    tall.constraint_matrix.conservativeResize(4 + extra, n);
    tall.rhs.conservativeResize(4 + extra);
    for (int i = 0; i < extra; ++i) {
      tall.constraint_matrix.row(4 + i).setConstant(1.0);
      tall.rhs[4 + i] = 1e6;
      tall.row_sense.push_back(RowSense::LessEqual);
    }
    LpSolution dualized = solve_lp(tall);
    REQUIRE(dualized.status == LpStatus::Optimal);
    CHECK(dualized.objective_value == doctest::Approx(direct.objective_value).epsilon(1e-7));
  }
}

TEST_CASE("transport dual: two-point joint-tail bound") {
  // P(Y0 <= t0) = 0.7, P(Y1 <= t1) = 0.6; the minimal joint tail mass over
  // couplings is max(0.7 + 0.6 - 1, 0) = 0.3.
  Eigen::VectorXd p0(2), p1(2);
  p0 << 0.7, 0.3;
  p1 << 0.6, 0.4;
  Eigen::MatrixXd cost(2, 2);
  cost << 1, 0, 0, 0;  // indicator of both outcomes in the tail
  TransportDual d = solve_ot_dual(p0, p1, cost);
  CHECK(d.objective_value == doctest::Approx(0.3).epsilon(1e-9));
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i)
      CHECK(d.potentials_0[j] + d.potentials_1[i] <= cost(j, i) + 1e-9);
}

TEST_CASE("transport dual: squared cost matches the comonotone coupling") {
  Eigen::VectorXd p0 = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  Eigen::VectorXd p1 = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  Eigen::Vector3d y0(1.0, 2.0, 3.0), y1(1.5, 2.5, 4.0);
  Eigen::MatrixXd cost(3, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) cost(j, i) = (y0[j] - y1[i]) * (y0[j] - y1[i]);
  // Sorted (comonotone) matching is optimal for convex costs.
  double expect = (0.25 + 0.25 + 1.0) / 3.0;
  TransportDual d = solve_ot_dual(p0, p1, cost);
  CHECK(d.objective_value == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("transport dual: shift invariance and fuzz against the LP solver") {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> sizes(2, 9);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int rep = 0; rep < 120; ++rep) {
    int n0 = sizes(rng), n1 = sizes(rng);
    Eigen::VectorXd p0(n0), p1(n1);
    for (int j = 0; j < n0; ++j) p0[j] = 0.05 + std::abs(unif(rng));
    for (int i = 0; i < n1; ++i) p1[i] = 0.05 + std::abs(unif(rng));
    p0 /= p0.sum();
    p1 /= p1.sum();
    Eigen::MatrixXd cost(n0, n1);
    for (int j = 0; j < n0; ++j)
      for (int i = 0; i < n1; ++i) cost(j, i) = unif(rng);
    TransportDual d = solve_ot_dual(p0, p1, cost);
    for (int j = 0; j < n0; ++j)
      for (int i = 0; i < n1; ++i)
        CHECK(d.potentials_0[j] + d.potentials_1[i] <= cost(j, i) + 1e-8);

    // Same value from the generic solver on the primal coupling LP.
    LinearProgram primal;
    primal.objective.resize(n0 * n1);
    primal.constraint_matrix = Eigen::MatrixXd::Zero(n0 + n1, n0 * n1);
    primal.rhs.resize(n0 + n1);
    for (int j = 0; j < n0; ++j)
      for (int i = 0; i < n1; ++i) {
        int v = j * n1 + i;
        primal.objective[v] = -cost(j, i);  // maximize the negated cost
        primal.constraint_matrix(j, v) = 1.0;
        primal.constraint_matrix(n0 + i, v) = 1.0;
      }
    primal.rhs << p0, p1;
    primal.row_sense.assign(n0 + n1, RowSense::Equal);
    primal.var_lower_bounds.assign(n0 * n1, VarBound::NonNegative);
    LpSolution psol = solve_lp(primal);
    REQUIRE(psol.status == LpStatus::Optimal);
    CHECK(d.objective_value == doctest::Approx(-psol.objective_value).epsilon(1e-7));

    TransportDual shifted = solve_ot_dual(p0, p1, cost.array() + 3.25);
    CHECK(shifted.objective_value == doctest::Approx(d.objective_value + 3.25).epsilon(1e-8));
  }
}

TEST_CASE("transport dual input validation") {
  Eigen::VectorXd p0(2), p1(2);
  p0 << 0.5, 0.5;
  p1 << 0.4, 0.7;  // sums to 1.1
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(solve_ot_dual(p0, p1, cost), std::invalid_argument);
  p1 << 0.4, 0.6;
  CHECK_NOTHROW(solve_ot_dual(p0, p1, cost));
  Eigen::MatrixXd bad = cost;
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(solve_ot_dual(p0, p1, bad), std::invalid_argument);
}

TEST_CASE("min_norm_refine moves to the center of the optimal face") {
  // max x + y s.t. x + y <= 1: the optimal face is the whole segment; the
  // least-norm point is (0.5, 0.5).
  LinearProgram lp;
  lp.objective.resize(2);
  lp.objective << 1, 1;
  lp.constraint_matrix.resize(1, 2);
  lp.constraint_matrix << 1, 1;
  lp.rhs.resize(1);
  lp.rhs << 1;
  lp.row_sense = {RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative, VarBound::NonNegative};
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  LpSolution refined = min_norm_refine(lp, sol);
  CHECK(refined.objective_value == doctest::Approx(1.0));
  CHECK(refined.variable_values[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(refined.variable_values[1] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(max_violation(lp, refined.variable_values) <= 1e-9);
}

TEST_CASE("min_norm_refine never increases the norm or breaks feasibility") {
  std::mt19937_64 rng(1234);
  for (int rep = 0; rep < 100; ++rep) {
    LinearProgram lp = random_lp(rng, 4, 6);
    LpSolution sol = solve_lp(lp);
    if (sol.status != LpStatus::Optimal) continue;
    LpSolution refined = min_norm_refine(lp, sol);
    CHECK(refined.variable_values.squaredNorm() <=
          sol.variable_values.squaredNorm() + 1e-10);
    CHECK(max_violation(lp, refined.variable_values) <= 1e-8);
    CHECK(refined.objective_value == doctest::Approx(sol.objective_value).epsilon(1e-7));
  }
}

TEST_CASE("validate rejects malformed programs") {
  LinearProgram lp;
  lp.objective.resize(2);
  lp.objective << 1, 1;
  lp.constraint_matrix.resize(1, 2);
  lp.constraint_matrix << 1, 1;
  lp.rhs.resize(2);  // wrong length
  lp.rhs << 1, 1;
  lp.row_sense = {RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative, VarBound::NonNegative};
  CHECK_THROWS_AS(solve_lp(lp), std::invalid_argument);
}

TEST_CASE("normal quantile and helpers") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-10));
  CHECK(normal_quantile(0.95) == doctest::Approx(1.6448536269514722).epsilon(1e-10));
  CHECK(normal_cdf(normal_quantile(0.31)) == doctest::Approx(0.31).epsilon(1e-12));
  // E[Z | Z <= median] = -2 * phi(0) = -sqrt(2/pi)
  CHECK(lower_tail_normal_mean(0.5) == doctest::Approx(-std::sqrt(2.0 / M_PI)).epsilon(1e-12));
  std::vector<double> v{3.0, 1.0, 2.0, 4.0};
  CHECK(empirical_quantile(v, 0.5) == 2.0);
  CHECK(empirical_quantile(v, 1.0) == 4.0);
  CHECK(empirical_quantile(v, 0.25) == 1.0);
}

TEST_CASE("single-variable box") {
  LinearProgram lp;
  lp.objective.resize(1);
  lp.objective << 1;
  lp.constraint_matrix.resize(1, 1);
  lp.constraint_matrix << 1;
  lp.rhs.resize(1);
  lp.rhs << 1;
  lp.row_sense = {RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative};
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective_value == doctest::Approx(1.0));
  CHECK(sol.variable_values[0] == doctest::Approx(1.0));
}

TEST_CASE("min_norm_refine leaves a unique optimum alone") {
  LinearProgram lp;
  lp.objective.resize(2);
  lp.objective << 3, 2;
  lp.constraint_matrix.resize(2, 2);
  lp.constraint_matrix << 1, 1, 1, 3;
  lp.rhs.resize(2);
  lp.rhs << 4, 6;
  lp.row_sense = {RowSense::LessEqual, RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::NonNegative, VarBound::NonNegative};
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  LpSolution refined = min_norm_refine(lp, sol);
  CHECK((refined.variable_values - sol.variable_values).norm() <= 1e-10);
}

TEST_CASE("min_norm_refine collapses a symmetric free ray to the origin") {
  // max 0 s.t. v0 + v1 <= 0, both free: any (t, -t) is optimal; least-norm
  // optimal point is (0, 0).
  LinearProgram lp;
  lp.objective = Eigen::VectorXd::Zero(2);
  lp.constraint_matrix.resize(1, 2);
  lp.constraint_matrix << 1, 1;
  lp.rhs = Eigen::VectorXd::Zero(1);
  lp.row_sense = {RowSense::LessEqual};
  lp.var_lower_bounds = {VarBound::Free, VarBound::Free};
  LpSolution sol;
  sol.status = LpStatus::Optimal;
  sol.variable_values.resize(2);
  sol.variable_values << 5.0, -5.0;
  sol.objective_value = 0.0;
  LpSolution refined = min_norm_refine(lp, sol);
  CHECK(refined.variable_values.norm() <= 1e-6);
}

TEST_CASE("min_norm_refine beats every optimal basic solution of a 2x2 OT dual") {
  // max 0.5 u0 + 0.5 u1 + 0.5 v0 + 0.5 v1  s.t. u_j + v_i <= c(j,i), free
  // vars. With constant cost the optimal face is {u_j + v_i = 1}; the basic
  // solutions fix one potential, so their norms exceed the centered choice.
  LinearProgram lp;
  lp.objective = Eigen::VectorXd::Constant(4, 0.5);
  lp.constraint_matrix.resize(4, 4);
  lp.constraint_matrix << 1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 0, 1;
  lp.rhs = Eigen::VectorXd::Ones(4);
  lp.row_sense.assign(4, RowSense::LessEqual);
  lp.var_lower_bounds.assign(4, VarBound::Free);
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  CHECK(sol.objective_value == doctest::Approx(1.0));
  LpSolution refined = min_norm_refine(lp, sol);
  // Brute force over optimal points of the form u = (t, t), v = (1-t, 1-t):
  // squared norm 2t^2 + 2(1-t)^2 minimized at t = 1/2 with value 1.
  CHECK(refined.variable_values.squaredNorm() <= 1.0 + 1e-6);
  CHECK(refined.objective_value == doctest::Approx(1.0));
  CHECK(max_violation(lp, refined.variable_values) <= 1e-8);
}

TEST_CASE("redundant equality row leaves the optimum unchanged") {
  LinearProgram base;
  base.objective.resize(2);
  base.objective << 2, 1;
  base.constraint_matrix.resize(1, 2);
  base.constraint_matrix << 1, 1;
  base.rhs.resize(1);
  base.rhs << 3;
  base.row_sense = {RowSense::Equal};
  base.var_lower_bounds = {VarBound::NonNegative, VarBound::NonNegative};
  LpSolution a = solve_lp(base);
  LinearProgram dup = base;
  dup.constraint_matrix.conservativeResize(2, 2);
  dup.constraint_matrix.row(1) << 2, 2;  // scaled copy of row 0
  dup.rhs.conservativeResize(2);
  dup.rhs[1] = 6;
  dup.row_sense.push_back(RowSense::Equal);
  LpSolution b = solve_lp(dup);
  REQUIRE(a.status == LpStatus::Optimal);
  REQUIRE(b.status == LpStatus::Optimal);
  CHECK(a.objective_value == doctest::Approx(b.objective_value).epsilon(1e-10));
}
