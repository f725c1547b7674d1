#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dualbound {

enum class RowSense { LessEqual, Equal };
enum class VarBound { NonNegative, Free };

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

/// A small dense linear program in maximization form:
///   max objective . x   s.t.  constraint_matrix x (<= or =) rhs,
/// with each variable either nonnegative or free.
struct LinearProgram {
  Eigen::VectorXd objective;
  Eigen::MatrixXd constraint_matrix;
  Eigen::VectorXd rhs;
  std::vector<RowSense> row_sense;
  std::vector<VarBound> var_lower_bounds;

  int n_vars() const { return static_cast<int>(objective.size()); }
  int n_cons() const { return static_cast<int>(rhs.size()); }
  void validate() const;  // throws std::invalid_argument on malformed input
};

struct LpSolution {
  Eigen::VectorXd variable_values;
  double objective_value = 0.0;
  LpStatus status = LpStatus::Infeasible;
  std::vector<int> basis;      // basic variable indices (slack rows as n_vars + row)
  Eigen::VectorXd row_duals;   // one multiplier per constraint row
  int iterations = 0;
};

/// Dual potentials of a finite optimal transport problem with the given
/// marginals: potentials_0[j] + potentials_1[i] <= cost(j, i) for every cell,
/// and the objective equals the primal minimum by strong duality.
struct TransportDual {
  Eigen::VectorXd potentials_0;
  Eigen::VectorXd potentials_1;
  double objective_value = 0.0;
};

constexpr double kPrimalTol = 1e-9;
constexpr double kReducedCostTol = 1e-9;

/// Revised simplex (Dantzig pricing, Bland fallback after a stall). Tall
/// programs are dualized internally so the working basis stays small.
LpSolution solve_lp(const LinearProgram& lp, int max_iters = 50000);

/// Network simplex on the transportation polytope; falls back to solve_lp on
/// the dual formulation if the specialized solver stalls.
TransportDual solve_ot_dual(const Eigen::VectorXd& pmf_0, const Eigen::VectorXd& pmf_1,
                            const Eigen::MatrixXd& cost);

/// Shrinks the solution toward the minimum-L2-norm point of the optimal face
/// (objective pinned, all constraints kept). Norm is measured over the first
/// n_norm_vars coordinates (-1 = all). Returns the input unchanged if the
/// refinement fails to produce a feasible improvement.
LpSolution min_norm_refine(const LinearProgram& lp, const LpSolution& solution,
                           int max_iters = 500, int n_norm_vars = -1);

/// Max constraint violation of x over the rows of lp (0 if feasible).
double max_violation(const LinearProgram& lp, const Eigen::VectorXd& x);

namespace detail {
struct TransportArc {
  int i, j;
  double flow;
};

// Transportation network simplex: min sum C(j,i) flow(j,i) with row sums
// supply and column sums demand (equal totals). Returns true on success and
// fills potentials u (supply side), v (demand side), and the basic arcs with
// their flows (an optimal coupling).
bool network_simplex_solve(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                           const Eigen::MatrixXd& cost, Eigen::VectorXd& u, Eigen::VectorXd& v,
                           std::vector<TransportArc>& arcs, int max_iters);

bool network_simplex_potentials(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                                const Eigen::MatrixXd& cost, Eigen::VectorXd& u,
                                Eigen::VectorXd& v, int max_iters);
}  // namespace detail

}  // namespace dualbound
