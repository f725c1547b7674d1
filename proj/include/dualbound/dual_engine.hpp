#pragma once

#include <functional>
#include <vector>

#include "dualbound/estimand.hpp"
#include "dualbound/lp.hpp"

namespace dualbound {

/// Finite-support law of one potential-outcome arm at one covariate value.
struct DiscreteLaw {
  std::vector<OutcomePoint> support;
  Eigen::VectorXd pmf;

  int size() const { return static_cast<int>(support.size()); }
  void validate() const;  // throws std::invalid_argument
  double mean_y() const;
};

/// Quantile-grid discretization: support at the j/(nvals+1) quantiles,
/// j = 1..nvals, uniform masses, duplicates merged.
DiscreteLaw discretize_law(const std::function<OutcomePoint(double)>& quantile_fn, int nvals);

/// Compound-outcome discretization for selection problems: the s=1 stratum
/// carries a quantile grid of Y | S=1 with total mass p_selected; the s=0
/// stratum carries a single inert point (y = 0).
DiscreteLaw discretize_joint_law(double p_selected, const std::function<double(double)>& y_quantile_fn,
                                 int nvals);

/// Dual variables for one covariate value: piecewise-linear functions given by
/// values on each arm's grid, constraint multipliers, and the feasibility
/// adjustment already subtracted from the values. Values are stored in the
/// "lower convention" against the effective cost (f for lower bounds, -f for
/// upper bounds); objective_value is on the estimand scale (negated back for
/// upper bounds).
struct DualSolution {
  std::vector<OutcomePoint> grid_0, grid_1;
  Eigen::VectorXd values_0, values_1;
  Eigen::VectorXd multipliers;
  double adjustment = 0.0;
  double objective_value = 0.0;
  bool is_upper = false;
};

struct DualSolveOptions {
  bool upper = false;
  bool min_norm = false;
  int max_iters = 50000;
  // Warm-start guess for the single constraint multiplier (< 0 = none); used
  // by the fast Lagrangian path when exactly one constraint is present.
  double lambda_hint = -1.0;
};

/// The discrete conditional dual LP: variables (nu_0 block, nu_1 block,
/// lambda block); one <= row per support pair plus one -lambda_l <= 0 row per
/// constraint; objective is the plug-in dual value, maximized.
LinearProgram assemble_conditional_lp(const EstimandSpec& spec, const Eigen::VectorXd& x,
                                      const DiscreteLaw& law_0, const DiscreteLaw& law_1);

DualSolution solve_conditional_dual(const EstimandSpec& spec, const Eigen::VectorXd& x,
                                    const DiscreteLaw& law_0, const DiscreteLaw& law_1,
                                    const DualSolveOptions& options = {});

/// Grid-search feasibility repair: measures the worst violation of the dual
/// constraint over eval_grid_0 x eval_grid_1, subtracts half of it (floored at
/// zero) from both arms' values.
DualSolution feasibility_adjust(const DualSolution& solution, const EstimandSpec& spec,
                                const Eigen::VectorXd& x,
                                const std::vector<OutcomePoint>& eval_grid_0,
                                const std::vector<OutcomePoint>& eval_grid_1);

/// Piecewise-linear interpolation of the stored dual values; constant
/// extrapolation beyond the grid hull; compound points interpolate within the
/// matching s-stratum.
double evaluate_dual(const DualSolution& solution, int arm, const OutcomePoint& y);

/// E_law[ nu_arm(Y) ] under the given discrete law.
double conditional_mean_of_dual(const DualSolution& solution, int arm, const DiscreteLaw& law);

}  // namespace dualbound
