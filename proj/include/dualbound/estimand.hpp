#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dualbound {

/// One potential-outcome value: either a scalar y or a compound (y, s) pair
/// for selection problems. s < 0 marks the scalar case.
struct OutcomePoint {
  double y = 0.0;
  int s = -1;

  bool compound() const { return s >= 0; }
  static OutcomePoint scalar(double y) { return {y, -1}; }
  static OutcomePoint with_selection(double y, int s) { return {y, s}; }

  friend bool operator==(const OutcomePoint& a, const OutcomePoint& b) {
    return a.y == b.y && a.s == b.s;
  }
  friend bool operator<(const OutcomePoint& a, const OutcomePoint& b) {
    if (a.s != b.s) return a.s < b.s;
    return a.y < b.y;
  }
};

/// One of the user-specified constraint functions w(y0, y1) whose multiplier
/// relaxes the dual feasibility requirement.
struct ConstraintFunction {
  std::function<double(const OutcomePoint& y0, const OutcomePoint& y1)> evaluator;
  std::string label;
};

/// Full description of a partially identified estimand: the cost f(y0,y1,x),
/// optional constraint set, and how the final parameter is assembled from the
/// partially identified expectation (directly, through a smooth map of
/// identifiable moments, or by root search over a quasilinear family).
struct EstimandSpec {
  enum class Kind { Linear, Generalized, Quasilinear };
  enum class OutcomeShape { Scalar, Compound };

  std::string label;
  std::function<double(const OutcomePoint& y0, const OutcomePoint& y1, const Eigen::VectorXd& x)>
      cost_fn;
  std::vector<ConstraintFunction> constraints;
  Kind kind = Kind::Linear;
  OutcomeShape outcome_shape = OutcomeShape::Scalar;

  // Generalized kind: theta = h(beta, kappa1, kappa0) where beta is the
  // partially identified expectation and kappa_w = E[z_w(Y(w), X)] are
  // identifiable moments. h must be nondecreasing in its first argument.
  std::function<double(double beta, double kappa1, double kappa0)> h;
  std::function<Eigen::Vector3d(double beta, double kappa1, double kappa0)> grad_h;
  std::function<double(const OutcomePoint& y, const Eigen::VectorXd& x)> z0, z1;
  bool uses_z0 = false, uses_z1 = false;

  // Quasilinear kind: family of Linear specs indexed by the scan parameter c,
  // with theta = min { c : lower bound of family(c) <= 0 }.
  std::function<EstimandSpec(double c)> family;
  std::pair<double, double> bracket{0.0, 0.0};
  bool auto_bracket = true;  // widen the bracket from the observed outcome range
};

}  // namespace dualbound
