#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "dualbound/estimand.hpp"

namespace dualbound {

/// One observation: covariates, treatment arm, outcome, and the optional
/// selection indicator / cluster id / known propensity.
struct ObservationRecord {
  Eigen::VectorXd covariates;
  int treatment = 0;        // W in {0,1}
  double outcome = 0.0;     // Y
  int selection = -1;       // S in {0,1}; -1 = not recorded
  long long cluster_id = -1;  // -1 = no clustering
  double propensity = -1.0;   // known P(W=1|X); -1 = not recorded
};

/// Deterministic partition of [0, n) into near-equal folds.
struct FoldAssignment {
  int n = 0;
  int n_folds = 0;
  std::vector<int> fold_of;
  std::uint64_t seed = 0;
};

FoldAssignment make_folds(int n, int n_folds, std::uint64_t seed);

/// Feature map phi(x, w) = [1, x, w, w*x].
Eigen::VectorXd feature_map(const Eigen::VectorXd& x, int w);

struct RidgeFit {
  Eigen::VectorXd coefficients;  // aligned with the design columns; column 0
                                 // is treated as the unpenalized intercept
  double lambda = 0.0;
  double cv_mse = 0.0;
};

/// 20-point logarithmic grid over [1e-4, 1e4].
std::vector<double> default_lambda_grid();

/// Closed-form ridge with an unpenalized intercept (design column 0), the
/// penalty chosen by inner k-fold CV mean squared error. Ties prefer the
/// larger penalty. A lambda that leaves the Gram matrix singular is skipped.
RidgeFit fit_ridge_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                      const std::vector<double>& lambda_grid, int n_folds_inner,
                      std::uint64_t seed);

/// L2-penalized logistic regression (intercept unpenalized) by damped Newton;
/// returns coefficients with penalized-likelihood gradient norm <= 1e-8.
Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& design, const std::vector<int>& targets,
                             double l2_penalty, int max_newton_iters = 100);

/// A fitted working model of Y | X, W (optionally jointly with S | X, W),
/// exposed to the dual engine as conditional quantile functions.
struct ConditionalLawModel {
  enum class Kind { GaussianLinear, EmpiricalResidualLinear, JointSelectionOutcome };
  Kind kind = Kind::GaussianLinear;
  Eigen::VectorXd beta;  // outcome coefficients over feature_map
  double sigma = 0.0;    // Gaussian kinds
  std::vector<double> residual_pool_0, residual_pool_1;  // sorted, per arm
  Eigen::VectorXd selection_beta;  // logistic coefficients, Joint kind
};

/// Fits the requested model kind on the given rows with the default feature
/// map. The Joint kind fits the selection logistic on all rows and the
/// outcome model on the selected rows only, with per-arm residual pools.
ConditionalLawModel fit_conditional_law_model(const std::vector<ObservationRecord>& rows,
                                              ConditionalLawModel::Kind kind,
                                              std::uint64_t seed);

double model_mean(const ConditionalLawModel& model, const Eigen::VectorXd& x, int arm);
double selection_probability(const ConditionalLawModel& model, const Eigen::VectorXd& x, int arm);

/// Conditional quantile map u -> OutcomePoint for discretization. Scalar kinds
/// return scalar points; the Joint kind returns compound points whose s=0
/// stratum occupies the lower (1 - P(S=1|x,arm)) quantile range.
std::function<OutcomePoint(double)> conditional_quantile_fn(const ConditionalLawModel& model,
                                                            const Eigen::VectorXd& x, int arm);

enum class PropensityMethod { Known, LogisticCV };

/// Returns the propensity map, clipped to [gamma, 1 - gamma]. Known reads the
/// recorded per-row propensity; LogisticCV fits a cross-validated logistic
/// ridge of W on [1, x].
std::function<double(const ObservationRecord&)> fit_propensity(
    const std::vector<ObservationRecord>& rows, PropensityMethod method, double gamma,
    std::uint64_t seed);

}  // namespace dualbound
