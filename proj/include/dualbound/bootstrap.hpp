#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dualbound/estimators.hpp"

namespace dualbound {

/// Multiplier-bootstrap selection result across K candidate models.
struct MbResult {
  double q_hat = 0.0;
  int selected_k = 0;  // zero-based; ties broken by the smallest index
  double lcb = 0.0;
  std::vector<std::pair<double, double>> per_model;  // (theta_k, sigma_k)
  int n_draws = 0;
  std::uint64_t seed = 0;
};

/// (1-alpha) empirical quantile of T^(b) = max_k sigma_k^{-1} n^{-1/2}
/// sum_i W_i (S_ik - theta_k) over n_draws Gaussian multiplier vectors W.
double multiplier_bootstrap_quantile(const SummandTable& table, double alpha, int n_draws,
                                     std::uint64_t seed);

/// Tightest lower bound across models: max_k (theta_k - q_hat sigma_k / sqrt(n)).
MbResult mb_select_lcb(const SummandTable& table, double alpha, int n_draws, std::uint64_t seed);

/// Cross-fit/delta-method variant: each model k maps its own beta column and
/// the shared kappa columns through h_k; q_hat is the (1-alpha) quantile of
/// the max of a N(0, C_H) vector, where C_H is the correlation matrix of the
/// delta-method covariance grad_H Sigma_full grad_H'.
MbResult crossfit_generalized_mb(
    const Eigen::MatrixXd& beta_columns, const Eigen::MatrixXd& kappa_columns,
    const std::vector<std::function<double(const Eigen::VectorXd&)>>& h,
    const std::vector<std::function<Eigen::VectorXd(const Eigen::VectorXd&)>>& grad_h,
    double alpha, int n_draws, std::uint64_t seed);

}  // namespace dualbound
