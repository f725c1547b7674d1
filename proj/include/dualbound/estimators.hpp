#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dualbound/dual_engine.hpp"
#include "dualbound/outcome_models.hpp"

namespace dualbound {

/// Per-observation summands: one column per working model, with optional
/// extra columns for identifiable moments, fold labels, and cluster labels.
struct SummandTable {
  Eigen::MatrixXd values;            // n x K
  Eigen::MatrixXd kappa_columns;     // n x J (J may be 0)
  std::vector<int> fold_of;          // size n (may be empty)
  std::vector<long long> cluster_of; // size n when clustered, else empty
  void validate() const;             // throws std::invalid_argument
};

enum class BoundSide { Lower, Upper };

struct BoundEstimate {
  double theta_hat = 0.0;
  double se = 0.0;
  double confidence_bound = 0.0;
  double alpha = 0.05;
  BoundSide side = BoundSide::Lower;
  int n_effective = 0;
  bool degenerate_variance = false;  // all summands (or cluster sums) equal
};

enum class IntervalMethod { TwoSidedBonferroni, ImbensManskiStoye };

struct IntervalEstimate {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  IntervalMethod method = IntervalMethod::TwoSidedBonferroni;
  double critical_value = 0.0;
};

/// S_i = nu1(Y_i) W_i / pi + nu0(Y_i) (1 - W_i) / (1 - pi). Compound duals
/// require the record's selection indicator.
double ipw_summand(const DualSolution& dual, const ObservationRecord& record, double propensity);

/// S_i = W_i (nu1 - c1) / pi + (1 - W_i)(nu0 - c0) / (1 - pi) + c1 + c0.
double aipw_summand(const DualSolution& dual, const ObservationRecord& record,
                    double propensity_hat, double c0_hat, double c1_hat);

/// Mean, (cluster-robust) standard error, and the one-sided normal bound
/// theta_hat -/+ z_{1-alpha} * se.
BoundEstimate one_sided_bound(const Eigen::VectorXd& summands, double alpha, BoundSide side,
                              const std::vector<long long>& cluster_of = {});

/// Pooled cross-fit bound over the given summand column: every row must be
/// scored (finite); mean/SD are pooled across folds.
BoundEstimate crossfit_bound(const SummandTable& table, double alpha, BoundSide side,
                             int column = 0);

/// Delta-method bound for theta = h(beta, kappa...): the gradient is verified
/// against central finite differences (1e-4 relative) at the estimate.
BoundEstimate delta_method_bound(const Eigen::VectorXd& beta_summands,
                                 const Eigen::MatrixXd& kappa_summands,
                                 const std::function<double(const Eigen::VectorXd&)>& h,
                                 const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_h,
                                 double alpha, BoundSide side,
                                 const std::vector<long long>& cluster_of = {});

/// Root of the nonincreasing map c -> LCB(c): returns min { c : LCB(c) <= 0 }
/// within tol by bisection, after a monotonicity check at the endpoints and 9
/// interior points; a detected violation falls back to a 200-point grid scan.
double quasilinear_bound(const std::function<double(double)>& lcb_of_c, double c_lo, double c_hi,
                         double tol);

/// Two-sided interval from a Lower and an Upper one-sided estimate. The
/// Imbens-Manski-Stoye critical value solves
///   Phi(c + Delta / max(se_L, se_U)) - Phi(-c) = 1 - alpha,
/// with Delta = max(theta_U - theta_L, 0), by bisection to 1e-8.
IntervalEstimate two_sided_interval(const BoundEstimate& lower_est, const BoundEstimate& upper_est,
                                    double corr, double alpha, IntervalMethod method);

}  // namespace dualbound
