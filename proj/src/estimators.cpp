#include "dualbound/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dualbound/math.hpp"

namespace dualbound {

void SummandTable::validate() const {
  const auto n = values.rows();
  if (n < 1 || values.cols() < 1)
    throw std::invalid_argument("SummandTable: values must be n x K with K >= 1");
  if (!values.allFinite()) throw std::invalid_argument("SummandTable: non-finite summand");
  if (kappa_columns.size() > 0) {
    if (kappa_columns.rows() != n)
      throw std::invalid_argument("SummandTable: kappa_columns row count mismatch");
    if (!kappa_columns.allFinite())
      throw std::invalid_argument("SummandTable: non-finite kappa column");
  }
  if (!fold_of.empty() && static_cast<long>(fold_of.size()) != n)
    throw std::invalid_argument("SummandTable: fold_of length mismatch");
  if (!cluster_of.empty() && static_cast<long>(cluster_of.size()) != n)
    throw std::invalid_argument("SummandTable: cluster_of length mismatch");
}

namespace {

OutcomePoint record_point(const DualSolution& dual, const ObservationRecord& record) {
  const auto& grid = record.treatment == 1 ? dual.grid_1 : dual.grid_0;
  bool compound = !grid.empty() && grid.front().s != -1;
  if (!compound) return OutcomePoint::scalar(record.outcome);
  if (record.selection != 0 && record.selection != 1)
    throw std::invalid_argument(
        "ipw_summand: compound dual requires a selection indicator on the record");
  return OutcomePoint::with_selection(record.outcome, record.selection);
}

// Mean and (cluster-robust) covariance of the sample mean of the given
// columns; cluster sums with the G/(G-1) correction when clustered.
void mean_and_mean_cov(const Eigen::MatrixXd& cols, const std::vector<long long>& cluster_of,
                       Eigen::VectorXd& mean, Eigen::MatrixXd& cov, int& n_groups,
                       bool& degenerate) {
  const auto n = cols.rows();
  const auto k = cols.cols();
  mean = cols.colwise().mean();
  Eigen::MatrixXd sums;  // one row per group (cluster or single observation)
  if (cluster_of.empty()) {
    sums = cols;
  } else {
    std::map<long long, int> index;
    for (long i = 0; i < n; ++i) index.emplace(cluster_of[i], static_cast<int>(index.size()));
    sums = Eigen::MatrixXd::Zero(static_cast<long>(index.size()), k);
    for (long i = 0; i < n; ++i) sums.row(index[cluster_of[i]]) += cols.row(i);
  }
  const auto g = sums.rows();
  n_groups = static_cast<int>(g);
  if (g < 2) throw std::invalid_argument("estimators: need at least two groups for a variance");
  Eigen::RowVectorXd gbar = sums.colwise().mean();
  Eigen::MatrixXd centered = sums.rowwise() - gbar;
  // Covariance of the mean: (G/(G-1)) * sum_g (T_g - Tbar)(T_g - Tbar)' / n^2.
  cov = (static_cast<double>(g) / (g - 1.0)) * (centered.transpose() * centered) /
        (static_cast<double>(n) * n);
  degenerate = centered.cwiseAbs().maxCoeff() == 0.0;
}

BoundEstimate make_bound(double theta, double se, double alpha, BoundSide side, int n_eff,
                         bool degenerate) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("one_sided_bound: alpha must be in (0,1)");
  BoundEstimate est;
  est.theta_hat = theta;
  est.se = se;
  est.alpha = alpha;
  est.side = side;
  est.n_effective = n_eff;
  est.degenerate_variance = degenerate;
  double z = normal_quantile(1.0 - alpha);
  est.confidence_bound = side == BoundSide::Lower ? theta - z * se : theta + z * se;
  return est;
}

}  // namespace

double ipw_summand(const DualSolution& dual, const ObservationRecord& record, double propensity) {
  if (!(propensity > 0.0 && propensity < 1.0))
    throw std::invalid_argument("ipw_summand: propensity must be strictly inside (0,1)");
  if (record.treatment != 0 && record.treatment != 1)
    throw std::invalid_argument("ipw_summand: treatment must be binary");
  OutcomePoint pt = record_point(dual, record);
  if (record.treatment == 1) return evaluate_dual(dual, 1, pt) / propensity;
  return evaluate_dual(dual, 0, pt) / (1.0 - propensity);
}

double aipw_summand(const DualSolution& dual, const ObservationRecord& record,
                    double propensity_hat, double c0_hat, double c1_hat) {
  if (!(propensity_hat > 0.0 && propensity_hat < 1.0))
    throw std::invalid_argument("aipw_summand: propensity must be strictly inside (0,1)");
  if (record.treatment != 0 && record.treatment != 1)
    throw std::invalid_argument("aipw_summand: treatment must be binary");
  OutcomePoint pt = record_point(dual, record);
  double resid = record.treatment == 1
                     ? (evaluate_dual(dual, 1, pt) - c1_hat) / propensity_hat
                     : (evaluate_dual(dual, 0, pt) - c0_hat) / (1.0 - propensity_hat);
  return resid + c0_hat + c1_hat;
}

BoundEstimate one_sided_bound(const Eigen::VectorXd& summands, double alpha, BoundSide side,
                              const std::vector<long long>& cluster_of) {
  if (summands.size() < 2)
    throw std::invalid_argument("one_sided_bound: need at least two summands");
  if (!summands.allFinite()) throw std::invalid_argument("one_sided_bound: non-finite summand");
  if (!cluster_of.empty() && static_cast<long>(cluster_of.size()) != summands.size())
    throw std::invalid_argument("one_sided_bound: cluster_of length mismatch");
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int groups = 0;
  bool degenerate = false;
  mean_and_mean_cov(summands, cluster_of, mean, cov, groups, degenerate);
  return make_bound(mean[0], std::sqrt(std::max(cov(0, 0), 0.0)), alpha, side,
                    static_cast<int>(summands.size()), degenerate);
}

BoundEstimate crossfit_bound(const SummandTable& table, double alpha, BoundSide side, int column) {
  const auto n = table.values.rows();
  if (column < 0 || column >= table.values.cols())
    throw std::invalid_argument("crossfit_bound: column out of range");
  if (table.fold_of.empty()) throw std::invalid_argument("crossfit_bound: fold labels required");
  if (static_cast<long>(table.fold_of.size()) != n)
    throw std::invalid_argument("crossfit_bound: fold_of length mismatch");
  Eigen::VectorXd col = table.values.col(column);
  for (long i = 0; i < n; ++i)
    if (!std::isfinite(col[i])) {
      std::ostringstream msg;
      msg << "crossfit_bound: observation " << i << " (fold " << table.fold_of[i]
          << ") was not scored";
      throw std::invalid_argument(msg.str());
    }
  return one_sided_bound(col, alpha, side, table.cluster_of);
}

BoundEstimate delta_method_bound(const Eigen::VectorXd& beta_summands,
                                 const Eigen::MatrixXd& kappa_summands,
                                 const std::function<double(const Eigen::VectorXd&)>& h,
                                 const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_h,
                                 double alpha, BoundSide side,
                                 const std::vector<long long>& cluster_of) {
  const auto n = beta_summands.size();
  if (n < 2) throw std::invalid_argument("delta_method_bound: need at least two rows");
  if (kappa_summands.size() > 0 && kappa_summands.rows() != n)
    throw std::invalid_argument("delta_method_bound: kappa row count mismatch");
  const auto j = kappa_summands.size() > 0 ? kappa_summands.cols() : 0;
  Eigen::MatrixXd cols(n, 1 + j);
  cols.col(0) = beta_summands;
  if (j > 0) cols.rightCols(j) = kappa_summands;

  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int groups = 0;
  bool degenerate = false;
  mean_and_mean_cov(cols, cluster_of, mean, cov, groups, degenerate);

  Eigen::VectorXd grad = grad_h(mean);
  if (grad.size() != 1 + j)
    throw std::invalid_argument("delta_method_bound: gradient dimension mismatch");
  // Central finite-difference verification of the supplied gradient.
  double scale0 = std::max(1.0, std::abs(h(mean)));
  for (long d = 0; d < 1 + j; ++d) {
    double step = 1e-6 * std::max(1.0, std::abs(mean[d]));
    Eigen::VectorXd hi = mean, lo = mean;
    hi[d] += step;
    lo[d] -= step;
    double fd = (h(hi) - h(lo)) / (2.0 * step);
    double tol = 1e-4 * std::max({1.0, std::abs(fd), std::abs(grad[d]), scale0});
    if (std::abs(fd - grad[d]) > tol) {
      std::ostringstream msg;
      msg << "delta_method_bound: gradient check failed in coordinate " << d << " (analytic "
          << grad[d] << ", finite difference " << fd << ")";
      throw std::invalid_argument(msg.str());
    }
  }
  double var = grad.dot(cov * grad);
  return make_bound(h(mean), std::sqrt(std::max(var, 0.0)), alpha, side, static_cast<int>(n),
                    degenerate);
}

double quasilinear_bound(const std::function<double(double)>& lcb_of_c, double c_lo, double c_hi,
                         double tol) {
  if (!(c_lo < c_hi)) throw std::invalid_argument("quasilinear_bound: empty bracket");
  if (!(tol > 0.0)) throw std::invalid_argument("quasilinear_bound: tol must be positive");
  // Endpoint + 9 interior evaluations: sign change and monotonicity screen.
  const int probes = 11;
  std::vector<double> cs(probes), fs(probes);
  for (int i = 0; i < probes; ++i) {
    cs[i] = c_lo + (c_hi - c_lo) * i / (probes - 1);
    fs[i] = lcb_of_c(cs[i]);
    if (!std::isfinite(fs[i]))
      throw std::invalid_argument("quasilinear_bound: non-finite bound value");
  }
  if (!(fs.front() > 0.0) || !(fs.back() <= 0.0)) {
    std::ostringstream msg;
    msg << "quasilinear_bound: no sign change in bracket (LCB(" << c_lo << ") = " << fs.front()
        << ", LCB(" << c_hi << ") = " << fs.back() << ")";
    throw std::invalid_argument(msg.str());
  }
  double slack = 1e-9 * (1.0 + std::abs(fs.front()) + std::abs(fs.back()));
  bool monotone = true;
  for (int i = 1; i < probes; ++i)
    if (fs[i] > fs[i - 1] + slack) monotone = false;

  if (!monotone) {
    // Grid fallback: the minimal crossing over 200 points.
    const int grid_n = 200;
    for (int i = 0; i < grid_n; ++i) {
      double c = c_lo + (c_hi - c_lo) * i / (grid_n - 1);
      if (lcb_of_c(c) <= 0.0) return c;
    }
    return c_hi;
  }

  // Bisection between the last positive probe and the first nonpositive one.
  double lo = c_lo, hi = c_hi, f_lo = fs.front();
  for (int i = 1; i < probes; ++i) {
    if (fs[i] <= 0.0) {
      hi = cs[i];
      break;
    }
    lo = cs[i];
    f_lo = fs[i];
  }
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    double f_mid = lcb_of_c(mid);
    if (f_mid > f_lo + slack) {
      // Monotonicity violated mid-run: fall back to the grid scan.
      const int grid_n = 200;
      for (int i = 0; i < grid_n; ++i) {
        double c = c_lo + (c_hi - c_lo) * i / (grid_n - 1);
        if (lcb_of_c(c) <= 0.0) return c;
      }
      return c_hi;
    }
    if (f_mid <= 0.0)
      hi = mid;
    else {
      lo = mid;
      f_lo = f_mid;
    }
  }
  return hi;
}

IntervalEstimate two_sided_interval(const BoundEstimate& lower_est, const BoundEstimate& upper_est,
                                    double corr, double alpha, IntervalMethod method) {
  if (lower_est.side != BoundSide::Lower || upper_est.side != BoundSide::Upper)
    throw std::invalid_argument("two_sided_interval: need one Lower and one Upper estimate");
  if (!(corr >= -1.0 && corr <= 1.0))
    throw std::invalid_argument("two_sided_interval: corr must lie in [-1,1]");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("two_sided_interval: alpha must be in (0,1)");

  IntervalEstimate out;
  out.alpha = alpha;
  out.method = method;
  double c;
  if (method == IntervalMethod::TwoSidedBonferroni) {
    c = normal_quantile(1.0 - alpha / 2.0);
  } else {
    double delta = std::max(upper_est.theta_hat - lower_est.theta_hat, 0.0);
    double sig = std::max(lower_est.se, upper_est.se);
    if (sig <= 0.0) {
      c = delta > 0.0 ? normal_quantile(1.0 - alpha) : normal_quantile(1.0 - alpha / 2.0);
    } else {
      double r = delta / sig;
      auto eq = [&](double cc) { return normal_cdf(cc + r) - normal_cdf(-cc) - (1.0 - alpha); };
      double lo = 0.0, hi = normal_quantile(1.0 - alpha / 2.0) + 1.0;
      while (hi - lo > 1e-8) {
        double mid = 0.5 * (lo + hi);
        if (eq(mid) < 0.0)
          lo = mid;
        else
          hi = mid;
      }
      c = 0.5 * (lo + hi);
    }
  }
  out.critical_value = c;
  out.lower = lower_est.theta_hat - c * lower_est.se;
  out.upper = upper_est.theta_hat + c * upper_est.se;
  if (out.lower > out.upper) out.lower = out.upper = 0.5 * (out.lower + out.upper);
  return out;
}

}  // namespace dualbound
