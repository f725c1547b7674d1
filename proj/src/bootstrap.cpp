#include "dualbound/bootstrap.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dualbound/math.hpp"

namespace dualbound {

namespace {

constexpr int kMaxModels = 10000;

void column_moments(const Eigen::MatrixXd& values, Eigen::VectorXd& theta, Eigen::VectorXd& sigma) {
  const auto k = values.cols();
  theta = values.colwise().mean();
  sigma.resize(k);
  for (long c = 0; c < k; ++c) {
    sigma[c] = sample_sd(values.col(c));
    if (!(sigma[c] > 0.0)) {
      std::ostringstream msg;
      msg << "multiplier bootstrap: column " << c << " has zero variance";
      throw std::invalid_argument(msg.str());
    }
  }
}

void check_mb_inputs(long k, double alpha, int n_draws) {
  if (k > kMaxModels) throw std::invalid_argument("multiplier bootstrap: too many models");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("multiplier bootstrap: alpha must be in (0,1)");
  if (n_draws < 1000) throw std::invalid_argument("multiplier bootstrap: n_draws must be >= 1000");
}

}  // namespace

double multiplier_bootstrap_quantile(const SummandTable& table, double alpha, int n_draws,
                                     std::uint64_t seed) {
  table.validate();
  const auto n = table.values.rows();
  const auto k = table.values.cols();
  check_mb_inputs(k, alpha, n_draws);
  if (n < 2) throw std::invalid_argument("multiplier bootstrap: need at least two rows");

  Eigen::VectorXd theta, sigma;
  column_moments(table.values, theta, sigma);
  Eigen::MatrixXd centered = table.values.rowwise() - theta.transpose();
  // Standardize columns up front: T^(b) = max_k w' centered_k / (sigma_k sqrt(n)).
  for (long c = 0; c < k; ++c) centered.col(c) /= sigma[c] * std::sqrt(static_cast<double>(n));

  NormalSampler normal(seed);
  Eigen::VectorXd w(n);
  std::vector<double> t(n_draws);
  for (int b = 0; b < n_draws; ++b) {
    for (long i = 0; i < n; ++i) w[i] = normal();
    t[b] = (w.transpose() * centered).maxCoeff();
  }
  return empirical_quantile(std::move(t), 1.0 - alpha);
}

MbResult mb_select_lcb(const SummandTable& table, double alpha, int n_draws, std::uint64_t seed) {
  MbResult out;
  out.q_hat = multiplier_bootstrap_quantile(table, alpha, n_draws, seed);
  out.n_draws = n_draws;
  out.seed = seed;
  const auto n = table.values.rows();
  Eigen::VectorXd theta, sigma;
  column_moments(table.values, theta, sigma);
  out.lcb = -std::numeric_limits<double>::infinity();
  for (long c = 0; c < table.values.cols(); ++c) {
    double sig = sigma[c];
    out.per_model.emplace_back(theta[c], sig);
    double cb = theta[c] - out.q_hat * sig / std::sqrt(static_cast<double>(n));
    if (cb > out.lcb) {
      out.lcb = cb;
      out.selected_k = static_cast<int>(c);
    }
  }
  return out;
}

MbResult crossfit_generalized_mb(
    const Eigen::MatrixXd& beta_columns, const Eigen::MatrixXd& kappa_columns,
    const std::vector<std::function<double(const Eigen::VectorXd&)>>& h,
    const std::vector<std::function<Eigen::VectorXd(const Eigen::VectorXd&)>>& grad_h,
    double alpha, int n_draws, std::uint64_t seed) {
  const auto n = beta_columns.rows();
  const auto k = beta_columns.cols();
  const auto j = kappa_columns.size() > 0 ? kappa_columns.cols() : 0;
  check_mb_inputs(k, alpha, n_draws);
  if (n < 2) throw std::invalid_argument("crossfit_generalized_mb: need at least two rows");
  if (static_cast<long>(h.size()) != k || static_cast<long>(grad_h.size()) != k)
    throw std::invalid_argument("crossfit_generalized_mb: one h/grad_h per model required");
  if (j > 0 && kappa_columns.rows() != n)
    throw std::invalid_argument("crossfit_generalized_mb: kappa row count mismatch");
  if (!beta_columns.allFinite() || (j > 0 && !kappa_columns.allFinite()))
    throw std::invalid_argument("crossfit_generalized_mb: non-finite summand");

  Eigen::MatrixXd full(n, k + j);
  full.leftCols(k) = beta_columns;
  if (j > 0) full.rightCols(j) = kappa_columns;
  Eigen::VectorXd mean = full.colwise().mean();
  Eigen::MatrixXd centered = full.rowwise() - mean.transpose();
  Eigen::MatrixXd sigma_full = centered.transpose() * centered / static_cast<double>(n - 1);

  // Per-model delta-method variance and the K x K covariance grad_H S grad_H'.
  Eigen::MatrixXd grads = Eigen::MatrixXd::Zero(k, k + j);
  Eigen::VectorXd theta(k);
  for (long m = 0; m < k; ++m) {
    Eigen::VectorXd arg(1 + j);
    arg[0] = mean[m];
    if (j > 0) arg.tail(j) = mean.tail(j);
    theta[m] = h[m](arg);
    Eigen::VectorXd g = grad_h[m](arg);
    if (g.size() != 1 + j)
      throw std::invalid_argument("crossfit_generalized_mb: gradient dimension mismatch");
    grads(m, m) = g[0];
    if (j > 0) grads.row(m).tail(j) = g.tail(j).transpose();
  }
  Eigen::MatrixXd v = grads * sigma_full * grads.transpose();
  Eigen::VectorXd sigma(k);
  for (long m = 0; m < k; ++m) {
    sigma[m] = std::sqrt(std::max(v(m, m), 0.0));
    if (!(sigma[m] > 0.0)) {
      std::ostringstream msg;
      msg << "crossfit_generalized_mb: model " << m << " has zero variance";
      throw std::invalid_argument(msg.str());
    }
  }
  Eigen::MatrixXd corr(k, k);
  for (long a = 0; a < k; ++a)
    for (long b = 0; b < k; ++b) corr(a, b) = v(a, b) / (sigma[a] * sigma[b]);

  // Cholesky with escalating diagonal jitter for rank-deficient correlations.
  Eigen::MatrixXd chol;
  bool ok = false;
  for (double jitter = 0.0; jitter <= 1e-6; jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0) {
    Eigen::MatrixXd c = corr + jitter * Eigen::MatrixXd::Identity(k, k);
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() == Eigen::Success) {
      chol = llt.matrixL();
      ok = true;
      break;
    }
    if (jitter == 1e-6) break;
  }
  if (!ok)
    throw std::runtime_error("crossfit_generalized_mb: correlation matrix not PSD after jitter");

  NormalSampler normal(seed);
  Eigen::VectorXd g(k);
  std::vector<double> t(n_draws);
  for (int b = 0; b < n_draws; ++b) {
    for (long m = 0; m < k; ++m) g[m] = normal();
    t[b] = (chol * g).maxCoeff();
  }
  MbResult out;
  out.q_hat = empirical_quantile(std::move(t), 1.0 - alpha);
  out.n_draws = n_draws;
  out.seed = seed;
  out.lcb = -std::numeric_limits<double>::infinity();
  for (long m = 0; m < k; ++m) {
    out.per_model.emplace_back(theta[m], sigma[m]);
    double cb = theta[m] - out.q_hat * sigma[m] / std::sqrt(static_cast<double>(n));
    if (cb > out.lcb) {
      out.lcb = cb;
      out.selected_k = static_cast<int>(m);
    }
  }
  return out;
}

}  // namespace dualbound
