#include "dualbound/outcome_models.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dualbound/math.hpp"

namespace dualbound {

FoldAssignment make_folds(int n, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw std::invalid_argument("make_folds: n_folds must be >= 2");
  if (n_folds > n) throw std::invalid_argument("make_folds: n_folds exceeds n");
  FoldAssignment fa;
  fa.n = n;
  fa.n_folds = n_folds;
  fa.seed = seed;
  fa.fold_of.resize(n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (int i = 0; i < n; ++i) fa.fold_of[order[i]] = i % n_folds;
  return fa;
}

Eigen::VectorXd feature_map(const Eigen::VectorXd& x, int w) {
  const auto p = x.size();
  Eigen::VectorXd phi(2 * p + 2);
  phi[0] = 1.0;
  phi.segment(1, p) = x;
  phi[p + 1] = static_cast<double>(w);
  phi.segment(p + 2, p) = static_cast<double>(w) * x;
  return phi;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid(20);
  for (int i = 0; i < 20; ++i) grid[i] = std::pow(10.0, -4.0 + 8.0 * i / 19.0);
  return grid;
}

namespace {

// Ridge with an unpenalized intercept (column 0), from precomputed moments
// G = X'X and rhs = X'y. Returns false when the penalized Gram matrix is
// numerically singular.
bool ridge_solve_gram(Eigen::MatrixXd G, const Eigen::VectorXd& rhs, double lambda,
                      Eigen::VectorXd& beta) {
  const auto p = G.cols();
  for (long k = 1; k < p; ++k) G(k, k) += lambda;
  // Jacobi scaling keeps the rank decision meaningful when the penalty and
  // the Gram entries live on very different scales.
  Eigen::VectorXd d = G.diagonal().cwiseMax(1e-300).cwiseSqrt();
  Eigen::MatrixXd Gs = d.cwiseInverse().asDiagonal() * G * d.cwiseInverse().asDiagonal();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Gs);
  lu.setThreshold(1e-10);
  if (lu.rank() < p) return false;
  Eigen::VectorXd z = lu.solve(d.cwiseInverse().asDiagonal() * rhs);
  beta = d.cwiseInverse().asDiagonal() * z;
  return true;
}

bool ridge_solve(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                 Eigen::VectorXd& beta) {
  return ridge_solve_gram(X.transpose() * X, X.transpose() * y, lambda, beta);
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }

double logistic_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& t,
                          double lambda, const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = X * beta;
  double obj = 0.0;
  for (long i = 0; i < eta.size(); ++i) obj += softplus(eta[i]) - t[i] * eta[i];
  obj += 0.5 * lambda * beta.tail(beta.size() - 1).squaredNorm();
  return obj;
}

// Damped-Newton core shared by the public fitter and the CV grid search; the
// grid search warm-starts each penalty from the previous one's solution.
Eigen::VectorXd fit_logistic_newton(const Eigen::MatrixXd& design, const Eigen::VectorXd& t,
                                    double l2_penalty, int max_newton_iters,
                                    Eigen::VectorXd beta) {
  const int n = static_cast<int>(design.rows());
  const auto p = design.cols();
  double obj = logistic_objective(design, t, l2_penalty, beta);
  for (int iter = 0; iter < max_newton_iters; ++iter) {
    Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd prob(n), w(n);
    for (int i = 0; i < n; ++i) {
      prob[i] = sigmoid(eta[i]);
      w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
    }
    Eigen::VectorXd grad = design.transpose() * (prob - t);
    grad.tail(p - 1) += l2_penalty * beta.tail(p - 1);
    if (grad.norm() <= 1e-8) {
      if (l2_penalty == 0.0 && (prob - t).cwiseAbs().maxCoeff() < 1e-4)
        throw std::runtime_error(
            "fit_logistic: data appear perfectly separated; set l2_penalty > 0");
      return beta;
    }
    Eigen::MatrixXd H = design.transpose() * w.asDiagonal() * design;
    for (long k = 1; k < p; ++k) H(k, k) += l2_penalty;
    for (long k = 0; k < p; ++k) H(k, k) += 1e-12;
    Eigen::VectorXd step = H.ldlt().solve(grad);
    double s = 1.0;
    double descent = grad.dot(step);
    if (descent <= 1e-12 * (1.0 + std::abs(obj))) {
      // Predicted decrease is below rounding resolution; the damped search
      // cannot certify progress, so take the full Newton step directly.
      beta -= step;
      obj = logistic_objective(design, t, l2_penalty, beta);
      continue;
    }
    for (int half = 0; half < 50; ++half) {
      double cand = logistic_objective(design, t, l2_penalty, beta - s * step);
      if (cand <= obj - 1e-4 * s * descent) {
        beta -= s * step;
        obj = cand;
        break;
      }
      s *= 0.5;
    }
  }
  std::string msg = "fit_logistic: Newton iteration limit reached";
  if (l2_penalty == 0.0) msg += " (possible separation; set l2_penalty > 0)";
  throw std::runtime_error(msg);
}

// Cross-validated penalty for a logistic ridge by out-of-fold log loss; ties
// prefer the larger penalty.
Eigen::VectorXd fit_logistic_cv(const Eigen::MatrixXd& X, const std::vector<int>& targets,
                                std::uint64_t seed) {
  const int n = static_cast<int>(X.rows());
  std::vector<double> grid = default_lambda_grid();
  std::sort(grid.begin(), grid.end());
  const int k = std::min(5, n);
  FoldAssignment folds = make_folds(n, k, seed);
  // Fold designs are penalty-independent; build them once.
  struct FoldData {
    Eigen::MatrixXd X;
    Eigen::VectorXd t;
    std::vector<int> test;
    Eigen::VectorXd warm;
    bool has_warm = false;
  };
  std::vector<FoldData> fd(k);
  for (int f = 0; f < k; ++f) {
    std::vector<int> train;
    for (int i = 0; i < n; ++i) (folds.fold_of[i] == f ? fd[f].test : train).push_back(i);
    fd[f].X.resize(train.size(), X.cols());
    fd[f].t.resize(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) {
      fd[f].X.row(static_cast<long>(r)) = X.row(train[r]);
      fd[f].t[static_cast<long>(r)] = targets[train[r]];
    }
  }
  double best_loss = std::numeric_limits<double>::infinity();
  double best_lambda = grid.back();
  for (double lam : grid) {
    double loss = 0.0;
    int held = 0;
    bool ok = true;
    for (int f = 0; f < k && ok; ++f) {
      Eigen::VectorXd b;
      try {
        Eigen::VectorXd init =
            fd[f].has_warm ? fd[f].warm : Eigen::VectorXd::Zero(X.cols()).eval();
        b = fit_logistic_newton(fd[f].X, fd[f].t, lam, 100, init);
      } catch (const std::runtime_error&) {
        ok = false;
        break;
      }
      fd[f].warm = b;
      fd[f].has_warm = true;
      for (int i : fd[f].test) {
        double eta = X.row(i).dot(b);
        loss += softplus(eta) - targets[i] * eta;
        ++held;
      }
    }
    if (!ok || held == 0) continue;
    loss /= held;
    if (loss <= best_loss) {
      best_loss = loss;
      best_lambda = lam;
    }
  }
  return fit_logistic(X, targets, best_lambda);
}

double pool_quantile(const std::vector<double>& sorted_pool, double u) {
  auto n = static_cast<std::ptrdiff_t>(sorted_pool.size());
  std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(std::ceil(u * static_cast<double>(n))) - 1;
  idx = std::clamp<std::ptrdiff_t>(idx, 0, n - 1);
  return sorted_pool[static_cast<std::size_t>(idx)];
}

}  // namespace

RidgeFit fit_ridge_cv(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                      const std::vector<double>& lambda_grid, int n_folds_inner,
                      std::uint64_t seed) {
  const int n = static_cast<int>(design.rows());
  if (design.rows() != response.size())
    throw std::invalid_argument("fit_ridge_cv: design/response length mismatch");
  if (!design.allFinite() || !response.allFinite())
    throw std::invalid_argument("fit_ridge_cv: non-finite input");
  if (lambda_grid.empty()) throw std::invalid_argument("fit_ridge_cv: empty lambda grid");
  std::vector<double> grid = lambda_grid;
  std::sort(grid.begin(), grid.end());

  RidgeFit fit;
  if (grid.size() == 1) {
    if (!ridge_solve(design, response, grid[0], fit.coefficients))
      throw std::invalid_argument("fit_ridge_cv: singular system at the only penalty value");
    fit.lambda = grid[0];
    return fit;
  }

  const int k = std::clamp(n_folds_inner, 2, n);
  FoldAssignment folds = make_folds(n, k, seed);
  // Per-fold training moments are independent of the penalty; compute them
  // once so the grid search only pays a small dense solve per (fold, lambda).
  struct FoldMoments {
    Eigen::MatrixXd gram;
    Eigen::VectorXd rhs;
    std::vector<int> test;
  };
  std::vector<FoldMoments> fm(k);
  for (int f = 0; f < k; ++f) {
    std::vector<int> train;
    for (int i = 0; i < n; ++i) (folds.fold_of[i] == f ? fm[f].test : train).push_back(i);
    Eigen::MatrixXd Xt(train.size(), design.cols());
    Eigen::VectorXd yt(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) {
      Xt.row(static_cast<long>(r)) = design.row(train[r]);
      yt[static_cast<long>(r)] = response[train[r]];
    }
    fm[f].gram = Xt.transpose() * Xt;
    fm[f].rhs = Xt.transpose() * yt;
  }
  std::vector<double> mses(grid.size(), std::numeric_limits<double>::infinity());
  std::vector<double> ses(grid.size(), 0.0);
  bool warned = false;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double lam = grid[g];
    std::vector<double> fold_mse;
    bool ok = true;
    for (int f = 0; f < k; ++f) {
      Eigen::VectorXd b;
      if (!ridge_solve_gram(fm[f].gram, fm[f].rhs, lam, b)) {
        ok = false;
        break;
      }
      double sse = 0.0;
      for (int i : fm[f].test) {
        double e = response[i] - design.row(i).dot(b);
        sse += e * e;
      }
      fold_mse.push_back(sse / fm[f].test.size());
    }
    if (!ok) {
      if (!warned) {
        std::cerr << "fit_ridge_cv: skipping penalty " << lam << " (singular system)\n";
        warned = true;
      }
      continue;
    }
    double m = 0.0;
    for (double v : fold_mse) m += v / fold_mse.size();
    double var = 0.0;
    for (double v : fold_mse) var += (v - m) * (v - m);
    mses[g] = m;
    ses[g] = fold_mse.size() > 1
                 ? std::sqrt(var / (fold_mse.size() - 1) / fold_mse.size())
                 : 0.0;
  }
  std::size_t arg = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < grid.size(); ++g)
    if (mses[g] < best_mse) {
      best_mse = mses[g];
      arg = g;
    }
  if (!std::isfinite(best_mse))
    throw std::invalid_argument("fit_ridge_cv: every penalty left the system singular");
  // One-standard-error rule: the largest penalty within one SE of the best.
  std::size_t pick = arg;
  for (std::size_t g = grid.size(); g-- > arg + 1;)
    if (mses[g] <= best_mse + ses[arg]) {
      pick = g;
      break;
    }
  double best_lambda = grid[pick];
  fit.cv_mse = mses[pick];
  if (!ridge_solve(design, response, best_lambda, fit.coefficients))
    throw std::invalid_argument("fit_ridge_cv: singular system at the selected penalty");
  fit.lambda = best_lambda;
  return fit;
}

Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& design, const std::vector<int>& targets,
                             double l2_penalty, int max_newton_iters) {
  const int n = static_cast<int>(design.rows());
  const auto p = design.cols();
  if (n != static_cast<int>(targets.size()))
    throw std::invalid_argument("fit_logistic: design/targets length mismatch");
  for (int t : targets)
    if (t != 0 && t != 1) throw std::invalid_argument("fit_logistic: targets must be binary");
  if (l2_penalty < 0) throw std::invalid_argument("fit_logistic: negative penalty");

  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) t[i] = targets[i];
  return fit_logistic_newton(design, t, l2_penalty, max_newton_iters,
                             Eigen::VectorXd::Zero(p));
}

ConditionalLawModel fit_conditional_law_model(const std::vector<ObservationRecord>& rows,
                                              ConditionalLawModel::Kind kind,
                                              std::uint64_t seed) {
  const int n = static_cast<int>(rows.size());
  if (n < 4) throw std::invalid_argument("fit_conditional_law_model: too few rows");
  for (const auto& r : rows) {
    if (!r.covariates.allFinite() || !std::isfinite(r.outcome))
      throw std::invalid_argument("fit_conditional_law_model: non-finite row");
    if (r.treatment != 0 && r.treatment != 1)
      throw std::invalid_argument("fit_conditional_law_model: treatment must be binary");
  }

  ConditionalLawModel model;
  model.kind = kind;
  const bool joint = kind == ConditionalLawModel::Kind::JointSelectionOutcome;

  std::vector<int> outcome_rows;  // rows entering the outcome regression
  for (int i = 0; i < n; ++i) {
    if (joint) {
      if (rows[i].selection != 0 && rows[i].selection != 1)
        throw std::invalid_argument(
            "fit_conditional_law_model: Joint kind requires a selection indicator on every row");
      if (rows[i].selection == 1) outcome_rows.push_back(i);
    } else {
      outcome_rows.push_back(i);
    }
  }
  if (outcome_rows.empty())
    throw std::invalid_argument("fit_conditional_law_model: no rows for the outcome model");

  const auto dim = feature_map(rows[0].covariates, 0).size();
  Eigen::MatrixXd X(outcome_rows.size(), dim);
  Eigen::VectorXd y(outcome_rows.size());
  for (std::size_t r = 0; r < outcome_rows.size(); ++r) {
    const auto& rec = rows[outcome_rows[r]];
    X.row(static_cast<long>(r)) = feature_map(rec.covariates, rec.treatment);
    y[static_cast<long>(r)] = rec.outcome;
  }
  RidgeFit fit = fit_ridge_cv(X, y, default_lambda_grid(), 5, seed);
  model.beta = fit.coefficients;

  Eigen::VectorXd resid = y - X * model.beta;
  model.sigma = std::max(sample_sd(resid), 1e-8);
  for (std::size_t r = 0; r < outcome_rows.size(); ++r) {
    auto& pool = rows[outcome_rows[r]].treatment == 1 ? model.residual_pool_1
                                                      : model.residual_pool_0;
    pool.push_back(resid[static_cast<long>(r)]);
  }
  std::sort(model.residual_pool_0.begin(), model.residual_pool_0.end());
  std::sort(model.residual_pool_1.begin(), model.residual_pool_1.end());
  if (kind != ConditionalLawModel::Kind::GaussianLinear &&
      (model.residual_pool_0.empty() || model.residual_pool_1.empty()))
    throw std::invalid_argument("fit_conditional_law_model: empty residual pool in one arm");

  if (joint) {
    Eigen::MatrixXd Xs(n, dim);
    std::vector<int> s(n);
    for (int i = 0; i < n; ++i) {
      Xs.row(i) = feature_map(rows[i].covariates, rows[i].treatment);
      s[i] = rows[i].selection;
    }
    model.selection_beta = fit_logistic_cv(Xs, s, seed + 1);
  }
  return model;
}

double model_mean(const ConditionalLawModel& model, const Eigen::VectorXd& x, int arm) {
  return feature_map(x, arm).dot(model.beta);
}

double selection_probability(const ConditionalLawModel& model, const Eigen::VectorXd& x,
                             int arm) {
  if (model.kind != ConditionalLawModel::Kind::JointSelectionOutcome) return 1.0;
  return sigmoid(feature_map(x, arm).dot(model.selection_beta));
}

std::function<OutcomePoint(double)> conditional_quantile_fn(const ConditionalLawModel& model,
                                                            const Eigen::VectorXd& x, int arm) {
  const double mu = model_mean(model, x, arm);
  switch (model.kind) {
    case ConditionalLawModel::Kind::GaussianLinear: {
      const double sigma = model.sigma;
      return [mu, sigma](double u) {
        if (!(u > 0.0 && u < 1.0))
          throw std::invalid_argument("conditional_quantile_fn: u must be in (0,1)");
        return OutcomePoint::scalar(mu + sigma * normal_quantile(u));
      };
    }
    case ConditionalLawModel::Kind::EmpiricalResidualLinear: {
      const auto& pool = arm == 1 ? model.residual_pool_1 : model.residual_pool_0;
      if (pool.empty()) throw std::invalid_argument("conditional_quantile_fn: empty residual pool");
      return [mu, &pool](double u) {
        if (!(u > 0.0 && u < 1.0))
          throw std::invalid_argument("conditional_quantile_fn: u must be in (0,1)");
        return OutcomePoint::scalar(mu + pool_quantile(pool, u));
      };
    }
    case ConditionalLawModel::Kind::JointSelectionOutcome: {
      const auto& pool = arm == 1 ? model.residual_pool_1 : model.residual_pool_0;
      if (pool.empty()) throw std::invalid_argument("conditional_quantile_fn: empty residual pool");
      const double p_sel = selection_probability(model, x, arm);
      return [mu, &pool, p_sel](double u) {
        if (!(u > 0.0 && u < 1.0))
          throw std::invalid_argument("conditional_quantile_fn: u must be in (0,1)");
        if (u <= 1.0 - p_sel) return OutcomePoint::with_selection(0.0, 0);
        double v = std::min((u - (1.0 - p_sel)) / std::max(p_sel, 1e-12), 1.0);
        return OutcomePoint::with_selection(mu + pool_quantile(pool, v), 1);
      };
    }
  }
  throw std::logic_error("conditional_quantile_fn: unknown model kind");
}

std::function<double(const ObservationRecord&)> fit_propensity(
    const std::vector<ObservationRecord>& rows, PropensityMethod method, double gamma,
    std::uint64_t seed) {
  if (!(gamma > 0.0 && gamma < 0.5))
    throw std::invalid_argument("fit_propensity: gamma must be in (0, 0.5)");
  auto clip = [gamma](double p) { return std::clamp(p, gamma, 1.0 - gamma); };

  if (method == PropensityMethod::Known) {
    for (const auto& r : rows)
      if (!(r.propensity > 0.0 && r.propensity < 1.0))
        throw std::invalid_argument("fit_propensity: Known requires a propensity on every row");
    return [clip](const ObservationRecord& r) { return clip(r.propensity); };
  }

  const int n = static_cast<int>(rows.size());
  if (n < 4) throw std::invalid_argument("fit_propensity: too few rows");
  const auto p = rows[0].covariates.size();
  Eigen::MatrixXd X(n, p + 1);
  std::vector<int> w(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X.row(i).tail(p) = rows[i].covariates;
    w[i] = rows[i].treatment;
  }
  Eigen::VectorXd beta = fit_logistic_cv(X, w, seed);
  return [beta, clip](const ObservationRecord& r) {
    double eta = beta[0] + beta.tail(beta.size() - 1).dot(r.covariates);
    return clip(sigmoid(eta));
  };
}

}  // namespace dualbound
