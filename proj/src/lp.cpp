#include "dualbound/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dualbound {

void LinearProgram::validate() const {
  const int n = n_vars();
  const int m = n_cons();
  if (n < 1 || m < 1) throw std::invalid_argument("LinearProgram: need n_cons >= 1 and n_vars >= 1");
  if (constraint_matrix.rows() != m || constraint_matrix.cols() != n)
    throw std::invalid_argument("LinearProgram: constraint matrix shape mismatch");
  if (static_cast<int>(row_sense.size()) != m)
    throw std::invalid_argument("LinearProgram: row_sense size mismatch");
  if (static_cast<int>(var_lower_bounds.size()) != n)
    throw std::invalid_argument("LinearProgram: var_lower_bounds size mismatch");
  if (!objective.allFinite() || !rhs.allFinite() || !constraint_matrix.allFinite())
    throw std::invalid_argument("LinearProgram: non-finite input");
}

double max_violation(const LinearProgram& lp, const Eigen::VectorXd& x) {
  Eigen::VectorXd ax = lp.constraint_matrix * x;
  double worst = 0.0;
  for (int i = 0; i < lp.n_cons(); ++i) {
    double r = ax[i] - lp.rhs[i];
    if (lp.row_sense[i] == RowSense::Equal)
      worst = std::max(worst, std::abs(r));
    else
      worst = std::max(worst, r);
  }
  for (int j = 0; j < lp.n_vars(); ++j)
    if (lp.var_lower_bounds[j] == VarBound::NonNegative) worst = std::max(worst, -x[j]);
  return worst;
}

namespace {

constexpr double kPivTol = 1e-10;

struct SparseCol {
  std::vector<std::pair<int, double>> nz;
};

// min c.x  s.t.  A x = b, x >= 0, with b >= 0 guaranteed by the builder.
struct StdProblem {
  int m = 0, n = 0;
  std::vector<SparseCol> cols;
  Eigen::VectorXd c, b;
};

struct StdResult {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd x;       // length n
  Eigen::VectorXd y;       // length m, d(obj)/d(b)
  std::vector<int> basis;  // values in [0, n+m); >= n means artificial
  double obj = 0.0;
  int iters = 0;
};

class StandardSimplex {
 public:
  StandardSimplex(const StdProblem& p, int max_iters) : p_(p), max_iters_(max_iters) {
    m_ = p.m;
    n_ = p.n;
    binv_ = Eigen::MatrixXd::Identity(m_, m_);
    xb_ = p.b;
    basis_.resize(m_);
    for (int i = 0; i < m_; ++i) basis_[i] = n_ + i;  // artificials
    in_basis_.assign(n_, false);
  }

  StdResult run() {
    StdResult res;
    // Phase 1: minimize the sum of artificials.
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n_ + m_);
    c1.tail(m_).setOnes();
    LpStatus s1 = iterate(c1);
    if (s1 == LpStatus::IterationLimit) {
      res.status = LpStatus::IterationLimit;
      res.iters = iters_;
      return res;
    }
    if (basic_cost(c1) > 1e-7) {
      res.status = LpStatus::Infeasible;
      res.iters = iters_;
      return res;
    }
    drive_out_artificials();
    // Phase 2.
    Eigen::VectorXd c2 = Eigen::VectorXd::Zero(n_ + m_);
    c2.head(n_) = p_.c;
    LpStatus s2 = iterate(c2);
    res.status = s2;
    res.iters = iters_;
    if (s2 != LpStatus::Optimal) return res;
    res.x = Eigen::VectorXd::Zero(n_);
    for (int i = 0; i < m_; ++i)
      if (basis_[i] < n_) res.x[basis_[i]] = xb_[i];
    res.obj = p_.c.dot(res.x);
    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb[i] = c2[basis_[i]];
    res.y = binv_.transpose() * cb;
    res.basis = basis_;
    return res;
  }

 private:
  double basic_cost(const Eigen::VectorXd& c) const {
    double v = 0.0;
    for (int i = 0; i < m_; ++i) v += c[basis_[i]] * xb_[i];
    return v;
  }

  double col_dot(int j, const Eigen::VectorXd& y) const {
    double v = 0.0;
    for (const auto& [r, a] : p_.cols[j].nz) v += y[r] * a;
    return v;
  }

  Eigen::VectorXd binv_col(int j) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m_);
    for (const auto& [r, a] : p_.cols[j].nz) w += a * binv_.col(r);
    return w;
  }

  void refactor() {
    Eigen::MatrixXd bmat = Eigen::MatrixXd::Zero(m_, m_);
    for (int i = 0; i < m_; ++i) {
      int j = basis_[i];
      if (j >= n_)
        bmat(j - n_, i) = 1.0;
      else
        for (const auto& [r, a] : p_.cols[j].nz) bmat(r, i) = a;
    }
    binv_ = bmat.partialPivLu().inverse();
    xb_ = binv_ * p_.b;
    for (int i = 0; i < m_; ++i)
      if (xb_[i] < 0 && xb_[i] > -1e-9) xb_[i] = 0.0;
  }

  // Runs simplex iterations for the given cost vector over the current basis.
  LpStatus iterate(const Eigen::VectorXd& c) {
    bool bland = false;
    int stall = 0;
    const int stall_limit = 3 * (n_ + m_);
    double best_obj = std::numeric_limits<double>::infinity();
    Eigen::VectorXd cb(m_);
    while (true) {
      if (iters_ >= max_iters_) return LpStatus::IterationLimit;
      for (int i = 0; i < m_; ++i) cb[i] = c[basis_[i]];
      Eigen::VectorXd y = binv_.transpose() * cb;
      int enter = -1;
      double best_d = -kReducedCostTol;
      for (int j = 0; j < n_; ++j) {
        if (in_basis_[j]) continue;
        double d = c[j] - col_dot(j, y);
        if (bland) {
          if (d < -kReducedCostTol) {
            enter = j;
            break;
          }
        } else if (d < best_d) {
          best_d = d;
          enter = j;
        }
      }
      if (enter < 0) return LpStatus::Optimal;
      Eigen::VectorXd w = binv_col(enter);
      int leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int i = 0; i < m_; ++i) {
        if (w[i] > kPivTol) {
          double ratio = xb_[i] / w[i];
          if (ratio < best_ratio - 1e-12 ||
              (ratio < best_ratio + 1e-12 && leave >= 0 &&
               (bland ? basis_[i] < basis_[leave] : std::abs(w[i]) > std::abs(w[leave])))) {
            best_ratio = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return LpStatus::Unbounded;
      pivot(enter, leave, w, best_ratio);
      ++iters_;
      if ((iters_ & 255) == 255) refactor();
      double obj = basic_cost(c);
      if (obj < best_obj - 1e-12) {
        best_obj = obj;
        stall = 0;
      } else if (++stall > stall_limit) {
        bland = true;  // anti-cycling from here on
      }
    }
  }

  void pivot(int enter, int leave, const Eigen::VectorXd& w, double theta) {
    xb_ -= theta * w;
    xb_[leave] = theta;
    for (int i = 0; i < m_; ++i)
      if (i != leave && xb_[i] < 0 && xb_[i] > -1e-9) xb_[i] = 0.0;
    int old = basis_[leave];
    if (old < n_) in_basis_[old] = false;
    basis_[leave] = enter;
    in_basis_[enter] = true;
    double wp = w[leave];
    Eigen::RowVectorXd prow = binv_.row(leave) / wp;
    for (int i = 0; i < m_; ++i) {
      if (i == leave) continue;
      if (w[i] != 0.0) binv_.row(i) -= w[i] * prow;
    }
    binv_.row(leave) = prow;
  }

  // After phase 1, swap basic artificials for real columns where possible.
  // Rows whose artificial cannot be exchanged are redundant; the artificial
  // stays basic at zero with zero phase-2 cost.
  void drive_out_artificials() {
    for (int i = 0; i < m_; ++i) {
      if (basis_[i] < n_) continue;
      for (int j = 0; j < n_; ++j) {
        if (in_basis_[j]) continue;
        double piv = 0.0;
        for (const auto& [r, a] : p_.cols[j].nz) piv += binv_(i, r) * a;
        if (std::abs(piv) > 1e-8) {
          Eigen::VectorXd w = binv_col(j);
          pivot(j, i, w, 0.0);  // the leaving artificial is basic at zero
          break;
        }
      }
    }
  }

  const StdProblem& p_;
  int max_iters_;
  int m_ = 0, n_ = 0;
  Eigen::MatrixXd binv_;
  Eigen::VectorXd xb_;
  std::vector<int> basis_;
  std::vector<bool> in_basis_;
  int iters_ = 0;
};

enum class Sense3 { LE, EQ, GE };

// min c.x s.t. A x (sense) b with per-variable bounds; dense A.
struct GenProblem {
  Eigen::VectorXd c;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::vector<Sense3> sense;
  std::vector<VarBound> bound;
};

struct BuiltStd {
  StdProblem p;
  std::vector<int> pos_idx, neg_idx;  // per original variable
  std::vector<double> row_flip;       // +-1 per original row
  std::vector<int> slack_idx;         // std col of slack for row, or -1
};

BuiltStd build_standard(const GenProblem& g) {
  const int m = static_cast<int>(g.b.size());
  const int nv = static_cast<int>(g.c.size());
  BuiltStd out;
  out.p.m = m;
  out.row_flip.assign(m, 1.0);
  std::vector<Sense3> sense = g.sense;
  Eigen::VectorXd b = g.b;
  for (int i = 0; i < m; ++i) {
    if (b[i] < 0) {
      b[i] = -b[i];
      out.row_flip[i] = -1.0;
      if (sense[i] == Sense3::LE)
        sense[i] = Sense3::GE;
      else if (sense[i] == Sense3::GE)
        sense[i] = Sense3::LE;
    }
  }
  out.p.b = b;
  out.pos_idx.assign(nv, -1);
  out.neg_idx.assign(nv, -1);
  std::vector<double> costs;
  auto add_col = [&](double cost) {
    out.p.cols.emplace_back();
    costs.push_back(cost);
    return static_cast<int>(out.p.cols.size()) - 1;
  };
  for (int j = 0; j < nv; ++j) {
    int pj = add_col(g.c[j]);
    out.pos_idx[j] = pj;
    for (int i = 0; i < m; ++i) {
      double a = g.A(i, j) * out.row_flip[i];
      if (a != 0.0) out.p.cols[pj].nz.emplace_back(i, a);
    }
    if (g.bound[j] == VarBound::Free) {
      int njx = add_col(-g.c[j]);
      out.neg_idx[j] = njx;
      out.p.cols[njx].nz = out.p.cols[pj].nz;
      for (auto& e : out.p.cols[njx].nz) e.second = -e.second;
    }
  }
  out.slack_idx.assign(m, -1);
  for (int i = 0; i < m; ++i) {
    if (sense[i] == Sense3::EQ) continue;
    int sj = add_col(0.0);
    out.slack_idx[i] = sj;
    out.p.cols[sj].nz.emplace_back(i, sense[i] == Sense3::LE ? 1.0 : -1.0);
  }
  out.p.n = static_cast<int>(out.p.cols.size());
  out.p.c = Eigen::Map<Eigen::VectorXd>(costs.data(), static_cast<long>(costs.size()));
  return out;
}

Eigen::VectorXd recover_vars(const BuiltStd& bs, const Eigen::VectorXd& xstd) {
  const int nv = static_cast<int>(bs.pos_idx.size());
  Eigen::VectorXd x(nv);
  for (int j = 0; j < nv; ++j) {
    x[j] = xstd[bs.pos_idx[j]];
    if (bs.neg_idx[j] >= 0) x[j] -= xstd[bs.neg_idx[j]];
  }
  return x;
}

Eigen::VectorXd recover_row_duals(const BuiltStd& bs, const Eigen::VectorXd& ystd) {
  const int m = static_cast<int>(bs.row_flip.size());
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) y[i] = bs.row_flip[i] * ystd[i];
  return y;
}

LpSolution solve_direct(const LinearProgram& lp, int max_iters) {
  GenProblem g;
  g.c = -lp.objective;
  g.A = lp.constraint_matrix;
  g.b = lp.rhs;
  g.bound = lp.var_lower_bounds;
  g.sense.reserve(lp.n_cons());
  for (auto s : lp.row_sense) g.sense.push_back(s == RowSense::Equal ? Sense3::EQ : Sense3::LE);
  BuiltStd bs = build_standard(g);
  StdResult r = StandardSimplex(bs.p, max_iters).run();
  LpSolution sol;
  sol.status = r.status;
  sol.iterations = r.iters;
  if (r.status != LpStatus::Optimal) return sol;
  sol.variable_values = recover_vars(bs, r.x);
  sol.objective_value = lp.objective.dot(sol.variable_values);
  sol.row_duals = -recover_row_duals(bs, r.y);
  // Map standard-form basis entries back to variable / slack indices.
  std::vector<int> col_owner(bs.p.n, -1);
  for (int j = 0; j < lp.n_vars(); ++j) {
    col_owner[bs.pos_idx[j]] = j;
    if (bs.neg_idx[j] >= 0) col_owner[bs.neg_idx[j]] = j;
  }
  for (int i = 0; i < lp.n_cons(); ++i)
    if (bs.slack_idx[i] >= 0) col_owner[bs.slack_idx[i]] = lp.n_vars() + i;
  for (int bi : r.basis) {
    int owner = bi < bs.p.n ? col_owner[bi] : lp.n_vars() + (bi - bs.p.n);
    sol.basis.push_back(owner);
  }
  return sol;
}

LpSolution solve_dualized(const LinearProgram& lp, int max_iters) {
  const int m = lp.n_cons();
  const int n = lp.n_vars();
  GenProblem g;
  g.c = lp.rhs;
  g.A = lp.constraint_matrix.transpose();
  g.b = lp.objective;
  g.sense.reserve(n);
  g.bound.reserve(m);
  for (int j = 0; j < n; ++j)
    g.sense.push_back(lp.var_lower_bounds[j] == VarBound::Free ? Sense3::EQ : Sense3::GE);
  for (int i = 0; i < m; ++i)
    g.bound.push_back(lp.row_sense[i] == RowSense::Equal ? VarBound::Free : VarBound::NonNegative);
  BuiltStd bs = build_standard(g);
  StdResult r = StandardSimplex(bs.p, max_iters).run();
  LpSolution sol;
  sol.iterations = r.iters;
  switch (r.status) {
    case LpStatus::Optimal:
      break;
    case LpStatus::Unbounded:
      sol.status = LpStatus::Infeasible;
      return sol;
    case LpStatus::Infeasible:
      // Dual infeasible: the primal is unbounded or infeasible; settle it
      // with the direct formulation (rare path, small instances only).
      return solve_direct(lp, max_iters);
    case LpStatus::IterationLimit:
      sol.status = LpStatus::IterationLimit;
      return sol;
  }
  sol.status = LpStatus::Optimal;
  sol.variable_values = recover_row_duals(bs, r.y);  // duals of the dual
  sol.objective_value = lp.objective.dot(sol.variable_values);
  sol.row_duals = recover_vars(bs, r.x);
  // Basic support: nonzero variables, then slack indices of loose rows.
  Eigen::VectorXd ax = lp.constraint_matrix * sol.variable_values;
  for (int j = 0; j < n; ++j)
    if (std::abs(sol.variable_values[j]) > 1e-11) sol.basis.push_back(j);
  for (int i = 0; i < m && static_cast<int>(sol.basis.size()) < m; ++i)
    if (lp.row_sense[i] == RowSense::LessEqual && ax[i] < lp.rhs[i] - 1e-11)
      sol.basis.push_back(n + i);
  return sol;
}

}  // namespace

LpSolution solve_lp(const LinearProgram& lp, int max_iters) {
  lp.validate();
  if (lp.n_cons() >= 2 * lp.n_vars() + 8) return solve_dualized(lp, max_iters);
  return solve_direct(lp, max_iters);
}

LpSolution min_norm_refine(const LinearProgram& lp, const LpSolution& solution, int max_iters,
                           int n_norm_vars) {
  if (solution.status != LpStatus::Optimal)
    throw std::invalid_argument("min_norm_refine: requires an Optimal solution");
  const int n = lp.n_vars();
  const int nn = n_norm_vars < 0 ? n : std::min(n_norm_vars, n);
  const double obj_star = solution.objective_value;
  const double cnorm2 = lp.objective.squaredNorm();

  auto project_feasible = [&](Eigen::VectorXd& x) {
    for (int sweep = 0; sweep < 200; ++sweep) {
      double worst = 0.0;
      if (cnorm2 > 0) {
        double r = lp.objective.dot(x) - obj_star;
        if (std::abs(r) > 1e-13) x -= (r / cnorm2) * lp.objective;
        worst = std::max(worst, std::abs(lp.objective.dot(x) - obj_star));
      }
      for (int i = 0; i < lp.n_cons(); ++i) {
        double r = lp.constraint_matrix.row(i).dot(x) - lp.rhs[i];
        bool violated = lp.row_sense[i] == RowSense::Equal ? std::abs(r) > 1e-13 : r > 1e-13;
        if (violated) {
          double a2 = lp.constraint_matrix.row(i).squaredNorm();
          if (a2 > 0) x -= (r / a2) * lp.constraint_matrix.row(i).transpose();
        }
        r = lp.constraint_matrix.row(i).dot(x) - lp.rhs[i];
        worst = std::max(worst, lp.row_sense[i] == RowSense::Equal ? std::abs(r) : std::max(r, 0.0));
      }
      for (int j = 0; j < n; ++j)
        if (lp.var_lower_bounds[j] == VarBound::NonNegative && x[j] < 0) x[j] = 0.0;
      if (worst < 1e-12) break;
    }
  };

  Eigen::VectorXd x = solution.variable_values;
  const double step = 0.1;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd prev = x;
    x.head(nn) *= (1.0 - step);
    project_feasible(x);
    if ((x - prev).norm() < 1e-12) break;
  }

  double in_norm = solution.variable_values.head(nn).squaredNorm();
  double out_norm = x.head(nn).squaredNorm();
  bool ok = max_violation(lp, x) <= 1e-8 &&
            std::abs(lp.objective.dot(x) - obj_star) <= 1e-8 && out_norm <= in_norm + 1e-12;
  if (!ok) return solution;
  LpSolution refined = solution;
  refined.variable_values = x;
  refined.objective_value = lp.objective.dot(x);
  return refined;
}

}  // namespace dualbound
