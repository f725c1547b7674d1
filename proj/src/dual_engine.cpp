#include "dualbound/dual_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dualbound {

void DiscreteLaw::validate() const {
  if (support.empty()) throw std::invalid_argument("DiscreteLaw: empty support");
  if (static_cast<int>(support.size()) != pmf.size())
    throw std::invalid_argument("DiscreteLaw: support/pmf length mismatch");
  if (pmf.minCoeff() < 0) throw std::invalid_argument("DiscreteLaw: negative mass");
  if (std::abs(pmf.sum() - 1.0) > 1e-10)
    throw std::invalid_argument("DiscreteLaw: pmf must sum to one");
  for (const auto& pt : support)
    if (!std::isfinite(pt.y)) throw std::invalid_argument("DiscreteLaw: non-finite support point");
  for (std::size_t i = 1; i < support.size(); ++i)
    if (support[i] == support[i - 1])
      throw std::invalid_argument("DiscreteLaw: duplicate support points");
}

double DiscreteLaw::mean_y() const {
  double m = 0.0;
  for (int j = 0; j < size(); ++j) m += pmf[j] * support[j].y;
  return m;
}

namespace {

// Merges equal consecutive points of a sorted support, summing their masses.
DiscreteLaw dedup(std::vector<std::pair<OutcomePoint, double>> pts) {
  std::stable_sort(pts.begin(), pts.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  DiscreteLaw law;
  std::vector<double> masses;
  for (const auto& [pt, mass] : pts) {
    if (!law.support.empty() && law.support.back() == pt)
      masses.back() += mass;
    else {
      law.support.push_back(pt);
      masses.push_back(mass);
    }
  }
  law.pmf = Eigen::Map<Eigen::VectorXd>(masses.data(), static_cast<long>(masses.size()));
  double total = law.pmf.sum();
  if (total > 0) law.pmf /= total;
  return law;
}

}  // namespace

DiscreteLaw discretize_law(const std::function<OutcomePoint(double)>& quantile_fn, int nvals) {
  if (nvals < 2) throw std::invalid_argument("discretize_law: nvals must be >= 2");
  std::vector<std::pair<OutcomePoint, double>> pts;
  double prev_y = -std::numeric_limits<double>::infinity();
  bool scalar = true;
  for (int j = 1; j <= nvals; ++j) {
    OutcomePoint pt = quantile_fn(static_cast<double>(j) / (nvals + 1));
    if (!std::isfinite(pt.y)) throw std::invalid_argument("discretize_law: non-finite quantile");
    if (pt.compound()) scalar = false;
    if (scalar) {
      if (pt.y < prev_y - 1e-12)
        throw std::invalid_argument("discretize_law: quantile function is not nondecreasing");
      prev_y = pt.y;
    }
    pts.emplace_back(pt, 1.0 / nvals);
  }
  DiscreteLaw law = dedup(std::move(pts));
  law.validate();
  return law;
}

DiscreteLaw discretize_joint_law(double p_selected,
                                 const std::function<double(double)>& y_quantile_fn, int nvals) {
  if (nvals < 2) throw std::invalid_argument("discretize_joint_law: nvals must be >= 2");
  if (!(p_selected >= 0.0 && p_selected <= 1.0))
    throw std::invalid_argument("discretize_joint_law: p_selected must lie in [0,1]");
  std::vector<std::pair<OutcomePoint, double>> pts;
  if (p_selected < 1.0) pts.emplace_back(OutcomePoint::with_selection(0.0, 0), 1.0 - p_selected);
  if (p_selected > 0.0) {
    for (int j = 1; j <= nvals; ++j) {
      double y = y_quantile_fn(static_cast<double>(j) / (nvals + 1));
      if (!std::isfinite(y)) throw std::invalid_argument("discretize_joint_law: non-finite quantile");
      pts.emplace_back(OutcomePoint::with_selection(y, 1), p_selected / nvals);
    }
  }
  DiscreteLaw law = dedup(std::move(pts));
  law.validate();
  return law;
}

namespace {

double safe_cost(const EstimandSpec& spec, const OutcomePoint& y0, const OutcomePoint& y1,
                 const Eigen::VectorXd& x) {
  double f = spec.cost_fn(y0, y1, x);
  if (!std::isfinite(f)) {
    std::ostringstream msg;
    msg << "cost function non-finite at y0=(" << y0.y << "," << y0.s << "), y1=(" << y1.y << ","
        << y1.s << ")";
    throw std::invalid_argument(msg.str());
  }
  return f;
}

double safe_constraint(const ConstraintFunction& cf, const OutcomePoint& y0,
                       const OutcomePoint& y1) {
  double w = cf.evaluator(y0, y1);
  if (!std::isfinite(w)) {
    std::ostringstream msg;
    msg << "constraint '" << cf.label << "' non-finite at y0=(" << y0.y << "," << y0.s
        << "), y1=(" << y1.y << "," << y1.s << ")";
    throw std::invalid_argument(msg.str());
  }
  return w;
}

}  // namespace

LinearProgram assemble_conditional_lp(const EstimandSpec& spec, const Eigen::VectorXd& x,
                                      const DiscreteLaw& law_0, const DiscreteLaw& law_1) {
  law_0.validate();
  law_1.validate();
  const int m0 = law_0.size();
  const int m1 = law_1.size();
  const int L = static_cast<int>(spec.constraints.size());
  const int nv = m0 + m1 + L;
  const int nc = m0 * m1 + L;
  LinearProgram lp;
  lp.objective.resize(nv);
  lp.objective << law_0.pmf, law_1.pmf, Eigen::VectorXd::Zero(L);
  lp.constraint_matrix = Eigen::MatrixXd::Zero(nc, nv);
  lp.rhs.resize(nc);
  for (int j = 0; j < m0; ++j)
    for (int i = 0; i < m1; ++i) {
      int r = j * m1 + i;
      lp.constraint_matrix(r, j) = 1.0;
      lp.constraint_matrix(r, m0 + i) = 1.0;
      for (int l = 0; l < L; ++l)
        lp.constraint_matrix(r, m0 + m1 + l) =
            -safe_constraint(spec.constraints[l], law_0.support[j], law_1.support[i]);
      lp.rhs[r] = safe_cost(spec, law_0.support[j], law_1.support[i], x);
    }
  for (int l = 0; l < L; ++l) {
    lp.constraint_matrix(m0 * m1 + l, m0 + m1 + l) = -1.0;
    lp.rhs[m0 * m1 + l] = 0.0;
  }
  lp.row_sense.assign(nc, RowSense::LessEqual);
  lp.var_lower_bounds.assign(nv, VarBound::Free);
  for (int l = 0; l < L; ++l) lp.var_lower_bounds[m0 + m1 + l] = VarBound::NonNegative;
  return lp;
}

DualSolution solve_conditional_dual(const EstimandSpec& spec, const Eigen::VectorXd& x,
                                    const DiscreteLaw& law_0, const DiscreteLaw& law_1,
                                    const DualSolveOptions& options) {
  law_0.validate();
  law_1.validate();
  const int m0 = law_0.size();
  const int m1 = law_1.size();
  const int L = static_cast<int>(spec.constraints.size());
  const double sign = options.upper ? -1.0 : 1.0;

  DualSolution out;
  out.grid_0 = law_0.support;
  out.grid_1 = law_1.support;
  out.is_upper = options.upper;
  out.multipliers = Eigen::VectorXd::Zero(L);

  // Effective cost and its scale normalization.
  Eigen::MatrixXd cost(m0, m1);
  for (int j = 0; j < m0; ++j)
    for (int i = 0; i < m1; ++i)
      cost(j, i) = sign * safe_cost(spec, law_0.support[j], law_1.support[i], x);
  double scale = std::max(cost.cwiseAbs().maxCoeff(), 1e-12);

  if (L == 0 && !options.min_norm) {
    // Unconstrained case: this is exactly the OT dual; use the fast path.
    TransportDual td = solve_ot_dual(law_0.pmf, law_1.pmf, cost / scale);
    out.values_0 = td.potentials_0 * scale;
    out.values_1 = td.potentials_1 * scale;
    out.objective_value = sign * td.objective_value * scale;
    return out;
  }

  if (L == 1 && !options.min_norm) {
    // Lagrangian fast path: the conditional dual equals max over lambda >= 0
    // of the OT dual value of (cost + lambda * w), a concave piecewise-linear
    // function of lambda whose supergradient is E_pi[w] under the optimal
    // coupling. Cutting-plane search over lambda with network-simplex solves
    // inside; falls through to the LP path if any solve fails.
    Eigen::MatrixXd wmat(m0, m1);
    for (int j = 0; j < m0; ++j)
      for (int i = 0; i < m1; ++i)
        wmat(j, i) = safe_constraint(spec.constraints[0], law_0.support[j], law_1.support[i]);
    const Eigen::MatrixXd base = cost / scale;
    const int ot_cap = 50 * (m0 + m1) + 2000;
    const double kLambdaCap = 1e6;

    Eigen::MatrixXd cmat(m0, m1);
    struct Cut {
      double lam, value, slope;
      Eigen::VectorXd u, v;
    };
    bool net_ok = true;
    auto eval = [&](double lam, Cut& c) {
      cmat = base + lam * wmat;
      std::vector<detail::TransportArc> arcs;
      if (!detail::network_simplex_solve(law_0.pmf, law_1.pmf, cmat, c.u, c.v, arcs, ot_cap)) {
        net_ok = false;
        return false;
      }
      c.lam = lam;
      c.value = law_0.pmf.dot(c.u) + law_1.pmf.dot(c.v);
      c.slope = 0.0;
      for (const auto& a : arcs) c.slope += a.flow * wmat(a.i, a.j);
      return true;
    };
    auto finish = [&](const Cut& c) {
      out.values_0 = c.u * scale;
      out.values_1 = c.v * scale;
      out.multipliers[0] = c.lam * scale;
      out.objective_value = sign * c.value * scale;
      return out;
    };

    // Pure forbidden-cell constraints (w >= 0 with zero target) make the
    // Lagrangian value nondecreasing in lambda and flat beyond the first
    // multiplier whose optimal coupling avoids every w > 0 cell, so a single
    // solve at a large fixed lambda already attains the maximum. Guard
    // against degenerate bases that drag the penalty into the potentials by
    // checking the slope and the potential magnitudes before accepting.
    if (wmat.minCoeff() >= 0.0 && wmat.maxCoeff() > 0.0) {
      double wmin_pos = std::numeric_limits<double>::infinity();
      for (int j = 0; j < m0; ++j)
        for (int i = 0; i < m1; ++i)
          if (wmat(j, i) > 0.0) wmin_pos = std::min(wmin_pos, wmat(j, i));
      double lam_big = std::min(1e4 / wmin_pos, kLambdaCap);
      Cut big;
      if (eval(lam_big, big) && big.slope <= 1e-12 &&
          std::max(big.u.cwiseAbs().maxCoeff(), big.v.cwiseAbs().maxCoeff()) <=
              0.01 * lam_big) {
        return finish(big);
      }
      net_ok = true;  // fall through to the cutting-plane search
    }

    Cut lo, hi, mid;
    bool done = false;
    // Bracket a maximizer: slope(lo) > 0 >= slope(hi). A warm-start hint
    // replaces most of the doubling phase when it lands past the optimum.
    [&] {
      if (!eval(0.0, lo)) return;
      if (lo.slope <= 1e-12) {
        done = true;
        return;
      }
      // The hint is in original cost units (a previous solution's multiplier);
      // convert to the normalized problem before bracketing.
      double next = (options.lambda_hint > 0)
                        ? std::min(std::max(options.lambda_hint / scale, 1e-6), kLambdaCap)
                        : 1.0;
      for (;;) {
        if (!eval(next, hi)) return;
        if (hi.slope <= 0.0) return;  // bracketed
        lo = hi;
        if (next >= kLambdaCap) {
          // Cap hit with slope still positive; keep the cap solution, which
          // remains dual feasible and hence a valid (if conservative) bound.
          done = true;
          return;
        }
        next = std::min(next * 8.0, kLambdaCap);
      }
    }();
    if (done && net_ok) return finish(lo);
    if (net_ok) {
      double best = std::max(lo.value, hi.value);
      for (int it = 0; it < 60; ++it) {
        // Intersection of the two supporting tangents bounds the maximum.
        double denom = lo.slope - hi.slope;
        double lam_x, ub;
        if (denom > 1e-14) {
          lam_x = ((hi.value - hi.slope * hi.lam) - (lo.value - lo.slope * lo.lam)) / denom;
          ub = lo.value + lo.slope * (lam_x - lo.lam);
        } else {
          lam_x = 0.5 * (lo.lam + hi.lam);
          ub = best;
        }
        if (ub - best <= 1e-10 * (1.0 + std::abs(best))) break;
        double span = hi.lam - lo.lam;
        if (lam_x <= lo.lam + 1e-12 * span || lam_x >= hi.lam - 1e-12 * span)
          lam_x = 0.5 * (lo.lam + hi.lam);
        if (!eval(lam_x, mid)) break;
        best = std::max(best, mid.value);
        if (mid.slope > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      if (net_ok) return finish(lo.value >= hi.value ? lo : hi);
    }
  }

  LinearProgram lp = assemble_conditional_lp(spec, x, law_0, law_1);
  LinearProgram scaled = lp;
  scaled.rhs.head(m0 * m1) = sign * scaled.rhs.head(m0 * m1) / scale;
  LpSolution sol = solve_lp(scaled, options.max_iters);
  if (sol.status != LpStatus::Optimal) {
    std::ostringstream msg;
    msg << "conditional dual LP not solved to optimality (status "
        << static_cast<int>(sol.status) << "); constraints:";
    for (const auto& cf : spec.constraints) msg << " '" << cf.label << "'";
    throw std::runtime_error(msg.str());
  }
  if (options.min_norm) sol = min_norm_refine(scaled, sol, 500, m0 + m1);
  out.values_0 = sol.variable_values.head(m0) * scale;
  out.values_1 = sol.variable_values.segment(m0, m1) * scale;
  out.multipliers = sol.variable_values.tail(L) * scale;
  out.objective_value = sign * sol.objective_value * scale;
  return out;
}

double evaluate_dual(const DualSolution& solution, int arm, const OutcomePoint& y) {
  const auto& grid = arm == 0 ? solution.grid_0 : solution.grid_1;
  const auto& values = arm == 0 ? solution.values_0 : solution.values_1;
  if (grid.empty()) throw std::invalid_argument("evaluate_dual: empty grid");

  // Locate the contiguous block matching the query's s-stratum.
  std::size_t lo = 0, hi = grid.size();
  if (y.compound()) {
    lo = hi;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (grid[k].s == y.s) {
        if (lo == grid.size()) lo = k;
        hi = k + 1;
      }
    }
    if (lo >= grid.size()) {
      std::set<int> strata;
      for (const auto& pt : grid) strata.insert(pt.s);
      std::ostringstream msg;
      msg << "evaluate_dual: stratum s=" << y.s << " absent from grid; present:";
      for (int s : strata) msg << " " << s;
      throw std::invalid_argument(msg.str());
    }
  }
  if (hi - lo == 1) return values[static_cast<long>(lo)];
  if (y.y <= grid[lo].y) return values[static_cast<long>(lo)];
  if (y.y >= grid[hi - 1].y) return values[static_cast<long>(hi - 1)];
  // Binary search within [lo, hi) on the y coordinate.
  std::size_t a = lo, b = hi - 1;
  while (b - a > 1) {
    std::size_t mid = (a + b) / 2;
    if (grid[mid].y <= y.y)
      a = mid;
    else
      b = mid;
  }
  double ya = grid[a].y, yb = grid[b].y;
  if (yb <= ya) return values[static_cast<long>(a)];
  double t = (y.y - ya) / (yb - ya);
  return (1.0 - t) * values[static_cast<long>(a)] + t * values[static_cast<long>(b)];
}

DualSolution feasibility_adjust(const DualSolution& solution, const EstimandSpec& spec,
                                const Eigen::VectorXd& x,
                                const std::vector<OutcomePoint>& eval_grid_0,
                                const std::vector<OutcomePoint>& eval_grid_1) {
  if (eval_grid_0.empty() || eval_grid_1.empty())
    throw std::invalid_argument("feasibility_adjust: empty evaluation grid");
  const double sign = solution.is_upper ? -1.0 : 1.0;
  const int L = static_cast<int>(spec.constraints.size());
  double worst = 0.0;
  for (const auto& y0 : eval_grid_0) {
    double v0 = evaluate_dual(solution, 0, y0);
    for (const auto& y1 : eval_grid_1) {
      double lhs = v0 + evaluate_dual(solution, 1, y1);
      for (int l = 0; l < L; ++l)
        lhs -= solution.multipliers[l] * safe_constraint(spec.constraints[l], y0, y1);
      worst = std::max(worst, lhs - sign * safe_cost(spec, y0, y1, x));
    }
  }
  double c = std::max(worst / 2.0, 0.0);
  DualSolution out = solution;
  out.values_0.array() -= c;
  out.values_1.array() -= c;
  out.adjustment += c;
  out.objective_value -= sign * 2.0 * c;
  return out;
}

double conditional_mean_of_dual(const DualSolution& solution, int arm, const DiscreteLaw& law) {
  law.validate();
  double m = 0.0;
  for (int j = 0; j < law.size(); ++j)
    m += law.pmf[j] * evaluate_dual(solution, arm, law.support[j]);
  return m;
}

}  // namespace dualbound
