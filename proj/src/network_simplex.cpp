#include "dualbound/lp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dualbound {
namespace detail {

namespace {

// Transportation simplex with a spanning-tree basis. All working storage is
// preallocated; per-pivot work is O(nodes) plus the entering-arc scan.
class TransportSimplex {
 public:
  TransportSimplex(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                   const Eigen::MatrixXd& cost)
      : m_(static_cast<int>(supply.size())),
        n_(static_cast<int>(demand.size())),
        nodes_(m_ + n_),
        cost_(cost) {
    supply_ = supply;
    demand_ = demand;
    arcs_.reserve(nodes_);
    head_.assign(nodes_, -1);
    next0_.assign(nodes_, -1);
    next1_.assign(nodes_, -1);
    parent_.assign(nodes_, -1);
    parent_arc_.assign(nodes_, -1);
    depth_.assign(nodes_, 0);
    order_.assign(nodes_, 0);
    visited_.assign(nodes_, 0);
    u_.resize(m_);
    v_.resize(n_);
    cyc_a_.reserve(nodes_);
    cyc_b_.reserve(nodes_);
  }

  bool solve(int max_iters) {
    if (!northwest_init()) return false;
    rebuild_tree();
    bool bland = false;
    int stall = 0;
    double best_obj = std::numeric_limits<double>::infinity();
    const int cells = m_ * n_;
    const int block = 64;
    int pos = 0;
    for (int iter = 0; iter < max_iters; ++iter) {
      int ei = -1, ej = -1;
      if (bland) {
        // Fixed scan order, first negative cell: Bland's rule, cycle-free.
        for (int cell = 0; cell < cells; ++cell) {
          int i = cell / n_, j = cell % n_;
          if (cost_(i, j) - u_[i] - v_[j] < -1e-10) {
            ei = i;
            ej = j;
            break;
          }
        }
      } else {
        // Best candidate within rotating blocks; move on to the next block
        // only while none has been found.
        double best_red = -1e-10;
        int blocks = (cells + block - 1) / block;
        const int span = std::min(block, cells);
        for (int bidx = 0; bidx < blocks; ++bidx) {
          for (int step = 0; step < span; ++step) {
            int cell = pos + step;
            if (cell >= cells) cell -= cells;
            int i = cell / n_, j = cell % n_;
            double red = cost_(i, j) - u_[i] - v_[j];
            if (red < best_red) {
              best_red = red;
              ei = i;
              ej = j;
            }
          }
          pos += span;
          if (pos >= cells) pos -= cells;
          if (ei >= 0) break;
        }
      }
      if (ei < 0) {
        objective_ = 0.0;
        for (const auto& a : arcs_) objective_ += cost_(a.i, a.j) * a.flow;
        return true;
      }
      pivot(ei, ej);
      rebuild_tree();
      double obj = 0.0;
      for (const auto& a : arcs_) obj += cost_(a.i, a.j) * a.flow;
      if (obj < best_obj - 1e-13) {
        best_obj = obj;
        stall = 0;
      } else if (++stall > 2 * nodes_) {
        bland = true;
      }
    }
    return false;
  }

  Eigen::VectorXd u_, v_;
  std::vector<TransportArc> arcs_;
  double objective_ = 0.0;

 private:
  int demand_node(int j) const { return m_ + j; }

  bool northwest_init() {
    arcs_.clear();
    Eigen::VectorXd s = supply_, d = demand_;
    int i = 0, j = 0;
    while (i < m_ && j < n_) {
      double f = std::min(s[i], d[j]);
      arcs_.push_back({i, j, f});
      s[i] -= f;
      d[j] -= f;
      if (i == m_ - 1 && j == n_ - 1) break;
      if (s[i] <= d[j] && i < m_ - 1)
        ++i;
      else if (j < n_ - 1)
        ++j;
      else
        ++i;
    }
    return static_cast<int>(arcs_.size()) == nodes_ - 1;
  }

  // Recomputes adjacency, parents, depths, and potentials from the basic
  // arcs by one traversal from the root (supply node 0). Adjacency is a pair
  // of intrusive linked lists per arc (one per endpoint).
  void rebuild_tree() {
    std::fill(head_.begin(), head_.end(), -1);
    for (int k = 0; k < static_cast<int>(arcs_.size()); ++k) {
      int a = arcs_[k].i, b = demand_node(arcs_[k].j);
      next0_[k] = head_[a];
      head_[a] = 2 * k;
      next1_[k] = head_[b];
      head_[b] = 2 * k + 1;
    }
    ++epoch_;
    int top = 0;
    order_[top++] = 0;
    visited_[0] = epoch_;
    parent_[0] = -1;
    parent_arc_[0] = -1;
    depth_[0] = 0;
    u_[0] = 0.0;
    for (int idx = 0; idx < top; ++idx) {
      int node = order_[idx];
      for (int slot = head_[node]; slot >= 0;
           slot = (slot & 1) ? next1_[slot >> 1] : next0_[slot >> 1]) {
        int k = slot >> 1;
        const TransportArc& a = arcs_[k];
        int other = (node == a.i) ? demand_node(a.j) : a.i;
        if (visited_[other] == epoch_) continue;
        visited_[other] = epoch_;
        parent_[other] = node;
        parent_arc_[other] = k;
        depth_[other] = depth_[node] + 1;
        if (other >= m_)
          v_[other - m_] = cost_(a.i, a.j) - u_[a.i];
        else
          u_[other] = cost_(a.i, a.j) - v_[a.j];
        order_[top++] = other;
      }
    }
  }

  void pivot(int ei, int ej) {
    // Collect the two tree paths up to the least common ancestor.
    cyc_a_.clear();  // arcs on the path from the supply end, signs -,+,-,...
    cyc_b_.clear();  // arcs on the path from the demand end, signs -,+,-,...
    int a = ei, b = demand_node(ej);
    while (depth_[a] > depth_[b]) {
      cyc_a_.push_back(parent_arc_[a]);
      a = parent_[a];
    }
    while (depth_[b] > depth_[a]) {
      cyc_b_.push_back(parent_arc_[b]);
      b = parent_[b];
    }
    while (a != b) {
      cyc_a_.push_back(parent_arc_[a]);
      a = parent_[a];
      cyc_b_.push_back(parent_arc_[b]);
      b = parent_[b];
    }
    // The entering arc gains flow; along each path, arcs alternate starting
    // with a decrease.
    double theta = std::numeric_limits<double>::infinity();
    int leave = -1;
    auto scan = [&](const std::vector<int>& path) {
      for (std::size_t t = 0; t < path.size(); t += 2) {
        double f = arcs_[path[t]].flow;
        if (f < theta) {
          theta = f;
          leave = path[t];
        }
      }
    };
    scan(cyc_a_);
    scan(cyc_b_);
    if (leave < 0) {
      // Degenerate self-loop should be impossible; treat as a no-op pivot.
      return;
    }
    auto apply = [&](const std::vector<int>& path) {
      double sign = -1.0;
      for (int k : path) {
        arcs_[k].flow += sign * theta;
        if (arcs_[k].flow < 0 && arcs_[k].flow > -1e-12) arcs_[k].flow = 0.0;
        sign = -sign;
      }
    };
    apply(cyc_a_);
    apply(cyc_b_);
    arcs_[leave] = {ei, ej, theta};
  }

  int m_, n_, nodes_;
  const Eigen::MatrixXd& cost_;
  Eigen::VectorXd supply_, demand_;
  std::vector<int> head_, next0_, next1_;
  std::vector<int> parent_, parent_arc_, depth_, order_;
  std::vector<int> visited_;
  int epoch_ = 0;
  std::vector<int> cyc_a_, cyc_b_;
};

}  // namespace

bool network_simplex_solve(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                           const Eigen::MatrixXd& cost, Eigen::VectorXd& u, Eigen::VectorXd& v,
                           std::vector<TransportArc>& arcs, int max_iters) {
  if (cost.rows() != supply.size() || cost.cols() != demand.size()) return false;
  TransportSimplex ts(supply, demand, cost);
  if (!ts.solve(max_iters)) return false;
  u = std::move(ts.u_);
  v = std::move(ts.v_);
  arcs = std::move(ts.arcs_);
  return true;
}

bool network_simplex_potentials(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                                const Eigen::MatrixXd& cost, Eigen::VectorXd& u,
                                Eigen::VectorXd& v, int max_iters) {
  std::vector<TransportArc> arcs;
  return network_simplex_solve(supply, demand, cost, u, v, arcs, max_iters);
}

}  // namespace detail

TransportDual solve_ot_dual(const Eigen::VectorXd& pmf_0, const Eigen::VectorXd& pmf_1,
                            const Eigen::MatrixXd& cost) {
  const int n0 = static_cast<int>(pmf_0.size());
  const int n1 = static_cast<int>(pmf_1.size());
  if (n0 < 1 || n1 < 1) throw std::invalid_argument("solve_ot_dual: empty marginal");
  if (cost.rows() != n0 || cost.cols() != n1)
    throw std::invalid_argument("solve_ot_dual: cost shape mismatch");
  if (!cost.allFinite()) throw std::invalid_argument("solve_ot_dual: non-finite cost");
  if (pmf_0.minCoeff() < 0 || pmf_1.minCoeff() < 0)
    throw std::invalid_argument("solve_ot_dual: negative mass");
  if (std::abs(pmf_0.sum() - 1.0) > 1e-12 || std::abs(pmf_1.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("solve_ot_dual: marginals must sum to one");
  Eigen::VectorXd p0 = pmf_0 / pmf_0.sum();
  Eigen::VectorXd p1 = pmf_1 / pmf_1.sum();

  TransportDual out;
  const int cap = 50 * (n0 + n1) + 2000;
  if (detail::network_simplex_potentials(p0, p1, cost, out.potentials_0, out.potentials_1, cap)) {
    out.objective_value = p0.dot(out.potentials_0) + p1.dot(out.potentials_1);
    return out;
  }

  // Fallback: solve the dual LP  max p0.u + p1.v  s.t.  u_j + v_i <= C(j,i).
  LinearProgram lp;
  lp.objective.resize(n0 + n1);
  lp.objective << p0, p1;
  lp.constraint_matrix = Eigen::MatrixXd::Zero(n0 * n1, n0 + n1);
  lp.rhs.resize(n0 * n1);
  for (int j = 0; j < n0; ++j)
    for (int i = 0; i < n1; ++i) {
      int r = j * n1 + i;
      lp.constraint_matrix(r, j) = 1.0;
      lp.constraint_matrix(r, n0 + i) = 1.0;
      lp.rhs[r] = cost(j, i);
    }
  lp.row_sense.assign(n0 * n1, RowSense::LessEqual);
  lp.var_lower_bounds.assign(n0 + n1, VarBound::Free);
  LpSolution sol = solve_lp(lp);
  if (sol.status != LpStatus::Optimal)
    throw std::runtime_error("solve_ot_dual: fallback LP failed");
  out.potentials_0 = sol.variable_values.head(n0);
  out.potentials_1 = sol.variable_values.tail(n1);
  out.objective_value = sol.objective_value;
  return out;
}

}  // namespace dualbound
