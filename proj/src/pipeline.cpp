#include "dualbound/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dualbound/math.hpp"

namespace dualbound {

namespace {

bool compound_spec(const EstimandSpec& spec) {
  return spec.outcome_shape == EstimandSpec::OutcomeShape::Compound;
}

OutcomePoint observed_point(const ObservationRecord& r, bool compound) {
  // The conventional value for an unselected outcome is (0, 0): the cost is
  // inert in y there, so the placeholder does not affect any bound.
  if (compound) return OutcomePoint::with_selection(r.selection == 1 ? r.outcome : 0.0, r.selection);
  return OutcomePoint::scalar(r.outcome);
}

void validate_inputs(const std::vector<ObservationRecord>& rows, const EstimandSpec& spec,
                     const PipelineConfig& config) {
  const int n = static_cast<int>(rows.size());
  if (config.n_folds < 2) throw std::invalid_argument("crossfit_dual_bound: n_folds must be >= 2");
  if (n < 4 * config.n_folds)
    throw std::invalid_argument("crossfit_dual_bound: need at least 4 rows per fold");
  if (!(config.alpha > 0.0 && config.alpha <= 0.5))
    throw std::invalid_argument("crossfit_dual_bound: alpha must be in (0, 0.5]");
  if (config.nvals < 2) throw std::invalid_argument("crossfit_dual_bound: nvals must be >= 2");
  if (!config.compute_lower && !config.compute_upper)
    throw std::invalid_argument("crossfit_dual_bound: at least one side must be requested");
  const bool compound = compound_spec(spec);
  for (int i = 0; i < n; ++i) {
    const auto& r = rows[i];
    if (!r.covariates.allFinite())
      throw std::invalid_argument("crossfit_dual_bound: non-finite covariates at row " +
                                  std::to_string(i));
    if (r.treatment != 0 && r.treatment != 1)
      throw std::invalid_argument("crossfit_dual_bound: treatment must be 0/1 at row " +
                                  std::to_string(i));
    if (compound && r.selection != 0 && r.selection != 1)
      throw std::invalid_argument(
          "crossfit_dual_bound: this estimand needs a selection indicator at row " +
          std::to_string(i));
    if ((!compound || r.selection == 1) && !std::isfinite(r.outcome))
      throw std::invalid_argument("crossfit_dual_bound: non-finite outcome at row " +
                                  std::to_string(i));
  }
  if (spec.kind == EstimandSpec::Kind::Quasilinear) {
    if (!spec.family)
      throw std::invalid_argument("crossfit_dual_bound: quasilinear spec lacks a family");
    if (!config.candidate_kinds.empty() && config.candidate_kinds.size() > 1)
      throw std::invalid_argument(
          "crossfit_dual_bound: model selection is not supported for quasilinear estimands");
  }
}

// Per-fold nuisances fitted on the complement: one model per candidate kind,
// the propensity map, and the fold's observed outcome points per arm (eval
// grid augmentation for the feasibility repair).
struct FoldContext {
  std::vector<int> eval_rows;
  int n_train = 0;
  std::vector<ConditionalLawModel> models;
  std::function<double(const ObservationRecord&)> propensity;
  std::vector<OutcomePoint> observed_0, observed_1;
};

// Extends a discretized law with near-zero-mass guard points so that the
// interpolation hull covers the scored outcomes; without them, constant
// extrapolation beyond the quantile grid forces large feasibility repairs.
// stratum = -1 for scalar laws, 1 for the selected stratum of compound laws.
DiscreteLaw with_guards(const DiscreteLaw& law, std::vector<double> guards, int stratum) {
  constexpr double kGuardMass = 1e-8;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& pt : law.support) {
    if (pt.s != stratum) continue;
    lo = std::min(lo, pt.y);
    hi = std::max(hi, pt.y);
  }
  std::sort(guards.begin(), guards.end());
  guards.erase(std::unique(guards.begin(), guards.end()), guards.end());
  std::vector<double> keep;
  for (double g : guards)
    if (std::isfinite(g) && (g < lo || g > hi)) keep.push_back(g);
  if (keep.empty()) return law;

  std::vector<std::pair<OutcomePoint, double>> pts;
  double scale = 1.0 - kGuardMass * static_cast<double>(keep.size());
  for (int i = 0; i < law.size(); ++i)
    pts.emplace_back(law.support[static_cast<std::size_t>(i)], law.pmf[i] * scale);
  for (double g : keep)
    pts.emplace_back(stratum < 0 ? OutcomePoint::scalar(g) : OutcomePoint::with_selection(g, 1),
                     kGuardMass);
  std::sort(pts.begin(), pts.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  DiscreteLaw out;
  out.pmf.resize(static_cast<long>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out.support.push_back(pts[i].first);
    out.pmf[static_cast<long>(i)] = pts[i].second;
  }
  out.validate();
  return out;
}

// One summand pass over all observations for a fixed Linear-shaped cost: the
// per-row dual solve, feasibility repair, and IPW/AIPW scoring.
struct ScoreResult {
  Eigen::VectorXd beta;               // n
  Eigen::MatrixXd kappa;              // n x J (z1 column first when present)
  std::vector<double> adjustment_sum; // per fold, for diagnostics
};

ScoreResult score_pass(const std::vector<ObservationRecord>& rows, const EstimandSpec& spec,
                       const EstimandSpec& cost_spec, const PipelineConfig& config,
                       const std::vector<FoldContext>& folds, int model_index, bool upper) {
  const int n = static_cast<int>(rows.size());
  const bool compound = compound_spec(cost_spec);
  const int j = (spec.uses_z1 ? 1 : 0) + (spec.uses_z0 ? 1 : 0);
  ScoreResult out;
  out.beta.resize(n);
  out.kappa = Eigen::MatrixXd::Zero(n, j);
  out.adjustment_sum.assign(folds.size(), 0.0);

  bool monotone_selection = false;
  for (const auto& cf : cost_spec.constraints)
    if (cf.label == "monotone_selection") monotone_selection = true;

  for (std::size_t k = 0; k < folds.size(); ++k) {
    const FoldContext& fc = folds[k];
    const ConditionalLawModel& model = fc.models[model_index];

    // Observed outcome extremes per arm (selected stratum only for compound
    // laws) feed the guard points of every discretization in this fold.
    std::array<std::pair<double, double>, 2> obs_range = {
        std::pair{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()},
        std::pair{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
    auto fold_points = [&](int arm) -> const std::vector<OutcomePoint>& {
      return arm == 0 ? fc.observed_0 : fc.observed_1;
    };
    for (int arm : {0, 1})
      for (const auto& pt : fold_points(arm)) {
        if (compound && pt.s != 1) continue;
        obs_range[static_cast<std::size_t>(arm)].first =
            std::min(obs_range[static_cast<std::size_t>(arm)].first, pt.y);
        obs_range[static_cast<std::size_t>(arm)].second =
            std::max(obs_range[static_cast<std::size_t>(arm)].second, pt.y);
      }

    DualSolveOptions opt;
    opt.upper = upper;
    for (int i : fc.eval_rows) {
      const auto& rec = rows[i];
      const Eigen::VectorXd& x = rec.covariates;
      double p0 = compound ? selection_probability(model, x, 0) : 1.0;
      double p1 = compound ? selection_probability(model, x, 1) : 1.0;
      // Under the monotone-selection restriction the fitted selection model
      // must satisfy p0 <= p1, otherwise the constrained coupling set at x is
      // empty and the multiplier diverges; clamp the fitted probabilities.
      // The margin keeps the coupling strictly feasible after the tiny-mass
      // guard points below add s=1 mass to arm 0.
      if (monotone_selection) p0 = std::max(std::min(p0, p1 - 1e-6), 0.0);
      auto make_law = [&](int arm) {
        double p = arm == 0 ? p0 : p1;
        std::vector<double> guards;
        DiscreteLaw law;
        if (!compound) {
          auto qf = conditional_quantile_fn(model, x, arm);
          law = discretize_law(qf, config.nvals);
          guards = {qf(5e-4).y, qf(1.0 - 5e-4).y};
        } else {
          // Grid the s=1 stratum by the conditional law of Y | S=1 and give
          // the s=0 stratum a single inert point, so both strata are present
          // whenever their probability is positive.
          // The joint quantile function carries the model's own selection
          // probability; map v through it so yq(v) is the v-quantile of
          // Y | S=1 even when the stratum mass p below is the clamped value.
          double p_own = selection_probability(model, x, arm);
          auto jf = conditional_quantile_fn(model, x, arm);
          auto yq = [&jf, p_own](double v) { return jf(1.0 - p_own + v * p_own).y; };
          law = discretize_joint_law(p, yq, config.nvals);
          if (p > 0.0) guards = {yq(5e-4), yq(1.0 - 5e-4)};
        }
        const auto& range = obs_range[static_cast<std::size_t>(arm)];
        if (range.first <= range.second) {
          guards.push_back(range.first);
          guards.push_back(range.second);
        }
        return with_guards(law, guards, compound ? 1 : -1);
      };
      DiscreteLaw law0 = make_law(0);
      DiscreteLaw law1 = make_law(1);

      DualSolution sol = solve_conditional_dual(cost_spec, x, law0, law1, opt);
      if (sol.multipliers.size() == 1 && sol.multipliers[0] > 0.0)
        opt.lambda_hint = sol.multipliers[0];  // warm-start the next row

      // Support x support pairs are feasible by solver optimality (they are
      // the rows of the conditional dual LP); only pairs touching an observed
      // outcome, where the dual is interpolated or extrapolated, can violate.
      // Evaluate the dual once per grid point, then scan the three observed
      // rectangles for the worst violation, as in feasibility_adjust.
      const int n_constraints = static_cast<int>(cost_spec.constraints.size());
      const double cost_sign = upper ? -1.0 : 1.0;
      auto values_at = [&](int arm, const std::vector<OutcomePoint>& pts) {
        std::vector<double> v(pts.size());
        for (std::size_t a = 0; a < pts.size(); ++a) v[a] = evaluate_dual(sol, arm, pts[a]);
        return v;
      };
      std::vector<double> vs0 = values_at(0, law0.support), vs1 = values_at(1, law1.support);
      std::vector<double> vo0 = values_at(0, fc.observed_0), vo1 = values_at(1, fc.observed_1);
      double worst = 0.0;
      auto scan = [&](const std::vector<OutcomePoint>& a_pts, const std::vector<double>& av,
                      const std::vector<OutcomePoint>& b_pts, const std::vector<double>& bv) {
        for (std::size_t a = 0; a < a_pts.size(); ++a)
          for (std::size_t b = 0; b < b_pts.size(); ++b) {
            double lhs = av[a] + bv[b];
            for (int l = 0; l < n_constraints; ++l)
              lhs -= sol.multipliers[l] *
                     cost_spec.constraints[static_cast<std::size_t>(l)].evaluator(a_pts[a],
                                                                                  b_pts[b]);
            worst = std::max(worst, lhs - cost_sign * cost_spec.cost_fn(a_pts[a], b_pts[b], x));
          }
      };
      scan(fc.observed_0, vo0, law1.support, vs1);
      scan(fc.observed_0, vo0, fc.observed_1, vo1);
      scan(law0.support, vs0, fc.observed_1, vo1);
      DualSolution adj = sol;
      double c = std::max(worst / 2.0, 0.0);
      if (c > 0.0) {
        adj.values_0.array() -= c;
        adj.values_1.array() -= c;
        adj.adjustment += c;
        adj.objective_value -= cost_sign * 2.0 * c;
      }
      out.adjustment_sum[k] += adj.adjustment;

      double pi_hat = fc.propensity(rec);
      if (config.summand_type == SummandType::AIPW) {
        double c0 = conditional_mean_of_dual(adj, 0, law0);
        double c1 = conditional_mean_of_dual(adj, 1, law1);
        out.beta[i] = aipw_summand(adj, rec, pi_hat, c0, c1);
      } else {
        out.beta[i] = ipw_summand(adj, rec, pi_hat);
      }
      // Upper-side duals are stored in the lower convention against -f, so
      // the summand estimates -E[f]; flip it back to the estimand scale.
      if (upper) out.beta[i] = -out.beta[i];

      // Identifiable-moment summands S^{(kappa_w)} = 1{W=w} z_w(Y, X) / pi_w.
      if (j > 0) {
        OutcomePoint y = observed_point(rec, compound);
        int col = 0;
        if (spec.uses_z1) {
          if (rec.treatment == 1) out.kappa(i, col) = spec.z1(y, x) / pi_hat;
          ++col;
        }
        if (spec.uses_z0) {
          if (rec.treatment == 0) out.kappa(i, col) = spec.z0(y, x) / (1.0 - pi_hat);
        }
      }
    }
  }
  return out;
}

std::vector<long long> cluster_labels(const std::vector<ObservationRecord>& rows) {
  bool any = false;
  for (const auto& r : rows)
    if (r.cluster_id >= 0) any = true;
  if (!any) return {};
  std::vector<long long> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].cluster_id < 0)
      throw std::invalid_argument("crossfit_dual_bound: cluster id missing at row " +
                                  std::to_string(i));
    out.push_back(rows[i].cluster_id);
  }
  return out;
}

// Adapt the spec's h(beta, kappa1, kappa0) to the stacked argument layout used
// by delta_method_bound: v = (beta [, kappa1][, kappa0]).
std::function<double(const Eigen::VectorXd&)> stacked_h(const EstimandSpec& spec) {
  return [&spec](const Eigen::VectorXd& v) {
    int idx = 1;
    double k1 = spec.uses_z1 ? v[idx++] : 0.0;
    double k0 = spec.uses_z0 ? v[idx] : 0.0;
    return spec.h(v[0], k1, k0);
  };
}

std::function<Eigen::VectorXd(const Eigen::VectorXd&)> stacked_grad(const EstimandSpec& spec) {
  return [&spec](const Eigen::VectorXd& v) {
    int idx = 1;
    double k1 = spec.uses_z1 ? v[idx++] : 0.0;
    double k0 = spec.uses_z0 ? v[idx] : 0.0;
    Eigen::Vector3d g = spec.grad_h(v[0], k1, k0);
    Eigen::VectorXd out(v.size());
    out[0] = g[0];
    int o = 1;
    if (spec.uses_z1) out[o++] = g[1];
    if (spec.uses_z0) out[o] = g[2];
    return out;
  };
}

std::pair<double, double> auto_bracket(const std::vector<ObservationRecord>& rows,
                                       const EstimandSpec& spec, const PipelineConfig& config) {
  if (config.bracket_lo < config.bracket_hi) return {config.bracket_lo, config.bracket_hi};
  if (!spec.auto_bracket && spec.bracket.first < spec.bracket.second) return spec.bracket;
  const bool compound = compound_spec(spec);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : rows) {
    if (compound && r.selection != 1) continue;
    lo = std::min(lo, r.outcome);
    hi = std::max(hi, r.outcome);
  }
  if (!(lo < hi)) {
    lo -= 1.0;
    hi += 1.0;
  }
  // The scan parameter lives on the scale of outcome differences.
  double span = hi - lo;
  return {-span - 1.0, span + 1.0};
}

}  // namespace

BoundReport crossfit_dual_bound(const std::vector<ObservationRecord>& rows,
                                const EstimandSpec& spec, const PipelineConfig& config) {
  validate_inputs(rows, spec, config);
  const int n = static_cast<int>(rows.size());
  const bool compound = compound_spec(spec);

  std::vector<ConditionalLawModel::Kind> kinds = config.candidate_kinds;
  if (kinds.empty()) kinds.push_back(config.model_kind);
  if (compound)
    for (auto& k : kinds) k = ConditionalLawModel::Kind::JointSelectionOutcome;
  const int n_models = static_cast<int>(kinds.size());
  const bool use_mb = n_models > 1;

  FoldAssignment folds_assign = make_folds(n, config.n_folds, config.seed);
  std::vector<FoldContext> folds(config.n_folds);
  for (int k = 0; k < config.n_folds; ++k) {
    FoldContext& fc = folds[k];
    std::vector<ObservationRecord> train;
    for (int i = 0; i < n; ++i) {
      if (folds_assign.fold_of[i] == k) {
        fc.eval_rows.push_back(i);
        OutcomePoint y = observed_point(rows[i], compound);
        (rows[i].treatment == 0 ? fc.observed_0 : fc.observed_1).push_back(y);
      } else {
        ObservationRecord t = rows[i];
        // Unselected outcomes are unobserved; zero the placeholder so model
        // fitting (which ignores unselected rows) sees only finite values.
        if (compound && t.selection != 1) t.outcome = 0.0;
        train.push_back(t);
      }
    }
    // The repair scan only needs the set of observed points, not their
    // multiplicity; duplicates (notably the shared unselected point of
    // compound outcomes) would just rescan identical pairs.
    for (auto* obs : {&fc.observed_0, &fc.observed_1}) {
      std::sort(obs->begin(), obs->end());
      obs->erase(std::unique(obs->begin(), obs->end()), obs->end());
    }
    fc.n_train = static_cast<int>(train.size());
    for (int m = 0; m < n_models; ++m)
      fc.models.push_back(fit_conditional_law_model(
          train, kinds[static_cast<std::size_t>(m)],
          config.seed + 1000003ULL * static_cast<std::uint64_t>(k) +
              static_cast<std::uint64_t>(m)));
    fc.propensity = fit_propensity(config.propensity_method == PropensityMethod::Known ? rows : train,
                                   config.propensity_method, config.propensity_clip,
                                   config.seed + 7919ULL * static_cast<std::uint64_t>(k));
  }

  BoundReport report;
  report.n = n;
  report.fold_diagnostics.resize(folds.size());
  for (std::size_t k = 0; k < folds.size(); ++k) {
    report.fold_diagnostics[k].fold = static_cast<int>(k);
    report.fold_diagnostics[k].n_train = folds[k].n_train;
    report.fold_diagnostics[k].n_eval = static_cast<int>(folds[k].eval_rows.size());
  }
  std::vector<long long> clusters = cluster_labels(rows);
  std::vector<int> fold_of = folds_assign.fold_of;

  auto record_adjustments = [&](const ScoreResult& sr, bool upper) {
    for (std::size_t k = 0; k < folds.size(); ++k) {
      double mean = folds[k].eval_rows.empty()
                        ? 0.0
                        : sr.adjustment_sum[k] / static_cast<double>(folds[k].eval_rows.size());
      (upper ? report.fold_diagnostics[k].mean_adjustment_upper
             : report.fold_diagnostics[k].mean_adjustment_lower) = mean;
    }
  };

  if (spec.kind == EstimandSpec::Kind::Quasilinear) {
    auto [c_lo, c_hi] = auto_bracket(rows, spec, config);
    auto side_root = [&](bool upper) {
      // theta(P) <= c iff theta^(c)(P) <= 0, so the lower confidence bound is
      // min{ c : LCB of family(c) <= 0 } and the upper confidence bound is
      // min{ c : UCB of family(c) <= 0 }; both maps are nonincreasing in c.
      auto value_of_c = [&](double c) {
        EstimandSpec member = spec.family(c);
        ScoreResult sr = score_pass(rows, spec, member, config, folds, 0, upper);
        SummandTable table;
        table.values = sr.beta;
        table.fold_of = fold_of;
        table.cluster_of = clusters;
        BoundEstimate be = crossfit_bound(table, config.alpha, upper ? BoundSide::Upper
                                                                     : BoundSide::Lower);
        return be.confidence_bound;
      };
      double root = quasilinear_bound(value_of_c, c_lo, c_hi, config.quasilinear_tol);
      BoundEstimate be;
      be.theta_hat = root;
      be.confidence_bound = root;
      be.alpha = config.alpha;
      be.side = upper ? BoundSide::Upper : BoundSide::Lower;
      be.n_effective = n;
      return be;
    };
    if (config.compute_lower) {
      report.lower = side_root(false);
      report.has_lower = true;
    }
    if (config.compute_upper) {
      report.upper = side_root(true);
      report.has_upper = true;
    }
  } else {
    auto side_bound = [&](bool upper) -> BoundEstimate {
      std::vector<ScoreResult> passes;
      for (int m = 0; m < n_models; ++m)
        passes.push_back(score_pass(rows, spec, spec, config, folds, m, upper));
      record_adjustments(passes[0], upper);

      const bool generalized = spec.kind == EstimandSpec::Kind::Generalized;
      if (!use_mb) {
        const ScoreResult& sr = passes[0];
        if (!generalized) {
          SummandTable table;
          table.values = sr.beta;
          table.fold_of = fold_of;
          table.cluster_of = clusters;
          return crossfit_bound(table, config.alpha, upper ? BoundSide::Upper : BoundSide::Lower);
        }
        return delta_method_bound(sr.beta, sr.kappa, stacked_h(spec), stacked_grad(spec),
                                  config.alpha, upper ? BoundSide::Upper : BoundSide::Lower,
                                  clusters);
      }

      // Multiplier-bootstrap selection across candidate models. The upper side
      // reuses the lower-side machinery on negated summands.
      double sign = upper ? -1.0 : 1.0;
      MbResult mb;
      if (!generalized) {
        SummandTable table;
        table.values.resize(n, n_models);
        for (int m = 0; m < n_models; ++m) table.values.col(m) = sign * passes[m].beta;
        table.fold_of = fold_of;
        table.cluster_of = clusters;
        mb = mb_select_lcb(table, config.alpha, config.mb_draws, config.seed + (upper ? 101 : 100));
      } else {
        Eigen::MatrixXd beta_cols(n, n_models);
        for (int m = 0; m < n_models; ++m) beta_cols.col(m) = sign * passes[m].beta;
        Eigen::MatrixXd kappa_cols = passes[0].kappa;  // identified moments are model-free
        auto h1 = stacked_h(spec);
        auto g1 = stacked_grad(spec);
        auto h_signed = [h1, sign](const Eigen::VectorXd& v) {
          Eigen::VectorXd w = v;
          w[0] *= sign;
          return sign * h1(w);
        };
        auto g_signed = [g1, sign](const Eigen::VectorXd& v) {
          Eigen::VectorXd w = v;
          w[0] *= sign;
          Eigen::VectorXd g = g1(w);
          // d/dv0 [s h(s v0, t)] = h_1; d/dt [s h(s v0, t)] = s h_t.
          g.tail(g.size() - 1) *= sign;
          return g;
        };
        std::vector<std::function<double(const Eigen::VectorXd&)>> hs(n_models, h_signed);
        std::vector<std::function<Eigen::VectorXd(const Eigen::VectorXd&)>> gs(n_models, g_signed);
        mb = crossfit_generalized_mb(beta_cols, kappa_cols, hs, gs, config.alpha, config.mb_draws,
                                     config.seed + (upper ? 101 : 100));
      }
      report.used_mb = true;
      (upper ? report.selected_model_upper : report.selected_model_lower) = mb.selected_k;
      (upper ? report.mb_quantile_upper : report.mb_quantile_lower) = mb.q_hat;
      BoundEstimate be;
      be.theta_hat = sign * mb.per_model[static_cast<std::size_t>(mb.selected_k)].first;
      be.se = mb.per_model[static_cast<std::size_t>(mb.selected_k)].second /
              std::sqrt(static_cast<double>(n));
      be.confidence_bound = sign * mb.lcb;
      be.alpha = config.alpha;
      be.side = upper ? BoundSide::Upper : BoundSide::Lower;
      be.n_effective = n;
      return be;
    };
    if (config.compute_lower) {
      report.lower = side_bound(false);
      report.has_lower = true;
    }
    if (config.compute_upper) {
      report.upper = side_bound(true);
      report.has_upper = true;
    }
  }

  if (report.has_lower && report.has_upper) {
    report.interval =
        two_sided_interval(report.lower, report.upper, 0.0, config.alpha, config.interval_method);
    report.has_interval = true;
  }
  return report;
}

}  // namespace dualbound
