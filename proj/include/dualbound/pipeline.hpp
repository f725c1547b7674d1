#pragma once

#include <cstdint>
#include <vector>

#include "dualbound/bootstrap.hpp"
#include "dualbound/dual_engine.hpp"
#include "dualbound/estimand.hpp"
#include "dualbound/estimators.hpp"
#include "dualbound/outcome_models.hpp"

namespace dualbound {

enum class SummandType { IPW, AIPW };

struct PipelineConfig {
  int n_folds = 5;
  int nvals = 50;
  double alpha = 0.05;
  // Model fitted per fold. Compound estimands always use the joint
  // selection-outcome model regardless of this setting.
  ConditionalLawModel::Kind model_kind = ConditionalLawModel::Kind::GaussianLinear;
  // When nonempty (size >= 2), multiplier-bootstrap model selection runs over
  // these candidate kinds instead of the single model_kind.
  std::vector<ConditionalLawModel::Kind> candidate_kinds;
  PropensityMethod propensity_method = PropensityMethod::Known;
  double propensity_clip = 0.01;
  SummandType summand_type = SummandType::IPW;
  IntervalMethod interval_method = IntervalMethod::ImbensManskiStoye;
  bool compute_lower = true;
  bool compute_upper = true;
  // Quasilinear root search: bisection tolerance and bracket; equal endpoints
  // request an automatic bracket from the observed outcome range.
  double quasilinear_tol = 1e-4;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  int mb_draws = 2000;
  std::uint64_t seed = 0;
};

struct FoldDiagnostic {
  int fold = 0;
  int n_train = 0;
  int n_eval = 0;
  // Mean feasibility adjustment c_x over the fold's scored observations, per
  // side (zero when that side was not computed).
  double mean_adjustment_lower = 0.0;
  double mean_adjustment_upper = 0.0;
};

struct BoundReport {
  bool has_lower = false;
  bool has_upper = false;
  BoundEstimate lower, upper;
  bool has_interval = false;
  IntervalEstimate interval;
  std::vector<FoldDiagnostic> fold_diagnostics;
  int n = 0;
  // Multiplier-bootstrap model selection metadata (when candidate_kinds set).
  bool used_mb = false;
  int selected_model_lower = 0;
  int selected_model_upper = 0;
  double mb_quantile_lower = 0.0;
  double mb_quantile_upper = 0.0;
};

/// End-to-end cross-fit dual bound: per fold, fit the outcome/selection model
/// and propensity on the complement, discretize the conditional laws at each
/// held-out observation, solve the conditional dual, repair feasibility over
/// the discretization support plus the fold's observed outcomes, and score
/// IPW/AIPW summands; pool across folds into one-sided bounds (delta-method
/// for Generalized estimands, root search for Quasilinear ones) and a
/// two-sided interval.
BoundReport crossfit_dual_bound(const std::vector<ObservationRecord>& rows,
                                const EstimandSpec& spec, const PipelineConfig& config);

}  // namespace dualbound
