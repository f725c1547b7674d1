#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualbound/outcome_models.hpp"
#include "dualbound/pipeline.hpp"

namespace dualbound {

/// Noise design for the synthetic outcome model. Homoskedastic uses a
/// constant variance; the heteroskedastic designs scale the per-arm noise
/// by ||x||_2 so that a homoskedastic working model is misspecified.
enum class NoiseDesign { Homoskedastic, HeteroI, HeteroII };

/// Synthetic randomized experiment with sample selection:
///   X ~ N(0, I_p);  Y(k) | X ~ N(x' beta + tau * k, sigma_k^2(x));
///   P(S(k)=1 | X) = logistic(x' beta_s + tau_s[k]);
///   S(0), S(1) coupled through one shared uniform so S(1) >= S(0) a.s.;
///   W ~ Bernoulli(1/2) independently, propensity known.
/// beta has equal weights scaled so Var(Y(k)) = outcome_variance, beta_s has
/// equal weights with unit norm.
struct SimScenario {
  int n = 1000;
  int p = 20;
  double tau = 2.0;
  double outcome_variance = 10.0;  // marginal Var(Y(k)); base noise var = 1
  NoiseDesign noise = NoiseDesign::Homoskedastic;
  double tau_s0 = 0.0;
  double tau_s1 = 1.0;
  // Estimand evaluated by the oracle and the estimation methods:
  // "lee" (lower bound on the always-selected contrast), "fh_cdf"
  // (P(Y0 <= fh_t0, Y1 <= fh_t1) lower bound), or "var_ite"
  // (lower bound on E[(Y1 - Y0)^2]).
  std::string estimand = "lee";
  double fh_t0 = 0.0;
  double fh_t1 = 0.0;
  int n_reps = 200;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument when n < 20, p < 0, or a parameter is not
/// finite.
void validate_scenario(const SimScenario& scenario);

/// Per-arm noise standard-deviation multipliers (sigma_0, sigma_1) implied by
/// the noise design; heteroskedastic arms use sigma_k * ||x||_2.
std::pair<double, double> noise_scales(const SimScenario& scenario);

/// One latent draw: both potential outcomes and both selection indicators,
/// plus the realized assignment.
struct LatentDraw {
  Eigen::VectorXd x;
  double y0 = 0.0, y1 = 0.0;
  int s0 = 0, s1 = 0;
  int w = 0;
};

/// Deterministic in (scenario.seed, rep_index).
std::vector<LatentDraw> generate_scenario_latent(const SimScenario& scenario, int rep_index);

/// Observed projection of the latent table: outcome is zero whenever the
/// realized selection indicator is zero; propensity is recorded as 1/2.
std::vector<ObservationRecord> generate_scenario_data(const SimScenario& scenario, int rep_index);

struct OracleBound {
  double theta_l = 0.0;
  double mc_se = 0.0;  // Monte Carlo standard error over the X draws
};

/// Sharp lower bound under the true data-generating process, computed from
/// the exact conditional laws (normal trimmed means for "lee", closed
/// Frechet-Hoeffding cells for "fh_cdf", a 200-point comonotone quantile grid
/// for "var_ite") averaged over n_oracle Monte Carlo draws of X.
/// Throws std::invalid_argument for an unsupported estimand label or
/// n_oracle < 100000 (p = 0 needs no integration and accepts any n_oracle).
OracleBound oracle_sharp_bound(const SimScenario& scenario, int n_oracle);

enum class SimMethod { NoCovariates, NaivePlugin, CrossfitDual };

std::string sim_method_name(SimMethod method);

struct MethodSummary {
  SimMethod method = SimMethod::CrossfitDual;
  double mean_estimate = 0.0;
  double mean_lcb = 0.0;
  double coverage = 0.0;  // fraction of reps with LCB <= oracle theta_L
  double mean_runtime_sec = 0.0;
};

struct SimReport {
  std::vector<MethodSummary> methods;
  double oracle_theta_l = 0.0;
  double oracle_mc_se = 0.0;
  int n_reps = 0;
  int n_failures = 0;  // reps excluded because a method threw
};

struct MethodOptions {
  std::vector<SimMethod> methods = {SimMethod::NoCovariates, SimMethod::NaivePlugin,
                                    SimMethod::CrossfitDual};
  double alpha = 0.05;
  int n_folds = 5;
  int nvals = 50;
  // Plug-in methods use an oracle standard deviation estimated once from this
  // many pilot replications of the same scenario.
  int pilot_reps = 500;
  int n_oracle = 200000;
};

/// Plug-in estimate of the scenario's estimand from a fitted joint
/// selection-outcome model, averaging the model-implied conditional bound
/// over the sample covariates (the "lee" trimming formula; closed forms for
/// the other labels). Exposed for the plug-in methods and their pilots.
double plugin_estimate(const SimScenario& scenario, const ConditionalLawModel& model,
                       const std::vector<ObservationRecord>& rows);

/// Runs every requested method on scenario.n_reps replications, computes the
/// oracle bound, and aggregates coverage / bias / runtime. Identical
/// (scenario, options) inputs reproduce the report exactly.
SimReport run_method_comparison(const SimScenario& scenario, const MethodOptions& options = {});

}  // namespace dualbound
