#include "dualbound/sim_harness.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "dualbound/estimand_library.hpp"
#include "dualbound/math.hpp"

namespace dualbound {

namespace {

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::acos(-1.0));
}

// Mean of a standard normal conditional on lying below its eta-quantile.
double lower_tail_normal_mean(double eta) {
  eta = std::min(std::max(eta, 1e-12), 1.0);
  if (eta >= 1.0 - 1e-12) return 0.0;
  return -normal_pdf(normal_quantile(eta)) / eta;
}

// splitmix64 finalizer, used to derive independent seeds.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix(mix(mix(seed) ^ a) ^ b);
}

// Outcome coefficient magnitude: equal weights with beta' beta fixed so the
// homoskedastic marginal variance matches scenario.outcome_variance.
double beta_coordinate(const SimScenario& sc) {
  if (sc.p == 0) return 0.0;
  return std::sqrt((sc.outcome_variance - 1.0) / sc.p);
}

double noise_sd(const SimScenario& sc, double x_norm, int arm) {
  auto [s0, s1] = noise_scales(sc);
  double s = arm == 1 ? s1 : s0;
  if (sc.noise == NoiseDesign::Homoskedastic) return s;
  return s * x_norm;
}

struct ConditionalLaw {
  double mu0, mu1, sd0, sd1, p_sel0, p_sel1;
};

// True conditional law at x under the scenario.
ConditionalLaw true_law(const SimScenario& sc, const Eigen::VectorXd& x) {
  double b = beta_coordinate(sc);
  double lin = b * x.sum();
  double bs = sc.p > 0 ? x.sum() / std::sqrt(static_cast<double>(sc.p)) : 0.0;
  ConditionalLaw law;
  law.mu0 = lin;
  law.mu1 = lin + sc.tau;
  law.sd0 = noise_sd(sc, x.norm(), 0);
  law.sd1 = noise_sd(sc, x.norm(), 1);
  law.p_sel0 = logistic(bs + sc.tau_s0);
  law.p_sel1 = logistic(bs + sc.tau_s1);
  return law;
}

// Conditional sharp lower bound at x for the scenario's estimand, given
// Gaussian conditional laws. Used both by the oracle (true law) and the
// plug-in methods (fitted law).
double conditional_bound(const SimScenario& sc, const ConditionalLaw& law) {
  if (sc.estimand == "fh_cdf") {
    double f0 = normal_cdf((sc.fh_t0 - law.mu0) / std::max(law.sd0, 1e-300));
    double f1 = normal_cdf((sc.fh_t1 - law.mu1) / std::max(law.sd1, 1e-300));
    return std::max(f0 + f1 - 1.0, 0.0);
  }
  if (sc.estimand == "var_ite") {
    // Conditional minimum of E[(Y1 - Y0)^2 | X]: comonotone coupling of the
    // two Gaussian quantile functions on a 200-point midpoint grid. The
    // variance bound subtracts the identified squared mean contrast at the
    // population level (see oracle_sharp_bound / plugin_estimate).
    constexpr int kGrid = 200;
    double acc = 0.0;
    for (int j = 0; j < kGrid; ++j) {
      double u = (j + 0.5) / kGrid;
      double z = normal_quantile(u);
      double d = (law.mu1 + law.sd1 * z) - (law.mu0 + law.sd0 * z);
      acc += d * d;
    }
    return acc / kGrid;
  }
  throw std::invalid_argument("conditional_bound: unsupported estimand '" + sc.estimand + "'");
}

// Lee numerator/denominator contributions at x: the bound is the ratio
// E_X[p0 (T - mu0)] / E_X[p0] with T the eta-trimmed conditional mean of
// Y(1) among the selected.
std::pair<double, double> lee_cell(const ConditionalLaw& law) {
  double eta = std::min(law.p_sel0 / std::max(law.p_sel1, 1e-300), 1.0);
  double trimmed = law.mu1 + law.sd1 * lower_tail_normal_mean(eta);
  return {law.p_sel0 * (trimmed - law.mu0), law.p_sel0};
}

ConditionalLaw fitted_law(const ConditionalLawModel& model, const Eigen::VectorXd& x) {
  ConditionalLaw law;
  law.mu0 = model_mean(model, x, 0);
  law.mu1 = model_mean(model, x, 1);
  law.sd0 = law.sd1 = model.sigma;
  law.p_sel0 = selection_probability(model, x, 0);
  law.p_sel1 = selection_probability(model, x, 1);
  return law;
}

std::vector<ObservationRecord> strip_covariates(std::vector<ObservationRecord> rows) {
  for (auto& r : rows) r.covariates = Eigen::VectorXd(0);
  return rows;
}

EstimandSpec scenario_spec(const SimScenario& sc) {
  if (sc.estimand == "lee") return make_lee(true);
  if (sc.estimand == "fh_cdf") return make_fh_cdf(sc.fh_t0, sc.fh_t1);
  if (sc.estimand == "var_ite") return make_var_ite();
  throw std::invalid_argument("scenario_spec: unsupported estimand '" + sc.estimand + "'");
}

ConditionalLawModel::Kind plugin_model_kind(const SimScenario& sc) {
  return sc.estimand == "lee" ? ConditionalLawModel::Kind::JointSelectionOutcome
                              : ConditionalLawModel::Kind::GaussianLinear;
}

}  // namespace

void validate_scenario(const SimScenario& sc) {
  if (sc.n < 20) throw std::invalid_argument("SimScenario: n must be >= 20");
  if (sc.p < 0) throw std::invalid_argument("SimScenario: p must be >= 0");
  if (sc.p == 0 && sc.noise != NoiseDesign::Homoskedastic)
    throw std::invalid_argument("SimScenario: heteroskedastic designs need p >= 1");
  if (sc.outcome_variance < 1.0)
    throw std::invalid_argument("SimScenario: outcome_variance must be >= the unit noise variance");
  if (sc.n_reps < 1) throw std::invalid_argument("SimScenario: n_reps must be >= 1");
  for (double v : {sc.tau, sc.outcome_variance, sc.tau_s0, sc.tau_s1, sc.fh_t0, sc.fh_t1})
    if (!std::isfinite(v)) throw std::invalid_argument("SimScenario: parameters must be finite");
  scenario_spec(sc);  // rejects unsupported labels
}

std::pair<double, double> noise_scales(const SimScenario& sc) {
  switch (sc.noise) {
    case NoiseDesign::Homoskedastic:
      return {1.0, 1.0};
    case NoiseDesign::HeteroI: {
      // sigma_1 / sigma_0 = 3, control arm normalized so E[sigma_0^2 ||X||^2] = 1.
      double s0 = 1.0 / std::sqrt(static_cast<double>(sc.p));
      return {s0, 3.0 * s0};
    }
    case NoiseDesign::HeteroII: {
      // sigma_0 / sigma_1 = 0.3, treated arm normalized so E[sigma_1^2 ||X||^2] = 1.
      double s1 = 1.0 / std::sqrt(static_cast<double>(sc.p));
      return {0.3 * s1, s1};
    }
  }
  return {1.0, 1.0};
}

std::vector<LatentDraw> generate_scenario_latent(const SimScenario& sc, int rep_index) {
  validate_scenario(sc);
  std::mt19937_64 rng(derive_seed(sc.seed, 0x5c3a7a11ULL, static_cast<std::uint64_t>(rep_index)));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  double b = beta_coordinate(sc);
  double bs_coord = sc.p > 0 ? 1.0 / std::sqrt(static_cast<double>(sc.p)) : 0.0;
  std::vector<LatentDraw> draws(sc.n);
  for (auto& d : draws) {
    d.x = Eigen::VectorXd::NullaryExpr(sc.p, [&](Eigen::Index) { return normal(rng); });
    double lin = b * d.x.sum();
    double bs = bs_coord * d.x.sum();
    double u_sel = unif(rng);
    // Shared uniform couples the selection indicators monotonically, so
    // S(1) >= S(0) holds almost surely.
    d.s0 = u_sel <= logistic(bs + sc.tau_s0) ? 1 : 0;
    d.s1 = u_sel <= logistic(bs + sc.tau_s1) ? 1 : 0;
    double norm = d.x.norm();
    d.y0 = lin + noise_sd(sc, norm, 0) * normal(rng);
    d.y1 = lin + sc.tau + noise_sd(sc, norm, 1) * normal(rng);
    d.w = coin(rng) ? 1 : 0;
  }
  return draws;
}

std::vector<ObservationRecord> generate_scenario_data(const SimScenario& sc, int rep_index) {
  auto latent = generate_scenario_latent(sc, rep_index);
  std::vector<ObservationRecord> rows(latent.size());
  bool uses_selection = sc.estimand == "lee";
  for (std::size_t i = 0; i < latent.size(); ++i) {
    const auto& d = latent[i];
    auto& r = rows[i];
    r.covariates = d.x;
    r.treatment = d.w;
    int s = d.w == 1 ? d.s1 : d.s0;
    if (uses_selection) {
      r.selection = s;
      r.outcome = s == 1 ? (d.w == 1 ? d.y1 : d.y0) : 0.0;
    } else {
      r.outcome = d.w == 1 ? d.y1 : d.y0;
    }
    r.propensity = 0.5;
  }
  return rows;
}

OracleBound oracle_sharp_bound(const SimScenario& sc, int n_oracle) {
  validate_scenario(sc);
  bool lee = sc.estimand == "lee";
  if (sc.p == 0) {
    // No integration needed: a single conditional cell is the answer.
    ConditionalLaw law = true_law(sc, Eigen::VectorXd(0));
    OracleBound out;
    if (lee) {
      auto [num, den] = lee_cell(law);
      out.theta_l = num / den;
    } else {
      out.theta_l = conditional_bound(sc, law);
      if (sc.estimand == "var_ite") out.theta_l -= sc.tau * sc.tau;
    }
    return out;
  }
  if (n_oracle < 100000)
    throw std::invalid_argument("oracle_sharp_bound: n_oracle must be >= 100000");
  std::mt19937_64 rng(derive_seed(sc.seed, 0x0a0c1eULL, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  double sum_a = 0.0, sum_b = 0.0, sum_aa = 0.0, sum_ab = 0.0, sum_bb = 0.0;
  Eigen::VectorXd x(sc.p);
  for (int i = 0; i < n_oracle; ++i) {
    for (int j = 0; j < sc.p; ++j) x[j] = normal(rng);
    ConditionalLaw law = true_law(sc, x);
    double a, bcell;
    if (lee) {
      std::tie(a, bcell) = lee_cell(law);
    } else {
      a = conditional_bound(sc, law);
      bcell = 1.0;
    }
    sum_a += a;
    sum_b += bcell;
    sum_aa += a * a;
    sum_ab += a * bcell;
    sum_bb += bcell * bcell;
  }
  double n = n_oracle;
  double abar = sum_a / n, bbar = sum_b / n;
  OracleBound out;
  out.theta_l = abar / bbar;
  // For the variance bound, the identified mean contrast is exactly tau under
  // the true law, so the deterministic shift leaves the MC error unchanged.
  if (sc.estimand == "var_ite") out.theta_l -= sc.tau * sc.tau;
  // Delta-method variance of the ratio via the influence (a - theta * b) / bbar.
  double var_infl = (sum_aa - 2.0 * out.theta_l * sum_ab + out.theta_l * out.theta_l * sum_bb) / n -
                    (abar - out.theta_l * bbar) * (abar - out.theta_l * bbar);
  out.mc_se = std::sqrt(std::max(var_infl, 0.0) / n) / bbar;
  return out;
}

std::string sim_method_name(SimMethod method) {
  switch (method) {
    case SimMethod::NoCovariates:
      return "NoCovariates";
    case SimMethod::NaivePlugin:
      return "NaivePlugin";
    case SimMethod::CrossfitDual:
      return "CrossfitDual";
  }
  return "unknown";
}

double plugin_estimate(const SimScenario& sc, const ConditionalLawModel& model,
                       const std::vector<ObservationRecord>& rows) {
  if (rows.empty()) throw std::invalid_argument("plugin_estimate: empty sample");
  if (sc.estimand == "lee") {
    double num = 0.0, den = 0.0;
    for (const auto& r : rows) {
      auto [a, b] = lee_cell(fitted_law(model, r.covariates));
      num += a;
      den += b;
    }
    if (den <= 0.0) throw std::runtime_error("plugin_estimate: fitted selection mass is zero");
    return num / den;
  }
  double acc = 0.0, mean_diff = 0.0;
  for (const auto& r : rows) {
    ConditionalLaw law = fitted_law(model, r.covariates);
    acc += conditional_bound(sc, law);
    mean_diff += law.mu1 - law.mu0;
  }
  acc /= static_cast<double>(rows.size());
  mean_diff /= static_cast<double>(rows.size());
  if (sc.estimand == "var_ite") acc -= mean_diff * mean_diff;
  return acc;
}

SimReport run_method_comparison(const SimScenario& sc, const MethodOptions& opt) {
  validate_scenario(sc);
  if (opt.methods.empty())
    throw std::invalid_argument("run_method_comparison: no methods requested");
  OracleBound oracle = oracle_sharp_bound(sc, opt.n_oracle);
  double z = normal_quantile(1.0 - opt.alpha);

  bool want_nocov = false, want_plugin = false, want_dual = false;
  for (SimMethod m : opt.methods) {
    want_nocov |= m == SimMethod::NoCovariates;
    want_plugin |= m == SimMethod::NaivePlugin;
    want_dual |= m == SimMethod::CrossfitDual;
  }

  // Pilot pass: sampling SD of each plug-in estimator under the true DGP,
  // standing in for the oracle variance the plug-in confidence bounds assume.
  double sd_nocov = 0.0, sd_plugin = 0.0;
  if (want_nocov || want_plugin) {
    std::vector<double> pilot_nocov, pilot_plugin;
    pilot_nocov.reserve(opt.pilot_reps);
    pilot_plugin.reserve(opt.pilot_reps);
    for (int r = 0; r < opt.pilot_reps; ++r) {
      int rep_index = 1'000'000 + r;  // disjoint from the evaluation reps
      auto rows = generate_scenario_data(sc, rep_index);
      std::uint64_t s = derive_seed(sc.seed, 0x91107ULL, static_cast<std::uint64_t>(rep_index));
      if (want_plugin) {
        auto model = fit_conditional_law_model(rows, plugin_model_kind(sc), s);
        pilot_plugin.push_back(plugin_estimate(sc, model, rows));
      }
      if (want_nocov) {
        auto stripped = strip_covariates(rows);
        auto model = fit_conditional_law_model(stripped, plugin_model_kind(sc), mix(s));
        pilot_nocov.push_back(plugin_estimate(sc, model, stripped));
      }
    }
    auto sample_sd = [](const std::vector<double>& v) {
      if (v.size() < 2) return 0.0;
      double mean = 0.0;
      for (double t : v) mean += t;
      mean /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double t : v) ss += (t - mean) * (t - mean);
      return std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    sd_nocov = sample_sd(pilot_nocov);
    sd_plugin = sample_sd(pilot_plugin);
  }

  struct Accum {
    double est = 0.0, lcb = 0.0, runtime = 0.0;
    int covered = 0;
  };
  Accum acc_nocov, acc_plugin, acc_dual;
  int n_ok = 0, n_fail = 0;

  EstimandSpec spec = scenario_spec(sc);
  for (int rep = 0; rep < sc.n_reps; ++rep) {
    auto rows = generate_scenario_data(sc, rep);
    std::uint64_t s = derive_seed(sc.seed, 0xace5ULL, static_cast<std::uint64_t>(rep));
    Accum next_nocov = acc_nocov, next_plugin = acc_plugin, next_dual = acc_dual;
    auto run_one = [&](Accum& a, double est, double lcb, double secs) {
      a.est += est;
      a.lcb += lcb;
      a.runtime += secs;
      if (lcb <= oracle.theta_l) ++a.covered;
    };
    try {
      using clock = std::chrono::steady_clock;
      if (want_plugin) {
        auto t0 = clock::now();
        auto model = fit_conditional_law_model(rows, plugin_model_kind(sc), s);
        double est = plugin_estimate(sc, model, rows);
        double secs = std::chrono::duration<double>(clock::now() - t0).count();
        run_one(next_plugin, est, est - z * sd_plugin, secs);
      }
      if (want_nocov) {
        auto t0 = clock::now();
        auto stripped = strip_covariates(rows);
        auto model = fit_conditional_law_model(stripped, plugin_model_kind(sc), mix(s));
        double est = plugin_estimate(sc, model, stripped);
        double secs = std::chrono::duration<double>(clock::now() - t0).count();
        run_one(next_nocov, est, est - z * sd_nocov, secs);
      }
      if (want_dual) {
        auto t0 = clock::now();
        PipelineConfig cfg;
        cfg.n_folds = opt.n_folds;
        cfg.nvals = opt.nvals;
        cfg.alpha = opt.alpha;
        cfg.compute_upper = false;
        cfg.seed = mix(s ^ 0xd0a1ULL);
        BoundReport rep_out = crossfit_dual_bound(rows, spec, cfg);
        double secs = std::chrono::duration<double>(clock::now() - t0).count();
        run_one(next_dual, rep_out.lower.theta_hat, rep_out.lower.confidence_bound, secs);
      }
    } catch (const std::exception&) {
      ++n_fail;
      continue;  // exclude the whole replication
    }
    acc_nocov = next_nocov;
    acc_plugin = next_plugin;
    acc_dual = next_dual;
    ++n_ok;
  }

  SimReport report;
  report.oracle_theta_l = oracle.theta_l;
  report.oracle_mc_se = oracle.mc_se;
  report.n_reps = n_ok;
  report.n_failures = n_fail;
  auto emit = [&](SimMethod m, const Accum& a) {
    MethodSummary row;
    row.method = m;
    if (n_ok > 0) {
      row.mean_estimate = a.est / n_ok;
      row.mean_lcb = a.lcb / n_ok;
      row.coverage = static_cast<double>(a.covered) / n_ok;
      row.mean_runtime_sec = a.runtime / n_ok;
    }
    report.methods.push_back(row);
  };
  for (SimMethod m : opt.methods) {
    if (m == SimMethod::NoCovariates) emit(m, acc_nocov);
    if (m == SimMethod::NaivePlugin) emit(m, acc_plugin);
    if (m == SimMethod::CrossfitDual) emit(m, acc_dual);
  }
  return report;
}

}  // namespace dualbound
