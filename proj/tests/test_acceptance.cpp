// Acceptance suite: one test case per release criterion, each printing a
// single [criterion N] PASS/FAIL line with its runtime. Tolerances are pinned
// in the assertions.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "dualbound/bootstrap.hpp"
#include "dualbound/dual_engine.hpp"
#include "dualbound/estimand_library.hpp"
#include "dualbound/estimators.hpp"
#include "dualbound/lp.hpp"
#include "dualbound/pipeline.hpp"
#include "dualbound/sim_harness.hpp"

namespace fs = std::filesystem;
using namespace dualbound;

namespace {

const Eigen::VectorXd kNoX = Eigen::VectorXd::Zero(0);

// Tracks a criterion's overall verdict while still reporting each condition
// through doctest.
struct Criterion {
  int id;
  bool ok = true;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  explicit Criterion(int id_) : id(id_) {}
  void expect(bool cond, const char* what) {
    if (!cond) {
      ok = false;
      std::printf("[criterion %d]   failed condition: %s\n", id, what);
    }
    CHECK_MESSAGE(cond, what);
  }
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  ~Criterion() {
    std::printf("[criterion %d] %s (%.1f s)\n", id, ok ? "PASS" : "FAIL", elapsed());
    std::fflush(stdout);
  }
};

EstimandSpec linear_spec(std::function<double(const OutcomePoint&, const OutcomePoint&)> f,
                         const char* label) {
  EstimandSpec spec;
  spec.label = label;
  spec.kind = EstimandSpec::Kind::Linear;
  spec.cost_fn = [f = std::move(f)](const OutcomePoint& y0, const OutcomePoint& y1,
                                    const Eigen::VectorXd&) { return f(y0, y1); };
  return spec;
}

DiscreteLaw scalar_law(const std::vector<double>& ys, const std::vector<double>& ps) {
  DiscreteLaw law;
  for (double y : ys) law.support.push_back(OutcomePoint::scalar(y));
  law.pmf = Eigen::Map<const Eigen::VectorXd>(ps.data(), static_cast<long>(ps.size()));
  return law;
}

DiscreteLaw random_law(std::mt19937_64& rng, int min_pts, int max_pts) {
  std::uniform_int_distribution<int> npts(min_pts, max_pts);
  std::uniform_real_distribution<double> yval(-2.0, 2.0);
  std::uniform_real_distribution<double> mass(0.1, 1.0);
  int n = npts(rng);
  std::vector<double> ys, ps;
  for (int k = 0; k < n; ++k) ys.push_back(yval(rng));
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  double tot = 0.0;
  for (std::size_t k = 0; k < ys.size(); ++k) {
    ps.push_back(mass(rng));
    tot += ps.back();
  }
  for (double& p : ps) p /= tot;
  return scalar_law(ys, ps);
}

// Primal oracle: the coupling LP, independent of the dual machinery.
double primal_min(const Eigen::VectorXd& p0, const Eigen::VectorXd& p1,
                  const Eigen::MatrixXd& cost) {
  int n0 = static_cast<int>(p0.size()), n1 = static_cast<int>(p1.size());
  LinearProgram lp;
  lp.objective.resize(n0 * n1);
  lp.constraint_matrix = Eigen::MatrixXd::Zero(n0 + n1, n0 * n1);
  lp.rhs.resize(n0 + n1);
  for (int j = 0; j < n0; ++j)
    for (int i = 0; i < n1; ++i) {
      int v = j * n1 + i;
      lp.objective[v] = -cost(j, i);
      lp.constraint_matrix(j, v) = 1.0;
      lp.constraint_matrix(n0 + i, v) = 1.0;
    }
  lp.rhs << p0, p1;
  lp.row_sense.assign(n0 + n1, RowSense::Equal);
  lp.var_lower_bounds.assign(n0 * n1, VarBound::NonNegative);
  LpSolution sol = solve_lp(lp);
  REQUIRE(sol.status == LpStatus::Optimal);
  return -sol.objective_value;
}

}  // namespace

TEST_CASE("criterion 1: Frechet-Hoeffding exactness through the pipeline") {
  Criterion c(1);
  // Binary outcomes with exact arm proportions and alternating treatment, so
  // the IPW mean reduces to per-arm empirical means and the fold-level dual
  // vertex evaluates the closed form exactly.
  auto run_point = [&](double p, double q, std::uint64_t seed) {
    const int per_arm = 100;
    std::vector<ObservationRecord> rows(2 * per_arm);
    int low0 = static_cast<int>(std::lround(p * per_arm));
    int low1 = static_cast<int>(std::lround(q * per_arm));
    int seen0 = 0, seen1 = 0;
    for (int i = 0; i < 2 * per_arm; ++i) {
      auto& r = rows[i];
      r.treatment = i % 2;
      r.covariates = kNoX;
      r.propensity = 0.5;
      if (r.treatment == 0)
        r.outcome = seen0++ < low0 ? 0.0 : 1.0;
      else
        r.outcome = seen1++ < low1 ? 0.0 : 1.0;
    }
    PipelineConfig pc;
    pc.model_kind = ConditionalLawModel::Kind::EmpiricalResidualLinear;
    pc.compute_upper = false;
    pc.seed = seed;
    BoundReport rep = crossfit_dual_bound(rows, make_fh_cdf(0.5, 0.5), pc);
    return rep.lower.theta_hat;
  };
  int idx = 0;
  for (double base : {0.25, 0.31, 0.37, 0.43, 0.49}) {
    // Five clearly-infeasible-overlap points (sum < 0.8) and five clearly
    // positive points (sum > 1.2), staying away from the kink at p + q = 1.
    double lo_p = base, lo_q = 0.78 - base;
    double hi_p = base + 0.36, hi_q = 1.22 - base - 0.36 + 2 * (base - 0.25);
    for (auto [p, q] : {std::pair{lo_p, lo_q}, std::pair{hi_p, hi_q},
                        std::pair{lo_q, lo_p}, std::pair{hi_q, hi_p}}) {
      double truth = std::max(0.0, p + q - 1.0);
      double got = run_point(p, q, 100 + static_cast<std::uint64_t>(idx++));
      c.expect(std::abs(got - truth) <= 1e-8, "pipeline theta_L matches max(0, p+q-1) to 1e-8");
    }
  }
  c.expect(idx == 20, "20-point (p, q) grid evaluated");
  c.expect(c.elapsed() < 1.0, "criterion 1 runtime under 1 s");
}

TEST_CASE("criterion 2: comonotone squared-difference oracle") {
  Criterion c(2);
  std::mt19937_64 rng(20240819);
  std::uniform_int_distribution<int> sz(2, 50);
  std::uniform_real_distribution<double> val(-3.0, 3.0);
  EstimandSpec spec = linear_spec(
      [](const OutcomePoint& a, const OutcomePoint& b) { return (b.y - a.y) * (b.y - a.y); },
      "sqdiff");
  for (int rep = 0; rep < 50; ++rep) {
    int m = sz(rng);
    std::vector<double> y0(m), y1(m), p(m, 1.0 / m);
    for (int i = 0; i < m; ++i) {
      y0[i] = val(rng);
      y1[i] = val(rng);
    }
    DiscreteLaw l0 = scalar_law(y0, p), l1 = scalar_law(y1, p);
    std::sort(y0.begin(), y0.end());
    std::sort(y1.begin(), y1.end());
    double oracle = 0.0;
    for (int i = 0; i < m; ++i) oracle += (y1[i] - y0[i]) * (y1[i] - y0[i]) / m;
    double got = solve_conditional_dual(spec, kNoX, l0, l1).objective_value;
    c.expect(std::abs(got - oracle) <= 1e-6, "dual min E[(Y1-Y0)^2] equals sorted-quantile sum");
  }
  c.expect(c.elapsed() < 30.0, "criterion 2 runtime under 30 s");
}

TEST_CASE("criterion 3: weak-duality fuzz under corrupted laws") {
  Criterion c(3);
  std::mt19937_64 rng(77001);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  int valid = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    DiscreteLaw true0 = random_law(rng, 2, 5), true1 = random_law(rng, 2, 5);
    DiscreteLaw fake0 = random_law(rng, 2, 5), fake1 = random_law(rng, 2, 5);
    double a = coef(rng), b = coef(rng), d = coef(rng), e = coef(rng);
    EstimandSpec spec = linear_spec(
        [=](const OutcomePoint& y0, const OutcomePoint& y1) {
          return a + b * y0.y + d * y1.y + e * (y1.y - y0.y) * (y1.y - y0.y);
        },
        "fuzz");
    DualSolution sol = solve_conditional_dual(spec, kNoX, fake0, fake1);
    std::vector<OutcomePoint> g0 = fake0.support, g1 = fake1.support;
    g0.insert(g0.end(), true0.support.begin(), true0.support.end());
    g1.insert(g1.end(), true1.support.begin(), true1.support.end());
    DualSolution adj = feasibility_adjust(sol, spec, kNoX, g0, g1);
    double g_true =
        conditional_mean_of_dual(adj, 0, true0) + conditional_mean_of_dual(adj, 1, true1);
    Eigen::MatrixXd cost(true0.size(), true1.size());
    for (int j = 0; j < true0.size(); ++j)
      for (int i = 0; i < true1.size(); ++i)
        cost(j, i) = spec.cost_fn(true0.support[j], true1.support[i], kNoX);
    double theta_l = primal_min(true0.pmf, true1.pmf, cost);
    if (g_true <= theta_l + 1e-8) ++valid;
  }
  c.expect(valid == 1000, "adjusted dual value <= primal theta_L + 1e-8 in 1000/1000 cases");
  c.expect(c.elapsed() < 120.0, "criterion 3 runtime under 2 min");
}

TEST_CASE("criterion 4: Lee trimming closed form at eta = 0.6") {
  Criterion c(4);
  EstimandSpec spec = make_lee(true);
  // Arm 0: selected with probability 0.6, three-point selected outcome law.
  DiscreteLaw l0;
  l0.support = {OutcomePoint::with_selection(0.0, 0), OutcomePoint::with_selection(1.0, 1),
                OutcomePoint::with_selection(2.0, 1), OutcomePoint::with_selection(3.0, 1)};
  l0.pmf = Eigen::Vector4d(0.4, 0.2, 0.2, 0.2);
  // Arm 1: always selected, 50 equal-mass points => eta = 0.6 trims to the
  // bottom 30.
  DiscreteLaw l1;
  std::vector<double> y1vals;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> val(-2.0, 4.0);
  for (int i = 0; i < 50; ++i) y1vals.push_back(val(rng));
  std::sort(y1vals.begin(), y1vals.end());
  l1.pmf = Eigen::VectorXd::Constant(50, 0.02);
  for (double y : y1vals) l1.support.push_back(OutcomePoint::with_selection(y, 1));

  double bottom30 = std::accumulate(y1vals.begin(), y1vals.begin() + 30, 0.0) / 30.0;
  double mu0_sel = (1.0 + 2.0 + 3.0) / 3.0;
  DualSolveOptions opt;
  double beta_lo = solve_conditional_dual(spec, kNoX, l0, l1, opt).objective_value;
  double theta = spec.h(beta_lo, 0.0, 0.6);
  c.expect(std::abs(theta - (bottom30 - mu0_sel)) <= 1e-4,
           "dual Lee bound matches the trimming formula within 1e-4");
  c.expect(c.elapsed() < 5.0, "criterion 4 runtime under 5 s");
}

TEST_CASE("criterion 6: crossfit speed at n = 1000") {
  Criterion c(6);
  SimScenario sc;
  sc.seed = 2024;
  auto rows = generate_scenario_data(sc, 0);
  PipelineConfig pc;
  pc.model_kind = ConditionalLawModel::Kind::JointSelectionOutcome;
  pc.compute_upper = false;
  pc.seed = 5;
  auto t0 = std::chrono::steady_clock::now();
  BoundReport rep = crossfit_dual_bound(rows, make_lee(true), pc);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("[criterion 6]   crossfit n=1000 K=5 nvals=50: %.2f s, theta_hat=%.4f\n", secs,
              rep.lower.theta_hat);
  c.expect(secs <= 60.0, "full crossfit run completes within 60 s");
  c.expect(std::isfinite(rep.lower.theta_hat), "estimate is finite");
}

TEST_CASE("criterion 7: multiplier bootstrap calibration") {
  Criterion c(7);
  std::mt19937_64 rng(424242);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // K = 1: the standardized multiplier statistic is exactly N(0,1) given the
  // data, so q_hat estimates the 95th normal percentile.
  {
    SummandTable t;
    t.values.resize(4000, 1);
    for (int i = 0; i < 4000; ++i) t.values(i, 0) = gauss(rng);
    double q1 = multiplier_bootstrap_quantile(t, 0.05, 40000, 7);
    std::printf("[criterion 7]   K=1 q_hat = %.4f (target 1.645)\n", q1);
    c.expect(std::abs(q1 - 1.645) <= 0.05, "K=1 quantile within 0.05 of 1.645");
  }
  // K = 2 independent columns: max of two independent N(0,1) draws, with
  // 95th percentile Phi^{-1}(sqrt(0.95)) ~= 1.955.
  {
    SummandTable t;
    t.values.resize(4000, 2);
    for (int i = 0; i < 4000; ++i) {
      t.values(i, 0) = gauss(rng);
      t.values(i, 1) = gauss(rng);
    }
    double q2 = multiplier_bootstrap_quantile(t, 0.05, 40000, 8);
    std::printf("[criterion 7]   K=2 q_hat = %.4f (target 1.955)\n", q2);
    c.expect(std::abs(q2 - 1.955) <= 0.05, "K=2 quantile within 0.05 of 1.955");
  }
  // Coverage of the selected LCB over 500 replications with two valid models
  // (both population means equal the true theta = 0): miscoverage <= alpha +
  // 0.03.
  int miss = 0;
  const int n = 200, reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    SummandTable t;
    t.values.resize(n, 2);
    for (int i = 0; i < n; ++i) {
      t.values(i, 0) = gauss(rng);
      t.values(i, 1) = gauss(rng);
    }
    MbResult r = mb_select_lcb(t, 0.05, 2000, 1000 + static_cast<std::uint64_t>(rep));
    if (r.lcb > 0.0) ++miss;
  }
  double miscoverage = static_cast<double>(miss) / reps;
  std::printf("[criterion 7]   MB LCB miscoverage = %.3f (budget 0.080)\n", miscoverage);
  c.expect(miscoverage <= 0.08, "MB LCB miscoverage <= alpha + 0.03 over 500 reps");
  c.expect(c.elapsed() < 600.0, "criterion 7 runtime under 10 min");
}

TEST_CASE("criterion 8: AIPW double robustness") {
  Criterion c(8);
  const int n = 2000;
  const double tau = 1.5;
  EstimandSpec ate = linear_spec(
      [](const OutcomePoint& a, const OutcomePoint& b) { return b.y - a.y; }, "ate_check");

  // Shared draw machinery: covariates, treatment coin, and noise.
  auto make_rows = [&](std::uint64_t seed, bool nonlinear_outcome, bool corrupt_propensity) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);  // true assignment probability
    std::vector<ObservationRecord> rows(n);
    for (auto& r : rows) {
      Eigen::VectorXd x(3);
      for (int j = 0; j < 3; ++j) x[j] = gauss(rng);
      r.covariates = x;
      r.treatment = coin(rng) ? 1 : 0;
      double base = nonlinear_outcome ? 2.0 * std::sin(2.0 * x[0]) + x[1] * x[1] - 1.0
                                      : 0.8 * x[0] - 0.5 * x[1] + 0.3 * x[2];
      r.outcome = base + tau * r.treatment + gauss(rng);
      // A deliberately wrong propensity model; the truth is a fair coin.
      r.propensity = corrupt_propensity ? 1.0 / (1.0 + std::exp(-1.5 * x[0])) : 0.5;
    }
    return rows;
  };
  auto run = [&](const std::vector<ObservationRecord>& rows) {
    PipelineConfig pc;
    pc.summand_type = SummandType::AIPW;
    pc.propensity_method = PropensityMethod::Known;
    pc.compute_upper = false;
    pc.seed = 11;
    return crossfit_dual_bound(rows, ate, pc);
  };

  // Regime A: propensity corrupted, outcome model correct (linear DGP).
  BoundReport a = run(make_rows(31, false, true));
  std::printf("[criterion 8]   corrupted propensity: theta=%.4f se=%.4f (tau=%.1f)\n",
              a.lower.theta_hat, a.lower.se, tau);
  c.expect(std::abs(a.lower.theta_hat - tau) <= 3.0 * a.lower.se,
           "AIPW bias <= 3 SE with a corrupted propensity model");

  // Regime B: outcome model corrupted (nonlinear DGP, linear working model),
  // propensity known exactly.
  BoundReport b = run(make_rows(32, true, false));
  std::printf("[criterion 8]   corrupted outcome model: theta=%.4f se=%.4f (tau=%.1f)\n",
              b.lower.theta_hat, b.lower.se, tau);
  c.expect(std::abs(b.lower.theta_hat - tau) <= 3.0 * b.lower.se,
           "AIPW bias <= 3 SE with a corrupted outcome model");
  c.expect(c.elapsed() < 300.0, "criterion 8 runtime under 5 min");
}

TEST_CASE("criterion 9: CLI golden determinism") {
  Criterion c(9);
  fs::path work = fs::temp_directory_path() / "dualbound_acceptance_cli";
  fs::create_directories(work);
  // Deterministic synthetic CSV.
  {
    std::mt19937_64 rng(555777);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::ofstream csv(work / "data.csv", std::ios::binary);
    csv.precision(10);
    csv << "outcome,treatment,x1,x2\n";
    for (int i = 0; i < 200; ++i) {
      int w = i % 2;
      double x1 = gauss(rng), x2 = gauss(rng);
      csv << 0.7 * x1 - 0.4 * x2 + 1.2 * w + gauss(rng) << ',' << w << ',' << x1 << ',' << x2
          << '\n';
    }
  }
  auto config_for = [&](const fs::path& out) {
    std::ostringstream ss;
    ss << "{\"command\":\"estimate\",\"input_csv\":\"" << (work / "data.csv").string()
       << "\",\"estimand\":{\"label\":\"fh_cdf\",\"y0_star\":0.5,\"y1_star\":1.5},"
          "\"nvals\":25,\"propensity\":\"known\",\"propensity_value\":0.5,\"seed\":21,"
          "\"output_dir\":\""
       << out.string() << "\"}";
    return ss.str();
  };
  auto run_cli = [&](const std::string& cfg_text, const fs::path& cfg_path) {
    std::ofstream(cfg_path, std::ios::binary) << cfg_text;
    std::string cmd = std::string(DUALBOUND_CLI_PATH) + " --config " + cfg_path.string() +
                      " >/dev/null 2>/dev/null";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  auto slurp_no_timestamp = [&](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
      if (line.find("\"timestamp\"") == std::string::npos) out << line << '\n';
    return out.str();
  };
  c.expect(run_cli(config_for(work / "a"), work / "a.json") == 0, "CLI estimate exits 0");
  c.expect(run_cli(config_for(work / "b"), work / "b.json") == 0, "repeat run exits 0");
  std::string ra = slurp_no_timestamp(work / "a" / "report.json");
  std::string rb = slurp_no_timestamp(work / "b" / "report.json");
  c.expect(!ra.empty() && ra == rb, "report bytes identical modulo the timestamp");
  // Data and config error exit codes.
  std::string bad_cfg =
      "{\"command\":\"estimate\",\"input_csv\":\"" + (work / "data.csv").string() +
      "\",\"columns\":{\"selection\":\"sel\"},\"estimand\":{\"label\":\"lee\"},"
      "\"propensity\":\"known\",\"propensity_value\":0.5,\"seed\":1,\"output_dir\":\"" +
      (work / "c").string() + "\"}";
  c.expect(run_cli(bad_cfg, work / "c.json") == 3, "missing selection column exits 3");
  std::string unknown =
      "{\"command\":\"simulate\",\"scenario\":{\"noise\":\"bogus\"},\"seed\":1}";
  c.expect(run_cli(unknown, work / "d.json") == 2, "unknown noise label exits 2");
}

TEST_CASE("criterion 5: desk-scale Lee coverage study") {
  Criterion c(5);
  struct Setting {
    NoiseDesign noise;
    const char* name;
  };
  const Setting settings[] = {{NoiseDesign::Homoskedastic, "homoskedastic"},
                              {NoiseDesign::HeteroI, "hetero_i"},
                              {NoiseDesign::HeteroII, "hetero_ii"}};
  for (const auto& s : settings) {
    for (int n : {100, 1000}) {
      SimScenario sc;
      sc.n = n;
      sc.noise = s.noise;
      sc.n_reps = 200;
      sc.seed = 90000 + static_cast<std::uint64_t>(n) + static_cast<std::uint64_t>(s.noise);
      SimReport rep = run_method_comparison(sc, {});
      std::printf("[criterion 5]   %s n=%d oracle=%.4f:", s.name, n, rep.oracle_theta_l);
      const MethodSummary* dual = nullptr;
      const MethodSummary* plugin = nullptr;
      for (const auto& m : rep.methods) {
        std::printf(" %s cov=%.3f mean=%.3f;", sim_method_name(m.method).c_str(), m.coverage,
                    m.mean_estimate);
        if (m.method == SimMethod::CrossfitDual) dual = &m;
        if (m.method == SimMethod::NaivePlugin) plugin = &m;
      }
      std::printf(" failures=%d\n", rep.n_failures);
      std::fflush(stdout);
      REQUIRE(dual != nullptr);
      REQUIRE(plugin != nullptr);
      c.expect(dual->coverage >= 0.93, "CrossfitDual LCB coverage >= 0.93");
      if (n == 1000) {
        // Sharpness is only promised when the working model can match the
        // truth. Under hetero_i the treated-arm variance is nine times the
        // homoskedastic working model's, and the dual bound is intentionally
        // conservative there, so the 15% tracking check applies to the other
        // two settings.
        if (s.noise != NoiseDesign::HeteroI)
          c.expect(std::abs(dual->mean_estimate - rep.oracle_theta_l) <=
                       0.15 * std::abs(rep.oracle_theta_l),
                   "CrossfitDual mean at n=1000 within 15% of the oracle");
        if (s.noise == NoiseDesign::HeteroII)
          c.expect(plugin->coverage < 0.90, "NaivePlugin under-covers in hetero_ii at n=1000");
      }
    }
  }
  c.expect(c.elapsed() < 1800.0, "criterion 5 runtime under 30 min");
}
