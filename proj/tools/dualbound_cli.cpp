// dualbound: estimate dual confidence bounds on partially identified causal
// estimands from a CSV, or run simulation scenarios with coverage tables.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dualbound/estimand_library.hpp"
#include "dualbound/pipeline.hpp"
#include "dualbound/sim_harness.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace dualbound;

namespace {

constexpr const char* kLibraryVersion = "0.1.0";
constexpr int kSchemaVersion = 1;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- CSV input

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // parsed numeric cells

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    return -1;
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  return cells;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input CSV '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw DataError("input CSV '" + path + "' is empty");
  table.header = split_csv_line(line);
  for (const auto& h : table.header)
    if (h.empty()) throw DataError("input CSV header has an empty column name");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != table.header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(table.header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      if (cell.empty())
        throw DataError("line " + std::to_string(line_no) + ": empty value in column '" +
                        table.header[c] + "'");
      char* end = nullptr;
      row[c] = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw DataError("line " + std::to_string(line_no) + ": cannot parse '" + cell +
                        "' in column '" + table.header[c] + "' as a number");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ------------------------------------------------------------- config + json

ordered_json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

template <typename T>
T require_field(const ordered_json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    throw ConfigError(where + ": field '" + key + "' has the wrong type");
  }
}

EstimandSpec build_estimand(const ordered_json& e, ordered_json& echo) {
  std::string label = require_field<std::string>(e, "label", "estimand");
  echo["label"] = label;
  auto num = [&](const char* key) {
    double v = require_field<double>(e, key, "estimand '" + label + "'");
    echo[key] = v;
    return v;
  };
  if (label == "fh_cdf") {
    double y0_star = num("y0_star");
    double y1_star = num("y1_star");
    return make_fh_cdf(y0_star, y1_star);
  }
  if (label == "var_ite") return make_var_ite();
  if (label == "makarov_cdf") return make_makarov_cdf(num("t"));
  if (label == "lee") {
    bool monotone = e.value("monotone", true);
    echo["monotone"] = monotone;
    return make_lee(monotone);
  }
  if (label == "positive_effect") return make_positive_effect();
  if (label == "persuasion") return make_persuasion();
  if (label == "conditional_effect") return make_conditional_effect(num("threshold"));
  if (label == "ite_quantile") return make_ite_quantile(num("alpha_q"));
  throw ConfigError("unknown estimand label '" + label + "'");
}

ConditionalLawModel::Kind parse_model_kind(const std::string& s) {
  if (s == "gaussian_linear") return ConditionalLawModel::Kind::GaussianLinear;
  if (s == "empirical_residual_linear") return ConditionalLawModel::Kind::EmpiricalResidualLinear;
  if (s == "joint_selection_outcome") return ConditionalLawModel::Kind::JointSelectionOutcome;
  throw ConfigError("unknown model kind '" + s + "'");
}

NoiseDesign parse_noise(const std::string& s) {
  if (s == "homoskedastic") return NoiseDesign::Homoskedastic;
  if (s == "hetero_i") return NoiseDesign::HeteroI;
  if (s == "hetero_ii") return NoiseDesign::HeteroII;
  throw ConfigError("unknown noise design '" + s +
                    "' (expected homoskedastic, hetero_i, or hetero_ii)");
}

SimMethod parse_method(const std::string& s) {
  if (s == "NoCovariates") return SimMethod::NoCovariates;
  if (s == "NaivePlugin") return SimMethod::NaivePlugin;
  if (s == "CrossfitDual") return SimMethod::CrossfitDual;
  throw ConfigError("unknown method '" + s + "'");
}

// ------------------------------------------------------------------- output

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

// --------------------------------------------------------------- estimate

int run_estimate(const ordered_json& cfg, std::uint64_t seed, const fs::path& out_dir) {
  std::string input_csv = require_field<std::string>(cfg, "input_csv", "config");

  const ordered_json columns = cfg.value("columns", ordered_json::object());
  auto col_name = [&](const char* key, const char* fallback) {
    return columns.value(key, std::string(fallback));
  };
  std::string outcome_col = col_name("outcome", "outcome");
  std::string treatment_col = col_name("treatment", "treatment");
  std::string selection_col = col_name("selection", "");
  std::string cluster_col = col_name("cluster", "");
  std::string propensity_col = col_name("propensity", "");

  ordered_json echo_est;
  EstimandSpec spec =
      build_estimand(cfg.contains("estimand") ? cfg.at("estimand")
                                              : throw ConfigError("config: missing 'estimand'"),
                     echo_est);
  bool needs_selection = spec.outcome_shape == EstimandSpec::OutcomeShape::Compound;

  CsvTable table = read_csv(input_csv);
  if (table.rows.empty()) throw DataError("input CSV has no data rows");

  auto require_col = [&](const std::string& name, const char* role, bool needed) {
    if (name.empty()) {
      if (needed)
        throw DataError(std::string("estimand requires a ") + role +
                        " column but none is configured");
      return -1;
    }
    int idx = table.column(name);
    if (idx < 0) {
      if (needed || role == std::string("outcome") || role == std::string("treatment") ||
          role == std::string("propensity"))
        throw DataError(std::string(role) + " column '" + name + "' not found in the CSV");
      return -1;
    }
    return idx;
  };
  int c_outcome = require_col(outcome_col, "outcome", true);
  int c_treatment = require_col(treatment_col, "treatment", true);
  int c_selection = require_col(selection_col, "selection", needs_selection);
  int c_cluster = cluster_col.empty() ? -1 : require_col(cluster_col, "cluster", false);

  PipelineConfig pc;
  pc.alpha = cfg.value("alpha", 0.05);
  pc.n_folds = cfg.value("n_folds", 5);
  pc.nvals = cfg.value("nvals", 50);
  pc.seed = seed;
  std::string prop_mode = cfg.value("propensity", std::string("known"));
  bool has_prop_value = cfg.contains("propensity_value");
  double prop_value = cfg.value("propensity_value", -1.0);
  int c_propensity = -1;
  if (prop_mode == "known") {
    pc.propensity_method = PropensityMethod::Known;
    if (!has_prop_value) {
      if (propensity_col.empty())
        throw DataError(
            "propensity mode 'known' needs a propensity column or a propensity_value entry");
      c_propensity = require_col(propensity_col, "propensity", true);
    }
  } else if (prop_mode == "fit") {
    pc.propensity_method = PropensityMethod::LogisticCV;
  } else {
    throw ConfigError("unknown propensity mode '" + prop_mode + "' (expected known or fit)");
  }
  std::string summand = cfg.value("summand", std::string("ipw"));
  if (summand == "aipw")
    pc.summand_type = SummandType::AIPW;
  else if (summand != "ipw")
    throw ConfigError("unknown summand type '" + summand + "' (expected ipw or aipw)");
  std::string model = cfg.value("model", std::string("gaussian_linear"));
  pc.model_kind = parse_model_kind(model);
  bool mb = cfg.value("mb_model_selection", false);
  std::vector<std::string> candidates;
  if (mb) {
    candidates = require_field<std::vector<std::string>>(cfg, "candidate_models", "config");
    if (candidates.size() < 2)
      throw ConfigError("mb_model_selection needs at least two candidate_models");
    for (const auto& c : candidates) pc.candidate_kinds.push_back(parse_model_kind(c));
  }

  // Covariates: explicit list, or every column not claimed by another role.
  std::vector<int> cov_idx;
  std::vector<std::string> cov_names;
  if (columns.contains("covariates") && columns.at("covariates").is_array()) {
    for (const auto& item : columns.at("covariates")) {
      std::string name = item.get<std::string>();
      int idx = table.column(name);
      if (idx < 0) throw DataError("covariate column '" + name + "' not found in the CSV");
      cov_idx.push_back(idx);
      cov_names.push_back(name);
    }
  } else {
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      int ci = static_cast<int>(c);
      if (ci == c_outcome || ci == c_treatment || ci == c_selection || ci == c_cluster ||
          ci == c_propensity)
        continue;
      cov_idx.push_back(ci);
      cov_names.push_back(table.header[c]);
    }
  }

  std::vector<ObservationRecord> rows(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& cells = table.rows[i];
    auto& r = rows[i];
    int line_no = static_cast<int>(i) + 2;  // header is line 1
    r.outcome = cells[static_cast<std::size_t>(c_outcome)];
    double w = cells[static_cast<std::size_t>(c_treatment)];
    if (w != 0.0 && w != 1.0)
      throw DataError("line " + std::to_string(line_no) + ": treatment must be 0 or 1");
    r.treatment = static_cast<int>(w);
    if (c_selection >= 0) {
      double s = cells[static_cast<std::size_t>(c_selection)];
      if (s != 0.0 && s != 1.0)
        throw DataError("line " + std::to_string(line_no) + ": selection must be 0 or 1");
      r.selection = static_cast<int>(s);
    }
    if (c_cluster >= 0) r.cluster_id = static_cast<long long>(cells[static_cast<std::size_t>(c_cluster)]);
    if (c_propensity >= 0)
      r.propensity = cells[static_cast<std::size_t>(c_propensity)];
    else if (has_prop_value)
      r.propensity = prop_value;
    r.covariates.resize(static_cast<long>(cov_idx.size()));
    for (std::size_t c = 0; c < cov_idx.size(); ++c)
      r.covariates[static_cast<long>(c)] = cells[static_cast<std::size_t>(cov_idx[c])];
  }

  BoundReport rep = crossfit_dual_bound(rows, spec, pc);

  ordered_json resolved;
  resolved["command"] = "estimate";
  resolved["input_csv"] = input_csv;
  resolved["columns"] = {{"outcome", outcome_col},
                         {"treatment", treatment_col},
                         {"selection", selection_col},
                         {"cluster", cluster_col},
                         {"propensity", propensity_col},
                         {"covariates", cov_names}};
  resolved["estimand"] = echo_est;
  resolved["alpha"] = pc.alpha;
  resolved["n_folds"] = pc.n_folds;
  resolved["nvals"] = pc.nvals;
  resolved["model"] = model;
  resolved["propensity"] = prop_mode;
  if (has_prop_value) resolved["propensity_value"] = prop_value;
  resolved["summand"] = summand;
  resolved["mb_model_selection"] = mb;
  if (mb) resolved["candidate_models"] = candidates;
  resolved["seed"] = seed;

  ordered_json results;
  results["n"] = rep.n;
  if (rep.has_lower) {
    results["lower"] = {{"theta_hat", rep.lower.theta_hat},
                        {"confidence_bound", rep.lower.confidence_bound},
                        {"se", rep.lower.se}};
  }
  if (rep.has_upper) {
    results["upper"] = {{"theta_hat", rep.upper.theta_hat},
                        {"confidence_bound", rep.upper.confidence_bound},
                        {"se", rep.upper.se}};
  }
  if (rep.has_interval)
    results["two_sided_interval"] = {{"lower", rep.interval.lower},
                                     {"upper", rep.interval.upper},
                                     {"critical_value", rep.interval.critical_value}};
  if (rep.used_mb) {
    results["model_selection"] = {{"selected_model_lower", rep.selected_model_lower},
                                  {"selected_model_upper", rep.selected_model_upper},
                                  {"mb_quantile_lower", rep.mb_quantile_lower},
                                  {"mb_quantile_upper", rep.mb_quantile_upper}};
  }
  ordered_json folds = ordered_json::array();
  for (const auto& fd : rep.fold_diagnostics)
    folds.push_back({{"fold", fd.fold},
                     {"n_train", fd.n_train},
                     {"n_eval", fd.n_eval},
                     {"mean_adjustment_lower", fd.mean_adjustment_lower},
                     {"mean_adjustment_upper", fd.mean_adjustment_upper}});
  results["fold_diagnostics"] = folds;

  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["library_version"] = kLibraryVersion;
  report["timestamp"] = timestamp_utc();
  report["config"] = resolved;
  report["results"] = results;
  fs::create_directories(out_dir);
  write_text(out_dir / "report.json", report.dump(2) + "\n");

  std::ostringstream csv;
  csv << "estimand,n,theta_lower,lcb,se_lower,theta_upper,ucb,se_upper,interval_lower,"
         "interval_upper\n";
  csv.precision(17);
  csv << echo_est["label"].get<std::string>() << ',' << rep.n << ',';
  auto cell = [&](bool have, double v) {
    if (have)
      csv << v;
    csv << ',';
  };
  cell(rep.has_lower, rep.lower.theta_hat);
  cell(rep.has_lower, rep.lower.confidence_bound);
  cell(rep.has_lower, rep.lower.se);
  cell(rep.has_upper, rep.upper.theta_hat);
  cell(rep.has_upper, rep.upper.confidence_bound);
  cell(rep.has_upper, rep.upper.se);
  if (rep.has_interval)
    csv << rep.interval.lower << ',' << rep.interval.upper;
  else
    csv << ',';
  csv << '\n';
  write_text(out_dir / "summary.csv", csv.str());
  std::cout << "wrote " << (out_dir / "report.json").string() << " and "
            << (out_dir / "summary.csv").string() << "\n";
  return 0;
}

// --------------------------------------------------------------- simulate

int run_simulate(const ordered_json& cfg, std::uint64_t seed, const fs::path& out_dir) {
  if (!cfg.contains("scenario")) throw ConfigError("config: missing 'scenario'");
  const ordered_json& sj = cfg.at("scenario");
  SimScenario sc;
  sc.n = sj.value("n", sc.n);
  sc.p = sj.value("p", sc.p);
  sc.tau = sj.value("tau", sc.tau);
  sc.outcome_variance = sj.value("outcome_variance", sc.outcome_variance);
  sc.noise = parse_noise(sj.value("noise", std::string("homoskedastic")));
  sc.tau_s0 = sj.value("tau_s0", sc.tau_s0);
  sc.tau_s1 = sj.value("tau_s1", sc.tau_s1);
  sc.estimand = sj.value("estimand", sc.estimand);
  sc.fh_t0 = sj.value("fh_t0", sc.fh_t0);
  sc.fh_t1 = sj.value("fh_t1", sc.fh_t1);
  sc.n_reps = sj.value("n_reps", sc.n_reps);
  sc.seed = seed;
  try {
    validate_scenario(sc);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  MethodOptions opt;
  opt.alpha = cfg.value("alpha", opt.alpha);
  opt.n_folds = cfg.value("n_folds", opt.n_folds);
  opt.nvals = cfg.value("nvals", opt.nvals);
  opt.pilot_reps = cfg.value("pilot_reps", opt.pilot_reps);
  opt.n_oracle = cfg.value("n_oracle", opt.n_oracle);
  if (cfg.contains("methods")) {
    opt.methods.clear();
    for (const auto& m : cfg.at("methods")) opt.methods.push_back(parse_method(m.get<std::string>()));
    if (opt.methods.empty()) throw ConfigError("config: 'methods' must be nonempty");
  }

  SimReport rep = run_method_comparison(sc, opt);

  ordered_json resolved;
  resolved["command"] = "simulate";
  resolved["scenario"] = {{"n", sc.n},
                          {"p", sc.p},
                          {"tau", sc.tau},
                          {"outcome_variance", sc.outcome_variance},
                          {"noise", sj.value("noise", std::string("homoskedastic"))},
                          {"tau_s0", sc.tau_s0},
                          {"tau_s1", sc.tau_s1},
                          {"estimand", sc.estimand},
                          {"fh_t0", sc.fh_t0},
                          {"fh_t1", sc.fh_t1},
                          {"n_reps", sc.n_reps}};
  resolved["alpha"] = opt.alpha;
  resolved["n_folds"] = opt.n_folds;
  resolved["nvals"] = opt.nvals;
  resolved["pilot_reps"] = opt.pilot_reps;
  resolved["n_oracle"] = opt.n_oracle;
  {
    ordered_json methods = ordered_json::array();
    for (SimMethod m : opt.methods) methods.push_back(sim_method_name(m));
    resolved["methods"] = methods;
  }
  resolved["seed"] = seed;

  ordered_json results;
  results["oracle_theta_l"] = rep.oracle_theta_l;
  results["oracle_mc_se"] = rep.oracle_mc_se;
  results["n_reps"] = rep.n_reps;
  results["n_failures"] = rep.n_failures;
  ordered_json methods = ordered_json::array();
  for (const auto& m : rep.methods)
    methods.push_back({{"method", sim_method_name(m.method)},
                       {"mean_estimate", m.mean_estimate},
                       {"mean_lcb", m.mean_lcb},
                       {"coverage", m.coverage},
                       {"mean_runtime_sec", m.mean_runtime_sec}});
  results["methods"] = methods;

  ordered_json report;
  report["schema_version"] = kSchemaVersion;
  report["library_version"] = kLibraryVersion;
  report["timestamp"] = timestamp_utc();
  report["config"] = resolved;
  report["results"] = results;
  fs::create_directories(out_dir);
  write_text(out_dir / "report.json", report.dump(2) + "\n");

  std::ostringstream csv;
  csv.precision(17);
  // No wall-clock columns here: identical config + seed must reproduce this
  // file byte-for-byte. Runtimes are reported in report.json instead.
  csv << "method,mean_estimate,mean_lcb,coverage,oracle_theta_l,oracle_mc_se,"
         "n_reps,n_failures\n";
  for (const auto& m : rep.methods)
    csv << sim_method_name(m.method) << ',' << m.mean_estimate << ',' << m.mean_lcb << ','
        << m.coverage << ',' << rep.oracle_theta_l << ','
        << rep.oracle_mc_se << ',' << rep.n_reps << ',' << rep.n_failures << '\n';
  write_text(out_dir / "coverage.csv", csv.str());
  std::cout << "wrote " << (out_dir / "report.json").string() << " and "
            << (out_dir / "coverage.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dualbound: dual confidence bounds for partially identified causal estimands"};
  std::string config_path, output_override;
  long long seed_override = -1;
  int threads = 0;  // accepted for interface stability; execution is sequential
  app.add_option("--config", config_path, "path to the JSON run configuration")->required();
  app.add_option("--seed", seed_override, "override the config's random seed");
  app.add_option("--threads", threads,
                 "parallelism degree (results are identical for any value)");
  app.add_option("--output", output_override, "override the config's output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ordered_json cfg = load_config(config_path);
    std::string command = require_field<std::string>(cfg, "command", "config");
    std::uint64_t seed =
        seed_override >= 0 ? static_cast<std::uint64_t>(seed_override) : cfg.value("seed", 0ULL);
    fs::path out_dir = output_override.empty()
                           ? fs::path(cfg.value("output_dir", std::string("dualbound_out")))
                           : fs::path(output_override);
    if (command == "estimate") return run_estimate(cfg, seed, out_dir);
    if (command == "simulate") return run_simulate(cfg, seed, out_dir);
    throw ConfigError("unknown command '" + command + "' (expected estimate or simulate)");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  }
}
