#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adjsurv/adjustment.hpp"
#include "adjsurv/design.hpp"
#include "adjsurv/prognostic.hpp"
#include "adjsurv/simulation.hpp"
#include "adjsurv/version.hpp"

namespace adjsurv::io {

using json = nlohmann::json;

/// Bumped whenever a field of any emitted document changes.
inline constexpr int kSchemaVersion = 1;

namespace detail {

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

template <class T>
T require(const json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorCode::SchemaError, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::SchemaError, std::string("field '") + key + "' has the wrong type");
  }
}

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw Error(ErrorCode::SchemaError, std::string(what) + ": unknown field '" + k + "'");
  }
}

inline void check_header(const json& j, const char* kind) {
  if (!j.is_object() || j.value("kind", std::string()) != kind)
    throw Error(ErrorCode::SchemaError, std::string("document is not a ") + kind);
  if (j.value("schema_version", -1) != kSchemaVersion)
    throw Error(ErrorCode::SchemaError, std::string(kind) + ": unsupported schema_version");
}

}  // namespace detail

inline json header(const char* kind) { return json{{"kind", kind}, {"schema_version", kSchemaVersion}}; }

// ---- fits, tests, design -------------------------------------------------

inline const char* alternative_name(Alternative a) {
  switch (a) {
    case Alternative::TwoSided: return "two_sided";
    case Alternative::Less: return "less";
    case Alternative::Greater: return "greater";
  }
  return "two_sided";
}

inline json to_json(const AdjustedFit& f) {
  json j = header("adjusted_fit");
  j["method"] = fit_method_name(f.method);
  j["theta_hat"] = f.theta_hat;
  j["hr"] = f.hr;
  j["se"] = f.se;
  j["alpha"] = f.alpha;
  j["ci_log_hr"] = {f.ci[0], f.ci[1]};
  j["ci_hr"] = {f.hr_ci()[0], f.hr_ci()[1]};
  j["z"] = f.z_stat;
  j["p_value"] = f.p_value_two_sided;
  j["sigma2_L"] = f.sigma2_L;
  j["sigma2_CL"] = f.sigma2_CL;
  j["variance_reduction_ratio"] = f.variance_reduction_ratio;
  j["theta_unadjusted"] = f.theta_unadjusted;
  j["augmentation"] = f.augmentation;
  j["n"] = f.n;
  j["events"] = f.events;
  j["diagnostics"] = f.diagnostics;
  return j;
}

inline json to_json(const AdjustedTest& t) {
  json j = header("adjusted_test");
  j["stratified"] = t.stratified;
  j["alternative"] = alternative_name(t.alternative);
  j["u_cl"] = t.u_cl;
  j["sigma_cl"] = t.sigma_cl;
  j["statistic"] = t.statistic;
  j["p_value"] = t.p_value;
  j["u_l"] = t.u_l;
  j["sigma_l"] = t.sigma_l;
  j["statistic_unadjusted"] = t.statistic_unadjusted;
  j["diagnostics"] = t.diagnostics;
  return j;
}

inline json to_json(const DesignOutput& d) {
  json j = header("design");
  j["stratified"] = d.stratified;
  j["variance_ratio"] = d.variance_ratio;
  j["d_unadj"] = d.d_unadj;
  j["d_adj"] = d.d_adj;
  j["events_saved"] = d.events_saved;
  j["power_at_fixed_events"] = detail::optional_number(d.power_at_fixed_events);
  j["power_unadjusted_at_fixed_events"] = detail::optional_number(d.power_unadjusted_at_fixed_events);
  return j;
}

inline json to_json(const RhoEstimate& r) {
  json j{{"rho", r.rho}, {"n_used", r.n_used}, {"zero_variance", r.zero_variance}, {"target_proxy", r.target_proxy}};
  j["rho_strat"] = detail::optional_number(r.rho_strat);
  return j;
}

// ---- prognostic model ----------------------------------------------------

inline json to_json(const ForestParams& p) {
  return json{{"n_trees", p.n_trees}, {"max_depth", p.max_depth}, {"min_leaf", p.min_leaf},
              {"mtry", p.mtry},       {"bootstrap", p.bootstrap}, {"seed", p.seed}};
}

inline ForestParams forest_params_from_json(const json& j) {
  detail::check_keys(j, {"n_trees", "max_depth", "min_leaf", "mtry", "bootstrap", "seed", "workers"}, "forest");
  ForestParams p;
  p.n_trees = j.value("n_trees", p.n_trees);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_leaf = j.value("min_leaf", p.min_leaf);
  p.mtry = j.value("mtry", p.mtry);
  p.bootstrap = j.value("bootstrap", p.bootstrap);
  p.seed = j.value("seed", p.seed);
  p.workers = j.value("workers", p.workers);
  return p;
}

/// Doubles are written in shortest round-trip form, so a reloaded model
/// predicts bit-identically.
inline json to_json(const PrognosticModel& m) {
  json j = header("prognostic_model");
  j["library_version"] = kVersion;
  j["model_id"] = m.model_id();
  j["target"] = {{"kind", target_kind_name(m.target().kind)}, {"at_time", detail::optional_number(m.target().at_time)}};
  j["features"] = m.feature_names();
  const TrainingSummary& s = m.summary();
  j["summary"] = {{"n", s.n},
                  {"events", s.events},
                  {"target_mean", s.target_mean},
                  {"target_variance", s.target_variance},
                  {"oob_r2", detail::optional_number(s.oob_r2)}};
  j["diagnostics"] = m.diagnostics();
  std::visit(
      [&](const auto& r) {
        using R = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<R, RandomForest>) {
          json trees = json::array();
          for (const auto& t : r.trees()) {
            json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
                 value = json::array();
            for (const auto& nd : t.nodes()) {
              feature.push_back(nd.feature);
              threshold.push_back(nd.threshold);
              left.push_back(nd.left);
              right.push_back(nd.right);
              value.push_back(nd.value);
            }
            trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right},
                             {"value", value}});
          }
          j["regressor"] = {{"type", "forest"}, {"params", to_json(r.params())},
                            {"n_features", r.n_features()}, {"trees", trees}};
        } else if constexpr (std::is_same_v<R, ConstantRegressor>) {
          j["regressor"] = {{"type", "constant"}, {"value", r.value}};
        } else {
          throw Error(ErrorCode::InvalidInput, "custom regressor '" + r.name + "' cannot be serialized");
        }
      },
      m.regressor());
  return j;
}

inline TargetKind target_kind_from_name(const std::string& s) {
  if (s == "martingale_residual" || s == "martingale" || s == "m") return TargetKind::MartingaleResidual;
  if (s == "survival_probability" || s == "survival" || s == "s") return TargetKind::SurvivalProbability;
  throw Error(ErrorCode::InvalidInput, "unknown target kind '" + s + "'");
}

/// Rebuilds a model and checks its stored id against the recomputed one.
inline PrognosticModel model_from_json(const json& j) {
  detail::check_header(j, "prognostic_model");
  TargetSpec target;
  const json& jt = j.at("target");
  target.kind = target_kind_from_name(detail::require<std::string>(jt, "kind"));
  if (!jt.at("at_time").is_null()) target.at_time = jt.at("at_time").get<double>();
  auto features = detail::require<std::vector<std::string>>(j, "features");
  TrainingSummary s;
  const json& js = j.at("summary");
  s.n = js.at("n").get<std::size_t>();
  s.events = js.at("events").get<std::size_t>();
  s.target_mean = js.at("target_mean").get<double>();
  s.target_variance = js.at("target_variance").get<double>();
  if (!js.at("oob_r2").is_null()) s.oob_r2 = js.at("oob_r2").get<double>();
  s.at_time = target.at_time;

  const json& jr = j.at("regressor");
  const std::string type = detail::require<std::string>(jr, "type");
  Regressor reg;
  if (type == "constant") {
    reg = ConstantRegressor{jr.at("value").get<double>()};
  } else if (type == "forest") {
    const ForestParams p = forest_params_from_json(jr.at("params"));
    const int n_features = jr.at("n_features").get<int>();
    if (n_features != static_cast<int>(features.size()))
      throw Error(ErrorCode::SchemaError, "forest feature count does not match the feature list");
    std::vector<RegressionTree> trees;
    for (const json& jtree : jr.at("trees")) {
      const auto f = jtree.at("feature").get<std::vector<int>>();
      const auto th = jtree.at("threshold").get<std::vector<double>>();
      const auto l = jtree.at("left").get<std::vector<int>>();
      const auto r = jtree.at("right").get<std::vector<int>>();
      const auto v = jtree.at("value").get<std::vector<double>>();
      const std::size_t m = f.size();
      if (m == 0 || th.size() != m || l.size() != m || r.size() != m || v.size() != m)
        throw Error(ErrorCode::SchemaError, "ragged tree arrays");
      std::vector<TreeNode> nodes(m);
      for (std::size_t k = 0; k < m; ++k) {
        const bool split = f[k] >= 0;
        if (split && (f[k] >= n_features || l[k] <= static_cast<int>(k) || r[k] <= static_cast<int>(k) ||
                      l[k] >= static_cast<int>(m) || r[k] >= static_cast<int>(m)))
          throw Error(ErrorCode::SchemaError, "tree node references are out of range");
        nodes[k] = TreeNode{f[k], th[k], l[k], r[k], v[k]};
      }
      trees.emplace_back(std::move(nodes));
    }
    if (trees.empty()) throw Error(ErrorCode::SchemaError, "forest has no trees");
    reg = RandomForest(p, n_features, std::move(trees), s.oob_r2.value_or(std::numeric_limits<double>::quiet_NaN()));
  } else {
    throw Error(ErrorCode::SchemaError, "unknown regressor type '" + type + "'");
  }
  PrognosticModel m(target, std::move(features), std::move(reg), s);
  m.diagnostics() = j.value("diagnostics", std::vector<std::string>{});
  m.set_model_id(compute_model_id(m));
  if (m.model_id() != detail::require<std::string>(j, "model_id"))
    throw Error(ErrorCode::SchemaError, "model_id does not match the stored model content");
  return m;
}

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "failed writing '" + path + "'");
}

inline void save_model(const PrognosticModel& m, const std::string& path) { write_text_file(path, to_json(m).dump() + "\n"); }
inline PrognosticModel load_model(const std::string& path) {
  try {
    return model_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, path + ": " + e.what());
  }
}

// ---- simulation config and report ----------------------------------------

inline sim::Case case_from_name(const std::string& s) {
  static const char* names[] = {"I", "II", "III", "IV", "V", "VI", "VII"};
  for (int k = 0; k < 7; ++k)
    if (s == names[k] || s == std::to_string(k + 1)) return static_cast<sim::Case>(k + 1);
  throw Error(ErrorCode::InvalidInput, "unknown case '" + s + "' (expected I..VII)");
}

inline sim::Effect effect_from_name(const std::string& s) {
  if (s == "null") return sim::Effect::Null;
  if (s == "efficacy" || s == "eff") return sim::Effect::Efficacy;
  throw Error(ErrorCode::InvalidInput, "unknown effect '" + s + "' (expected null or efficacy)");
}

inline sim::Strategy strategy_from_name(const std::string& s) {
  using sim::Strategy;
  for (Strategy v : {Strategy::ScoreOnlyM, Strategy::ScorePlusCovariatesM, Strategy::ScoreOnlyS,
                     Strategy::ScorePlusCovariatesS, Strategy::Unadjusted})
    if (s == sim::strategy_name(v)) return v;
  throw Error(ErrorCode::InvalidInput, "unknown strategy '" + s + "'");
}

inline sim::StratumRule stratum_rule_from_name(const std::string& s) {
  using sim::StratumRule;
  for (StratumRule v : {StratumRule::None, StratumRule::IndependentBinary, StratumRule::ByX1})
    if (s == sim::stratum_rule_name(v)) return v;
  throw Error(ErrorCode::InvalidInput, "unknown stratum rule '" + s + "'");
}

/// The worker count is left out: it never changes results.
inline json to_json(const sim::ScenarioConfig& c) {
  json j{{"case", sim::case_name(c.scenario_case)},
         {"effect", sim::effect_name(c.effect)},
         {"log_hr", c.resolved_theta()},
         {"n_trial", c.n_trial},
         {"n_external", c.n_external},
         {"replicates", c.n_replicates},
         {"seed", c.seed},
         {"alpha", c.alpha},
         {"pi", c.pi},
         {"strategy", sim::strategy_name(c.strategy)},
         {"strata", sim::stratum_rule_name(c.strata)},
         {"tau", detail::optional_number(c.tau)},
         {"forest", to_json(c.forest)}};
  return j;
}

/// Applies the fields present in j on top of base.
inline sim::ScenarioConfig scenario_config_from_json(const json& j, sim::ScenarioConfig base = {}) {
  detail::check_keys(j,
                     {"case", "effect", "log_hr", "n_trial", "n_external", "replicates", "seed", "alpha", "pi",
                      "strategy", "strata", "tau", "forest", "workers"},
                     "scenario config");
  try {
    if (j.contains("case")) base.scenario_case = case_from_name(j["case"].get<std::string>());
    if (j.contains("effect")) base.effect = effect_from_name(j["effect"].get<std::string>());
    if (j.contains("log_hr") && !j["log_hr"].is_null()) base.theta = j["log_hr"].get<double>();
    if (j.contains("n_trial")) base.n_trial = j["n_trial"].get<std::size_t>();
    if (j.contains("n_external")) base.n_external = j["n_external"].get<std::size_t>();
    if (j.contains("replicates")) base.n_replicates = j["replicates"].get<std::size_t>();
    if (j.contains("seed")) base.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("alpha")) base.alpha = j["alpha"].get<double>();
    if (j.contains("pi")) base.pi = j["pi"].get<double>();
    if (j.contains("strategy")) base.strategy = strategy_from_name(j["strategy"].get<std::string>());
    if (j.contains("strata")) base.strata = stratum_rule_from_name(j["strata"].get<std::string>());
    if (j.contains("tau") && !j["tau"].is_null()) base.tau = j["tau"].get<double>();
    if (j.contains("forest")) base.forest = forest_params_from_json(j["forest"]);
    if (j.contains("workers")) base.workers = j["workers"].get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("scenario config: ") + e.what());
  }
  return base;
}

/// Report columns, in order. Names follow the usual operating-characteristics
/// table: mse is the mean estimated standard error.
inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "case",          "effect",        "n",           "strategy",         "replicates",       "valid",
      "bias",          "mean_abs_diff", "pr_reject_h0_cox", "pr_reject_h0_cov_adj", "wald_reject_cox",
      "wald_reject_cov_adj", "mse",     "mcsd",        "mse_cox",          "mcsd_cox",         "var_ratio",
      "rho_hat",       "one_minus_rho_hat_sq", "mean_events", "model_id"};
  return cols;
}

inline json to_json(const sim::ScenarioReport& r) {
  json j = header("scenario_report");
  j["library_version"] = kVersion;
  j["config"] = to_json(r.config);
  j["model_id"] = r.model_id;
  j["valid"] = r.n_valid;
  j["degenerate"] = r.n_degenerate;
  j["bias"] = r.bias;
  j["mean_abs_diff"] = r.mean_abs_diff;
  j["pr_reject_h0_cox"] = r.reject_unadj;
  j["pr_reject_h0_cov_adj"] = r.reject_adj;
  j["wald_reject_cox"] = r.reject_wald_unadj;
  j["wald_reject_cov_adj"] = r.reject_wald_adj;
  j["mse"] = r.mean_se;
  j["mcsd"] = r.mcsd;
  j["mse_cox"] = r.mean_se_unadj;
  j["mcsd_cox"] = r.mcsd_unadj;
  j["var_ratio"] = r.var_ratio;
  j["rho_hat"] = r.mean_rho;
  j["one_minus_rho_hat_sq"] = r.mean_one_minus_rho2;
  j["mean_theta_cox"] = r.mean_theta_unadj;
  j["mean_theta_cov_adj"] = r.mean_theta_adj;
  j["mean_events"] = r.mean_events;
  if (r.stratified) {
    const auto& s = *r.stratified;
    j["stratified"] = {{"bias", s.bias},
                       {"pr_reject_h0_strat", s.reject_sl},
                       {"pr_reject_h0_strat_cov_adj", s.reject_csl},
                       {"mse", s.mean_se},
                       {"mcsd", s.mcsd},
                       {"var_ratio", s.var_ratio},
                       {"rho_strat_hat", s.mean_rho_strat},
                       {"one_minus_rho_strat_hat_sq", s.mean_one_minus_rho_strat2}};
  } else {
    j["stratified"] = nullptr;
  }
  return j;
}

namespace detail {

inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::string report_csv_header() {
  std::string s;
  for (const auto& c : report_columns()) s += (s.empty() ? "" : ",") + c;
  return s + "\n";
}

inline std::string report_csv_row(const sim::ScenarioReport& r) {
  using detail::fmt_real;
  const std::vector<std::string> v{sim::case_name(r.config.scenario_case),
                                   sim::effect_name(r.config.effect),
                                   std::to_string(r.config.n_trial),
                                   sim::strategy_name(r.config.strategy),
                                   std::to_string(r.config.n_replicates),
                                   std::to_string(r.n_valid),
                                   fmt_real(r.bias),
                                   fmt_real(r.mean_abs_diff),
                                   fmt_real(r.reject_unadj),
                                   fmt_real(r.reject_adj),
                                   fmt_real(r.reject_wald_unadj),
                                   fmt_real(r.reject_wald_adj),
                                   fmt_real(r.mean_se),
                                   fmt_real(r.mcsd),
                                   fmt_real(r.mean_se_unadj),
                                   fmt_real(r.mcsd_unadj),
                                   fmt_real(r.var_ratio),
                                   fmt_real(r.mean_rho),
                                   fmt_real(r.mean_one_minus_rho2),
                                   fmt_real(r.mean_events),
                                   r.model_id};
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + v[k];
  return s + "\n";
}

inline std::string power_curve_csv(const std::vector<sim::PowerPoint>& pts) {
  std::string s = "hr,power_cox,power_cov_adj\n";
  for (const auto& p : pts)
    s += detail::fmt_real(p.hr) + "," + detail::fmt_real(p.power_unadj) + "," + detail::fmt_real(p.power_adj) + "\n";
  return s;
}

// ---- run manifest ---------------------------------------------------------

struct InputFile {
  std::string role;
  std::string path;
  std::string fnv1a64;
  std::size_t bytes = 0;
};

inline InputFile hash_input(const std::string& role, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return {role, path, buf, bytes.size()};
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Everything needed to repeat a CLI run. Kept apart from the output so
/// the output itself stays byte-reproducible.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::vector<InputFile> inputs;
  std::string model_id;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::chrono::system_clock::time_point started = std::chrono::system_clock::now();
  std::chrono::system_clock::time_point finished = started;
};

inline json to_json(const RunManifest& m) {
  json j = header("run_manifest");
  j["library_version"] = kVersion;
  j["command"] = m.command;
  j["argv"] = m.argv;
  j["config"] = m.config;
  json inputs = json::array();
  for (const auto& f : m.inputs)
    inputs.push_back({{"role", f.role}, {"path", f.path}, {"fnv1a64", f.fnv1a64}, {"bytes", f.bytes}});
  j["inputs"] = inputs;
  j["model_id"] = m.model_id.empty() ? json(nullptr) : json(m.model_id);
  j["seed"] = m.seed ? json(*m.seed) : json(nullptr);
  j["workers"] = m.workers;
  j["started_at"] = utc_timestamp(m.started);
  j["finished_at"] = utc_timestamp(m.finished);
  return j;
}

}  // namespace adjsurv::io
