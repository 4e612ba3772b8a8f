// adjsurv command-line front end.
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "adjsurv/adjsurv.hpp"

namespace {

using namespace adjsurv;
using io::json;

struct Common {
  std::string format = "json";
  std::string out;
  std::string manifest;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--format", c.format, "stdout format")->check(CLI::IsMember({"json", "table"}));
  app->add_option("--out", c.out, "write the JSON document to this file");
  app->add_option("--manifest", c.manifest, "run manifest path (default: <out>.manifest.json)");
}

std::string table_of(const json& j, const std::string& indent = "") {
  std::ostringstream os;
  for (const auto& [k, v] : j.items()) {
    if (k == "kind" || k == "schema_version") continue;
    if (v.is_object()) {
      os << indent << k << ":\n" << table_of(v, indent + "  ");
    } else if (v.is_array() && !v.empty() && v.front().is_object()) {
      os << indent << k << ": [" << v.size() << " entries]\n";
    } else if (v.is_string()) {
      os << indent << k << ": " << v.get<std::string>() << "\n";
    } else {
      os << indent << k << ": " << v.dump() << "\n";
    }
  }
  return os.str();
}

void emit(const json& doc, const Common& c, io::RunManifest& m) {
  m.finished = std::chrono::system_clock::now();
  if (!c.out.empty()) io::write_text_file(c.out, doc.dump(2) + "\n");
  const std::string manifest_path = !c.manifest.empty() ? c.manifest : (c.out.empty() ? "" : c.out + ".manifest.json");
  if (!manifest_path.empty()) io::write_text_file(manifest_path, io::to_json(m).dump(2) + "\n");
  if (c.format == "table") std::cout << table_of(doc);
  else if (c.out.empty()) std::cout << doc.dump(2) << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

Alternative alternative_from(const std::string& s) {
  if (s == "less") return Alternative::Less;
  if (s == "greater") return Alternative::Greater;
  return Alternative::TwoSided;
}

// Options shared by fit and test.
struct AnalysisArgs {
  std::string data, score_file, model_file, adjust = "score", covariates, score_column = "score";
  std::optional<double> tau, pi;
  bool stratified = false;
};

void add_analysis(CLI::App* app, AnalysisArgs& a) {
  app->add_option("--data", a.data, "trial CSV")->required();
  app->add_option("--score", a.score_file, "CSV of prognostic scores, row-aligned with --data");
  app->add_option("--score-column", a.score_column, "score column name");
  app->add_option("--model", a.model_file, "prognostic model JSON used to score --data");
  app->add_option("--adjust", a.adjust, "adjustment set")
      ->check(CLI::IsMember({"none", "score", "covariates", "score+covariates"}));
  app->add_option("--covariates", a.covariates, "comma-separated covariate columns (default: all)");
  app->add_option("--tau", a.tau, "analysis horizon (default: maximum time)");
  app->add_option("--pi", a.pi, "randomization probability (default: observed share)");
  app->add_flag("--stratified", a.stratified, "stratify on the stratum column");
}

struct Prepared {
  TrialDataset data;
  CovariateView view;
};

Prepared prepare(const AnalysisArgs& a, io::RunManifest& m) {
  m.inputs.push_back(io::hash_input("data", a.data));
  TrialDataset data = io::load_trial(a.data, a.tau, a.pi);
  const bool want_score = a.adjust == "score" || a.adjust == "score+covariates";
  const bool want_cov = a.adjust == "covariates" || a.adjust == "score+covariates";
  CovariateView view = CovariateView::none(data.size());
  if (want_score) {
    std::vector<double> scores;
    if (!a.model_file.empty()) {
      m.inputs.push_back(io::hash_input("model", a.model_file));
      const PrognosticModel model = io::load_model(a.model_file);
      m.model_id = model.model_id();
      scores = score(model, data);
    } else if (!a.score_file.empty()) {
      m.inputs.push_back(io::hash_input("score", a.score_file));
      scores = io::load_column(a.score_file, a.score_column, data.size());
    } else {
      throw Error(ErrorCode::InvalidInput, "--adjust " + a.adjust + " needs --score or --model");
    }
    view = CovariateView::score(scores);
  }
  if (want_cov) {
    const CovariateView cov =
        a.covariates.empty() ? CovariateView::all(data) : CovariateView::columns(data, split_list(a.covariates));
    view = want_score ? CovariateView::combine(cov, view) : cov;
  }
  if (a.stratified && !data.stratified())
    throw Error(ErrorCode::InvalidInput, "--stratified needs a stratum column in the trial data");
  return {std::move(data), std::move(view)};
}

json analysis_config(const AnalysisArgs& a) {
  return json{{"adjust", a.adjust},
              {"covariates", a.covariates},
              {"stratified", a.stratified},
              {"tau", a.tau ? json(*a.tau) : json(nullptr)},
              {"pi", a.pi ? json(*a.pi) : json(nullptr)}};
}

int run(int argc, char** argv) {
  CLI::App app{"Covariate-adjusted log-rank testing and hazard-ratio estimation with prognostic scores"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  io::RunManifest manifest;
  for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);

  // fit
  Common fit_c;
  AnalysisArgs fit_a;
  double fit_alpha = 0.05;
  auto* fit = app.add_subcommand("fit", "estimate the marginal log hazard ratio");
  add_analysis(fit, fit_a);
  fit->add_option("--alpha", fit_alpha, "1 - confidence level")->check(CLI::Range(0.0, 1.0));
  add_common(fit, fit_c);

  // test
  Common test_c;
  AnalysisArgs test_a;
  std::string test_alt = "two_sided";
  auto* test = app.add_subcommand("test", "adjusted log-rank test of no treatment effect");
  add_analysis(test, test_a);
  test->add_option("--alternative", test_alt)->check(CLI::IsMember({"two_sided", "less", "greater"}));
  add_common(test, test_c);

  // train
  Common train_c;
  std::string train_ext, train_target = "martingale_residual", train_features;
  std::optional<double> train_at, train_tau;
  ForestParams fp;
  auto* tr = app.add_subcommand("train", "train a prognostic model on external controls");
  tr->add_option("--external", train_ext, "external control CSV")->required();
  tr->add_option("--target", train_target, "martingale_residual or survival_probability");
  tr->add_option("--at-time", train_at, "survival target horizon (default: median follow-up)");
  tr->add_option("--tau", train_tau, "external horizon (default: maximum time)");
  tr->add_option("--features", train_features, "comma-separated feature columns (default: all)");
  tr->add_option("--trees", fp.n_trees, "number of trees")->check(CLI::PositiveNumber);
  tr->add_option("--max-depth", fp.max_depth, "maximum tree depth")->check(CLI::NonNegativeNumber);
  tr->add_option("--min-leaf", fp.min_leaf, "minimum leaf size")->check(CLI::PositiveNumber);
  tr->add_option("--mtry", fp.mtry, "features tried per split (0: ceil(p/3))")->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", fp.seed, "forest seed");
  add_common(tr, train_c);

  // score
  Common score_c;
  std::string score_data, score_model, score_csv;
  auto* sc = app.add_subcommand("score", "score trial subjects and estimate rho");
  sc->add_option("--data", score_data, "trial CSV")->required();
  sc->add_option("--model", score_model, "prognostic model JSON")->required();
  sc->add_option("--scores-out", score_csv, "write per-subject scores as CSV");
  add_common(sc, score_c);

  // design
  Common design_c;
  DesignInput din;
  long design_events = 0;
  double design_log_hr = 0.0;
  auto* de = app.add_subcommand("design", "events needed under covariate adjustment");
  de->add_option("--rho", din.rho, "prognostic correlation (rho_strat with --stratified)")
      ->required()
      ->check(CLI::Range(-1.0, 1.0));
  auto* ev_opt = de->add_option("--events", design_events, "planned events for the unadjusted analysis");
  auto* hr_opt = de->add_option("--log-hr", design_log_hr, "design log hazard ratio");
  de->add_option("--alpha", din.alpha, "two-sided level");
  de->add_option("--power", din.power, "target power");
  de->add_option("--pi", din.pi, "randomization probability");
  de->add_flag("--stratified", din.stratified, "treat --rho as rho_strat");
  add_common(de, design_c);

  // simulate
  Common sim_c;
  std::string sim_config, sim_case = "I", sim_effect = "null", sim_strategy = "score_m", sim_strata = "none",
                          sim_grid, sim_csv;
  std::size_t sim_n = 400, sim_next = 300, sim_reps = 1000;
  std::uint64_t sim_seed = sim::ScenarioConfig{}.seed;
  std::optional<double> sim_log_hr, sim_tau;
  int sim_workers = 0;
  auto* si = app.add_subcommand("simulate", "Monte Carlo operating characteristics for one scenario");
  si->add_option("--config", sim_config, "scenario config JSON; flags given explicitly override it");
  auto* o_case = si->add_option("--case", sim_case, "I..VII");
  auto* o_eff = si->add_option("--effect", sim_effect, "null or efficacy");
  auto* o_n = si->add_option("--n", sim_n, "trial size")->check(CLI::PositiveNumber);
  auto* o_next = si->add_option("--n-external", sim_next, "external cohort size")->check(CLI::PositiveNumber);
  auto* o_reps = si->add_option("--reps", sim_reps, "replicates")->check(CLI::PositiveNumber);
  auto* o_seed = si->add_option("--seed", sim_seed, "master seed");
  auto* o_strat = si->add_option("--strategy", sim_strategy, "score_m, score_m+covariates, score_s, "
                                                             "score_s+covariates or unadjusted");
  auto* o_strata = si->add_option("--stratify", sim_strata, "none, independent or x1");
  auto* o_lhr = si->add_option("--log-hr", sim_log_hr, "override the effect's log hazard ratio");
  auto* o_tau = si->add_option("--tau", sim_tau, "fixed analysis horizon");
  si->add_option("--workers", sim_workers, "worker threads (default: ADJSURV_WORKERS or 1)");
  si->add_option("--hr-grid", sim_grid, "comma-separated hazard ratios for a power curve");
  si->add_option("--csv", sim_csv, "also write the report (or power curve) as CSV");
  add_common(si, sim_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (*fit) {
    manifest.command = "fit";
    manifest.config = analysis_config(fit_a);
    manifest.config["alpha"] = fit_alpha;
    const Prepared p = prepare(fit_a, manifest);
    const AdjustedFit f = fit_a.stratified ? fit_stratified_hr(p.data, p.view, fit_alpha)
                                           : fit_adjusted_hr(p.data, p.view, fit_alpha);
    emit(io::to_json(f), fit_c, manifest);
  } else if (*test) {
    manifest.command = "test";
    manifest.config = analysis_config(test_a);
    manifest.config["alternative"] = test_alt;
    const Prepared p = prepare(test_a, manifest);
    const Alternative alt = alternative_from(test_alt);
    const AdjustedTest t = test_a.stratified ? stratified_logrank_test(p.data, p.view, alt)
                                             : adjusted_logrank_test(p.data, p.view, alt);
    emit(io::to_json(t), test_c, manifest);
  } else if (*tr) {
    manifest.command = "train";
    manifest.inputs.push_back(io::hash_input("external", train_ext));
    const ExternalControls ext = io::load_external(train_ext, split_list(train_features), train_tau);
    const TargetSpec target{io::target_kind_from_name(train_target), train_at};
    const PrognosticModel model = train(ext, target, fp);
    manifest.config = {{"target", target_kind_name(target.kind)}, {"forest", io::to_json(fp)}};
    manifest.seed = fp.seed;
    manifest.model_id = model.model_id();
    json doc = io::to_json(model);
    if (train_c.out.empty()) {
      // Without --out, print a summary instead of the tree arrays.
      doc.erase("regressor");
    }
    emit(doc, train_c, manifest);
  } else if (*sc) {
    manifest.command = "score";
    manifest.inputs.push_back(io::hash_input("data", score_data));
    manifest.inputs.push_back(io::hash_input("model", score_model));
    const TrialDataset data = io::load_trial(score_data);
    const PrognosticModel model = io::load_model(score_model);
    manifest.model_id = model.model_id();
    const std::vector<double> s = score(model, data);
    if (!score_csv.empty()) {
      std::string text = "score\n";
      for (double v : s) text += io::detail::fmt_real(v) + "\n";
      io::write_text_file(score_csv, text);
    }
    json doc = io::header("score_summary");
    doc["model_id"] = model.model_id();
    doc["n"] = data.size();
    doc["score_mean"] = mean(s);
    doc["score_variance"] = variance(s);
    doc["rho"] = io::to_json(estimate_rho(data, s));
    emit(doc, score_c, manifest);
  } else if (*de) {
    manifest.command = "design";
    if (ev_opt->count()) din.d_unadj = design_events;
    if (hr_opt->count()) din.theta_alt = design_log_hr;
    const DesignOutput out = din.stratified ? events_required_stratified(din) : events_required(din);
    manifest.config = {{"rho", din.rho}, {"alpha", din.alpha}, {"power", din.power}, {"pi", din.pi}};
    emit(io::to_json(out), design_c, manifest);
  } else if (*si) {
    manifest.command = "simulate";
    sim::ScenarioConfig cfg;
    cfg.n_replicates = sim_reps;
    if (!sim_config.empty()) {
      manifest.inputs.push_back(io::hash_input("config", sim_config));
      cfg = io::scenario_config_from_json(io::read_json_file(sim_config), cfg);
    }
    if (o_case->count() || sim_config.empty()) cfg.scenario_case = io::case_from_name(sim_case);
    if (o_eff->count() || sim_config.empty()) cfg.effect = io::effect_from_name(sim_effect);
    if (o_n->count()) cfg.n_trial = sim_n;
    if (o_next->count()) cfg.n_external = sim_next;
    if (o_reps->count()) cfg.n_replicates = sim_reps;
    if (o_seed->count()) cfg.seed = sim_seed;
    if (o_strat->count()) cfg.strategy = io::strategy_from_name(sim_strategy);
    if (o_strata->count()) cfg.strata = io::stratum_rule_from_name(sim_strata);
    if (o_lhr->count()) cfg.theta = sim_log_hr;
    if (o_tau->count()) cfg.tau = sim_tau;
    cfg.workers = sim_workers > 0 ? sim_workers : workers_from_env(cfg.workers);
    manifest.config = io::to_json(cfg);
    manifest.seed = cfg.seed;
    manifest.workers = cfg.workers;
    std::cerr << "seed " << cfg.seed << "\n";
    if (!sim_grid.empty()) {
      std::vector<double> grid;
      for (const auto& s : split_list(sim_grid)) {
        const auto v = io::detail::parse_real(s);
        if (!v) throw Error(ErrorCode::InvalidInput, "bad hazard ratio '" + s + "'");
        grid.push_back(*v);
      }
      const auto pts = sim::power_curve(cfg, grid);
      if (!sim_csv.empty()) io::write_text_file(sim_csv, io::power_curve_csv(pts));
      json doc = io::header("power_curve");
      doc["config"] = manifest.config;
      json rows = json::array();
      for (const auto& pt : pts) rows.push_back({{"hr", pt.hr}, {"power_cox", pt.power_unadj}, {"power_cov_adj", pt.power_adj}});
      doc["points"] = rows;
      emit(doc, sim_c, manifest);
    } else {
      const sim::ScenarioReport rep = sim::run_scenario(cfg);
      manifest.model_id = rep.model_id;
      if (!sim_csv.empty()) io::write_text_file(sim_csv, io::report_csv_header() + io::report_csv_row(rep));
      emit(io::to_json(rep), sim_c, manifest);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const adjsurv::Error& e) {
    std::cerr << "error [" << adjsurv::error_code_name(e.code()) << "]: " << e.what() << "\n";
    return adjsurv::is_validation_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    return 1;
  }
}
