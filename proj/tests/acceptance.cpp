// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Monte Carlo criteria use R = 2000 replicates at n = 400.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "support.hpp"

using namespace adjsurv;
using namespace adjsurv::sim;

namespace {

constexpr std::size_t kReps = 2000;
constexpr std::size_t kN = 400;

struct Line {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Line> results;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  results.push_back({id, name, pass, detail});
  std::printf("[%s] criterion %2d: %s | %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

int workers() { return workers_from_env(1); }

struct Key {
  Case c;
  Effect e;
  Strategy s;
  StratumRule r;
  auto operator<=>(const Key&) const = default;
};

std::map<Key, ScenarioReport> cache;
std::ofstream report_csv("acceptance_reports.csv");

const ScenarioReport& scenario(Case c, Effect e, Strategy s = Strategy::ScoreOnlyM,
                               StratumRule r = StratumRule::None) {
  const Key k{c, e, s, r};
  auto it = cache.find(k);
  if (it != cache.end()) return it->second;
  ScenarioConfig cfg;
  cfg.scenario_case = c;
  cfg.effect = e;
  cfg.strategy = s;
  cfg.strata = r;
  cfg.n_trial = kN;
  cfg.n_replicates = kReps;
  cfg.workers = workers();
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioReport rep = run_scenario(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf(
      "  scenario case %-3s %-8s %-18s strata=%-11s rej cox %.3f adj %.3f | wald %.3f %.3f | bias %.4f | "
      "mse %.4f mcsd %.4f | vr %.3f | rho %.3f 1-rho2 %.3f | degenerate %zu | %.0fs\n",
      case_name(c), effect_name(e), strategy_name(s), stratum_rule_name(r), rep.reject_unadj, rep.reject_adj,
      rep.reject_wald_unadj, rep.reject_wald_adj, rep.bias, rep.mean_se, rep.mcsd, rep.var_ratio, rep.mean_rho,
      rep.mean_one_minus_rho2, rep.n_degenerate, secs);
  if (rep.stratified)
    std::printf("    stratified: rej %.3f adj %.3f | bias %.4f | mse %.4f mcsd %.4f | vr %.3f | rho_strat %.3f\n",
                rep.stratified->reject_sl, rep.stratified->reject_csl, rep.stratified->bias, rep.stratified->mean_se,
                rep.stratified->mcsd, rep.stratified->var_ratio, rep.stratified->mean_rho_strat);
  std::fflush(stdout);
  if (cache.empty()) report_csv << io::report_csv_header();
  report_csv << io::report_csv_row(rep);
  report_csv.flush();
  return cache.emplace(k, std::move(rep)).first->second;
}

const std::vector<Case> all_cases{Case::I, Case::II, Case::III, Case::IV, Case::V, Case::VI, Case::VII};

void criterion1() {
  bool ok = true;
  std::string d;
  for (Case c : all_cases) {
    const double r = scenario(c, Effect::Null).reject_adj;
    ok = ok && r >= 0.035 && r <= 0.065;
    d += fmt("%s=%.3f ", case_name(c), r);
  }
  record(1, "type I error of the adjusted test in [0.035, 0.065], all cases", ok, d);
}

void criterion2() {
  bool ok = true;
  double worst = 0.0, worst_abs = 0.0;
  std::string where;
  for (const auto& [k, r] : cache) {
    worst_abs = std::max(worst_abs, r.mean_abs_diff);
    auto check = [&](double b, const std::string& label) {
      ok = ok && b < 0.01;
      if (b >= worst) {
        worst = b;
        where = label;
      }
    };
    const std::string label = std::string(case_name(k.c)) + "/" + effect_name(k.e) + "/" + strategy_name(k.s);
    check(r.bias, label);
    if (r.stratified) check(r.stratified->bias, label + "/stratified");
  }
  // Gated on the absolute mean difference, the quantity tabulated as Bias. The
  // per-replicate mean |difference| is of the order of sqrt(Var_L - Var_CL)
  // and is printed for reference only.
  record(2, "|mean(theta_adj - theta_unadj)| < 0.01 in every scenario", ok,
         fmt("worst %.4f at %s over %zu scenarios; largest mean |difference| %.4f (not gated)", worst,
             where.c_str(), cache.size(), worst_abs));
}

void criterion3() {
  const auto& r = scenario(Case::I, Effect::Efficacy);
  const bool ok = r.reject_adj >= 0.89 && r.reject_adj <= 0.94 && r.reject_unadj >= 0.68 && r.reject_unadj <= 0.73;
  record(3, "Case I power: adjusted in [0.89, 0.94], unadjusted in [0.68, 0.73]", ok,
         fmt("adjusted %.3f, unadjusted %.3f", r.reject_adj, r.reject_unadj));
}

void criterion4() {
  const auto& r = scenario(Case::I, Effect::Null);
  const bool ok = std::fabs(r.var_ratio - 0.536) <= 0.04 && std::fabs(r.var_ratio - r.mean_one_minus_rho2) <= 0.03;
  record(4, "Case I null variance ratio within 0.04 of 0.536 and within 0.03 of mean 1-rho^2", ok,
         fmt("var ratio %.3f, mean 1-rho^2 %.3f", r.var_ratio, r.mean_one_minus_rho2));
}

void criterion5() {
  bool ok = true;
  double worst = 0.0;
  std::string where;
  for (const auto& [k, r] : cache) {
    auto check = [&](double se, double sd, const std::string& label) {
      const double rel = std::fabs(se - sd) / sd;
      ok = ok && rel < 0.05;
      if (rel >= worst) {
        worst = rel;
        where = label;
      }
    };
    const std::string label = std::string(case_name(k.c)) + "/" + effect_name(k.e) + "/" + strategy_name(k.s);
    check(r.mean_se, r.mcsd, label);
    if (r.stratified) check(r.stratified->mean_se, r.stratified->mcsd, label + "/stratified");
  }
  record(5, "mean SE of the adjusted estimator within 5% of its Monte Carlo SD, every scenario", ok,
         fmt("worst relative gap %.3f at %s", worst, where.c_str()));
}

void criterion6() {
  const auto& r = scenario(Case::VI, Effect::Efficacy);
  const bool ok = r.reject_adj >= 0.98 && std::fabs(r.var_ratio - 0.347) <= 0.04;
  record(6, "Case VI power >= 0.98 and variance ratio within 0.04 of 0.347", ok,
         fmt("power %.3f, var ratio %.3f", r.reject_adj, r.var_ratio));
}

void criterion7() {
  bool ok = true;
  std::string d;
  for (Case c : {Case::III, Case::IV})
    for (Effect e : {Effect::Null, Effect::Efficacy}) {
      const auto& r = scenario(c, e);
      const double gap = std::fabs(r.reject_adj - r.reject_unadj);
      ok = ok && gap < 0.02 && r.var_ratio >= 0.96 && r.var_ratio <= 1.005;
      d += fmt("%s/%s gap %.3f vr %.3f; ", case_name(c), effect_name(e), gap, r.var_ratio);
    }
  record(7, "Cases III-IV: |power gap| < 0.02 and variance ratio in [0.96, 1.005]", ok, d);
}

double grid_mple(const TrialDataset& d) {
  double best = 0.0, best_ll = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 1000; ++k) {
    const double th = -5.0 + 0.01 * k;
    const double ll = testing_support::log_partial_likelihood(d, th);
    if (ll > best_ll) best_ll = ll, best = th;
  }
  const double centre = best;
  for (int k = -2000; k <= 2000; ++k) {
    const double th = centre + 1e-5 * k;
    const double ll = testing_support::log_partial_likelihood(d, th);
    if (ll > best_ll) best_ll = ll, best = th;
  }
  return best;
}

void criterion8() {
  std::mt19937_64 g(8008);
  std::size_t used = 0, rejected = 0, adjusted = 0, no_adjusted_root = 0;
  double worst_grid = 0.0, worst_aug = 0.0, worst_root = 0.0, worst_id = 0.0;
  while (used < 200) {
    const std::size_t n = 6 + static_cast<std::size_t>(g() % 7);
    const auto d = testing_support::random_trial(g, n, 1, used % 2 == 0);
    if (d.n_treated() < 3 || d.size() - d.n_treated() < 3) {
      ++rejected;
      continue;
    }
    double theta;
    try {
      theta = cox_mple(d);
    } catch (const Error&) {
      ++rejected;  // all events on one side: no finite estimate
      continue;
    }
    if (std::fabs(theta) > 4.9) {
      ++rejected;
      continue;
    }
    ++used;
    worst_grid = std::max(worst_grid, std::fabs(theta - grid_mple(d)));
    const auto v = CovariateView::all(d);
    try {
      const AdjustedFit f = fit_adjusted_hr(d, v);
      const auto oracle = testing_support::adjusted_fit_oracle(d, d.covariate_matrix());
      worst_aug = std::max(worst_aug, std::fabs(f.augmentation - oracle.augmentation));
      worst_root =
          std::max(worst_root, std::fabs(testing_support::score_oracle(d, f.theta_hat) - oracle.augmentation));
      ++adjusted;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoRootInBracket) throw;
      ++no_adjusted_root;  // shifted score never crosses zero on the bracket
    }
    for (double th : {-1.0, 0.0, 1.0}) {
      const PseudoOutcomes po = pseudo_outcomes(d, th);
      double s = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) s += d[i].treated() ? po.values[i] : -po.values[i];
      worst_id = std::max(worst_id, std::fabs(s / static_cast<double>(n) - testing_support::score_oracle(d, th)));
    }
  }
  const bool ok = worst_grid <= 1e-3 && worst_aug <= 1e-10 && worst_root <= 1e-10 && worst_id <= 1e-10 &&
                  adjusted >= 100;
  record(8, "oracle equivalence on 200 random datasets with n <= 12", ok,
         fmt("grid %.1e, pseudo-outcome identity %.1e on 200; augmentation %.1e, adjusted score at root %.1e "
             "on %zu with an adjusted root (%zu without); %zu draws without a finite estimate redrawn",
             worst_grid, worst_id, worst_aug, worst_root, adjusted, no_adjusted_root, rejected));
}

void criterion9() {
  std::mt19937_64 g(9009);
  double worst = 0.0, worst_se = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const auto d = testing_support::random_trial(g, 30 + static_cast<std::size_t>(g() % 200), 2, rep % 2 == 0);
    const auto s = d.with_strata(std::vector<int>(d.size(), 1));
    const auto v = CovariateView::all(d);
    const AdjustedFit a = fit_stratified_hr(s, v), b = fit_adjusted_hr(d, v);
    worst = std::max(worst, std::fabs(a.theta_hat - b.theta_hat));
    worst_se = std::max(worst_se, std::fabs(a.se - b.se));
  }
  const auto& r = scenario(Case::I, Effect::Null, Strategy::ScoreOnlyM, StratumRule::IndependentBinary);
  const double gap = std::fabs(r.stratified->var_ratio - r.var_ratio);
  const bool ok = worst <= 1e-10 && worst_se <= 1e-10 && gap <= 0.03;
  record(9, "stratified collapse to 1e-10; independent-strata variance ratio within 0.03 of unstratified", ok,
         fmt("max |dtheta| %.1e, max |dse| %.1e; stratified vr %.3f vs unstratified %.3f", worst, worst_se,
             r.stratified->var_ratio, r.var_ratio));
}

void criterion10() {
  ScenarioConfig cfg;
  cfg.n_replicates = 100;
  const ExternalControls ext = scenario_external(cfg);
  const auto model = scenario_model(cfg, ext);
  std::mt19937_64 g(1010);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.1, 10.0), shift(-10.0, 10.0);
  double worst_fit = 0.0, worst_rho = 0.0;
  for (std::size_t r = 0; r < cfg.n_replicates; ++r) {
    const TrialDataset d = scenario_trial(cfg, r);
    const auto scores = score(*model, d);
    const CovariateView v = CovariateView::combine(CovariateView::all(d), CovariateView::score(scores));
    Eigen::MatrixXd a(4, 4);
    for (int k = 0; k < 16; ++k) a(k / 4, k % 4) = z(g);
    a += 4.0 * Eigen::MatrixXd::Identity(4, 4);
    Eigen::RowVectorXd b(4);
    for (int k = 0; k < 4; ++k) b(k) = shift(g);
    const CovariateView w{(v.values * a).rowwise() + b, v.names};
    const AdjustedFit f1 = fit_adjusted_hr(d, v), f2 = fit_adjusted_hr(d, w);
    const AdjustedTest t1 = adjusted_logrank_test(d, v), t2 = adjusted_logrank_test(d, w);
    worst_fit = std::max({worst_fit, std::fabs(f1.theta_hat - f2.theta_hat), std::fabs(f1.se - f2.se),
                          std::fabs(t1.statistic - t2.statistic)});
    std::vector<double> moved(scores);
    const double sa = u(g), sb = shift(g);
    for (auto& x : moved) x = sa * x + sb;
    worst_rho = std::max(worst_rho, std::fabs(estimate_rho(d, scores).rho - estimate_rho(d, moved).rho));
  }
  const bool ok = worst_fit <= 1e-8 && worst_rho <= 1e-12;
  record(10, "affine invariance: T_CL, theta_CL, se to 1e-8; rho to 1e-12", ok,
         fmt("max fit change %.1e, max rho change %.1e over %zu trials", worst_fit, worst_rho, cfg.n_replicates));
}

void criterion11() {
  bool ok = true;
  std::string d;
  for (auto [c, e, r] : {std::tuple{Case::I, Effect::Null, StratumRule::None},
                         std::tuple{Case::VII, Effect::Efficacy, StratumRule::ByX1}}) {
    ScenarioConfig cfg;
    cfg.scenario_case = c;
    cfg.effect = e;
    cfg.strata = r;
    cfg.n_replicates = 200;
    cfg.workers = 1;
    const ScenarioReport a = run_scenario(cfg);
    cfg.workers = 4;
    const ScenarioReport b = run_scenario(cfg);
    const std::string ja = io::to_json(a).dump(), jb = io::to_json(b).dump();
    const std::string ca = io::report_csv_row(a), cb = io::report_csv_row(b);
    ok = ok && ja == jb && ca == cb;
    d += fmt("%s/%s: %s; ", case_name(c), effect_name(e), ja == jb && ca == cb ? "identical" : "DIFFERENT");
  }
  record(11, "reports byte-identical across worker counts (1 vs 4)", ok, d);
}

void criterion12() {
  const auto& s2 = scenario(Case::II, Effect::Efficacy);
  const auto& c2 = scenario(Case::II, Effect::Efficacy, Strategy::ScorePlusCovariatesM);
  const auto& s1 = scenario(Case::I, Effect::Efficacy);
  const auto& c1 = scenario(Case::I, Effect::Efficacy, Strategy::ScorePlusCovariatesM);
  const double d2 = c2.reject_adj - s2.reject_adj, d1 = c1.reject_adj - s1.reject_adj;
  const bool ok = d2 >= 0.02 && std::fabs(d1) < 0.02;
  record(12, "strategy matrix: Case II covariates add >= 0.02 power, Case I adds < 0.02", ok,
         fmt("Case II %.3f vs %.3f (diff %.3f); Case I %.3f vs %.3f (diff %.3f)", c2.reject_adj, s2.reject_adj, d2,
             c1.reject_adj, s1.reject_adj, d1));
}

void informational() {
  std::printf("\nsupporting properties (not gated):\n");
  double worst_wald = 0.0, worst_law = 0.0;
  for (const auto& [k, r] : cache) {
    if (k.e == Effect::Null) worst_wald = std::max(worst_wald, std::fabs(r.reject_wald_adj - r.reject_adj));
    if (k.s == Strategy::ScoreOnlyM) worst_law = std::max(worst_law, std::fabs(r.var_ratio - r.mean_one_minus_rho2));
  }
  std::printf("  max |Wald - score| null rejection difference: %.4f\n", worst_wald);
  std::printf("  max |var ratio - mean(1 - rho^2)| across score-only scenarios: %.3f\n", worst_law);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  std::printf("acceptance: R = %zu, n = %zu, workers = %d\n", kReps, kN, workers());
  for (Case c : all_cases)
    for (Effect e : {Effect::Null, Effect::Efficacy}) scenario(c, e);
  std::printf("\n");
  const std::vector<std::pair<int, void (*)()>> order{
      {1, criterion1}, {3, criterion3},   {4, criterion4},   {6, criterion6},   {7, criterion7}, {8, criterion8},
      {9, criterion9}, {10, criterion10}, {11, criterion11}, {12, criterion12},
      // 2 and 5 span every scenario run above, so they come last.
      {2, criterion2}, {5, criterion5}};
  for (const auto& [id, fn] : order) {
    try {
      fn();
    } catch (const std::exception& e) {
      record(id, "criterion raised an exception", false, e.what());
    }
  }
  informational();
  std::sort(results.begin(), results.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  int failed = 0;
  std::printf("\nsummary:\n");
  for (const auto& l : results) {
    std::printf("  [%s] %2d %s\n", l.pass ? "PASS" : "FAIL", l.id, l.name.c_str());
    failed += !l.pass;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%d of %zu criteria passed in %.0fs\n", static_cast<int>(results.size()) - failed, results.size(), secs);
  return failed == 0 ? 0 : 1;
}
