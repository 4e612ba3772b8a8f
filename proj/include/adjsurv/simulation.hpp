#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "adjsurv/adjustment.hpp"
#include "adjsurv/parallel.hpp"
#include "adjsurv/prognostic.hpp"
#include "adjsurv/rng.hpp"
#include "adjsurv/stratified.hpp"

namespace adjsurv::sim {

/// Data-generating constants shared by every case.
namespace constants {
inline constexpr double h0 = 0.08;
inline const double beta1 = std::log(1.8);
inline const double beta2 = std::log(3.0);
inline constexpr double censoring_rate = 0.02;
inline const double theta_efficacy = std::log(0.6);
inline constexpr double change_point = 5.0;
inline constexpr std::array<double, 2> c_arm{0.8, 1.2};
inline constexpr std::array<double, 2> c_x1{0.8, 1.2};
inline constexpr std::array<double, 2> c_x2{1.2, 0.8};
inline constexpr double aft_sd_trial = 0.5;
inline constexpr double aft_sd_external = 0.7;
}  // namespace constants

enum class Case { I = 1, II, III, IV, V, VI, VII };
enum class Effect { Null, Efficacy };
enum class Strategy { ScoreOnlyM, ScorePlusCovariatesM, ScoreOnlyS, ScorePlusCovariatesS, Unadjusted };
/// How strata are generated; any rule other than None also switches the
/// randomization to permuted blocks within strata.
enum class StratumRule { None, IndependentBinary, ByX1 };

const char* case_name(Case c);
const char* effect_name(Effect e);
const char* strategy_name(Strategy s);
const char* stratum_rule_name(StratumRule r);

/// Trial-side outcome law.
enum class TrialLaw { Cox, LogNormalAft, Piecewise };
/// External-cohort outcome law.
enum class ExternalLaw { Cox, CoxDifferentBaseline, Constant, LogNormalAftA, LogNormalAftB };

inline TrialLaw trial_law(Case c) {
  switch (c) {
    case Case::VI: return TrialLaw::LogNormalAft;
    case Case::VII: return TrialLaw::Piecewise;
    default: return TrialLaw::Cox;
  }
}

inline ExternalLaw external_law(Case c) {
  switch (c) {
    case Case::II: return ExternalLaw::CoxDifferentBaseline;
    case Case::IV: return ExternalLaw::Constant;
    case Case::V: return ExternalLaw::LogNormalAftA;
    case Case::VI: return ExternalLaw::LogNormalAftB;
    default: return ExternalLaw::Cox;
  }
}

inline std::vector<std::string> external_features(Case c) {
  if (c == Case::III) return {"x1", "x3"};
  return {"x1", "x2", "x3"};
}

struct Covariates {
  double x1, x2, x3;
};

inline Covariates draw_covariates(rng::Stream& s) {
  Covariates x;
  x.x1 = s.bernoulli(0.5) ? 1.0 : 0.0;
  x.x2 = s.normal();
  x.x3 = s.normal();
  return x;
}

/// Linear predictor of the Cox trial law without the treatment term.
inline double cox_linear_predictor(const Covariates& x, double c1 = 1.0, double c2 = 1.0) {
  using namespace constants;
  return 0.8 + c1 * beta1 * x.x1 * std::fabs(x.x2) - c2 * beta2 * (x.x2 - 0.5) * (x.x2 - 0.5);
}

inline double cox_rate(const Covariates& x, double theta, int arm) {
  return constants::h0 * std::exp(cox_linear_predictor(x) + theta * arm);
}

/// Hazard on [0, change point) (piece 0) or after it (piece 1).
inline double piecewise_rate(const Covariates& x, double theta, int arm, int piece) {
  using namespace constants;
  const auto k = static_cast<std::size_t>(piece);
  return h0 * std::exp(c_arm[k] * theta * arm + cox_linear_predictor(x, c_x1[k], c_x2[k]));
}

/// Survival function of the two-piece exponential law.
inline double piecewise_survival(double t, double rate0, double rate1) {
  const double cp = constants::change_point;
  return t < cp ? std::exp(-rate0 * t) : std::exp(-rate0 * cp - rate1 * (t - cp));
}

/// Inverts the two-piece cumulative hazard at a unit-exponential draw.
inline double piecewise_inverse(double e, double rate0, double rate1) {
  const double cp = constants::change_point;
  if (e < rate0 * cp) return e / rate0;
  return cp + (e - rate0 * cp) / rate1;
}

inline double trial_aft_log_mean(const Covariates& x, double theta, int arm) {
  using namespace constants;
  return 1.0 - theta * arm - beta1 * x.x1 * std::fabs(x.x2) + beta2 * (x.x2 - x.x1) * (x.x2 - x.x1);
}

inline double draw_trial_event_time(TrialLaw law, const Covariates& x, double theta, int arm, rng::Stream& s) {
  switch (law) {
    case TrialLaw::Cox: return s.exponential(cox_rate(x, theta, arm));
    case TrialLaw::LogNormalAft:
      return std::exp(trial_aft_log_mean(x, theta, arm) + constants::aft_sd_trial * s.normal());
    case TrialLaw::Piecewise:
      return piecewise_inverse(s.exponential(1.0), piecewise_rate(x, theta, arm, 0),
                               piecewise_rate(x, theta, arm, 1));
  }
  return 0.0;
}

inline double draw_external_event_time(ExternalLaw law, const Covariates& x, rng::Stream& s) {
  using namespace constants;
  switch (law) {
    case ExternalLaw::Cox: return s.exponential(cox_rate(x, 0.0, 0));
    case ExternalLaw::CoxDifferentBaseline: return s.exponential(0.05 * std::exp(0.8 + 0.2 * x.x2));
    case ExternalLaw::Constant: return s.exponential(h0 * std::exp(0.8));
    case ExternalLaw::LogNormalAftA:
      return std::exp(1.0 + beta1 * x.x1 * x.x2 + beta2 * (x.x2 - x.x1) * (x.x2 - x.x1) +
                      aft_sd_external * s.normal());
    case ExternalLaw::LogNormalAftB:
      return std::exp(trial_aft_log_mean(x, 0.0, 0) + aft_sd_external * s.normal());
  }
  return 0.0;
}

struct TrialOptions {
  double pi = 0.5;
  StratumRule strata = StratumRule::None;
  std::optional<double> tau;  // default: maximum observed time
  int block_size = 4;
};

inline double effect_theta(Effect e) { return e == Effect::Null ? 0.0 : constants::theta_efficacy; }

/// One trial of size n under the case's law. Covariates are named x1, x2, x3.
inline TrialDataset generate_trial(Case c, double theta, std::size_t n, rng::Stream& s,
                                   const TrialOptions& opt = {}) {
  const TrialLaw law = trial_law(c);
  std::vector<Subject> subjects(n);
  std::vector<Covariates> xs(n);
  std::vector<int> stratum(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = draw_covariates(s);
    if (opt.strata == StratumRule::IndependentBinary) stratum[i] = s.bernoulli(0.5) ? 1 : 0;
    else if (opt.strata == StratumRule::ByX1) stratum[i] = static_cast<int>(xs[i].x1);
  }
  std::vector<int> arm(n, 0);
  if (opt.strata == StratumRule::None) {
    for (std::size_t i = 0; i < n; ++i) arm[i] = s.bernoulli(opt.pi) ? 1 : 0;
  } else {
    // Permuted blocks within each stratum, in enrollment order.
    const int b = std::max(2, opt.block_size);
    const int treated_per_block = static_cast<int>(std::lround(opt.pi * b));
    std::array<std::vector<int>, 2> block;
    for (std::size_t i = 0; i < n; ++i) {
      auto& blk = block[static_cast<std::size_t>(stratum[i])];
      if (blk.empty()) {
        blk.assign(static_cast<std::size_t>(b), 0);
        for (int k = 0; k < treated_per_block; ++k) blk[static_cast<std::size_t>(k)] = 1;
        for (int k = b - 1; k > 0; --k)
          std::swap(blk[static_cast<std::size_t>(k)], blk[s.below(static_cast<std::uint64_t>(k + 1))]);
      }
      arm[i] = blk.back();
      blk.pop_back();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double t = draw_trial_event_time(law, xs[i], theta, arm[i], s);
    const double cens = s.exponential(constants::censoring_rate);
    Subject& sub = subjects[i];
    sub.time = std::min(t, cens);
    sub.event = t <= cens;
    sub.arm = arm[i] ? Arm::Treatment : Arm::Control;
    sub.covariates = {xs[i].x1, xs[i].x2, xs[i].x3};
    if (opt.strata != StratumRule::None) sub.stratum = stratum[i];
  }
  return TrialDataset::make(std::move(subjects), {"x1", "x2", "x3"}, opt.tau, opt.pi);
}

inline TrialDataset generate_trial(Case c, Effect e, std::size_t n, rng::Stream& s, const TrialOptions& opt = {}) {
  return generate_trial(c, effect_theta(e), n, s, opt);
}

/// Historical controls for the case; features exclude x2 in Case III.
inline ExternalControls generate_external(Case c, std::size_t n_ext, rng::Stream& s) {
  const ExternalLaw law = external_law(c);
  const auto names = external_features(c);
  std::vector<Subject> subjects(n_ext);
  for (auto& sub : subjects) {
    const Covariates x = draw_covariates(s);
    const double t = draw_external_event_time(law, x, s);
    const double cens = s.exponential(constants::censoring_rate);
    sub.time = std::min(t, cens);
    sub.event = t <= cens;
    if (c == Case::III) sub.covariates = {x.x1, x.x3};
    else sub.covariates = {x.x1, x.x2, x.x3};
  }
  return ExternalControls::make(std::move(subjects), names);
}

struct ScenarioConfig {
  Case scenario_case = Case::I;
  Effect effect = Effect::Null;
  std::optional<double> theta;  // overrides the effect's log hazard ratio
  std::size_t n_trial = 400;
  std::size_t n_external = 300;
  std::size_t n_replicates = 10000;
  std::uint64_t seed = 20240601;
  double alpha = 0.05;
  double pi = 0.5;
  Strategy strategy = Strategy::ScoreOnlyM;
  StratumRule strata = StratumRule::None;
  std::optional<double> tau;
  ForestParams forest;
  int workers = 1;

  double resolved_theta() const { return theta.value_or(effect_theta(effect)); }
};

struct ReplicateResult {
  bool valid = false;
  std::string failure;
  double theta_unadj = 0.0, theta_adj = 0.0;
  double se_unadj = 0.0, se_adj = 0.0;
  double z_unadj = 0.0, z_adj = 0.0;  // log-rank statistics T_L and T_CL
  bool reject_unadj = false, reject_adj = false;
  bool reject_wald_unadj = false, reject_wald_adj = false;
  double rho_hat = 0.0;
  double events = 0.0;
  // Stratified analysis, when strata are generated.
  double theta_sl = 0.0, theta_csl = 0.0, se_sl = 0.0, se_csl = 0.0;
  bool reject_sl = false, reject_csl = false;
  double rho_strat = 0.0;
};

struct StratifiedSummary {
  double bias = 0.0;
  double reject_sl = 0.0, reject_csl = 0.0;
  double mean_se = 0.0, mcsd = 0.0;
  double var_ratio = 0.0;
  double mean_rho_strat = 0.0, mean_one_minus_rho_strat2 = 0.0;
};

/// Table-1 shaped aggregate for one scenario.
struct ScenarioReport {
  ScenarioConfig config;
  std::string model_id;
  std::size_t n_valid = 0;
  std::size_t n_degenerate = 0;
  double bias = 0.0;           // |mean(theta_adj - theta_unadj)|
  double mean_abs_diff = 0.0;  // mean |theta_adj - theta_unadj|
  double reject_unadj = 0.0, reject_adj = 0.0;
  double reject_wald_unadj = 0.0, reject_wald_adj = 0.0;
  double mean_se = 0.0, mcsd = 0.0;
  double mean_se_unadj = 0.0, mcsd_unadj = 0.0;
  double var_ratio = 0.0;
  double mean_rho = 0.0, mean_one_minus_rho2 = 0.0;
  double mean_theta_unadj = 0.0, mean_theta_adj = 0.0;
  double mean_events = 0.0;
  std::optional<StratifiedSummary> stratified;
};

/// The covariate view a strategy adjusts for.
inline CovariateView strategy_view(Strategy s, const TrialDataset& trial, const std::vector<double>& scores) {
  switch (s) {
    case Strategy::ScoreOnlyM:
    case Strategy::ScoreOnlyS: return CovariateView::score(scores);
    case Strategy::ScorePlusCovariatesM:
    case Strategy::ScorePlusCovariatesS:
      return CovariateView::combine(CovariateView::all(trial), CovariateView::score(scores));
    case Strategy::Unadjusted: break;
  }
  return CovariateView::none(trial.size());
}

inline std::optional<TargetKind> strategy_target(Strategy s) {
  switch (s) {
    case Strategy::ScoreOnlyM:
    case Strategy::ScorePlusCovariatesM: return TargetKind::MartingaleResidual;
    case Strategy::ScoreOnlyS:
    case Strategy::ScorePlusCovariatesS: return TargetKind::SurvivalProbability;
    case Strategy::Unadjusted: break;
  }
  return std::nullopt;
}

namespace stream_tag {
inline constexpr std::uint64_t external = 0x657874;
inline constexpr std::uint64_t forest = 0x666f72;
inline constexpr std::uint64_t trial = 0x747269;
}  // namespace stream_tag

/// The fixed external cohort of a scenario. Cases sharing an external law
/// share the cohort.
inline ExternalControls scenario_external(const ScenarioConfig& cfg) {
  rng::Stream s(cfg.seed, {stream_tag::external, static_cast<std::uint64_t>(external_law(cfg.scenario_case)),
                           cfg.n_external});
  return generate_external(cfg.scenario_case, cfg.n_external, s);
}

inline std::optional<PrognosticModel> scenario_model(const ScenarioConfig& cfg, const ExternalControls& ext) {
  const auto kind = strategy_target(cfg.strategy);
  if (!kind) return std::nullopt;
  ForestParams fp = cfg.forest;
  fp.seed = rng::derive(cfg.seed, {stream_tag::forest, static_cast<std::uint64_t>(cfg.scenario_case),
                                   static_cast<std::uint64_t>(*kind)});
  fp.workers = std::max(fp.workers, cfg.workers);
  return train(ext, TargetSpec{*kind, std::nullopt}, fp);
}

/// Replicate r's trial. The stream depends on the trial law rather than the
/// case, so Cases I-V analyse the same trials.
inline TrialDataset scenario_trial(const ScenarioConfig& cfg, std::size_t r) {
  const double theta = cfg.resolved_theta();
  std::uint64_t theta_bits;
  std::memcpy(&theta_bits, &theta, sizeof theta_bits);
  rng::Stream s(cfg.seed, {stream_tag::trial, static_cast<std::uint64_t>(trial_law(cfg.scenario_case)),
                           theta_bits, cfg.n_trial, static_cast<std::uint64_t>(cfg.strata), r});
  TrialOptions opt;
  opt.pi = cfg.pi;
  opt.strata = cfg.strata;
  opt.tau = cfg.tau;
  return generate_trial(cfg.scenario_case, theta, cfg.n_trial, s, opt);
}

inline ReplicateResult analyse_replicate(const ScenarioConfig& cfg, const PrognosticModel* model,
                                         const TrialDataset& trial) {
  ReplicateResult rr;
  const double zcrit = normal_quantile(1.0 - cfg.alpha / 2.0);
  try {
    std::vector<double> scores;
    if (model) scores = score(*model, trial);
    const CovariateView view = strategy_view(cfg.strategy, trial, scores);
    const CovariateView none = CovariateView::none(trial.size());

    const AdjustedFit fu = fit_adjusted_hr(trial, none, cfg.alpha);
    const AdjustedFit fa = view.cols() > 0 ? fit_adjusted_hr(trial, view, cfg.alpha) : fu;
    const AdjustedTest ta = adjusted_logrank_test(trial, view);
    rr.theta_unadj = fu.theta_hat;
    rr.theta_adj = fa.theta_hat;
    rr.se_unadj = fu.se;
    rr.se_adj = fa.se;
    rr.z_unadj = ta.statistic_unadjusted;
    rr.z_adj = ta.statistic;
    rr.reject_unadj = std::fabs(rr.z_unadj) > zcrit;
    rr.reject_adj = std::fabs(rr.z_adj) > zcrit;
    rr.reject_wald_unadj = std::fabs(fu.z_stat) > zcrit;
    rr.reject_wald_adj = std::fabs(fa.z_stat) > zcrit;
    rr.events = fu.events;
    if (model) rr.rho_hat = estimate_rho(trial, scores).rho;

    if (cfg.strata != StratumRule::None) {
      const AdjustedFit su = fit_stratified_hr(trial, none, cfg.alpha);
      const AdjustedFit sa = view.cols() > 0 ? fit_stratified_hr(trial, view, cfg.alpha) : su;
      const AdjustedTest st = stratified_logrank_test(trial, view);
      rr.theta_sl = su.theta_hat;
      rr.theta_csl = sa.theta_hat;
      rr.se_sl = su.se;
      rr.se_csl = sa.se;
      rr.reject_sl = std::fabs(st.statistic_unadjusted) > zcrit;
      rr.reject_csl = std::fabs(st.statistic) > zcrit;
      if (model) rr.rho_strat = estimate_rho(trial, scores).rho_strat.value_or(0.0);
    }
    rr.valid = true;
  } catch (const Error& e) {
    rr.valid = false;
    rr.failure = std::string(error_code_name(e.code()));
  }
  return rr;
}

namespace detail {

inline double sd(const std::vector<double>& v) { return std::sqrt(variance(v)); }

}  // namespace detail

inline ScenarioReport aggregate(const ScenarioConfig& cfg, const std::vector<ReplicateResult>& reps) {
  ScenarioReport rep;
  rep.config = cfg;
  std::vector<double> tu, ta, diff, seu, sea, rho, omr, ev;
  std::vector<double> tsl, tcsl, secsl, rhos, omrs, dstrat;
  double rj_u = 0, rj_a = 0, rw_u = 0, rw_a = 0, rj_sl = 0, rj_csl = 0, absd = 0;
  for (const auto& r : reps) {
    if (!r.valid) {
      ++rep.n_degenerate;
      continue;
    }
    tu.push_back(r.theta_unadj);
    ta.push_back(r.theta_adj);
    diff.push_back(r.theta_adj - r.theta_unadj);
    absd += std::fabs(r.theta_adj - r.theta_unadj);
    seu.push_back(r.se_unadj);
    sea.push_back(r.se_adj);
    rho.push_back(r.rho_hat);
    omr.push_back(1.0 - r.rho_hat * r.rho_hat);
    ev.push_back(r.events);
    rj_u += r.reject_unadj;
    rj_a += r.reject_adj;
    rw_u += r.reject_wald_unadj;
    rw_a += r.reject_wald_adj;
    if (cfg.strata != StratumRule::None) {
      tsl.push_back(r.theta_sl);
      tcsl.push_back(r.theta_csl);
      dstrat.push_back(r.theta_csl - r.theta_sl);
      secsl.push_back(r.se_csl);
      rhos.push_back(r.rho_strat);
      omrs.push_back(1.0 - r.rho_strat * r.rho_strat);
      rj_sl += r.reject_sl;
      rj_csl += r.reject_csl;
    }
  }
  rep.n_valid = tu.size();
  if (rep.n_valid == 0) return rep;
  const double m = static_cast<double>(rep.n_valid);
  rep.bias = std::fabs(mean(diff));
  rep.mean_abs_diff = absd / m;
  rep.reject_unadj = rj_u / m;
  rep.reject_adj = rj_a / m;
  rep.reject_wald_unadj = rw_u / m;
  rep.reject_wald_adj = rw_a / m;
  rep.mean_se = mean(sea);
  rep.mcsd = detail::sd(ta);
  rep.mean_se_unadj = mean(seu);
  rep.mcsd_unadj = detail::sd(tu);
  rep.var_ratio = variance(tu) > 0.0 ? variance(ta) / variance(tu) : 1.0;
  rep.mean_rho = mean(rho);
  rep.mean_one_minus_rho2 = mean(omr);
  rep.mean_theta_unadj = mean(tu);
  rep.mean_theta_adj = mean(ta);
  rep.mean_events = mean(ev);
  if (cfg.strata != StratumRule::None) {
    StratifiedSummary s;
    s.bias = std::fabs(mean(dstrat));
    s.reject_sl = rj_sl / m;
    s.reject_csl = rj_csl / m;
    s.mean_se = mean(secsl);
    s.mcsd = detail::sd(tcsl);
    s.var_ratio = variance(tsl) > 0.0 ? variance(tcsl) / variance(tsl) : 1.0;
    s.mean_rho_strat = mean(rhos);
    s.mean_one_minus_rho_strat2 = mean(omrs);
    rep.stratified = s;
  }
  return rep;
}

/// Fixed external cohort, one trained model, then independent replicates.
/// The report is identical for any worker count.
inline ScenarioReport run_scenario(const ScenarioConfig& cfg, std::vector<ReplicateResult>* per_replicate = nullptr) {
  if (cfg.n_trial < 8) throw Error(ErrorCode::InvalidInput, "trial size must be at least 8");
  if (cfg.n_replicates < 2) throw Error(ErrorCode::InvalidInput, "need at least 2 replicates");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw Error(ErrorCode::InvalidInput, "alpha must lie in (0, 1)");
  if (!(cfg.pi > 0.0 && cfg.pi < 1.0)) throw Error(ErrorCode::InvalidInput, "pi must lie in (0, 1)");
  const ExternalControls ext = scenario_external(cfg);
  const std::optional<PrognosticModel> model = scenario_model(cfg, ext);
  std::vector<ReplicateResult> reps(cfg.n_replicates);
  parallel_for(cfg.n_replicates, cfg.workers, [&](std::size_t r) {
    try {
      const TrialDataset trial = scenario_trial(cfg, r);
      reps[r] = analyse_replicate(cfg, model ? &*model : nullptr, trial);
    } catch (const Error& e) {
      reps[r].valid = false;
      reps[r].failure = std::string(error_code_name(e.code()));
    }
  });
  ScenarioReport report = aggregate(cfg, reps);
  if (model) report.model_id = model->model_id();
  if (per_replicate) *per_replicate = std::move(reps);
  return report;
}

struct PowerPoint {
  double hr = 1.0;
  double power_unadj = 0.0;
  double power_adj = 0.0;
};

/// Rejection rates along a hazard-ratio grid (conditional effect exp(theta)).
inline std::vector<PowerPoint> power_curve(ScenarioConfig cfg, const std::vector<double>& hr_grid) {
  std::vector<PowerPoint> out;
  for (double hr : hr_grid) {
    if (!(hr > 0.0)) throw Error(ErrorCode::InvalidInput, "hazard ratios must be positive");
    cfg.theta = std::log(hr);
    const ScenarioReport r = run_scenario(cfg);
    out.push_back({hr, r.reject_unadj, r.reject_adj});
  }
  return out;
}

inline const char* case_name(Case c) {
  static const char* names[] = {"I", "II", "III", "IV", "V", "VI", "VII"};
  return names[static_cast<int>(c) - 1];
}
inline const char* effect_name(Effect e) { return e == Effect::Null ? "null" : "efficacy"; }
inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::ScoreOnlyM: return "score_m";
    case Strategy::ScorePlusCovariatesM: return "score_m+covariates";
    case Strategy::ScoreOnlyS: return "score_s";
    case Strategy::ScorePlusCovariatesS: return "score_s+covariates";
    case Strategy::Unadjusted: return "unadjusted";
  }
  return "unknown";
}
inline const char* stratum_rule_name(StratumRule r) {
  switch (r) {
    case StratumRule::None: return "none";
    case StratumRule::IndependentBinary: return "independent";
    case StratumRule::ByX1: return "x1";
  }
  return "unknown";
}

}  // namespace adjsurv::sim
