// Train a prognostic score on simulated historical controls, then compare
// the unadjusted and score-adjusted analyses of one simulated trial.
#include <cstdio>

#include "adjsurv/adjsurv.hpp"

int main() {
  using namespace adjsurv;
  rng::Stream ext_stream(7, {1});
  rng::Stream trial_stream(7, {2});
  const ExternalControls ext = sim::generate_external(sim::Case::I, 300, ext_stream);
  const TrialDataset trial = sim::generate_trial(sim::Case::I, sim::Effect::Efficacy, 400, trial_stream);

  const PrognosticModel model = train(ext, TargetSpec{TargetKind::MartingaleResidual, std::nullopt});
  const std::vector<double> scores = score(model, trial);
  const RhoEstimate rho = estimate_rho(trial, scores);

  const AdjustedFit unadj = fit_unadjusted_hr(trial);
  const AdjustedFit adj = fit_adjusted_hr(trial, CovariateView::score(scores));
  const AdjustedTest test = adjusted_logrank_test(trial, CovariateView::score(scores));

  std::printf("model %s, rho = %.3f\n", model.model_id().c_str(), rho.rho);
  std::printf("unadjusted  HR %.3f (%.3f, %.3f)  se %.4f\n", unadj.hr, unadj.hr_ci()[0], unadj.hr_ci()[1], unadj.se);
  std::printf("adjusted    HR %.3f (%.3f, %.3f)  se %.4f\n", adj.hr, adj.hr_ci()[0], adj.hr_ci()[1], adj.se);
  std::printf("log-rank z  %.3f unadjusted, %.3f adjusted (p = %.2g)\n", test.statistic_unadjusted, test.statistic,
              test.p_value);

  DesignInput plan;
  plan.rho = rho.rho;
  plan.theta_alt = std::log(0.6);
  const DesignOutput d = events_required(plan);
  std::printf("events for 80%% power: %ld unadjusted, %ld adjusted\n", d.d_unadj, d.d_adj);
}
