#pragma once

#include <vector>

#include "adjsurv/adjustment.hpp"

namespace adjsurv {

/// One stratum: its label, members, and share of the sample.
struct StratumView {
  int label = 0;
  std::vector<std::size_t> members;
  double share = 0.0;
  std::size_t n_treated = 0;

  /// Within-stratum imbalance sum (I_i - pi).
  double imbalance(double pi) const {
    return static_cast<double>(n_treated) - pi * static_cast<double>(members.size());
  }
};

/// Strata in increasing label order; an unstratified dataset is one stratum.
inline std::vector<StratumView> strata(const TrialDataset& data) {
  const auto part = detail::make_partition(data, true);
  std::vector<StratumView> out;
  for (std::size_t g = 0; g < part.size(); ++g) {
    StratumView v;
    v.label = part.labels[g];
    v.members = part.members[g];
    v.share = static_cast<double>(v.members.size()) / static_cast<double>(data.size());
    for (std::size_t i : v.members) v.n_treated += data[i].treated() ? 1 : 0;
    out.push_back(std::move(v));
  }
  return out;
}

/// Stratified unadjusted score: stratum-local Cox scores summed, scaled 1/n.
inline ScoreEvaluation stratified_score(const TrialDataset& data, double theta) {
  const detail::Engine eng(data, true);
  std::vector<std::string> diag;
  detail::check_strata(eng, diag);
  if (detail::total_events(eng.tables) == 0.0) throw Error(ErrorCode::NoEvents, "no events before tau");
  return eng.score(theta);
}

inline double stratified_mple(const TrialDataset& data, const BracketOptions& opt = {}) {
  const detail::Engine eng(data, true);
  std::vector<std::string> diag;
  detail::check_strata(eng, diag);
  return solve_score(eng.tables, eng.n, 0.0, opt);
}

inline PseudoOutcomes stratified_pseudo_outcomes(const TrialDataset& data, double theta) {
  const detail::Engine eng(data, true);
  return detail::pseudo_outcomes(eng, theta);
}

/// Pooled within-stratum, within-arm coefficients and the pooled
/// within-stratum covariance.
inline StratifiedCoefficients fit_stratified_gammas(const TrialDataset& data, const PseudoOutcomes& po,
                                                    const CovariateView& view) {
  const detail::Engine eng(data, true);
  return detail::fit_coefficients(eng, po, view.values);
}

inline double stratified_augmentation_constant(const TrialDataset& data, const StratifiedCoefficients& co,
                                               const CovariateView& view) {
  const detail::Engine eng(data, true);
  return detail::augmentation(eng, co, view.values);
}

inline AdjustedTest stratified_logrank_test(const TrialDataset& data, const CovariateView& view,
                                            Alternative alt = Alternative::TwoSided) {
  const detail::Engine eng(data, true);
  std::vector<std::string> diag;
  detail::check_strata(eng, diag);
  AdjustedTest t = detail::logrank_test(eng, view.values, alt);
  t.stratified = true;
  t.diagnostics.insert(t.diagnostics.begin(), diag.begin(), diag.end());
  return t;
}

/// Covariate-adjusted stratified estimator; covariates are centred at their
/// stratum means and the augmentation is fixed at the stratified estimate.
inline AdjustedFit fit_stratified_hr(const TrialDataset& data, const CovariateView& view, double alpha = 0.05,
                                     const BracketOptions& opt = {}) {
  const detail::Engine eng(data, true);
  std::vector<std::string> diag;
  detail::check_strata(eng, diag);
  AdjustedFit f = detail::fit(eng, view.values, alpha,
                              view.cols() > 0 ? FitMethod::StratifiedCovariateAdjusted
                                              : FitMethod::StratifiedUnadjusted,
                              opt);
  f.diagnostics.insert(f.diagnostics.begin(), diag.begin(), diag.end());
  return f;
}

}  // namespace adjsurv
