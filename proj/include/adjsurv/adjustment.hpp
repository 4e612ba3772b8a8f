#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adjsurv/dataset.hpp"
#include "adjsurv/stats.hpp"
#include "adjsurv/survival_core.hpp"

namespace adjsurv {

/// Per-subject linearization of the Cox score at theta. values[i] is the
/// pseudo-outcome for the subject's own arm.
struct PseudoOutcomes {
  double theta = 0.0;
  std::vector<double> values;
  std::array<double, 2> arm_means{0.0, 0.0};  // indexed by arm
};

/// Arm-specific regressions of pseudo-outcomes on covariates.
///
/// For stratified analyses beta_j are the pooled within-stratum coefficients
/// and sigma_x is the pooled within-stratum covariance.
struct AdjustmentCoefficients {
  Eigen::VectorXd beta1;
  Eigen::VectorXd beta0;
  double theta_at = 0.0;
  Eigen::MatrixXd sigma_x;
  double pi_hat = 0.5;
  std::vector<std::string> diagnostics;

  /// pi(1 - pi) (b1 + b0)' S (b1 + b0), the variance removed by augmentation.
  double variance_reduction() const {
    if (beta1.size() == 0) return 0.0;
    const Eigen::VectorXd b = beta1 + beta0;
    return pi_hat * (1.0 - pi_hat) * b.dot(sigma_x * b);
  }
};

using StratifiedCoefficients = AdjustmentCoefficients;

enum class FitMethod { Unadjusted, CovariateAdjusted, StratifiedUnadjusted, StratifiedCovariateAdjusted };

inline const char* fit_method_name(FitMethod m) {
  switch (m) {
    case FitMethod::Unadjusted: return "unadjusted";
    case FitMethod::CovariateAdjusted: return "covariate_adjusted";
    case FitMethod::StratifiedUnadjusted: return "stratified_unadjusted";
    case FitMethod::StratifiedCovariateAdjusted: return "stratified_covariate_adjusted";
  }
  return "unknown";
}

struct AdjustedFit {
  double theta_hat = 0.0;  // log hazard ratio
  double hr = 1.0;
  double se = 0.0;
  std::array<double, 2> ci{0.0, 0.0};
  double alpha = 0.05;
  double z_stat = 0.0;
  double p_value_two_sided = 1.0;
  double sigma2_L = 0.0;   // observed information at theta_hat
  double sigma2_CL = 0.0;  // adjusted score variance at theta_hat
  double variance_reduction_ratio = 1.0;
  FitMethod method = FitMethod::Unadjusted;

  double theta_unadjusted = 0.0;  // root of the unadjusted score
  double augmentation = 0.0;
  std::size_t n = 0;
  double events = 0.0;
  std::vector<std::string> diagnostics;

  std::array<double, 2> hr_ci() const { return {std::exp(ci[0]), std::exp(ci[1])}; }
};

struct AdjustedTest {
  double u_cl = 0.0;
  double sigma_cl = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  Alternative alternative = Alternative::TwoSided;

  double u_l = 0.0;
  double sigma_l = 0.0;
  double statistic_unadjusted = 0.0;
  bool stratified = false;
  std::vector<std::string> diagnostics;
};

namespace detail {

constexpr double kVarianceFloor = 1e-12;
constexpr double kEigenThreshold = 1e-10;

struct Engine {
  const TrialDataset* data = nullptr;
  Partition part;
  std::vector<EventTable> tables;
  double n = 0.0;

  Engine(const TrialDataset& d, bool use_strata)
      : data(&d), part(make_partition(d, use_strata)), tables(build_tables(d, part)),
        n(static_cast<double>(d.size())) {}

  ScoreEvaluation score(double theta) const { return score_from_tables(tables, theta, n); }
};

/// Pseudo-outcomes with every curve local to the subject's group.
inline PseudoOutcomes pseudo_outcomes(const Engine& eng, double theta) {
  const TrialDataset& data = *eng.data;
  PseudoOutcomes po;
  po.theta = theta;
  po.values.assign(data.size(), 0.0);
  const double e = std::exp(theta);
  for (std::size_t g = 0; g < eng.part.size(); ++g) {
    const EventTable& tab = eng.tables[g];
    const std::size_t m = tab.size();
    std::vector<double> w1(m), w0(m), c1(m), c0(m);
    double acc1 = 0.0, acc0 = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double s = e * tab.y1[k] + tab.y0[k];
      const double d = tab.d1[k] + tab.d0[k];
      w1[k] = tab.y0[k] / s;
      w0[k] = e * tab.y1[k] / s;
      acc1 += w1[k] * e * d / s;
      acc0 += w0[k] * d / s;
      c1[k] = acc1;
      c0[k] = acc0;
    }
    for (std::size_t i : eng.part.members[g]) {
      const Subject& s = data[i];
      const auto at = std::upper_bound(tab.times.begin(), tab.times.end(), s.time);
      const std::size_t k_end = static_cast<std::size_t>(at - tab.times.begin());
      double v = 0.0;
      const bool counted = s.event && s.time <= data.tau();
      if (counted) v += s.treated() ? w1[k_end - 1] : w0[k_end - 1];
      if (k_end > 0) v -= s.treated() ? c1[k_end - 1] : c0[k_end - 1];
      po.values[i] = v;
    }
  }
  std::array<double, 2> count{0.0, 0.0};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int j = arm_index(data[i].arm);
    po.arm_means[j] += po.values[i];
    count[j] += 1.0;
  }
  for (int j = 0; j < 2; ++j) po.arm_means[j] /= count[j];
  return po;
}

/// Pseudo-inverse of a symmetric PSD matrix; eigenvalues below
/// kEigenThreshold * trace are treated as zero. Returns the dropped count.
inline int pinv_symmetric(const Eigen::MatrixXd& a, Eigen::MatrixXd& out) {
  const Eigen::Index p = a.rows();
  out = Eigen::MatrixXd::Zero(p, p);
  if (p == 0) return 0;
  const double tr = a.trace();
  if (!(tr > 0.0)) return static_cast<int>(p);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const auto& vals = es.eigenvalues();
  const auto& vecs = es.eigenvectors();
  int dropped = 0;
  for (Eigen::Index k = 0; k < p; ++k) {
    if (vals(k) > kEigenThreshold * tr) {
      out.noalias() += vecs.col(k) * vecs.col(k).transpose() / vals(k);
    } else {
      ++dropped;
    }
  }
  return dropped;
}

/// Arm-specific regression coefficients, centred within (group, arm) cells,
/// and the pooled within-group covariance with divisor n - groups.
inline AdjustmentCoefficients fit_coefficients(const Engine& eng, const PseudoOutcomes& po,
                                               const Eigen::MatrixXd& x) {
  const TrialDataset& data = *eng.data;
  const Eigen::Index p = x.cols();
  const std::size_t groups = eng.part.size();
  if (x.rows() != static_cast<Eigen::Index>(data.size()))
    throw Error(ErrorCode::InvalidInput, "covariate rows do not match the dataset");
  AdjustmentCoefficients co;
  co.theta_at = po.theta;
  co.pi_hat = data.pi_hat();
  co.beta1 = Eigen::VectorXd::Zero(p);
  co.beta0 = Eigen::VectorXd::Zero(p);
  co.sigma_x = Eigen::MatrixXd::Zero(p, p);
  if (p == 0) return co;

  const std::size_t n1 = data.n_treated(), n0 = data.size() - n1;
  if (n1 < static_cast<std::size_t>(p) + 2 || n0 < static_cast<std::size_t>(p) + 2)
    throw Error(ErrorCode::SingularDesign, "each arm needs at least p + 2 subjects");
  if (data.size() <= groups)
    throw Error(ErrorCode::SingularDesign, "too few subjects for the covariance estimate");

  std::array<Eigen::MatrixXd, 2> gram{Eigen::MatrixXd::Zero(p, p), Eigen::MatrixXd::Zero(p, p)};
  std::array<Eigen::VectorXd, 2> cross{Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p)};
  for (std::size_t g = 0; g < groups; ++g) {
    const auto& mem = eng.part.members[g];
    std::array<Eigen::VectorXd, 2> cell_mean{Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p)};
    std::array<double, 2> cell_n{0.0, 0.0};
    Eigen::VectorXd group_mean = Eigen::VectorXd::Zero(p);
    for (std::size_t i : mem) {
      const int j = arm_index(data[i].arm);
      cell_mean[j] += x.row(static_cast<Eigen::Index>(i)).transpose();
      cell_n[j] += 1.0;
      group_mean += x.row(static_cast<Eigen::Index>(i)).transpose();
    }
    group_mean /= static_cast<double>(mem.size());
    for (int j = 0; j < 2; ++j)
      if (cell_n[j] > 0.0) cell_mean[j] /= cell_n[j];
    for (std::size_t i : mem) {
      const int j = arm_index(data[i].arm);
      const Eigen::VectorXd xi = x.row(static_cast<Eigen::Index>(i)).transpose();
      const Eigen::VectorXd dc = xi - cell_mean[j];
      gram[j].noalias() += dc * dc.transpose();
      cross[j].noalias() += dc * po.values[i];
      const Eigen::VectorXd dg = xi - group_mean;
      co.sigma_x.noalias() += dg * dg.transpose();
    }
  }
  co.sigma_x /= static_cast<double>(data.size() - groups);

  for (int j = 0; j < 2; ++j) {
    Eigen::MatrixXd inv;
    const int dropped = pinv_symmetric(gram[j], inv);
    if (dropped > 0)
      co.diagnostics.push_back("arm " + std::to_string(j) + ": dropped " + std::to_string(dropped) +
                               " degenerate covariate direction(s)");
    (j == 1 ? co.beta1 : co.beta0) = inv * cross[j];
  }
  return co;
}

/// n^-1 sum { I_i (X_i - Xbar_g)' b1 - (1 - I_i)(X_i - Xbar_g)' b0 }.
inline double augmentation(const Engine& eng, const AdjustmentCoefficients& co, const Eigen::MatrixXd& x) {
  const Eigen::Index p = x.cols();
  if (p == 0) return 0.0;
  const TrialDataset& data = *eng.data;
  double total = 0.0;
  for (std::size_t g = 0; g < eng.part.size(); ++g) {
    const auto& mem = eng.part.members[g];
    Eigen::VectorXd gm = Eigen::VectorXd::Zero(p);
    for (std::size_t i : mem) gm += x.row(static_cast<Eigen::Index>(i)).transpose();
    gm /= static_cast<double>(mem.size());
    for (std::size_t i : mem) {
      const Eigen::VectorXd dc = x.row(static_cast<Eigen::Index>(i)).transpose() - gm;
      total += data[i].treated() ? dc.dot(co.beta1) : -dc.dot(co.beta0);
    }
  }
  return total / eng.n;
}

inline void check_strata(const Engine& eng, std::vector<std::string>& diag) {
  for (std::size_t g = 0; g < eng.part.size(); ++g) {
    const EventTable& tab = eng.tables[g];
    if (eng.part.members[g].size() < 10)
      diag.push_back("stratum " + std::to_string(eng.part.labels[g]) + " has fewer than 10 subjects");
    if (tab.size() == 0) continue;
    double both = 0.0;
    for (std::size_t k = 0; k < tab.size(); ++k) both += tab.y1[k] * tab.y0[k];
    if (both == 0.0)
      throw Error(ErrorCode::StratumDegenerate,
                  "stratum " + std::to_string(eng.part.labels[g]) +
                      " has events but only one arm at risk");
  }
}

inline double clamp_variance(double v, std::vector<std::string>& diag) {
  if (v > kVarianceFloor) return v;
  diag.push_back("adjusted variance was nonpositive and has been clamped");
  return kVarianceFloor;
}

inline AdjustedTest logrank_test(const Engine& eng, const Eigen::MatrixXd& x, Alternative alt) {
  AdjustedTest out;
  out.alternative = alt;
  if (total_events(eng.tables) == 0.0) throw Error(ErrorCode::NoEvents, "no events before tau");
  const ScoreEvaluation at0 = eng.score(0.0);
  if (!(at0.neg_derivative > 0.0))
    throw Error(ErrorCode::DegenerateInformation, "log-rank variance is zero");
  out.u_l = at0.value;
  out.sigma_l = std::sqrt(at0.neg_derivative);
  const double rn = std::sqrt(eng.n);
  out.statistic_unadjusted = rn * out.u_l / out.sigma_l;
  double var_cl = at0.neg_derivative;
  out.u_cl = out.u_l;
  if (x.cols() > 0) {
    const PseudoOutcomes po = pseudo_outcomes(eng, 0.0);
    const AdjustmentCoefficients co = fit_coefficients(eng, po, x);
    out.diagnostics.insert(out.diagnostics.end(), co.diagnostics.begin(), co.diagnostics.end());
    out.u_cl -= augmentation(eng, co, x);
    var_cl = clamp_variance(at0.neg_derivative - co.variance_reduction(), out.diagnostics);
  }
  out.sigma_cl = std::sqrt(var_cl);
  out.statistic = rn * out.u_cl / out.sigma_cl;
  out.p_value = normal_p_value(out.statistic, alt);
  return out;
}

inline AdjustedFit fit(const Engine& eng, const Eigen::MatrixXd& x, double alpha, FitMethod method,
                       const BracketOptions& opt) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidInput, "alpha must lie in (0, 1)");
  AdjustedFit out;
  out.method = method;
  out.alpha = alpha;
  out.n = eng.data->size();
  out.events = total_events(eng.tables);
  out.theta_unadjusted = solve_score(eng.tables, eng.n, 0.0, opt);
  double reduction = 0.0;
  if (x.cols() > 0) {
    const PseudoOutcomes po = pseudo_outcomes(eng, out.theta_unadjusted);
    const AdjustmentCoefficients co = fit_coefficients(eng, po, x);
    out.diagnostics.insert(out.diagnostics.end(), co.diagnostics.begin(), co.diagnostics.end());
    out.augmentation = augmentation(eng, co, x);
    reduction = co.variance_reduction();
  }
  out.theta_hat = out.augmentation == 0.0
                      ? out.theta_unadjusted
                      : solve_score(eng.tables, eng.n, out.augmentation, opt);
  const ScoreEvaluation at = eng.score(out.theta_hat);
  if (!(at.neg_derivative > 0.0))
    throw Error(ErrorCode::DegenerateInformation, "observed information is zero at the estimate");
  out.sigma2_L = at.neg_derivative;
  out.sigma2_CL = clamp_variance(out.sigma2_L - reduction, out.diagnostics);
  out.variance_reduction_ratio = out.sigma2_CL / out.sigma2_L;
  out.se = std::sqrt(out.sigma2_CL / (eng.n * out.sigma2_L * out.sigma2_L));
  const double z = normal_quantile(1.0 - alpha / 2.0);
  out.ci = {out.theta_hat - z * out.se, out.theta_hat + z * out.se};
  out.hr = std::exp(out.theta_hat);
  out.z_stat = out.theta_hat / out.se;
  out.p_value_two_sided = normal_p_value(out.z_stat);
  return out;
}

}  // namespace detail

/// Pseudo-outcomes at theta for the unstratified score.
inline PseudoOutcomes pseudo_outcomes(const TrialDataset& data, double theta) {
  const detail::Engine eng(data, false);
  return detail::pseudo_outcomes(eng, theta);
}

/// Arm-specific least-squares coefficients of the pseudo-outcomes on the
/// covariate view. Degenerate directions are dropped and reported.
inline AdjustmentCoefficients fit_betas(const TrialDataset& data, const PseudoOutcomes& po,
                                        const CovariateView& view) {
  const detail::Engine eng(data, false);
  return detail::fit_coefficients(eng, po, view.values);
}

/// The augmentation constant subtracted from the unadjusted score.
inline double augmentation_constant(const TrialDataset& data, const AdjustmentCoefficients& co,
                                    const CovariateView& view) {
  const detail::Engine eng(data, false);
  return detail::augmentation(eng, co, view.values);
}

/// Covariate-adjusted log-rank test. With an empty view this is the
/// classical log-rank test.
inline AdjustedTest adjusted_logrank_test(const TrialDataset& data, const CovariateView& view,
                                          Alternative alt = Alternative::TwoSided) {
  const detail::Engine eng(data, false);
  return detail::logrank_test(eng, view.values, alt);
}

/// Covariate-adjusted estimator of the unconditional log hazard ratio.
///
/// The augmentation is evaluated once at the unadjusted estimate, so the
/// adjusted score differs from the unadjusted one by a constant and the
/// same monotone root search applies.
inline AdjustedFit fit_adjusted_hr(const TrialDataset& data, const CovariateView& view, double alpha = 0.05,
                                   const BracketOptions& opt = {}) {
  const detail::Engine eng(data, false);
  return detail::fit(eng, view.values, alpha,
                     view.cols() > 0 ? FitMethod::CovariateAdjusted : FitMethod::Unadjusted, opt);
}

inline AdjustedFit fit_unadjusted_hr(const TrialDataset& data, double alpha = 0.05,
                                     const BracketOptions& opt = {}) {
  return fit_adjusted_hr(data, CovariateView::none(data.size()), alpha, opt);
}

}  // namespace adjsurv
