#pragma once

// Test helpers: small random trials and brute-force oracles written directly
// from the defining sums, without the library's event tables.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "adjsurv/adjsurv.hpp"

namespace testing_support {

using adjsurv::Arm;
using adjsurv::Subject;
using adjsurv::TrialDataset;

inline TrialDataset make_trial(const std::vector<double>& t, const std::vector<int>& ev, const std::vector<int>& arm,
                               const std::vector<std::vector<double>>& x = {},
                               std::optional<double> tau = std::nullopt) {
  std::vector<Subject> s(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    s[i].time = t[i];
    s[i].event = ev[i] != 0;
    s[i].arm = arm[i] ? Arm::Treatment : Arm::Control;
    if (!x.empty()) s[i].covariates = x[i];
  }
  return TrialDataset::make(std::move(s), {}, tau);
}

/// Random trial with p covariates, optional ties (times rounded to a grid)
/// and optional strata. Times depend weakly on the first covariate.
inline TrialDataset random_trial(std::mt19937_64& g, std::size_t n, std::size_t p, bool ties = false,
                                 int n_strata = 0) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (;;) {
    std::vector<Subject> s(n);
    bool t1 = false, t0 = false, any_event = false;
    for (std::size_t i = 0; i < n; ++i) {
      s[i].covariates.resize(p);
      for (auto& v : s[i].covariates) v = z(g);
      const bool treated = u(g) < 0.5;
      s[i].arm = treated ? Arm::Treatment : Arm::Control;
      const double lp = (p > 0 ? 0.7 * s[i].covariates[0] : 0.0) - 0.3 * treated;
      double t = -std::log(u(g)) * std::exp(-lp);
      const double c = -std::log(u(g)) * 2.0;
      s[i].event = t <= c;
      t = std::min(t, c);
      if (ties) t = std::ceil(t * 4.0) / 4.0;
      s[i].time = t;
      if (n_strata > 0) s[i].stratum = static_cast<int>(g() % static_cast<unsigned>(n_strata));
      t1 = t1 || treated;
      t0 = t0 || !treated;
      any_event = any_event || s[i].event;
    }
    if (t1 && t0 && any_event) return TrialDataset::make(std::move(s));
  }
}

inline double at_risk(const TrialDataset& d, double t, int arm) {
  double y = 0.0;
  for (const auto& s : d.subjects())
    if (s.time >= t && static_cast<int>(s.treated()) == arm) y += 1.0;
  return y;
}

/// Breslow log partial likelihood, summed over distinct event times.
inline double log_partial_likelihood(const TrialDataset& d, double theta) {
  std::vector<double> times;
  for (const auto& s : d.subjects())
    if (s.event && s.time <= d.tau()) times.push_back(s.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double ll = 0.0;
  for (double t : times) {
    double d1 = 0.0, dd = 0.0;
    for (const auto& s : d.subjects())
      if (s.event && s.time == t) {
        dd += 1.0;
        d1 += s.treated();
      }
    ll += d1 * theta - dd * std::log(std::exp(theta) * at_risk(d, t, 1) + at_risk(d, t, 0));
  }
  return ll;
}

/// n^-1 sum over subjects with an event of I_i - e^theta Y1 / S at T_i.
inline double score_oracle(const TrialDataset& d, double theta) {
  double u = 0.0;
  for (const auto& s : d.subjects()) {
    if (!s.event || s.time > d.tau()) continue;
    const double y1 = at_risk(d, s.time, 1), y0 = at_risk(d, s.time, 0);
    u += (s.treated() ? 1.0 : 0.0) - std::exp(theta) * y1 / (std::exp(theta) * y1 + y0);
  }
  return u / static_cast<double>(d.size());
}

inline double information_oracle(const TrialDataset& d, double theta) {
  double v = 0.0;
  for (const auto& s : d.subjects()) {
    if (!s.event || s.time > d.tau()) continue;
    const double y1 = at_risk(d, s.time, 1), y0 = at_risk(d, s.time, 0);
    const double sden = std::exp(theta) * y1 + y0;
    v += std::exp(theta) * y1 * y0 / (sden * sden);
  }
  return v / static_cast<double>(d.size());
}

/// Pseudo-outcome of subject i for its own arm, from the per-subject
/// integral of the arm weight against the observed counting process minus
/// its compensator.
inline double pseudo_outcome_oracle(const TrialDataset& d, std::size_t i, double theta) {
  const auto& si = d[i];
  const double e = std::exp(theta);
  auto weight = [&](double t) {
    const double y1 = at_risk(d, t, 1), y0 = at_risk(d, t, 0);
    const double sden = e * y1 + y0;
    return si.treated() ? y0 / sden : e * y1 / sden;
  };
  double o = 0.0;
  if (si.event && si.time <= d.tau()) o += weight(si.time);
  // Compensator: every distinct event time up to min(T_i, tau).
  std::vector<double> times;
  for (const auto& s : d.subjects())
    if (s.event && s.time <= d.tau() && s.time <= si.time) times.push_back(s.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double t : times) {
    double dd = 0.0;
    for (const auto& s : d.subjects())
      if (s.event && s.time == t) dd += 1.0;
    const double y1 = at_risk(d, t, 1), y0 = at_risk(d, t, 0);
    const double sden = e * y1 + y0;
    o -= weight(t) * (si.treated() ? e : 1.0) * dd / sden;
  }
  return o;
}

/// Least squares of y on [1, X] for the rows in one arm, by QR, returning
/// the slopes only.
inline Eigen::VectorXd ols_slopes(const Eigen::MatrixXd& x, const std::vector<double>& y,
                                  const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), x.cols() + 1);
  Eigen::VectorXd b(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    a(static_cast<Eigen::Index>(r), 0) = 1.0;
    a.row(static_cast<Eigen::Index>(r)).tail(x.cols()) = x.row(static_cast<Eigen::Index>(rows[r]));
    b(static_cast<Eigen::Index>(r)) = y[rows[r]];
  }
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  return coef.tail(x.cols());
}

struct OracleFit {
  double theta_l = 0.0, theta_cl = 0.0, augmentation = 0.0, sigma2_cl = 0.0, se = 0.0;
};

inline double bisect(const std::function<double(double)>& f, double lo, double hi) {
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// The covariate-adjusted estimator assembled from the oracles above.
inline OracleFit adjusted_fit_oracle(const TrialDataset& d, const Eigen::MatrixXd& x) {
  const std::size_t n = d.size();
  OracleFit f;
  f.theta_l = bisect([&](double t) { return score_oracle(d, t); }, -15.0, 15.0);
  std::vector<double> o(n);
  std::vector<std::size_t> r1, r0;
  for (std::size_t i = 0; i < n; ++i) {
    o[i] = pseudo_outcome_oracle(d, i, f.theta_l);
    (d[i].treated() ? r1 : r0).push_back(i);
  }
  const Eigen::VectorXd b1 = ols_slopes(x, o, r1), b0 = ols_slopes(x, o, r0);
  const Eigen::RowVectorXd xbar = x.colwise().mean();
  double a = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = (x.row(static_cast<Eigen::Index>(i)) - xbar).dot(d[i].treated() ? b1 : b0);
    a += d[i].treated() ? c : -c;
  }
  f.augmentation = a / static_cast<double>(n);
  f.theta_cl = bisect([&](double t) { return score_oracle(d, t) - f.augmentation; }, -15.0, 15.0);
  // The variance keeps the coefficients fitted at the unadjusted estimate.
  const Eigen::MatrixXd centered = x.rowwise() - xbar;
  const Eigen::MatrixXd sx = centered.transpose() * centered / static_cast<double>(n - 1);
  const double pi = static_cast<double>(r1.size()) / static_cast<double>(n);
  const Eigen::VectorXd bs = b1 + b0;
  const double info = information_oracle(d, f.theta_cl);
  f.sigma2_cl = info - pi * (1.0 - pi) * bs.dot(sx * bs);
  f.se = std::sqrt(f.sigma2_cl / (static_cast<double>(n) * info * info));
  return f;
}

}  // namespace testing_support
