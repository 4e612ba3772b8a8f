#pragma once

#include <cmath>
#include <optional>

#include "adjsurv/errors.hpp"
#include "adjsurv/stats.hpp"

namespace adjsurv {

/// rho is read as rho_strat when stratified is set; the arithmetic is the same.
struct DesignInput {
  double rho = 0.0;
  std::optional<long> d_unadj;
  double alpha = 0.05;
  double power = 0.80;
  std::optional<double> theta_alt;  // design log hazard ratio
  double pi = 0.5;
  bool stratified = false;
};

struct DesignOutput {
  double variance_ratio = 1.0;
  long d_unadj = 0;
  long d_adj = 0;
  long events_saved = 0;
  /// Normal-approximation power at d_unadj events; needs theta_alt.
  std::optional<double> power_at_fixed_events;
  std::optional<double> power_unadjusted_at_fixed_events;
  bool stratified = false;
};

inline double variance_ratio(double rho) {
  if (!(std::fabs(rho) <= 1.0)) throw Error(ErrorCode::InvalidInput, "rho must lie in [-1, 1]");
  return 1.0 - rho * rho;
}

/// Schoenfeld event count (z_{1-a/2} + z_power)^2 / (pi (1 - pi) theta^2), rounded up.
inline long schoenfeld_events(double alpha, double power, double theta, double pi) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidInput, "alpha must lie in (0, 1)");
  if (!(power > alpha && power < 1.0)) throw Error(ErrorCode::InvalidInput, "power must lie in (alpha, 1)");
  if (!(pi > 0.0 && pi < 1.0)) throw Error(ErrorCode::InvalidInput, "pi must lie in (0, 1)");
  if (!(std::fabs(theta) > 0.0) || !std::isfinite(theta))
    throw Error(ErrorCode::InvalidInput, "design log hazard ratio must be finite and nonzero");
  const double z = normal_quantile(1.0 - alpha / 2.0) + normal_quantile(power);
  return static_cast<long>(std::ceil(z * z / (pi * (1.0 - pi) * theta * theta) - 1e-9));
}

/// Power of a two-sided level-alpha test with d events and variance ratio vr.
inline double power_at_events(double d, double theta, double pi, double alpha, double vr) {
  if (vr <= 0.0) return 1.0;
  const double shift = std::fabs(theta) * std::sqrt(d * pi * (1.0 - pi) / vr);
  const double z = normal_quantile(1.0 - alpha / 2.0);
  return normal_cdf(shift - z) + normal_cdf(-shift - z);
}

inline DesignOutput events_required(const DesignInput& in) {
  DesignOutput out;
  out.stratified = in.stratified;
  out.variance_ratio = variance_ratio(in.rho);
  if (!(in.alpha > 0.0 && in.alpha < 1.0)) throw Error(ErrorCode::InvalidInput, "alpha must lie in (0, 1)");
  if (!(in.power > in.alpha && in.power < 1.0))
    throw Error(ErrorCode::InvalidInput, "power must lie in (alpha, 1)");
  if (!(in.pi > 0.0 && in.pi < 1.0)) throw Error(ErrorCode::InvalidInput, "pi must lie in (0, 1)");
  if (in.d_unadj) {
    if (*in.d_unadj < 1) throw Error(ErrorCode::InvalidInput, "event count must be at least 1");
    out.d_unadj = *in.d_unadj;
  } else {
    if (!in.theta_alt)
      throw Error(ErrorCode::InvalidInput, "either the event count or the design log hazard ratio is required");
    out.d_unadj = schoenfeld_events(in.alpha, in.power, *in.theta_alt, in.pi);
  }
  // The 1e-9 guard keeps exact products such as 0.7 * 400 from rounding up.
  out.d_adj = static_cast<long>(std::ceil(out.variance_ratio * static_cast<double>(out.d_unadj) - 1e-9));
  out.d_adj = std::max(out.d_adj, 0L);
  out.events_saved = out.d_unadj - out.d_adj;
  if (in.theta_alt) {
    const auto d = static_cast<double>(out.d_unadj);
    out.power_at_fixed_events = power_at_events(d, *in.theta_alt, in.pi, in.alpha, out.variance_ratio);
    out.power_unadjusted_at_fixed_events = power_at_events(d, *in.theta_alt, in.pi, in.alpha, 1.0);
  }
  return out;
}

/// Same arithmetic with rho_strat; rho_strat is in general no larger than
/// the unstratified rho for the same score.
inline DesignOutput events_required_stratified(DesignInput in) {
  in.stratified = true;
  return events_required(in);
}

}  // namespace adjsurv
