#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "adjsurv/errors.hpp"

namespace adjsurv {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidInput, "quantile level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

enum class Alternative { TwoSided, Less, Greater };

inline double normal_p_value(double z, Alternative alt = Alternative::TwoSided) {
  switch (alt) {
    case Alternative::Less: return normal_cdf(z);
    case Alternative::Greater: return normal_cdf(-z);
    case Alternative::TwoSided: break;
  }
  return std::min(1.0, 2.0 * normal_cdf(-std::fabs(z)));
}

inline double mean(std::span<const double> x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample variance with divisor n - 1.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

/// Pearson correlation; returns 0 and sets *degenerate when either side has
/// zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y, bool* degenerate = nullptr) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const bool bad = !(sxx > 0.0 && syy > 0.0);
  if (degenerate) *degenerate = bad;
  if (bad) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace adjsurv
