#pragma once

#include <cmath>
#include <limits>
#include <utility>

#include "adjsurv/errors.hpp"

namespace adjsurv {

struct BracketOptions {
  double lower = -20.0;
  double upper = 20.0;
  double tolerance = 1e-10;
  int max_iterations = 300;
};

/// Root of a nonincreasing function on [lower, upper] by Brent's method
/// (inverse-quadratic/secant steps, bisection fallback). The returned point
/// lies within `tolerance` of a sign change. Throws NoRootInBracket when the
/// endpoint values do not straddle zero.
template <class F>
double find_decreasing_root(F&& f, const BracketOptions& opt = {}) {
  double a = opt.lower, b = opt.upper;
  double fa = f(a), fb = f(b);
  if (!std::isfinite(fa) || !std::isfinite(fb))
    throw Error(ErrorCode::NoRootInBracket, "score is not finite at the bracket ends");
  if (fa == 0.0) return a;
  if (fb == 0.0) return b;
  if (fa < 0.0 || fb > 0.0)
    throw Error(ErrorCode::NoRootInBracket, "score does not change sign on the bracket");

  double c = a, fc = fa;
  double d = b - a, e = d;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    if ((fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::fabs(fc) < std::fabs(fb)) {
      a = b; b = c; c = a;
      fa = fb; fb = fc; fc = fa;
    }
    const double tol1 = 2.0 * std::numeric_limits<double>::epsilon() * std::fabs(b) +
                        0.5 * opt.tolerance;
    const double xm = 0.5 * (c - b);
    if (std::fabs(xm) <= tol1 || fb == 0.0) return b;
    if (std::fabs(e) >= tol1 && std::fabs(fa) > std::fabs(fb)) {
      double p, q, r;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        q = fa / fc;
        r = fb / fc;
        p = s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0));
        q = (q - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::fabs(p);
      const double min1 = 3.0 * xm * q - std::fabs(tol1 * q);
      const double min2 = std::fabs(e * q);
      if (2.0 * p < std::min(min1, min2)) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += (std::fabs(d) > tol1) ? d : (xm > 0.0 ? tol1 : -tol1);
    fb = f(b);
  }
  return b;
}

}  // namespace adjsurv
