#pragma once

#include <cmath>
#include <utility>

#include "dtr/error.hpp"

namespace dtr {

struct BracketedRoot {
  double root = 0.0;      // best estimate
  double f_root = 0.0;
  double other = 0.0;     // opposite end of the final bracket
  double f_other = 0.0;
  int iterations = 0;
};

/// Brent's method on a sign-changing bracket [a, b] (inverse quadratic interpolation, secant and
/// bisection steps). The returned bracket [root, other] still contains a sign change.
template <class F>
BracketedRoot brent_root(F&& f, double a, double b, double fa, double fb, double x_tolerance = 1e-12,
                         int max_iterations = 200) {
  if ((fa > 0.0) == (fb > 0.0) && fa != 0.0 && fb != 0.0) {
    throw InvariantViolation("brent_root: endpoints do not bracket a root");
  }
  double c = a, fc = fa, d = b - a, e = d;
  int it = 0;
  for (; it < max_iterations; ++it) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::fabs(fc) < std::fabs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol = 2.0 * 2.2204460492503131e-16 * std::fabs(b) + 0.5 * x_tolerance;
    const double m = 0.5 * (c - b);
    if (std::fabs(m) <= tol || fb == 0.0) break;
    if (std::fabs(e) >= tol && std::fabs(fa) > std::fabs(fb)) {
      double p, q;
      const double s = fb / fa;
      if (a == c) {
        p = 2.0 * m * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc;
        const double r = fb / fc;
        p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q; else p = -p;
      if (2.0 * p < std::min(3.0 * m * q - std::fabs(tol * q), std::fabs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = m;
        e = m;
      }
    } else {
      d = m;
      e = m;
    }
    a = b;
    fa = fb;
    b += std::fabs(d) > tol ? d : (m > 0.0 ? tol : -tol);
    fb = f(b);
  }
  if ((fb > 0.0) == (fc > 0.0) && fb != 0.0) {
    c = a;
    fc = fa;
  }
  return BracketedRoot{b, fb, c, fc, it};
}

}  // namespace dtr
