#pragma once

#include <algorithm>
#include <cmath>

// Central finite differences at 64-bit precision. This is the independent
// oracle for every analytic gradient in the test suite; it must stay free of
// the backward kernels it checks.

template <class F>
double central_difference(double& param, F&& loss, double step = 1e-5) {
  const double saved = param;
  param = saved + step;
  const double fp = loss();
  param = saved - step;
  const double fm = loss();
  param = saved;
  return (fp - fm) / (2.0 * step);
}

// Relative error with a small absolute floor so zero-gradient pairs compare
// cleanly.
inline double relative_error(double a, double b, double floor_val = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor_val});
}
