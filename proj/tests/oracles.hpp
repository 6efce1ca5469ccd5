// Test-only reference computations, independent of the library's code paths.
#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <random>

namespace oracle {

inline double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

namespace detail {
inline double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}
inline double adaptive(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
                       double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(a, m, fa, flm, fm);
  const double right = simpson(m, b, fm, frm, fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) return left + right + (left + right - whole) / 15.0;
  return adaptive(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}
}  // namespace detail

/// Adaptive Simpson quadrature of f over [a, b].
inline double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-12) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return detail::adaptive(f, a, b, fa, fm, fb, detail::simpson(a, b, fa, fm, fb), tol, 50);
}

/// Equal-prior error of threshold D between N(mu_dag, s_dag^2) (below) and
/// N(mu_star, s_star^2) (above), by integrating both tails numerically.
inline double threshold_error_by_quadrature(double mu_star, double s_star, double mu_dag, double s_dag, double D) {
  const double span = 12.0;
  auto dag = [&](double x) { return normal_pdf(x, mu_dag, s_dag); };
  auto star = [&](double x) { return normal_pdf(x, mu_star, s_star); };
  const double upper = std::max(D, mu_dag + span * s_dag);
  const double lower = std::min(D, mu_star - span * s_star);
  return 0.5 * integrate(dag, D, upper) + 0.5 * integrate(star, lower, D);
}

}  // namespace oracle
