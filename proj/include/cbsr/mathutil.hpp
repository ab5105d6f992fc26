#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <vector>

#include "cbsr/errors.hpp"

namespace cbsr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Standard normal quantile, Wichura's algorithm AS 241 (PPND16).
// Accurate to about 1e-15 over (0,1), far inside the 1e-9 target.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must be in (0,1)");
  const double q = p - 0.5;
  double r;
  if (std::abs(q) <= 0.425) {
    r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
              3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
            4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
            2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
            5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -val : val;
}

// Adaptive Simpson quadrature with absolute tolerance.
namespace detail {

inline double simpson(const std::function<double(double)>& f, double a, double fa,
                      double b, double fb, double m, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a,
                                   double fa, double b, double fb, double m,
                                   double fm, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(f, a, fa, m, fm, lm, flm);
  const double right = simpson(f, m, fm, b, fb, rm, frm);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol = 1e-12, int max_depth = 48) {
  if (a == b) return 0.0;
  const double fa = f(a), fb = f(b), m = 0.5 * (a + b), fm = f(m);
  const double whole = detail::simpson(f, a, fa, b, fb, m, fm);
  return detail::adaptive_simpson_rec(f, a, fa, b, fb, m, fm, whole, tol, max_depth);
}

inline double mean_of(const Vector& v) { return v.size() ? v.mean() : 0.0; }

inline double sample_sd(const Vector& v) {
  const Eigen::Index n = v.size();
  if (n < 2) return 0.0;
  const double mu = v.mean();
  return std::sqrt((v.array() - mu).square().sum() / double(n - 1));
}

// Max over treatment groups of the within-group coefficient of variation of w.
// Group-constant weights give 0; population means are plain averages.
inline double group_weight_cv(const Vector& w, const std::vector<int>& t) {
  double worst = 0.0;
  for (int g = 0; g <= 1; ++g) {
    double sum = 0.0, sum2 = 0.0;
    long cnt = 0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (t[size_t(i)] != g) continue;
      sum += w[i];
      sum2 += w[i] * w[i];
      ++cnt;
    }
    if (cnt < 2) continue;
    const double mu = sum / double(cnt);
    if (mu <= 0.0) continue;
    const double var = std::max(0.0, sum2 / double(cnt) - mu * mu);
    worst = std::max(worst, std::sqrt(var) / mu);
  }
  return worst;
}

inline int env_thread_cap() {
  if (const char* s = std::getenv("CBSR_THREADS")) {
    const long v = std::strtol(s, nullptr, 10);
    if (v >= 1) return int(v);
  }
  return 0;  // 0 = no cap
}

}  // namespace cbsr
