#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cbsr/dual_balance.hpp"
#include "cbsr/errors.hpp"
#include "cbsr/mathutil.hpp"
#include "cbsr/optimize.hpp"
#include "cbsr/scoring.hpp"

namespace cbsr {

// RKHS propensity fitting in the representer form f(x) = sum_i gamma_i K(x, X_i):
//   maximize (1/n) sum_i S(link_inv((K gamma)_i), T_i) - (lambda/2) gamma' K gamma
// The quadratic penalty (lambda/2) ||f||_H^2 makes the worst-case imbalance
// over the unit ball of H exactly lambda ||f_hat||_H (Cauchy-Schwarz, tight).

struct Kernel {
  enum class Kind { Gaussian, Laplace, Polynomial, Linear };
  Kind kind = Kind::Gaussian;
  double sigma = 1.0;   // rate for gaussian/laplace
  int degree = 1;       // polynomial degree
  double offset = 0.5;  // polynomial offset

  static Kernel gaussian(double sigma) { return {Kind::Gaussian, sigma, 1, 0.0}; }
  static Kernel laplace(double sigma) { return {Kind::Laplace, sigma, 1, 0.0}; }
  static Kernel polynomial(int degree, double offset = 0.5) {
    return {Kind::Polynomial, 0.0, degree, offset};
  }
  static Kernel linear() { return {Kind::Linear, 0.0, 1, 0.0}; }

  double operator()(const Eigen::Ref<const Vector>& a,
                    const Eigen::Ref<const Vector>& b) const {
    switch (kind) {
      case Kind::Gaussian: return std::exp(-sigma * (a - b).squaredNorm());
      case Kind::Laplace: return std::exp(-sigma * (a - b).norm());
      case Kind::Polynomial: return std::pow(a.dot(b) + offset, double(degree));
      case Kind::Linear: return a.dot(b);
    }
    return 0.0;
  }

  std::string label() const {
    switch (kind) {
      case Kind::Gaussian: return "gaussian(" + std::to_string(sigma) + ")";
      case Kind::Laplace: return "laplace(" + std::to_string(sigma) + ")";
      case Kind::Polynomial: return "poly(" + std::to_string(degree) + ")";
      case Kind::Linear: return "linear";
    }
    return "?";
  }
};

inline Matrix gram(const Kernel& k, const Matrix& x) {
  const Eigen::Index n = x.rows();
  if (!x.allFinite()) throw ConfigError("gram: non-finite covariates");
  Matrix g(n, n);
  // Distance-based kernels via the expanded square; dot-product kernels
  // directly from the cross-product. The lower triangle is mirrored at the
  // end so the result is symmetric to the last bit.
  if (k.kind == Kernel::Kind::Polynomial || k.kind == Kernel::Kind::Linear) {
    g.noalias() = x * x.transpose();
    if (k.kind == Kernel::Kind::Polynomial)
      g = (g.array() + k.offset).pow(double(k.degree));
    g = g.selfadjointView<Eigen::Lower>();
    return g;
  }
  const Vector sq = x.rowwise().squaredNorm();
  g.noalias() = -2.0 * x * x.transpose();
  g.colwise() += sq;
  g.rowwise() += sq.transpose();
  g = g.cwiseMax(0.0);
  if (k.kind == Kernel::Kind::Gaussian)
    g = (-k.sigma * g.array()).exp();
  else
    g = (-k.sigma * g.array().sqrt()).exp();
  // Exact ones on the diagonal regardless of rounding in the expansion.
  g.diagonal().setOnes();
  g = g.selfadjointView<Eigen::Lower>();
  return g;
}

struct KernelFit {
  Vector gamma;
  Kernel kernel;
  double lambda = 0.0;
  double hnorm = 0.0;  // sqrt(gamma' K gamma)
  Vector fitted_f;
  Vector fitted_p;
  ScoringRule rule{0.0, 0.0};
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
};

struct KernelFitOptions {
  int max_iter = 200;
  double jitter_rel = 1e-8;  // added to the Gram diagonal, relative to mean diag
  std::optional<Vector> warm_start;
  const Matrix* precomputed_gram = nullptr;  // jitter-free Gram, optional reuse
};

namespace detail {

struct RkhsProblem {
  const Matrix& kj;  // jittered Gram
  const std::vector<int>& t;
  const ScoringRule& rule;
  double lambda;

  Vector score_part(const Vector& gamma) const {
    const Vector f = kj * gamma;
    Vector s(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i)
      s[i] = score_grad(rule, f[i], t[size_t(i)]);
    return s;
  }
  Vector grad(const Vector& gamma) const {
    const Vector inner = score_part(gamma) / double(kj.rows()) - lambda * gamma;
    return kj * inner;
  }
  Matrix neg_hess(const Vector& gamma) const {
    const Vector f = kj * gamma;
    Vector h(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i)
      h[i] = -score_hess(rule, f[i], t[size_t(i)]) / double(kj.rows());
    Matrix nh = kj * h.asDiagonal() * kj;
    nh.noalias() += lambda * kj;
    return nh;
  }
};

}  // namespace detail

inline KernelFit fit_rkhs(const Matrix& x, const std::vector<int>& t,
                          const Kernel& kernel, const ScoringRule& rule,
                          double lambda, const KernelFitOptions& opts = {}) {
  if (!(lambda > 0.0))
    throw ConfigError("fit_rkhs: lambda must be > 0 (exact kernel balance is infeasible)");
  if (!rule.in_concave_range())
    throw ConfigError("fit_rkhs: rule outside the concave subfamily [-1,0]^2");
  const Eigen::Index n = x.rows();
  if (Eigen::Index(t.size()) != n) throw ConfigError("fit_rkhs: size mismatch");
  long n1 = 0;
  for (int v : t) n1 += v;
  if (n1 == 0 || n1 == long(t.size()))
    throw ConfigError("fit_rkhs: both treatment groups must be non-empty");

  Matrix kj = opts.precomputed_gram ? *opts.precomputed_gram : gram(kernel, x);
  const double diag_scale = kj.diagonal().mean();
  kj.diagonal().array() += opts.jitter_rel * diag_scale;

  detail::RkhsProblem prob{kj, t, rule, lambda};
  opt::NewtonOptions nopts;
  nopts.max_iter = opts.max_iter;
  // Gradient carries one factor of K; tolerances scale with its diagonal.
  nopts.grad_tol = 1e-13 * std::max(1.0, diag_scale);
  nopts.converged_tol = 1e-8 * std::max(1.0, diag_scale);
  nopts.diverge_sup = std::numeric_limits<double>::infinity();  // strongly concave
  Vector gamma0 = Vector::Zero(n);
  if (opts.warm_start && opts.warm_start->size() == n) gamma0 = *opts.warm_start;

  opt::NewtonResult nr;
  try {
    nr = opt::newton_maximize(prob, gamma0, nopts, "fit_rkhs");
  } catch (const SingularHessianError&) {
    throw Error("fit_rkhs: Gram matrix ill-conditioned beyond jitter; increase lambda");
  }

  KernelFit fit;
  fit.gamma = nr.x;
  fit.kernel = kernel;
  fit.lambda = lambda;
  fit.rule = rule;
  fit.hnorm = std::sqrt(std::max(0.0, fit.gamma.dot(kj * fit.gamma)));
  fit.fitted_f = kj * fit.gamma;
  fit.fitted_p = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) fit.fitted_p[i] = link_inv(fit.fitted_f[i]);
  fit.converged = nr.converged;
  fit.grad_norm = nr.grad_sup;
  fit.iterations = nr.iterations;
  return fit;
}

inline WeightSet fit_weights(const KernelFit& fit, const std::vector<int>& t) {
  return WeightSet::from_probabilities(fit.rule, fit.fitted_p, t,
                                       "rkhs:" + fit.kernel.label(), fit.lambda);
}

// Worst-case KKT-scale imbalance over { g : ||g||_H <= 1 }.
inline double rkhs_max_bias(const KernelFit& fit) { return fit.lambda * fit.hnorm; }

struct KernelCvSearchResult {
  KernelFit fit;
  double lambda = 0.0;
  double cv = 0.0;
  bool target_reached = false;
  int probes = 0;
};

// RKHS twin of fit_until_cv: bisection on log(lambda) until the within-group
// weight coefficient of variation sits just below target_cv.
inline KernelCvSearchResult fit_rkhs_until_cv(const Matrix& x, const std::vector<int>& t,
                                              const Kernel& kernel, const ScoringRule& rule,
                                              double target_cv, double lambda_lo = 1e-5,
                                              double lambda_hi = 1e4, int max_probes = 40,
                                              double cv_tol = 0.01) {
  if (target_cv <= 0.0) throw ConfigError("fit_rkhs_until_cv: target must be > 0");
  const Matrix k = gram(kernel, x);
  KernelFitOptions kopts;
  kopts.precomputed_gram = &k;
  kopts.max_iter = 80;  // probes near the rank-deficient end must fail fast
  KernelCvSearchResult res;
  // A probe that fails to solve (rank-deficient Gram at tiny lambda, or a
  // non-convergent Newton) counts as infinite weight dispersion, steering the
  // bisection toward stronger regularization.
  auto probe = [&](double lam) {
    ++res.probes;
    std::optional<KernelFit> f;
    try {
      f = fit_rkhs(x, t, kernel, rule, lam, kopts);
    } catch (const Error&) {
      return std::make_pair(std::optional<KernelFit>{},
                            std::numeric_limits<double>::infinity());
    }
    Vector w(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      w[i] = weight(rule, f->fitted_p[i], t[size_t(i)]);
    const double cv = group_weight_cv(w, t);
    kopts.warm_start = f->gamma;
    return std::make_pair(std::move(f), cv);
  };

  auto [fit_hi, cv_hi] = probe(lambda_hi);
  if (!fit_hi) throw Error("fit_rkhs_until_cv: fit failed at lambda_hi");
  if (cv_hi > target_cv) {
    res.fit = std::move(*fit_hi);
    res.lambda = lambda_hi;
    res.cv = cv_hi;
    return res;
  }
  double lo = lambda_lo, hi = lambda_hi;
  auto [fit_lo, cv_lo] = probe(lambda_lo);
  if (fit_lo && cv_lo <= target_cv) {
    res.fit = std::move(*fit_lo);
    res.lambda = lambda_lo;
    res.cv = cv_lo;
    return res;
  }
  KernelFit best = std::move(*fit_hi);
  double best_lambda = hi, best_cv = cv_hi;
  while (res.probes < max_probes) {
    const double mid = std::exp(0.5 * (std::log(lo) + std::log(hi)));
    auto [f, cv] = probe(mid);
    if (f && cv <= target_cv) {
      hi = mid;
      best = std::move(*f);
      best_lambda = mid;
      best_cv = cv;
      if (target_cv - cv <= cv_tol) break;
    } else {
      lo = mid;
    }
    if (hi / lo < 1.0 + 1e-9) break;
  }
  res.fit = std::move(best);
  res.lambda = best_lambda;
  res.cv = best_cv;
  res.target_reached = true;
  return res;
}

}  // namespace cbsr
