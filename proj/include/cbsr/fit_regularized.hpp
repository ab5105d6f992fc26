#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "cbsr/glm_fit.hpp"

namespace cbsr {

// Penalized score maximization:
//   maximize (1/n) sum_i S(link_inv(theta' phi_i), T_i) - (lambda/a) sum_k |theta_k|^a
// over the non-intercept coordinates, a in {1, 2}. The intercept is never
// penalized: penalizing it would break the normalized-weight balance property
// that the downstream estimators rely on.

enum class PenaltyNorm { L1 = 1, L2 = 2 };

struct RegularizedFit {
  Vector theta;
  double lambda = 0.0;
  PenaltyNorm norm_kind = PenaltyNorm::L2;
  Vector fitted_f;
  Vector fitted_p;
  ScoringRule rule{0.0, 0.0};
  bool converged = false;
  double kkt_residual = 0.0;  // sup-norm KKT violation, standardized columns
  int iterations = 0;
  int intercept_col = -1;
};

namespace detail {

// Penalized coordinates carry weight pw_k = 1/s_k^a in the standardized
// parameterization so that the penalty equals (lambda/a) sum |theta_orig|^a.
struct PenaltyInfo {
  Vector pw;  // per-coordinate multiplier, 0 on the intercept
  int intercept_col = -1;

  static PenaltyInfo make(const ColumnScaling& cs, Eigen::Index m, int a) {
    PenaltyInfo pi;
    pi.intercept_col = cs.intercept_col;
    pi.pw = Vector::Zero(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (int(j) == cs.intercept_col) continue;
      pi.pw[j] = 1.0 / std::pow(cs.scale[j], double(a));
    }
    return pi;
  }
};

struct RidgeProblem {
  GlmProblem glm;
  const PenaltyInfo& pi;
  double lambda;

  Vector grad(const Vector& theta) const {
    Vector g = glm.grad(theta);
    g -= lambda * pi.pw.cwiseProduct(theta);
    return g;
  }
  Matrix neg_hess(const Vector& theta) const {
    Matrix nh = glm.neg_hess(theta);
    nh.diagonal() += lambda * pi.pw;
    return nh;
  }
};

// L1 KKT sup-residual in the standardized parameterization.
inline double l1_kkt_residual(const Vector& g, const Vector& theta, double lambda,
                              const PenaltyInfo& pi) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    const double lam_k = lambda * pi.pw[k];
    double r;
    if (lam_k == 0.0)
      r = std::abs(g[k]);
    else if (theta[k] != 0.0)
      r = std::abs(g[k] - lam_k * (theta[k] > 0.0 ? 1.0 : -1.0));
    else
      r = std::max(0.0, std::abs(g[k]) - lam_k);
    worst = std::max(worst, r);
  }
  return worst;
}

// Smooth subproblem on a fixed support with fixed signs, for polishing the
// proximal-gradient solution: maximize S(theta) - lambda sum sigma_k theta_k.
struct SignedL1Problem {
  GlmProblem glm;
  const std::vector<int>& support;
  const Vector& sign_term;  // lambda * pw_k * sigma_k, over support coords
  Eigen::Index m_full;

  Vector embed(const Vector& xs) const {
    Vector full = Vector::Zero(m_full);
    for (size_t k = 0; k < support.size(); ++k) full[support[k]] = xs[Eigen::Index(k)];
    return full;
  }
  Vector grad(const Vector& xs) const {
    const Vector gfull = glm.grad(embed(xs));
    Vector g(Eigen::Index(support.size()));
    for (size_t k = 0; k < support.size(); ++k)
      g[Eigen::Index(k)] = gfull[support[k]] - sign_term[Eigen::Index(k)];
    return g;
  }
  Matrix neg_hess(const Vector& xs) const {
    const Matrix nh = glm.neg_hess(embed(xs));
    Matrix out(Eigen::Index(support.size()), Eigen::Index(support.size()));
    for (size_t a = 0; a < support.size(); ++a)
      for (size_t b = 0; b < support.size(); ++b)
        out(Eigen::Index(a), Eigen::Index(b)) = nh(support[a], support[b]);
    return out;
  }
};

inline Vector soft_threshold(const Vector& v, const Vector& level) {
  Vector out(v.size());
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (v[k] > level[k])
      out[k] = v[k] - level[k];
    else if (v[k] < -level[k])
      out[k] = v[k] + level[k];
    else
      out[k] = 0.0;
  }
  return out;
}

inline RegularizedFit solve_l1(const Matrix& design, const Matrix& z,
                               const ColumnScaling& cs, const std::vector<int>& t,
                               const ScoringRule& rule, double lambda,
                               const Vector& theta0, const FitOptions& opts) {
  const Eigen::Index m = z.cols();
  const auto pi = PenaltyInfo::make(cs, m, 1);
  GlmProblem glm{z, t, rule};
  Vector theta = theta0;

  // Phase 1: proximal gradient (soft-threshold steps) to identify the
  // support. The step size tracks the local curvature sup bound.
  int total_iters = 0;
  const int prox_iters = 4000;
  double kkt = std::numeric_limits<double>::infinity();
  for (int it = 0; it < prox_iters; ++it, ++total_iters) {
    const Vector g = glm.grad(theta);
    kkt = l1_kkt_residual(g, theta, lambda, pi);
    if (kkt <= 1e-6) break;
    const Matrix nh = glm.neg_hess(theta);
    const double lcap = std::max(nh.rowwise().lpNorm<1>().maxCoeff(), 1e-12);
    const double step = 1.0 / lcap;
    const Vector level = (step * lambda) * pi.pw;
    Vector cand = soft_threshold(theta + step * g, level);
    if (theta.cwiseAbs().maxCoeff() > opts.diverge_sup)
      throw SeparatedError("fit_penalized(l1): iterate diverging, penalty too weak for separated data");
    if ((cand - theta).cwiseAbs().maxCoeff() == 0.0) break;
    theta = std::move(cand);
  }

  // Phase 2: Newton polish on the active support with fixed signs, repeated
  // until the support and signs are consistent with the KKT conditions.
  for (int round = 0; round < 40; ++round) {
    const Vector g = glm.grad(theta);
    kkt = l1_kkt_residual(g, theta, lambda, pi);
    if (kkt <= 1e-12) break;

    std::vector<int> support;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (pi.pw[k] == 0.0 || theta[k] != 0.0)
        support.push_back(int(k));
      else if (std::abs(g[k]) > lambda * pi.pw[k] + 1e-14)
        support.push_back(int(k));  // KKT-violating coordinate joins
    }
    if (support.empty()) break;

    Vector sign_term(Eigen::Index(support.size()));
    Vector xs(Eigen::Index(support.size()));
    for (size_t k = 0; k < support.size(); ++k) {
      const Eigen::Index j = support[k];
      xs[Eigen::Index(k)] = theta[j];
      double sgn = 0.0;
      if (pi.pw[j] > 0.0)
        sgn = (theta[j] != 0.0) ? (theta[j] > 0.0 ? 1.0 : -1.0)
                                : (g[j] > 0.0 ? 1.0 : -1.0);
      sign_term[Eigen::Index(k)] = lambda * pi.pw[j] * sgn;
    }

    SignedL1Problem sp{glm, support, sign_term, m};
    opt::NewtonOptions nopts;
    nopts.max_iter = 50;
    nopts.grad_tol = 1e-13;
    nopts.diverge_sup = opts.diverge_sup;
    opt::NewtonResult nr;
    try {
      nr = opt::newton_maximize(sp, xs, nopts, "fit_penalized(l1)");
    } catch (const SeparatedError&) {
      throw SeparatedError("fit_penalized(l1): diverging on active set, penalty too weak");
    }
    total_iters += nr.iterations;

    // Clip sign flips back to zero; they leave the support next round.
    Vector next = Vector::Zero(m);
    for (size_t k = 0; k < support.size(); ++k) {
      const Eigen::Index j = support[k];
      double v = nr.x[Eigen::Index(k)];
      if (pi.pw[j] > 0.0 && sign_term[Eigen::Index(k)] != 0.0) {
        const double sgn = sign_term[Eigen::Index(k)] > 0.0 ? 1.0 : -1.0;
        if (v * sgn < 0.0) v = 0.0;
      }
      next[j] = v;
    }
    theta = std::move(next);
  }

  RegularizedFit fit;
  fit.rule = rule;
  fit.lambda = lambda;
  fit.norm_kind = PenaltyNorm::L1;
  fit.intercept_col = cs.intercept_col;
  fit.theta = cs.to_original(theta);
  fit.fitted_f = design * fit.theta;
  fit.fitted_p = Vector(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i)
    fit.fitted_p[i] = link_inv(fit.fitted_f[i]);
  fit.kkt_residual = l1_kkt_residual(glm.grad(theta), theta, lambda, pi);
  fit.converged = fit.kkt_residual <= 1e-8;
  fit.iterations = total_iters;
  return fit;
}

}  // namespace detail

struct PenalizedOptions {
  FitOptions base;
  std::optional<Vector> warm_start;  // original-coordinate theta
};

inline RegularizedFit fit_penalized(const Matrix& design, const std::vector<int>& t,
                                    const ScoringRule& rule, double lambda,
                                    PenaltyNorm norm_kind,
                                    const PenalizedOptions& popts = {}) {
  if (lambda < 0.0) throw ConfigError("fit_penalized: lambda must be >= 0");
  detail::check_fit_inputs(design, t, rule, "fit_penalized");

  if (lambda == 0.0) {
    const PropensityFit base = fit_mle_score(design, t, rule, popts.base);
    RegularizedFit fit;
    fit.theta = base.theta;
    fit.lambda = 0.0;
    fit.norm_kind = norm_kind;
    fit.fitted_f = base.fitted_f;
    fit.fitted_p = base.fitted_p;
    fit.rule = rule;
    fit.converged = base.converged;
    fit.kkt_residual = base.grad_norm;
    fit.iterations = base.iterations;
    fit.intercept_col = detail::ColumnScaling::fit(design).intercept_col;
    return fit;
  }

  const auto cs = detail::ColumnScaling::fit(design);
  const Matrix z = cs.apply(design);
  Vector theta0 = Vector::Zero(z.cols());
  if (popts.warm_start && popts.warm_start->size() == z.cols()) {
    // Invert the original<-standardized coefficient map.
    const Vector& th = *popts.warm_start;
    for (Eigen::Index j = 0; j < z.cols(); ++j) theta0[j] = th[j] * cs.scale[j];
    if (cs.intercept_col >= 0) {
      double shift = 0.0;
      for (Eigen::Index j = 0; j < z.cols(); ++j)
        if (int(j) != cs.intercept_col) shift += theta0[j] * cs.center[j] / cs.scale[j];
      theta0[cs.intercept_col] += shift;
    }
  }

  if (norm_kind == PenaltyNorm::L1)
    return detail::solve_l1(design, z, cs, t, rule, lambda, theta0, popts.base);

  const auto pi = detail::PenaltyInfo::make(cs, z.cols(), 2);
  detail::RidgeProblem prob{detail::GlmProblem{z, t, rule}, pi, lambda};
  opt::NewtonOptions nopts;
  nopts.max_iter = popts.base.max_iter;
  nopts.grad_tol = popts.base.grad_tol;
  nopts.converged_tol = popts.base.converged_tol;
  nopts.diverge_sup = popts.base.diverge_sup;
  const opt::NewtonResult nr = opt::newton_maximize(prob, theta0, nopts, "fit_penalized(l2)");

  RegularizedFit fit;
  fit.rule = rule;
  fit.lambda = lambda;
  fit.norm_kind = PenaltyNorm::L2;
  fit.intercept_col = cs.intercept_col;
  fit.theta = cs.to_original(nr.x);
  fit.fitted_f = design * fit.theta;
  fit.fitted_p = Vector(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i)
    fit.fitted_p[i] = link_inv(fit.fitted_f[i]);
  fit.converged = nr.converged;
  fit.kkt_residual = nr.grad_sup;
  fit.iterations = nr.iterations;
  return fit;
}

inline WeightSet fit_weights(const RegularizedFit& fit, const std::vector<int>& t,
                             std::string fitter = "") {
  if (fitter.empty()) fitter = (fit.norm_kind == PenaltyNorm::L1) ? "l1" : "l2";
  return WeightSet::from_probabilities(fit.rule, fit.fitted_p, t, std::move(fitter),
                                       fit.lambda);
}

// Dual-constraint verification data. `measured` is the KKT-scale imbalance
// (1/n) sum_i (2T_i - 1) w_i phi_ik; `bound` is lambda |theta_k|^(a-1) on the
// penalized coordinates (0 for the intercept, whose balance is exact). The
// aggregate is the sup of |bias| over outcome coefficients with unit a-norm:
// lambda ||theta||_a^(a-1).
struct ImbalanceBound {
  Vector measured;
  Vector bound;
  double max_bias = 0.0;
};

inline ImbalanceBound imbalance_bound(const RegularizedFit& fit, const Matrix& design,
                                      const std::vector<int>& t) {
  const Eigen::Index n = design.rows(), m = design.cols();
  ImbalanceBound ib;
  ib.measured = Vector::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weight(fit.rule, fit.fitted_p[i], t[size_t(i)]);
    ib.measured += ((t[size_t(i)] == 1 ? w : -w) / double(n)) * design.row(i).transpose();
  }
  ib.bound = Vector::Zero(m);
  const int a = int(fit.norm_kind);
  double norm_pow = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    if (int(k) == fit.intercept_col) continue;
    ib.bound[k] = (a == 1) ? fit.lambda
                           : fit.lambda * std::abs(fit.theta[k]);
    norm_pow += (a == 1) ? std::abs(fit.theta[k]) : fit.theta[k] * fit.theta[k];
  }
  ib.max_bias = (a == 1) ? fit.lambda : fit.lambda * std::sqrt(norm_pow);
  return ib;
}

struct PathPoint {
  double lambda = 0.0;
  RegularizedFit fit;
  double max_bias = 0.0;
  double weight_cv = 0.0;
};

// Solve a lambda grid, largest first with warm starts (stable near the
// exact-balance boundary), reported in ascending order.
inline std::vector<PathPoint> lambda_path(const Matrix& design, const std::vector<int>& t,
                                          const ScoringRule& rule,
                                          std::vector<double> grid,
                                          PenaltyNorm norm_kind) {
  if (grid.empty()) throw ConfigError("lambda_path: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end()))
    throw ConfigError("lambda_path: grid must be sorted ascending");
  std::vector<PathPoint> out(grid.size());
  PenalizedOptions popts;
  for (size_t k = grid.size(); k-- > 0;) {
    PathPoint pp;
    pp.lambda = grid[k];
    pp.fit = fit_penalized(design, t, rule, grid[k], norm_kind, popts);
    pp.max_bias = imbalance_bound(pp.fit, design, t).max_bias;
    Vector w(design.rows());
    for (Eigen::Index i = 0; i < design.rows(); ++i)
      w[i] = weight(rule, pp.fit.fitted_p[i], t[size_t(i)]);
    pp.weight_cv = group_weight_cv(w, t);
    popts.warm_start = pp.fit.theta;
    out[k] = std::move(pp);
  }
  return out;
}

struct CvSearchResult {
  RegularizedFit fit;
  double lambda = 0.0;
  double cv = 0.0;
  bool target_reached = false;
  int probes = 0;
};

// Choose lambda so the within-group coefficient of variation of the raw
// weights sits just below `target_cv`: bisection on log(lambda), at most
// `max_probes` fits, CV tolerance 0.01. CV decreases as lambda grows, so the
// bracket keeps cv(hi) <= target <= cv(lo).
inline CvSearchResult fit_until_cv(const Matrix& design, const std::vector<int>& t,
                                   const ScoringRule& rule, PenaltyNorm norm_kind,
                                   double target_cv, double lambda_lo = 1e-8,
                                   double lambda_hi = 1e4, int max_probes = 40,
                                   double cv_tol = 0.01) {
  if (target_cv <= 0.0) throw ConfigError("fit_until_cv: target must be > 0");
  CvSearchResult res;
  PenalizedOptions popts;
  // A probe that diverges (possible only toward lambda -> 0 on separated
  // data) counts as infinite weight dispersion.
  auto probe = [&](double lam) {
    ++res.probes;
    std::optional<RegularizedFit> f;
    try {
      f = fit_penalized(design, t, rule, lam, norm_kind, popts);
    } catch (const SeparatedError&) {
      return std::make_pair(std::optional<RegularizedFit>{},
                            std::numeric_limits<double>::infinity());
    }
    Vector w(design.rows());
    for (Eigen::Index i = 0; i < design.rows(); ++i)
      w[i] = weight(rule, f->fitted_p[i], t[size_t(i)]);
    const double cv = group_weight_cv(w, t);
    popts.warm_start = f->theta;
    return std::make_pair(std::move(f), cv);
  };

  auto [fit_hi, cv_hi] = probe(lambda_hi);
  if (!fit_hi || cv_hi > target_cv) {  // most regularized fit varies too much
    if (!fit_hi) throw SeparatedError("fit_until_cv: fit diverged at lambda_hi");
    res.fit = std::move(*fit_hi);
    res.lambda = lambda_hi;
    res.cv = cv_hi;
    return res;
  }
  double lo = lambda_lo, hi = lambda_hi;
  auto [fit_lo, cv_lo] = probe(lambda_lo);
  if (fit_lo && cv_lo <= target_cv) {  // weights never reach the target dispersion
    res.fit = std::move(*fit_lo);
    res.lambda = lambda_lo;
    res.cv = cv_lo;
    return res;
  }

  RegularizedFit best = std::move(*fit_hi);
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
