#pragma once

#include <Eigen/QR>
#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cbsr/dual_balance.hpp"
#include "cbsr/errors.hpp"
#include "cbsr/mathutil.hpp"
#include "cbsr/optimize.hpp"
#include "cbsr/scoring.hpp"

namespace cbsr {

// Maximum-score estimation of a logistic-link GLM propensity model: maximize
// (1/n) sum_i S(link_inv(theta' phi_i), T_i) by damped Newton from theta = 0.
//
// Columns are standardized internally (centered when an intercept column is
// present, scaled to unit SD), which is a reparameterization only; reported
// coefficients are on the original columns. Divergence is declared when the
// standardized iterate leaves a sup-norm ball of radius 30, i.e. fitted
// probabilities past ~1e-13.

struct PropensityFit {
  Vector theta;
  Vector fitted_f;
  Vector fitted_p;
  ScoringRule rule{0.0, 0.0};
  bool converged = false;
  double grad_norm = 0.0;  // sup-norm of (1/n) sum (2T-1) w z, standardized cols
  int iterations = 0;
};

struct FitOptions {
  int max_iter = 200;
  double grad_tol = 1e-13;
  double converged_tol = 1e-10;
  double diverge_sup = 30.0;
};

namespace detail {

struct GlmProblem {
  const Matrix& z;
  const std::vector<int>& t;
  const ScoringRule& rule;

  Vector grad(const Vector& theta) const {
    const Vector f = z * theta;
    Vector g = Vector::Zero(z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      g += score_grad(rule, f[i], t[size_t(i)]) * z.row(i).transpose();
    return g / double(z.rows());
  }

  Matrix neg_hess(const Vector& theta) const {
    const Vector f = z * theta;
    Vector h(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      h[i] = -score_hess(rule, f[i], t[size_t(i)]);
    Matrix nh = z.transpose() * h.asDiagonal() * z;
    return nh / double(z.rows());
  }
};

inline void check_fit_inputs(const Matrix& design, const std::vector<int>& t,
                             const ScoringRule& rule, const char* what) {
  if (design.rows() < 2) throw ConfigError(std::string(what) + ": need at least 2 rows");
  if (Eigen::Index(t.size()) != design.rows())
    throw ConfigError(std::string(what) + ": design/treatment size mismatch");
  if (!rule.in_concave_range())
    throw ConfigError(std::string(what) +
                      ": rule outside the concave subfamily [-1,0]^2, fitting unavailable");
  long n1 = 0;
  for (int v : t) n1 += v;
  if (n1 == 0 || n1 == long(t.size()))
    throw ConfigError(std::string(what) + ": both treatment groups must be non-empty");
}

}  // namespace detail

inline PropensityFit fit_mle_score(const Matrix& design, const std::vector<int>& t,
                                   const ScoringRule& rule, const FitOptions& opts = {}) {
  detail::check_fit_inputs(design, t, rule, "fit_mle_score");
  const auto cs = detail::ColumnScaling::fit(design);
  const Matrix z = cs.apply(design);

  // The unregularized problem needs full column rank; collinear designs have
  // no unique maximizer and the Newton system stays singular.
  Eigen::ColPivHouseholderQR<Matrix> qr(z);
  qr.setThreshold(1e-10);
  if (qr.rank() < z.cols())
    throw SingularHessianError(
        "fit_mle_score: design is rank-deficient (duplicate or collinear columns)");

  detail::GlmProblem prob{z, t, rule};
  opt::NewtonOptions nopts;
  nopts.max_iter = opts.max_iter;
  nopts.grad_tol = opts.grad_tol;
  nopts.converged_tol = opts.converged_tol;
  nopts.diverge_sup = opts.diverge_sup;
  const opt::NewtonResult nr = opt::newton_maximize(prob, Vector::Zero(z.cols()),
                                                    nopts, "fit_mle_score");

  PropensityFit fit;
  fit.rule = rule;
  fit.theta = cs.to_original(nr.x);
  fit.fitted_f = design * fit.theta;
  fit.fitted_p = Vector(design.rows());
  for (Eigen::Index i = 0; i < design.rows(); ++i)
    fit.fitted_p[i] = link_inv(fit.fitted_f[i]);
  fit.converged = nr.converged;
  fit.grad_norm = nr.grad_sup;
  fit.iterations = nr.iterations;
  return fit;
}

// Raw-sum balance residual: sum_{T=1} w phi_k - sum_{T=0} w phi_k, with the
// fit's own weighting function. Zero (to tolerance) for converged
// unregularized CBSR fits.
inline Vector balance_residual(const PropensityFit& fit, const Matrix& design,
                               const std::vector<int>& t) {
  Vector r = Vector::Zero(design.cols());
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    const double w = weight(fit.rule, fit.fitted_p[i], t[size_t(i)]);
    r += (t[size_t(i)] == 1 ? w : -w) * design.row(i).transpose();
  }
  return r;
}

inline WeightSet fit_weights(const PropensityFit& fit, const std::vector<int>& t,
                             std::string fitter = "glm", double lambda = 0.0) {
  return WeightSet::from_probabilities(fit.rule, fit.fitted_p, t, std::move(fitter), lambda);
}

// Average fitted score (the maximized objective). Closed form for the named
// rules, numeric for custom ones; used for reporting and stepwise selection.
inline double mean_score(const ScoringRule& rule, const Vector& p,
                         const std::vector<int>& t) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    s += score_value(rule, p[i], t[size_t(i)]);
  return s / double(p.size());
}

struct StepwiseStep {
  int added_column = -1;  // -1 for the intercept-only root
  std::vector<int> active;
  PropensityFit fit;      // fit over the active columns, in path order
  Vector full_theta;      // same fit mapped onto all design columns
  double objective = 0.0;
  std::vector<double> std_diffs;  // per candidate column, diagnostic estimand
};

struct StepwisePath {
  std::vector<StepwiseStep> steps;
  bool stopped_separated = false;
  int separated_at = -1;  // candidate column that triggered the stop
};

namespace detail {

inline Matrix select_columns(const Matrix& m, const std::vector<int>& cols) {
  Matrix out(m.rows(), Eigen::Index(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j) out.col(Eigen::Index(j)) = m.col(cols[j]);
  return out;
}

}  // namespace detail

// Forward stepwise model building. Column 0 of the design must be the
// intercept and is always active; the remaining columns are candidates. At
// each step the candidate with the largest fitted objective is added, ties
// broken by the lower column index. Standardized differences are recorded for
// every candidate column after each step under `diag_rule` (defaults to the
// fitting rule), using that rule's weights from the step's fit.
inline StepwisePath forward_stepwise(const Matrix& design, const std::vector<int>& t,
                                     const ScoringRule& rule, int k_max,
                                     std::optional<ScoringRule> diag_rule = std::nullopt,
                                     const FitOptions& opts = {}) {
  detail::check_fit_inputs(design, t, rule, "forward_stepwise");
  const Eigen::Index m = design.cols();
  if (design.col(0).minCoeff() != design.col(0).maxCoeff() || design(0, 0) == 0.0)
    throw ConfigError("forward_stepwise: column 0 must be a constant intercept");
  if (m < 2) throw ConfigError("forward_stepwise: no candidate columns");
  const ScoringRule diag = diag_rule.value_or(rule);

  StepwisePath path;
  std::vector<int> active{0};
  std::vector<int> remaining;
  for (int j = 1; j < int(m); ++j) remaining.push_back(j);

  auto record = [&](int added, const PropensityFit& fit) {
    StepwiseStep st;
    st.added_column = added;
    st.active = active;
    st.fit = fit;
    st.full_theta = Vector::Zero(m);
    for (size_t k = 0; k < active.size(); ++k) st.full_theta[active[k]] = fit.theta[Eigen::Index(k)];
    st.objective = mean_score(rule, fit.fitted_p, t);
    Vector wdiag(fit.fitted_p.size());
    for (Eigen::Index i = 0; i < wdiag.size(); ++i)
      wdiag[i] = weight(diag, fit.fitted_p[i], t[size_t(i)]);
    for (int j = 1; j < int(m); ++j)
      st.std_diffs.push_back(std_diff(design.col(j), t, wdiag, "col" + std::to_string(j)));
    path.steps.push_back(std::move(st));
  };

  record(-1, fit_mle_score(detail::select_columns(design, active), t, rule, opts));

  for (int step = 0; step < k_max && !remaining.empty(); ++step) {
    double best_obj = -std::numeric_limits<double>::infinity();
    int best_col = -1;
    PropensityFit best_fit;
    for (int cand : remaining) {
      std::vector<int> trial = active;
      trial.push_back(cand);
      try {
        PropensityFit f = fit_mle_score(detail::select_columns(design, trial), t, rule, opts);
        const double obj = mean_score(rule, f.fitted_p, t);
        if (obj > best_obj) {
          best_obj = obj;
          best_col = cand;
          best_fit = std::move(f);
        }
      } catch (const SeparatedError&) {
        // A separating candidate makes the selection objective unbounded;
        // record where it happened and stop the path.
        path.stopped_separated = true;
        path.separated_at = cand;
        return path;
      } catch (const SingularHessianError&) {
        // Collinear with the active set; candidate is skipped.
      }
    }
    if (best_col < 0) break;
    active.push_back(best_col);
    remaining.erase(std::find(remaining.begin(), remaining.end(), best_col));
    record(best_col, best_fit);
  }
  return path;
}

}  // namespace cbsr
