#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cbsr/errors.hpp"
#include "cbsr/mathutil.hpp"
#include "cbsr/optimize.hpp"
#include "cbsr/scoring.hpp"

namespace cbsr {

struct WeightProvenance {
  std::string fitter;
  ScoringRule rule{0.0, 0.0};
  double lambda = 0.0;
};

// Per-unit balancing weights: the raw weighting-function values and the
// group-normalized copy (each treatment group sums to 1).
struct WeightSet {
  Vector w;
  Vector normalized;
  std::vector<int> t;
  WeightProvenance provenance;

  static WeightSet from_raw(Vector w_in, std::vector<int> t_in, WeightProvenance prov) {
    WeightSet ws;
    ws.w = std::move(w_in);
    ws.t = std::move(t_in);
    ws.provenance = std::move(prov);
    if (Eigen::Index(ws.t.size()) != ws.w.size())
      throw ConfigError("WeightSet: weight/treatment length mismatch");
    double sums[2] = {0.0, 0.0};
    for (Eigen::Index i = 0; i < ws.w.size(); ++i) {
      if (!(ws.w[i] >= 0.0) || !std::isfinite(ws.w[i]))
        throw ConfigError("WeightSet: weights must be finite and nonnegative");
      sums[ws.t[size_t(i)]] += ws.w[i];
    }
    if (sums[0] <= 0.0 || sums[1] <= 0.0)
      throw ConfigError("WeightSet: each group needs positive total weight");
    ws.normalized = ws.w;
    for (Eigen::Index i = 0; i < ws.w.size(); ++i)
      ws.normalized[i] /= sums[ws.t[size_t(i)]];
    return ws;
  }

  // All fit-derived weights go through scoring::weight, keeping the weight
  // definition in a single code path.
  static WeightSet from_probabilities(const ScoringRule& rule, const Vector& p,
                                      const std::vector<int>& t,
                                      std::string fitter, double lambda = 0.0) {
    Vector w(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i)
      w[i] = weight(rule, p[i], t[size_t(i)]);
    return from_raw(std::move(w), t, WeightProvenance{std::move(fitter), rule, lambda});
  }

  double group_sum(int g) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (t[size_t(i)] == g) s += w[i];
    return s;
  }

  Eigen::Index n() const { return w.size(); }
};

// Weighted standardized difference in percent: weighted group means divided
// by the pooled SD from the *unweighted* within-group variances
// (Rosenbaum-Rubin convention).
inline double std_diff(const Vector& x, const std::vector<int>& t, const Vector& w,
                       const std::string& feature_name = "feature") {
  double sw[2] = {0.0, 0.0}, swx[2] = {0.0, 0.0};
  double sx[2] = {0.0, 0.0}, sxx[2] = {0.0, 0.0};
  long cnt[2] = {0, 0};
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const int g = t[size_t(i)];
    sw[g] += w[i];
    swx[g] += w[i] * x[i];
    sx[g] += x[i];
    sxx[g] += x[i] * x[i];
    ++cnt[g];
  }
  if (sw[0] <= 0.0 || sw[1] <= 0.0)
    throw ConfigError("std_diff: zero total weight in a group");
  double var[2];
  for (int g = 0; g <= 1; ++g) {
    if (cnt[g] < 2) throw ConfigError("std_diff: need >= 2 units per group");
    const double mu = sx[g] / double(cnt[g]);
    var[g] = std::max(0.0, (sxx[g] - double(cnt[g]) * mu * mu) / double(cnt[g] - 1));
  }
  const double pooled = std::sqrt(0.5 * (var[0] + var[1]));
  if (pooled <= 0.0)
    throw DataError("std_diff: zero pooled variance for feature '" + feature_name + "'",
                    -1, feature_name);
  return 100.0 * (swx[1] / sw[1] - swx[0] / sw[0]) / pooled;
}

inline double std_diff(const Vector& x, const std::vector<int>& t,
                       const WeightSet& ws, const std::string& name = "feature") {
  return std_diff(x, t, ws.w, name);
}

// Weighted two-sample Kolmogorov-Smirnov statistic: sup over the sample
// points of |weighted ECDF(treated) - weighted ECDF(control)|, with the
// group-normalized weights.
inline double weighted_ks(const Vector& x, const std::vector<int>& t, const Vector& wnorm) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return x[a] < x[b]; });
  double cum[2] = {0.0, 0.0};
  double best = 0.0;
  for (size_t k = 0; k < order.size(); ++k) {
    const Eigen::Index i = order[k];
    cum[t[size_t(i)]] += wnorm[i];
    // Evaluate only after the last of a run of tied values.
    if (k + 1 < order.size() && x[order[k + 1]] == x[i]) continue;
    best = std::max(best, std::abs(cum[1] - cum[0]));
  }
  return std::min(1.0, best);
}

inline double weighted_ks(const Vector& x, const std::vector<int>& t, const WeightSet& ws) {
  return weighted_ks(x, t, ws.normalized);
}

struct BalanceReport {
  std::vector<std::string> feature_names;
  std::vector<double> std_diff_pct;
  std::vector<double> ks;
  double max_abs_imbalance = 0.0;   // sup_k |sum_{T=1} w* phi_k - sum_{T=0} w* phi_k|
  std::optional<double> dual_gap;   // weighted imbalance of the fitted predictor
};

inline BalanceReport balance_report(const Matrix& features,
                                    const std::vector<std::string>& names,
                                    const std::vector<int>& t, const WeightSet& ws,
                                    const std::optional<Vector>& fitted_f = std::nullopt) {
  BalanceReport rep;
  rep.feature_names = names;
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    const Vector col = features.col(j);
    const bool constant = (col.maxCoeff() == col.minCoeff());
    rep.std_diff_pct.push_back(constant ? 0.0 : std_diff(col, t, ws, names[size_t(j)]));
    rep.ks.push_back(weighted_ks(col, t, ws));
    double imb = 0.0;
    for (Eigen::Index i = 0; i < col.size(); ++i)
      imb += (t[size_t(i)] == 1 ? ws.normalized[i] : -ws.normalized[i]) * col[i];
    rep.max_abs_imbalance = std::max(rep.max_abs_imbalance, std::abs(imb));
  }
  if (fitted_f) {
    double gap = 0.0;
    for (Eigen::Index i = 0; i < fitted_f->size(); ++i)
      gap += (t[size_t(i)] == 1 ? ws.normalized[i] : -ws.normalized[i]) * (*fitted_f)[i];
    rep.dual_gap = std::abs(gap);
  }
  return rep;
}

namespace detail {

// Column standardization for the solvers: center (when an intercept column
// is present to absorb the shift) and scale to unit SD. The intercept column
// is the first constant nonzero column.
struct ColumnScaling {
  Vector center;
  Vector scale;
  int intercept_col = -1;

  static ColumnScaling fit(const Matrix& design) {
    ColumnScaling cs;
    const Eigen::Index m = design.cols();
    cs.center = Vector::Zero(m);
    cs.scale = Vector::Ones(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double lo = design.col(j).minCoeff(), hi = design.col(j).maxCoeff();
      if (lo == hi && lo != 0.0 && cs.intercept_col < 0) cs.intercept_col = int(j);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      if (int(j) == cs.intercept_col) {
        cs.scale[j] = design(0, j);
        continue;
      }
      const double sd = sample_sd(design.col(j));
      if (sd > 0.0) {
        cs.scale[j] = sd;
        if (cs.intercept_col >= 0) cs.center[j] = design.col(j).mean();
      } else {
        cs.scale[j] = (design(0, j) != 0.0) ? std::abs(design(0, j)) : 1.0;
      }
    }
    return cs;
  }

  Matrix apply(const Matrix& design) const {
    Matrix z = design;
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      z.col(j) = (z.col(j).array() - center[j]) / scale[j];
    return z;
  }

  // Map coefficients on the standardized design back to the original columns.
  Vector to_original(const Vector& theta_std) const {
    Vector th = theta_std.cwiseQuotient(scale);
    if (intercept_col >= 0) {
      double shift = 0.0;
      for (Eigen::Index j = 0; j < theta_std.size(); ++j)
        if (int(j) != intercept_col) shift += theta_std[j] * center[j] / scale[j];
      th[intercept_col] -= shift / scale[intercept_col];
    }
    return th;
  }
};

}  // namespace detail

// Entropy-balancing dual for the ATT estimand: minimize sum_{T=0} w log w
// subject to sum_{T=0} w phi_k = sum_{T=1} phi_k for every column. Solved by
// Newton in the multiplier space (which is algebraically the primal
// coefficient vector, but derived here from the dual objective). Treated
// weights are identically 1.
inline WeightSet solve_dual_att(const Matrix& design, const std::vector<int>& t) {
  const Eigen::Index n = design.rows(), m = design.cols();
  if (Eigen::Index(t.size()) != n) throw ConfigError("solve_dual_att: size mismatch");
  const auto cs = detail::ColumnScaling::fit(design);
  if (cs.intercept_col < 0)
    throw ConfigError("solve_dual_att: an intercept column is required");
  const Matrix z = cs.apply(design);

  Vector target = Vector::Zero(m);  // (1/n) sum_{T=1} z
  std::vector<Eigen::Index> controls;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (t[size_t(i)] == 1)
      target += z.row(i).transpose();
    else
      controls.push_back(i);
  }
  if (controls.empty() || Eigen::Index(controls.size()) == n)
    throw ConfigError("solve_dual_att: both treatment groups must be non-empty");
  target /= double(n);

  struct Problem {
    const Matrix& z;
    const std::vector<Eigen::Index>& controls;
    const Vector& target;
    Eigen::Index n;
    Vector weights(const Vector& mu) const {
      Vector w(Eigen::Index(controls.size()));
      for (size_t k = 0; k < controls.size(); ++k)
        w[Eigen::Index(k)] = std::exp(z.row(controls[k]).dot(mu) - 1.0);
      return w;
    }
    Vector grad(const Vector& mu) const {
      const Vector w = weights(mu);
      Vector g = target;
      for (size_t k = 0; k < controls.size(); ++k)
        g -= (w[Eigen::Index(k)] / double(n)) * z.row(controls[k]).transpose();
      return g;
    }
    Matrix neg_hess(const Vector& mu) const {
      const Vector w = weights(mu);
      Matrix h = Matrix::Zero(z.cols(), z.cols());
      for (size_t k = 0; k < controls.size(); ++k) {
        const Vector zi = z.row(controls[k]).transpose();
        h.noalias() += (w[Eigen::Index(k)] / double(n)) * zi * zi.transpose();
      }
      return h;
    }
  } prob{z, controls, target, n};

  opt::NewtonOptions opts;
  opts.diverge_sup = 30.0;
  opt::NewtonResult nr;
  try {
    nr = opt::newton_maximize(prob, Vector::Zero(m), opts, "solve_dual_att");
  } catch (const SeparatedError& e) {
    throw InfeasibleError(std::string("solve_dual_att: exact balance infeasible (") +
                          e.what() + ")");
  }

  Vector w = Vector::Ones(n);
  const Vector wc = prob.weights(nr.x);
  for (size_t k = 0; k < controls.size(); ++k) w[controls[k]] = wc[Eigen::Index(k)];
  return WeightSet::from_raw(std::move(w), t,
                             WeightProvenance{"dual_att", ScoringRule::for_estimand(Estimand::ATT), 0.0});
}

// Dual problem for the ATE estimand: minimize sum_i (w_i - 1) log(w_i - 1) - w_i
// subject to cross-group balance and w_i >= 1. Multiplier-space Newton;
// weights take the form w_i = 1 + exp(s_i mu' phi_i) with s_i = 2T_i - 1.
inline WeightSet solve_dual_ate(const Matrix& design, const std::vector<int>& t) {
  const Eigen::Index n = design.rows(), m = design.cols();
  if (Eigen::Index(t.size()) != n) throw ConfigError("solve_dual_ate: size mismatch");
  const auto cs = detail::ColumnScaling::fit(design);
  if (cs.intercept_col < 0)
    throw ConfigError("solve_dual_ate: an intercept column is required");
  const Matrix z = cs.apply(design);
  Vector sgn(n);
  for (Eigen::Index i = 0; i < n; ++i) sgn[i] = (t[size_t(i)] == 1) ? 1.0 : -1.0;
  if (std::abs(sgn.sum()) == double(n))
    throw ConfigError("solve_dual_ate: both treatment groups must be non-empty");

  struct Problem {
    const Matrix& z;
    const Vector& sgn;
    Eigen::Index n;
    Vector weights(const Vector& mu) const {
      Vector w(n);
      for (Eigen::Index i = 0; i < n; ++i)
        w[i] = 1.0 + std::exp(sgn[i] * z.row(i).dot(mu));
      return w;
    }
    Vector grad(const Vector& mu) const {
      const Vector w = weights(mu);
      Vector g = Vector::Zero(z.cols());
      for (Eigen::Index i = 0; i < n; ++i)
        g -= (sgn[i] * w[i] / double(n)) * z.row(i).transpose();
      return g;
    }
    Matrix neg_hess(const Vector& mu) const {
      Matrix h = Matrix::Zero(z.cols(), z.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        const Vector zi = z.row(i).transpose();
        h.noalias() += (std::exp(sgn[i] * z.row(i).dot(mu)) / double(n)) * zi * zi.transpose();
      }
      return h;
    }
  } prob{z, sgn, n};

  opt::NewtonOptions opts;
  opt::NewtonResult nr;
  try {
    nr = opt::newton_maximize(prob, Vector::Zero(m), opts, "solve_dual_ate");
  } catch (const SeparatedError& e) {
    throw InfeasibleError(std::string("solve_dual_ate: exact balance infeasible (") +
                          e.what() + ")");
  }

  return WeightSet::from_raw(prob.weights(nr.x), t,
                             WeightProvenance{"dual_ate", ScoringRule::for_estimand(Estimand::ATE), 0.0});
}

}  // namespace cbsr
