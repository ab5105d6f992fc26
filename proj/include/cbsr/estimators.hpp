#pragma once

#include <Eigen/Cholesky>
#include <optional>
#include <string>
#include <vector>

#include "cbsr/data_model.hpp"
#include "cbsr/dual_balance.hpp"

namespace cbsr {

// Weighted-difference point estimators for the WATE. Estimators consume
// WeightSet objects, never probabilities, so the weight definition stays in
// one place. The normalized form applies the group-normalized weights (each
// group sums to 1); the unnormalized form applies w/n, the sample analogue of
// the population functional E[(2T-1) w(X,T) Y].

struct EffectEstimate {
  double tau_hat = 0.0;
  bool normalized = true;
  WeightProvenance provenance;
  double w_l2 = 0.0;  // l2 norm of the signed weights as applied (plug-in SE factor)
  Eigen::Index n = 0;
};

namespace detail {

// Shared reduction so that AIPW with a zero outcome model reproduces the IPW
// estimate bit for bit.
inline double weighted_group_diff(const Vector& w, const std::vector<int>& t,
                                  const Vector& v) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    acc += (t[size_t(i)] == 1 ? w[i] : -w[i]) * v[i];
  return acc;
}

inline const Vector& require_outcome(const Dataset& ds, const char* what) {
  if (!ds.y) throw ConfigError(std::string(what) + ": dataset has no outcome column");
  return *ds.y;
}

inline Vector applied_weights(const WeightSet& ws, bool normalized) {
  if (normalized) return ws.normalized;
  return ws.w / double(ws.n());
}

}  // namespace detail

inline EffectEstimate ipw_estimate(const Dataset& ds, const WeightSet& ws,
                                   bool normalized = true) {
  const Vector& y = detail::require_outcome(ds, "ipw_estimate");
  const Vector w = detail::applied_weights(ws, normalized);
  EffectEstimate est;
  est.tau_hat = detail::weighted_group_diff(w, ws.t, y);
  est.normalized = normalized;
  est.provenance = ws.provenance;
  est.w_l2 = w.norm();
  est.n = ws.n();
  return est;
}

// AIPW for the ATT: sum_{T=1} w*(Y - g0) - sum_{T=0} w*(Y - g0), with
// group-normalized weights (treated weights 1/n1 each). g0_hat holds the
// outcome-regression prediction for every row.
inline EffectEstimate aipw_att(const Dataset& ds, const WeightSet& ws,
                               const Vector& g0_hat) {
  const Vector& y = detail::require_outcome(ds, "aipw_att");
  if (g0_hat.size() != ds.n()) throw ConfigError("aipw_att: g0_hat length mismatch");
  const Vector resid = y - g0_hat;
  EffectEstimate est;
  est.tau_hat = detail::weighted_group_diff(ws.normalized, ws.t, resid);
  est.normalized = true;
  est.provenance = ws.provenance;
  est.provenance.fitter += "+aipw";
  est.w_l2 = ws.normalized.norm();
  est.n = ws.n();
  return est;
}

// AIPW for the ATE: (1/n) sum (g1 - g0) + sum_{T=1} w*(Y - g1) - sum_{T=0} w*(Y - g0).
inline EffectEstimate aipw_ate(const Dataset& ds, const WeightSet& ws,
                               const Vector& g0_hat, const Vector& g1_hat) {
  const Vector& y = detail::require_outcome(ds, "aipw_ate");
  if (g0_hat.size() != ds.n() || g1_hat.size() != ds.n())
    throw ConfigError("aipw_ate: outcome model length mismatch");
  Vector resid(ds.n());
  for (Eigen::Index i = 0; i < ds.n(); ++i)
    resid[i] = y[i] - (ds.t[size_t(i)] == 1 ? g1_hat[i] : g0_hat[i]);
  EffectEstimate est;
  est.tau_hat = (g1_hat - g0_hat).mean() +
                detail::weighted_group_diff(ws.normalized, ws.t, resid);
  est.normalized = true;
  est.provenance = ws.provenance;
  est.provenance.fitter += "+aipw";
  est.w_l2 = ws.normalized.norm();
  est.n = ws.n();
  return est;
}

// Decomposition of the weighted-difference error under a constant treatment
// effect tau_star: with weights w (as applied, caller's scale),
//   tau_hat(w) = tau_star * sum_{T=1} w + bias + noise,
//   bias  = sum_{T=1} w g0 - sum_{T=0} w g0,
//   noise = sum_i (2T_i - 1) w_i eps_i,  eps_i = Y_i - g0(X_i) - tau_star T_i.
struct BiasDecomposition {
  double bias = 0.0;
  double noise = 0.0;
};

inline BiasDecomposition bias_decompose(const Dataset& ds, const Vector& w,
                                        const Vector& g0_vals, double tau_star = 0.0) {
  const Vector& y = detail::require_outcome(ds, "bias_decompose");
  if (w.size() != ds.n() || g0_vals.size() != ds.n())
    throw ConfigError("bias_decompose: length mismatch");
  BiasDecomposition out;
  out.bias = detail::weighted_group_diff(w, ds.t, g0_vals);
  Vector eps(ds.n());
  for (Eigen::Index i = 0; i < ds.n(); ++i)
    eps[i] = y[i] - g0_vals[i] - tau_star * double(ds.t[size_t(i)]);
  out.noise = detail::weighted_group_diff(w, ds.t, eps);
  return out;
}

// Ridge (lambda > 0) or least-squares (lambda = 0) outcome regression with an
// intercept, fit on the rows selected by `mask`, predictions for all rows.
// Plumbing for the AIPW estimators and the plug-in sigma estimate.
inline Vector fit_outcome_ridge(const Matrix& x, const Vector& y,
                                const std::vector<char>& mask, double lambda) {
  const Eigen::Index n = x.rows(), d = x.cols();
  long cnt = 0;
  for (char c : mask) cnt += (c != 0);
  if (cnt < 2) throw ConfigError("fit_outcome_ridge: need at least 2 selected rows");
  Matrix z(cnt, d + 1);
  Vector yy(cnt);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask[size_t(i)]) continue;
    z(r, 0) = 1.0;
    z.row(r).tail(d) = x.row(i);
    yy[r] = y[i];
    ++r;
  }
  Matrix a = z.transpose() * z;
  for (Eigen::Index j = 1; j <= d; ++j) a(j, j) += lambda;
  a.diagonal().array() += 1e-10 * std::max(1.0, a.diagonal().mean());
  const Vector beta = Eigen::LDLT<Matrix>(a).solve(z.transpose() * yy);
  Vector pred(n);
  for (Eigen::Index i = 0; i < n; ++i)
    pred[i] = beta[0] + x.row(i).dot(beta.tail(d));
  return pred;
}

}  // namespace cbsr
