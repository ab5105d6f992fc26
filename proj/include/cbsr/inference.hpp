#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "cbsr/data_model.hpp"
#include "cbsr/errors.hpp"
#include "cbsr/estimators.hpp"
#include "cbsr/mathutil.hpp"
#include "cbsr/rng.hpp"

namespace cbsr {

// Honest finite-sample confidence interval for a weighted-difference
// estimate: the half-width adds the worst-case bias of the weights over the
// assumed outcome-function ball to the Gaussian noise term,
//   tau_hat +/- [ max_bias_factor * norm_cl + sigma_hat * ||w||_2 * z_{1-a/2} ].
// norm_cl is an upper confidence limit on the outcome-function norm, injected
// by the caller (oracle value in simulations, user-supplied bound otherwise).

struct HonestCI {
  double center = 0.0;
  double half_bias = 0.0;
  double half_noise = 0.0;
  double level = 0.95;
  std::string norm_cl_mode = "user";

  double lo() const { return center - half_bias - half_noise; }
  double hi() const { return center + half_bias + half_noise; }
  double half_width() const { return half_bias + half_noise; }
  bool contains(double v) const { return v >= lo() && v <= hi(); }
};

inline HonestCI honest_ci(double tau_hat, double max_bias_factor, double norm_cl,
                          double sigma_hat, double w_l2, double level = 0.95) {
  if (max_bias_factor < 0.0 || norm_cl < 0.0 || sigma_hat < 0.0 || w_l2 < 0.0)
    throw ConfigError("honest_ci: factors must be nonnegative");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("honest_ci: level must be in (0,1)");
  HonestCI ci;
  ci.center = tau_hat;
  ci.half_bias = max_bias_factor * norm_cl;
  ci.half_noise = sigma_hat * w_l2 * normal_quantile(0.5 * (1.0 + level));
  ci.level = level;
  return ci;
}

inline HonestCI honest_ci(const EffectEstimate& est, double max_bias_factor,
                          double norm_cl, double sigma_hat, double level = 0.95) {
  return honest_ci(est.tau_hat, max_bias_factor, norm_cl, sigma_hat, est.w_l2, level);
}

// The imbalance-ignoring interval: center +/- sigma_hat ||w||_2 z.
inline HonestCI naive_ci(double tau_hat, double sigma_hat, double w_l2,
                         double level = 0.95) {
  return honest_ci(tau_hat, 0.0, 0.0, sigma_hat, w_l2, level);
}

inline HonestCI naive_ci(const EffectEstimate& est, double sigma_hat,
                         double level = 0.95) {
  return naive_ci(est.tau_hat, sigma_hat, est.w_l2, level);
}

// Conservative plug-in for the homoskedastic noise SD: residual SD against a
// supplied outcome model, or the pooled within-group SD when none is given.
inline double sigma_hat(const Dataset& ds,
                        const std::optional<Vector>& g_hat = std::nullopt) {
  const Vector& y = detail::require_outcome(ds, "sigma_hat");
  const Eigen::Index n = ds.n();
  if (n < 4) throw ConfigError("sigma_hat: need at least 4 observations");
  if (g_hat) {
    if (g_hat->size() != n) throw ConfigError("sigma_hat: g_hat length mismatch");
    const Vector r = y - *g_hat;
    const double mu = r.mean();
    return std::sqrt((r.array() - mu).square().sum() / double(n - 1));
  }
  double sum[2] = {0.0, 0.0}, sum2[2] = {0.0, 0.0};
  long cnt[2] = {0, 0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int g = ds.t[size_t(i)];
    sum[g] += y[i];
    sum2[g] += y[i] * y[i];
    ++cnt[g];
  }
  if (cnt[0] < 2 || cnt[1] < 2)
    throw ConfigError("sigma_hat: need at least 2 observations per group");
  double ss = 0.0;
  for (int g = 0; g <= 1; ++g)
    ss += sum2[g] - sum[g] * sum[g] / double(cnt[g]);
  return std::sqrt(std::max(0.0, ss / double(n - 2)));
}

// Sample-split variant for outcome-adjusted inference: the outcome model is
// fit (ridge, per treatment group) on a random split and residuals are taken
// on the held-out half. Default split 0.5. This is a labeled plug-in, not an
// honest bound on sigma.
inline double sigma_hat_split(const Dataset& ds, double ridge_lambda,
                              double split = 0.5, std::uint64_t seed = 1) {
  const Vector& y = detail::require_outcome(ds, "sigma_hat_split");
  const Eigen::Index n = ds.n();
  if (n < 8) throw ConfigError("sigma_hat_split: need at least 8 observations");
  if (!(split > 0.0 && split < 1.0))
    throw ConfigError("sigma_hat_split: split must be in (0,1)");
  Rng rng(seed);
  std::vector<char> train(static_cast<size_t>(n));
  for (auto& c : train) c = rng.uniform() < split ? 1 : 0;
  // Each group needs a couple of training rows; fall back to all-train on
  // degenerate draws.
  long cnt[2] = {0, 0};
  for (Eigen::Index i = 0; i < n; ++i)
    if (train[size_t(i)]) ++cnt[ds.t[size_t(i)]];
  if (cnt[0] < 2 || cnt[1] < 2) std::fill(train.begin(), train.end(), 1);

  std::vector<char> g0_mask(static_cast<size_t>(n)), g1_mask(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    g0_mask[size_t(i)] = train[size_t(i)] && ds.t[size_t(i)] == 0;
    g1_mask[size_t(i)] = train[size_t(i)] && ds.t[size_t(i)] == 1;
  }
  const Vector g0 = fit_outcome_ridge(ds.x, y, g0_mask, ridge_lambda);
  const Vector g1 = fit_outcome_ridge(ds.x, y, g1_mask, ridge_lambda);
  double ss = 0.0;
  long m = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (train[size_t(i)]) continue;
    const double r = y[i] - (ds.t[size_t(i)] == 1 ? g1[i] : g0[i]);
    ss += r * r;
    ++m;
  }
  if (m < 2) throw ConfigError("sigma_hat_split: held-out half too small");
  return std::sqrt(ss / double(m - 1));
}

}  // namespace cbsr
