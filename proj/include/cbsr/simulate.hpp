#pragma once

#include <Eigen/Cholesky>
#include <atomic>
#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cbsr/data_model.hpp"
#include "cbsr/estimators.hpp"
#include "cbsr/fit_boost.hpp"
#include "cbsr/fit_kernel.hpp"
#include "cbsr/fit_regularized.hpp"
#include "cbsr/glm_fit.hpp"
#include "cbsr/inference.hpp"
#include "cbsr/rng.hpp"

namespace cbsr {

// Seeded generators for the three experimental designs plus the replication
// runner. Every generator is fully determined by its seed; replicate r of a
// run uses the derived seed Rng::derive_seed(seed, r).

// ---------------------------------------------------------------------------
// Design 1: the Kang-Schafer example. Latent Z ~ N(0, I4), treatment
// probability expit(-Z1 + 0.5 Z2 - 0.25 Z3 - 0.1 Z4), and observed covariates
// that are nonlinear transformations of Z. No outcome variable.

inline Vector kang_schafer_transform(const Eigen::Ref<const Vector>& z) {
  Vector x(4);
  x[0] = std::exp(z[0] / 2.0);
  x[1] = z[1] / (1.0 + std::exp(z[0])) + 10.0;
  x[2] = std::pow(z[0] * z[2] / 25.0 + 0.6, 3.0);
  x[3] = std::pow(z[1] + z[3] + 20.0, 2.0);
  return x;
}

inline double kang_schafer_logit(const Eigen::Ref<const Vector>& z) {
  return -z[0] + 0.5 * z[1] - 0.25 * z[2] - 0.1 * z[3];
}

struct KangSchaferData {
  Dataset ds;
  Matrix z;
  Vector f_true;
  Vector true_p;
};

// Draw order per row: Z_1..Z_4 (normals), then one uniform for T.
inline KangSchaferData gen_kang_schafer(int n, std::uint64_t seed) {
  if (n < 10) throw ConfigError("gen_kang_schafer: n must be >= 10");
  Rng rng(seed);
  Matrix z(n, 4), x(n, 4);
  Vector f(n), p(n);
  std::vector<int> t(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) z(i, j) = rng.normal();
    x.row(i) = kang_schafer_transform(z.row(i)).transpose();
    f[i] = kang_schafer_logit(z.row(i));
    p[i] = 1.0 / (1.0 + std::exp(-f[i]));
    t[size_t(i)] = rng.bernoulli(p[i]);
  }
  return KangSchaferData{Dataset(std::move(x), std::move(t)), std::move(z),
                         std::move(f), std::move(p)};
}

// The standard working design for this example: the four covariates and
// their squares, with an intercept in column 0.
inline Matrix kang_schafer_design(const Dataset& ds) {
  Matrix m(ds.n(), 9);
  m.col(0).setOnes();
  m.middleCols(1, 4) = ds.x;
  m.middleCols(5, 4) = ds.x.array().square().matrix();
  return m;
}

// ---------------------------------------------------------------------------
// Design 2: low-dimensional covariates with Gaussian-process propensity and
// outcome functions. X ~ N(0, I_dim); logit p = f ~ G(0, K_f); sharp null
// Y(0) = Y(1) = g0 + eps with g0 ~ G(0, K_g).

struct GpLowdimSpec {
  Kernel kernel_f = Kernel::polynomial(1);
  Kernel kernel_g = Kernel::laplace(0.1);
  double noise_sd = 1.0;
  int n = 1000;
  int dim = 5;
  double f_scale = 1.0;  // multipliers on the drawn functions; 1 = kernel as-is
  double g_scale = 1.0;
};

struct GpLowdimData {
  Dataset ds;
  Vector f_true;
  Vector g0;
  Vector true_p;
  double f_hnorm = 0.0;  // RKHS norm of the drawn function (exact under the
  double g0_hnorm = 0.0; // jittered Gram): scale * ||z||_2 of the seed normals
};

// Draw f = scale * L z at the sample points, L the Cholesky factor of the
// jittered Gram. With f interpolating K gamma = f, gamma = scale L^-T z and
// ||f||_H^2 = gamma' K gamma = scale^2 z'z, so the H-norm is scale * ||z||.
struct GpDraw {
  Vector values;
  double hnorm = 0.0;
};

inline GpDraw gp_draw(const Eigen::LLT<Matrix>& chol, double scale, Rng& rng) {
  const Eigen::Index n = chol.matrixL().rows();
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  GpDraw d;
  d.values = chol.matrixL() * z;
  d.values *= scale;
  d.hnorm = std::abs(scale) * z.norm();
  return d;
}

inline Eigen::LLT<Matrix> gp_factor(const Kernel& k, const Matrix& x) {
  Matrix g = gram(k, x);
  const double scale = std::max(g.diagonal().mean(), 1e-300);
  Matrix gj = g;
  gj.diagonal().array() += 1e-8 * scale;
  Eigen::LLT<Matrix> llt(gj);
  if (llt.info() == Eigen::Success) return llt;
  gj = g;
  gj.diagonal().array() += 1e-5 * scale;  // one retry with a larger jitter
  llt.compute(gj);
  if (llt.info() != Eigen::Success)
    throw Error("gp_factor: Gram factorization failed even with enlarged jitter");
  return llt;
}

// Draw order: X entries (row-major normals), f seed normals, per-row T
// uniforms, g0 seed normals, noise normals.
inline GpLowdimData gen_gp_lowdim(const GpLowdimSpec& spec, std::uint64_t seed) {
  if (spec.n < 4) throw ConfigError("gen_gp_lowdim: n too small");
  Rng rng(seed);
  Matrix x(spec.n, spec.dim);
  for (int i = 0; i < spec.n; ++i)
    for (int j = 0; j < spec.dim; ++j) x(i, j) = rng.normal();

  const auto chol_f = gp_factor(spec.kernel_f, x);
  const GpDraw fdraw = gp_draw(chol_f, spec.f_scale, rng);
  Vector p(spec.n);
  std::vector<int> t(size_t(spec.n));
  for (int i = 0; i < spec.n; ++i) {
    p[i] = 1.0 / (1.0 + std::exp(-fdraw.values[i]));
    t[size_t(i)] = rng.bernoulli(p[i]);
  }

  const auto chol_g = gp_factor(spec.kernel_g, x);
  const GpDraw gdraw = gp_draw(chol_g, spec.g_scale, rng);
  Vector y(spec.n);
  for (int i = 0; i < spec.n; ++i) y[i] = gdraw.values[i] + spec.noise_sd * rng.normal();

  GpLowdimData out{Dataset(std::move(x), std::move(t), std::move(y)),
                   fdraw.values, gdraw.values, std::move(p),
                   fdraw.hnorm, gdraw.hnorm};
  return out;
}

// ---------------------------------------------------------------------------
// Design 3: high-dimensional covariates. Rows of X are AR(1) Gaussians with
// corr 0.5^|i-j|; logit p = rho x'theta with theta = (1/sqrt(s_t),.. ,0,..);
// sharp null Y = x'beta + eps, beta = (1/sqrt(s_y),..,0,..), eps ~ N(0, sd^2).

struct HighdimSpec {
  double rho = 1.0;
  int s_t = 5;
  int s_y = 5;
  int n = 1000;
  int d = 100;
  double noise_sd = 5.0;
};

struct HighdimData {
  Dataset ds;
  Vector true_p;
  Vector theta;
  Vector beta;
};

// Draw order per row: d innovation normals, one T uniform, one noise normal.
inline HighdimData gen_highdim(const HighdimSpec& spec, std::uint64_t seed) {
  if (spec.s_t < 1 || spec.s_t > spec.d || spec.s_y < 1 || spec.s_y > spec.d)
    throw ConfigError("gen_highdim: sparsity levels must lie in [1, d]");
  if (spec.n < 4) throw ConfigError("gen_highdim: n too small");
  Rng rng(seed);
  Vector theta = Vector::Zero(spec.d), beta = Vector::Zero(spec.d);
  for (int j = 0; j < spec.s_t; ++j) theta[j] = 1.0 / std::sqrt(double(spec.s_t));
  for (int j = 0; j < spec.s_y; ++j) beta[j] = 1.0 / std::sqrt(double(spec.s_y));

  Matrix x(spec.n, spec.d);
  Vector p(spec.n), y(spec.n);
  std::vector<int> t(size_t(spec.n));
  const double ar = 0.5, innov = std::sqrt(1.0 - ar * ar);
  for (int i = 0; i < spec.n; ++i) {
    x(i, 0) = rng.normal();
    for (int j = 1; j < spec.d; ++j) x(i, j) = ar * x(i, j - 1) + innov * rng.normal();
    const double f = spec.rho * x.row(i).dot(theta);
    p[i] = 1.0 / (1.0 + std::exp(-f));
    t[size_t(i)] = rng.bernoulli(p[i]);
    y[i] = x.row(i).dot(beta) + spec.noise_sd * rng.normal();
  }
  return HighdimData{Dataset(std::move(x), std::move(t), std::move(y)),
                     std::move(p), std::move(theta), std::move(beta)};
}

// ---------------------------------------------------------------------------
// Replication runner.

enum class SimDesign { KangSchafer, GpLowdim, Highdim };

struct SimSpec {
  SimDesign design = SimDesign::Highdim;
  GpLowdimSpec gp;
  HighdimSpec hd;
  int kang_schafer_n = 200;
};

enum class FitterKind { Glm, Ridge, Lasso, Rkhs, Boost, OracleTrueP };

enum class OutcomeModel { None, Ridge };
enum class NormClMode { Oracle, Fixed };
enum class SigmaMode { Oracle, Plugin };

struct MethodConfig {
  FitterKind fitter = FitterKind::Ridge;
  ScoringRule rule = ScoringRule::for_estimand(Estimand::ATT);
  std::optional<double> lambda;     // fixed penalty; otherwise cv_target drives it
  std::optional<double> cv_target;  // weight-CV stopping rule
  Kernel kernel = Kernel::laplace(0.1);
  int boost_depth = 1;
  int boost_trees = 200;
  double boost_nu = 0.1;
  OutcomeModel outcome_model = OutcomeModel::None;
  double outcome_lambda = 1.0;
  NormClMode norm_cl_mode = NormClMode::Oracle;
  double norm_cl_value = 0.0;
  SigmaMode sigma_mode = SigmaMode::Oracle;
  double level = 0.95;

  std::string fitter_name() const {
    switch (fitter) {
      case FitterKind::Glm: return "glm";
      case FitterKind::Ridge: return "l2";
      case FitterKind::Lasso: return "l1";
      case FitterKind::Rkhs: return "rkhs";
      case FitterKind::Boost: return "boost";
      default: return "oracle-p";
    }
  }
};

struct ReplicateResult {
  bool ok = false;
  std::string error;
  double tau_hat = 0.0;
  double lambda = 0.0;
  double weight_cv = 0.0;
  double max_bias = std::numeric_limits<double>::quiet_NaN();
  double norm_cl = 0.0;
  double sigma = 0.0;
  HonestCI naive;
  HonestCI honest;
  bool cover_naive = false;
  bool cover_honest = false;
};

struct CellMetrics {
  int replicates = 0;
  int failures = 0;
  bool flagged = false;  // > 10% replicate failures
  double rmse = 0.0;
  double abs_bias = 0.0;      // |mean error|
  double mean_abs_err = 0.0;  // mean |error| ("average absolute bias")
  double mean_max_bias = 0.0;
  double cover_naive = 0.0;
  double cover_honest = 0.0;
  double ci_ratio = 0.0;  // mean honest/naive width ratio
};

struct ReplicationRun {
  CellMetrics metrics;
  std::vector<ReplicateResult> replicates;
};

namespace detail {

struct SimReplicate {
  Dataset ds;
  Vector true_p;
  double oracle_norm = 0.0;
  double oracle_sigma = 0.0;
};

inline SimReplicate make_replicate(const SimSpec& spec, std::uint64_t seed) {
  switch (spec.design) {
    case SimDesign::GpLowdim: {
      GpLowdimData d = gen_gp_lowdim(spec.gp, seed);
      return SimReplicate{std::move(d.ds), std::move(d.true_p), d.g0_hnorm,
                          spec.gp.noise_sd};
    }
    case SimDesign::Highdim: {
      HighdimData d = gen_highdim(spec.hd, seed);
      return SimReplicate{std::move(d.ds), std::move(d.true_p), d.beta.norm(),
                          spec.hd.noise_sd};
    }
    default:
      throw ConfigError(
          "run_replications: the kang_schafer design has no outcome variable; "
          "its metrics are balance diagnostics, not effect errors");
  }
}

inline ReplicateResult run_one(const SimSpec& spec, const MethodConfig& mc,
                               std::uint64_t rep_seed) {
  ReplicateResult rr;
  try {
    SimReplicate rep = make_replicate(spec, rep_seed);
    const Dataset& ds = rep.ds;
    const Eigen::Index n = ds.n();

    std::optional<WeightSet> ws;
    double kkt_max_bias = std::numeric_limits<double>::quiet_NaN();

    switch (mc.fitter) {
      case FitterKind::Glm: {
        Matrix design(n, ds.d() + 1);
        design.col(0).setOnes();
        design.rightCols(ds.d()) = ds.x;
        const PropensityFit fit = fit_mle_score(design, ds.t, mc.rule);
        ws = fit_weights(fit, ds.t);
        kkt_max_bias = 0.0;
        rr.lambda = 0.0;
        break;
      }
      case FitterKind::Ridge:
      case FitterKind::Lasso: {
        Matrix design(n, ds.d() + 1);
        design.col(0).setOnes();
        design.rightCols(ds.d()) = ds.x;
        const PenaltyNorm norm =
            mc.fitter == FitterKind::Ridge ? PenaltyNorm::L2 : PenaltyNorm::L1;
        RegularizedFit fit;
        if (mc.cv_target) {
          auto res = fit_until_cv(design, ds.t, mc.rule, norm, *mc.cv_target);
          fit = std::move(res.fit);
        } else {
          fit = fit_penalized(design, ds.t, mc.rule, mc.lambda.value_or(0.0), norm);
        }
        rr.lambda = fit.lambda;
        kkt_max_bias = imbalance_bound(fit, design, ds.t).max_bias;
        ws = fit_weights(fit, ds.t);
        break;
      }
      case FitterKind::Rkhs: {
        KernelFit fit;
        if (mc.cv_target) {
          auto res = fit_rkhs_until_cv(ds.x, ds.t, mc.kernel, mc.rule, *mc.cv_target);
          fit = std::move(res.fit);
        } else {
          fit = fit_rkhs(ds.x, ds.t, mc.kernel, mc.rule, mc.lambda.value_or(1.0));
        }
        rr.lambda = fit.lambda;
        kkt_max_bias = rkhs_max_bias(fit);
        ws = fit_weights(fit, ds.t);
        break;
      }
      case FitterKind::Boost: {
        BoostOptions bopts;
        bopts.cv_stop_target = mc.cv_target;
        const TreeEnsemble ens =
            fit_boost(ds.x, ds.t, mc.rule, mc.boost_depth, mc.boost_trees, mc.boost_nu, bopts);
        ws = fit_weights(ens, ds.t);
        break;
      }
      case FitterKind::OracleTrueP: {
        Vector p = rep.true_p.cwiseMax(kProbEps).cwiseMin(1.0 - kProbEps);
        ws = WeightSet::from_probabilities(mc.rule, p, ds.t, "oracle-p");
        break;
      }
    }

    rr.weight_cv = group_weight_cv(ws->w, ds.t);

    EffectEstimate est;
    if (mc.outcome_model == OutcomeModel::None) {
      est = ipw_estimate(ds, *ws, true);
    } else {
      const Estimand e = mc.rule.estimand();
      if (e != Estimand::ATT && e != Estimand::ATE)
        throw ConfigError("run_replications: AIPW is defined for ATT and ATE only");
      std::vector<char> mask0(static_cast<size_t>(n)), mask1(static_cast<size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        mask0[size_t(i)] = ds.t[size_t(i)] == 0;
        mask1[size_t(i)] = ds.t[size_t(i)] == 1;
      }
      const Vector g0 = fit_outcome_ridge(ds.x, *ds.y, mask0, mc.outcome_lambda);
      if (e == Estimand::ATT) {
        est = aipw_att(ds, *ws, g0);
      } else {
        const Vector g1 = fit_outcome_ridge(ds.x, *ds.y, mask1, mc.outcome_lambda);
        est = aipw_ate(ds, *ws, g0, g1);
      }
    }
    rr.tau_hat = est.tau_hat;

    rr.sigma = (mc.sigma_mode == SigmaMode::Oracle) ? rep.oracle_sigma : sigma_hat(ds);
    rr.norm_cl =
        (mc.norm_cl_mode == NormClMode::Oracle) ? rep.oracle_norm : mc.norm_cl_value;

    // Scale the KKT-scale bound to the normalized estimator: the normalized
    // imbalance is (n / sum_{T=1} w) times the KKT-scale imbalance when an
    // intercept keeps the group totals equal.
    if (std::isfinite(kkt_max_bias)) {
      const double nf = double(n) / ws->group_sum(1);
      rr.max_bias = nf * kkt_max_bias;
    }

    rr.naive = naive_ci(est, rr.sigma, mc.level);
    rr.cover_naive = rr.naive.contains(0.0);
    if (std::isfinite(rr.max_bias)) {
      rr.honest = honest_ci(est, rr.max_bias, rr.norm_cl, rr.sigma, mc.level);
      rr.cover_honest = rr.honest.contains(0.0);
    }
    rr.ok = true;
  } catch (const Error& e) {
    rr.ok = false;
    rr.error = e.what();
  }
  return rr;
}

}  // namespace detail

// Run R replicates of (design, method), deterministic given the seed.
// Replicates run concurrently; each owns its derived RNG stream and results
// are aggregated in replicate order. Fitter errors are recorded per replicate
// and the cell is flagged when more than 10% fail.
inline ReplicationRun run_replications(const SimSpec& spec, const MethodConfig& mc,
                                       int R, std::uint64_t seed, int threads = 0) {
  if (R < 2) throw ConfigError("run_replications: R must be >= 2");
  if (spec.design == SimDesign::KangSchafer)
    throw ConfigError(
        "run_replications: the kang_schafer design has no outcome variable; "
        "its metrics are balance diagnostics, not effect errors");
  ReplicationRun run;
  run.replicates.resize(size_t(R));

  int hw = int(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (threads <= 0) threads = hw;
  if (const int cap = env_thread_cap(); cap > 0) threads = std::min(threads, cap);
  threads = std::min(threads, R);

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= R) return;
      run.replicates[size_t(r)] =
          detail::run_one(spec, mc, Rng::derive_seed(seed, std::uint64_t(r)));
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  CellMetrics& m = run.metrics;
  m.replicates = R;
  double sum_err = 0.0, sum_sq = 0.0, sum_abs = 0.0, sum_mb = 0.0;
  double sum_ratio = 0.0;
  int ok = 0, with_mb = 0, cover_n = 0, cover_h = 0;
  for (const auto& rr : run.replicates) {
    if (!rr.ok) {
      ++m.failures;
      continue;
    }
    ++ok;
    sum_err += rr.tau_hat;
    sum_sq += rr.tau_hat * rr.tau_hat;
    sum_abs += std::abs(rr.tau_hat);
    cover_n += rr.cover_naive ? 1 : 0;
    if (std::isfinite(rr.max_bias)) {
      ++with_mb;
      sum_mb += rr.max_bias;
      cover_h += rr.cover_honest ? 1 : 0;
      if (rr.naive.half_width() > 0.0)
        sum_ratio += rr.honest.half_width() / rr.naive.half_width();
    }
  }
  if (ok > 0) {
    m.rmse = std::sqrt(sum_sq / double(ok));
    m.abs_bias = std::abs(sum_err / double(ok));
    m.mean_abs_err = sum_abs / double(ok);
    m.cover_naive = double(cover_n) / double(ok);
  }
  if (with_mb > 0) {
    m.mean_max_bias = sum_mb / double(with_mb);
    m.cover_honest = double(cover_h) / double(with_mb);
    m.ci_ratio = sum_ratio / double(with_mb);
  }
  m.flagged = m.failures * 10 > R;
  return run;
}

}  // namespace cbsr
