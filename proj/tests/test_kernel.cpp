#include <catch2/catch.hpp>

#include <Eigen/Dense>

#include "cbsr/fit_kernel.hpp"
#include "cbsr/glm_fit.hpp"
#include "support/test_util.hpp"

using namespace cbsr;

namespace {
const ScoringRule kAtt = ScoringRule::for_estimand(Estimand::ATT);
const ScoringRule kAte = ScoringRule::for_estimand(Estimand::ATE);

Matrix jittered_gram(const Kernel& k, const Matrix& x, double rel = 1e-8) {
  Matrix g = gram(k, x);
  g.diagonal().array() += rel * g.diagonal().mean();
  return g;
}
}  // namespace

TEST_CASE("gram matrices: closed forms and structure") {
  const auto inst = testutil::random_instance(40, 3, 2);
  const Matrix& x = inst.x;

  const Matrix glin = gram(Kernel::linear(), x);
  CHECK((glin - x * x.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

  const Matrix gpoly = gram(Kernel::polynomial(1), x);
  const Matrix expected = (x * x.transpose()).array() + 0.5;
  CHECK((gpoly - expected).cwiseAbs().maxCoeff() <= 1e-12);

  for (const Kernel& k : {Kernel::gaussian(1.0), Kernel::laplace(0.5)}) {
    const Matrix g = gram(k, x);
    CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < 40; ++i) CHECK(g(i, i) == 1.0);
    // Pairwise evaluation agrees with the vectorized construction.
    CHECK(g(3, 7) == Approx(k(x.row(3).transpose(), x.row(7).transpose())).epsilon(1e-12));
    const Eigen::SelfAdjointEigenSolver<Matrix> es(g);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("linear kernel at tiny lambda reproduces the GLM fit") {
  // A finite-dimensional linear RKHS is the plain GLM on the same features.
  const auto inst = testutil::random_instance(60, 2, 29);
  const auto glm = fit_mle_score(inst.x, inst.t, kAtt);  // no intercept column
  REQUIRE(glm.converged);
  const auto kf = fit_rkhs(inst.x, inst.t, Kernel::linear(), kAtt, 1e-9);
  const WeightSet wg = fit_weights(glm, inst.t);
  const WeightSet wk = fit_weights(kf, inst.t);
  CHECK((wg.w - wk.w).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("large lambda pushes weights to group constants") {
  const auto inst = testutil::random_instance(50, 3, 41);
  const auto kf = fit_rkhs(inst.x, inst.t, Kernel::gaussian(0.5), kAtt, 1e6);
  const WeightSet ws = fit_weights(kf, inst.t);
  for (int g = 0; g <= 1; ++g) {
    double lo = 1e300, hi = -1e300;
    for (int i = 0; i < 50; ++i) {
      if (inst.t[size_t(i)] != g) continue;
      lo = std::min(lo, ws.w[i]);
      hi = std::max(hi, ws.w[i]);
    }
    CHECK(hi - lo <= 1e-6 * hi);
  }
}

TEST_CASE("representer fit stays well defined under duplicated rows") {
  // Exactly duplicated rows make the Gram matrix rank-deficient; the jitter
  // keeps the fitted *function* well defined: the fit converges, duplicates
  // receive identical fitted values, and an infinitesimal perturbation of the
  // duplicate moves the fit only infinitesimally.
  const auto inst = testutil::random_instance(30, 2, 63);
  Matrix x2(31, 2);
  x2.topRows(30) = inst.x;
  x2.row(30) = inst.x.row(12);
  std::vector<int> t2 = inst.t;
  t2.push_back(inst.t[12]);
  const auto dup = fit_rkhs(x2, t2, Kernel::gaussian(0.7), kAtt, 0.5);
  REQUIRE(dup.converged);
  CHECK(std::abs(dup.fitted_f[30] - dup.fitted_f[12]) <= 1e-9);

  Matrix x3 = x2;
  x3(30, 0) += 1e-9;
  const auto near_dup = fit_rkhs(x3, t2, Kernel::gaussian(0.7), kAtt, 0.5);
  REQUIRE(near_dup.converged);
  CHECK((near_dup.fitted_f - dup.fitted_f).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("max-bias bound: certification by random directions") {
  const auto inst = testutil::random_instance(50, 3, 71);
  const double lambda = 0.7;
  const auto kf = fit_rkhs(inst.x, inst.t, Kernel::gaussian(0.5), kAtt, lambda);
  REQUIRE(kf.converged);
  const double bound = rkhs_max_bias(kf);
  CHECK(bound == lambda * kf.hnorm);

  const Matrix kj = jittered_gram(Kernel::gaussian(0.5), inst.x);
  cbsr::Rng rng(8);
  const Vector w = fit_weights(kf, inst.t).w;
  double tightest = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    Vector delta(50);
    for (int i = 0; i < 50; ++i) delta[i] = rng.normal();
    const Vector g = kj * delta;
    const double gnorm = std::sqrt(delta.dot(g));
    if (gnorm <= 0.0) continue;
    double imb = 0.0;
    for (int i = 0; i < 50; ++i)
      imb += (inst.t[size_t(i)] == 1 ? w[i] : -w[i]) * g[i] / 50.0;
    const double scaled = std::abs(imb) / gnorm;
    CHECK(scaled <= bound + 1e-8);
    tightest = std::max(tightest, scaled);
  }
  // The bound is attained in the direction of the fit itself.
  {
    const Vector g = kj * kf.gamma;
    const double gnorm = std::sqrt(kf.gamma.dot(g));
    double imb = 0.0;
    for (int i = 0; i < 50; ++i)
      imb += (inst.t[size_t(i)] == 1 ? w[i] : -w[i]) * g[i] / 50.0;
    CHECK(std::abs(imb) / gnorm == Approx(bound).epsilon(1e-6));
  }
  CHECK(tightest <= bound + 1e-8);
}

TEST_CASE("bound shrinks along a decreasing lambda path") {
  const auto inst = testutil::random_instance(40, 2, 83);
  double prev = std::numeric_limits<double>::infinity();
  KernelFitOptions opts;
  for (double lambda : {2.0, 1.0, 0.5, 0.25, 0.1}) {
    const auto kf = fit_rkhs(inst.x, inst.t, Kernel::laplace(0.7), kAtt, lambda, opts);
    const double mb = rkhs_max_bias(kf);
    CHECK(mb <= prev + 1e-9);
    prev = mb;
    opts.warm_start = kf.gamma;
  }
}

TEST_CASE("ATT kernel dual: primal weights minimize the entropy-quadratic dual") {
  const auto inst = testutil::random_instance(20, 2, 90);
  const double lambda = 0.4;
  const auto kf = fit_rkhs(inst.x, inst.t, Kernel::gaussian(0.6), kAtt, lambda);
  REQUIRE(kf.converged);
  const Matrix kj = jittered_gram(Kernel::gaussian(0.6), inst.x);
  const Eigen::Index n = 20;

  const Vector w_fit = fit_weights(kf, inst.t).w;
  // Stationarity ties the dual variables to gamma: gamma = w_tilde / (lambda n).
  Vector wt(n);
  for (Eigen::Index i = 0; i < n; ++i)
    wt[i] = (inst.t[size_t(i)] == 1 ? w_fit[i] : -w_fit[i]);
  CHECK((kf.gamma - wt / (lambda * double(n))).cwiseAbs().maxCoeff() <= 1e-8);

  // Dual objective over control weights (treated fixed at 1):
  //   D(w) = (1/(2 lambda n)) w~' K w~ + sum_{T=0} (w log w - w).
  auto dual_obj = [&](const Vector& w) {
    Vector s(n);
    double ent = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (inst.t[size_t(i)] == 1) {
        s[i] = 1.0;
      } else {
        s[i] = -w[i];
        ent += w[i] * std::log(w[i]) - w[i];
      }
    }
    return s.dot(kj * s) / (2.0 * lambda * double(n)) + ent;
  };

  // Projected-gradient oracle on the control weights (log-space steps keep
  // positivity), run from a cold start.
  Vector w = Vector::Ones(n);
  double step = 0.05;
  double best = dual_obj(w);
  for (int it = 0; it < 60000; ++it) {
    Vector s(n);
    for (Eigen::Index i = 0; i < n; ++i)
      s[i] = (inst.t[size_t(i)] == 1) ? 1.0 : -w[i];
    const Vector ks = kj * s;
    Vector cand = w;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (inst.t[size_t(i)] == 1) continue;
      const double grad = -ks[i] / (lambda * double(n)) + std::log(w[i]);
      cand[i] = w[i] * std::exp(-step * grad);
    }
    const double val = dual_obj(cand);
    if (val < best) {
      w = cand;
      best = val;
      step *= 1.02;
    } else {
      step *= 0.5;
      if (step < 1e-14) break;
    }
  }

  const double primal_val = dual_obj(w_fit);
  CHECK(primal_val <= best + 1e-5);
  CHECK(primal_val == Approx(best).margin(1e-5));
}

TEST_CASE("weight-CV search: early and late stopping targets") {
  const auto inst = testutil::random_instance(120, 3, 95, 1.6);
  const auto early = fit_rkhs_until_cv(inst.x, inst.t, Kernel::gaussian(0.3), kAtt, 0.5);
  const auto late = fit_rkhs_until_cv(inst.x, inst.t, Kernel::gaussian(0.3), kAtt, 1.2);
  if (early.target_reached) {
    CHECK(early.cv <= 0.5 + 1e-12);
    CHECK(early.cv >= 0.5 - 0.011);
  }
  if (early.target_reached && late.target_reached) {
    // Stopping later means less regularization and a smaller bias bound.
    CHECK(late.lambda <= early.lambda);
    CHECK(rkhs_max_bias(late.fit) <= rkhs_max_bias(early.fit) + 1e-12);
  }
}

TEST_CASE("kernel fit validation") {
  const auto inst = testutil::random_instance(20, 2, 4);
  CHECK_THROWS_AS(fit_rkhs(inst.x, inst.t, Kernel::gaussian(1.0), kAtt, 0.0), ConfigError);
  CHECK_THROWS_AS(fit_rkhs(inst.x, inst.t, Kernel::gaussian(1.0), ScoringRule(0.5, 0.0), 1.0),
                  ConfigError);
  CHECK_THROWS_AS(fit_rkhs(inst.x, std::vector<int>(20, 1), Kernel::gaussian(1.0), kAtt, 1.0),
                  ConfigError);
  // ATE works through the same machinery.
  const auto kf = fit_rkhs(inst.x, inst.t, Kernel::polynomial(2), kAte, 0.8);
  CHECK(kf.converged);
  CHECK(kf.hnorm >= 0.0);
}
