#include <catch2/catch.hpp>

#include <Eigen/Dense>

#include "cbsr/dual_balance.hpp"
#include "cbsr/glm_fit.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace cbsr;

namespace {
const ScoringRule kAte = ScoringRule::for_estimand(Estimand::ATE);
const ScoringRule kAtt = ScoringRule::for_estimand(Estimand::ATT);

double entropy_att_objective(const Vector& w, const std::vector<int>& t) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (t[size_t(i)] == 0) s += w[i] * std::log(w[i]);
  return s;
}

double entropy_ate_objective(const Vector& w) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    s += (w[i] - 1.0) * std::log(std::max(w[i] - 1.0, 1e-300)) - w[i];
  return s;
}
}  // namespace

TEST_CASE("weight sets: normalization and validation") {
  const auto inst = testutil::random_instance(60, 3, 5);
  const auto fit = fit_mle_score(inst.design, inst.t, kAte);
  const WeightSet ws = fit_weights(fit, inst.t);

  double sums[2] = {0.0, 0.0};
  for (int i = 0; i < 60; ++i) sums[inst.t[size_t(i)]] += ws.normalized[i];
  CHECK(sums[0] == Approx(1.0).margin(1e-12));
  CHECK(sums[1] == Approx(1.0).margin(1e-12));

  // Inverse probability weights always exceed 1 for the (-1,-1) rule.
  for (int i = 0; i < 60; ++i) CHECK(ws.w[i] > 1.0);

  CHECK_THROWS_AS(WeightSet::from_raw(Vector::Constant(2, -1.0), {0, 1}, {}), ConfigError);
}

TEST_CASE("standardized difference: definition cases") {
  // Two groups with unweighted means 1 and 0 and unit sample variances.
  const double d = 1.0 / std::sqrt(2.0);
  Vector x(4);
  x << 1.0 - d, 1.0 + d, -d, d;
  const std::vector<int> t{1, 1, 0, 0};
  const Vector ones = Vector::Ones(4);
  CHECK(std_diff(x, t, ones) == Approx(100.0).epsilon(1e-12));

  // Identical weighted means give zero.
  Vector x2(4);
  x2 << 2.0, 4.0, 2.0, 4.0;
  CHECK(std_diff(x2, t, ones) == Approx(0.0).margin(1e-12));

  // Zero pooled variance errors with the feature name.
  Vector xc = Vector::Constant(4, 3.0);
  CHECK_THROWS_AS(std_diff(xc, t, ones, "flat"), DataError);
}

TEST_CASE("weighted KS statistic") {
  const std::vector<int> t{1, 1, 0, 0};
  Vector same(4);
  same << 1.0, 2.0, 1.0, 2.0;
  const Vector wn = Vector::Constant(4, 0.5);
  CHECK(weighted_ks(same, t, wn) == Approx(0.0).margin(1e-15));

  Vector disjoint(4);
  disjoint << 1.0, 2.0, 5.0, 6.0;
  CHECK(weighted_ks(disjoint, t, wn) == Approx(1.0).margin(1e-15));

  // Brute force agreement on data with ties and uneven weights.
  cbsr::Rng rng(77);
  const int n = 83;
  Vector x(n), w(n);
  std::vector<int> tt(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    x[i] = std::round(rng.normal() * 3.0) / 3.0;  // induces ties
    tt[size_t(i)] = rng.bernoulli(0.45);
    w[i] = std::exp(0.3 * rng.normal());
  }
  tt[0] = 0;
  tt[1] = 1;
  const WeightSet ws = WeightSet::from_raw(w, tt, {});
  CHECK(weighted_ks(x, tt, ws) ==
        Approx(testutil::brute_force_ks(x, tt, ws.normalized)).margin(1e-12));
}

TEST_CASE("ATT dual: exactly matched groups give uniform weights") {
  cbsr::Rng rng(3);
  const int m = 10;
  Matrix xt(m, 2);
  for (int i = 0; i < m; ++i) {
    xt(i, 0) = rng.normal();
    xt(i, 1) = rng.normal();
  }
  Matrix design(2 * m, 3);
  std::vector<int> t(size_t(2 * m));
  for (int i = 0; i < m; ++i) {
    design(i, 0) = 1.0;
    design.row(i).tail(2) = xt.row(i);
    t[size_t(i)] = 1;
    design(m + i, 0) = 1.0;
    design.row(m + i).tail(2) = xt.row(i);  // control is a copy of treated
    t[size_t(m + i)] = 0;
  }
  const WeightSet ws = solve_dual_att(design, t);
  double csum = 0.0;
  for (int i = 0; i < 2 * m; ++i) {
    if (t[size_t(i)] == 1) {
      CHECK(ws.w[i] == 1.0);
    } else {
      CHECK(ws.w[i] == Approx(1.0).margin(1e-9));
      csum += ws.w[i];
    }
  }
  CHECK(csum == Approx(double(m)).margin(1e-7));
}

TEST_CASE("primal-dual weight equality, ATT and ATE") {
  for (std::uint64_t seed : {11u, 12u, 13u, 14u}) {
    const auto inst = testutil::random_instance(40, 3, seed);
    const auto fit_att = fit_mle_score(inst.design, inst.t, kAtt);
    const WeightSet primal_att = fit_weights(fit_att, inst.t);
    const WeightSet dual_att = solve_dual_att(inst.design, inst.t);
    CHECK((primal_att.w - dual_att.w).cwiseAbs().maxCoeff() <= 1e-6);

    const auto fit_ate = fit_mle_score(inst.design, inst.t, kAte);
    const WeightSet primal_ate = fit_weights(fit_ate, inst.t);
    const WeightSet dual_ate = solve_dual_ate(inst.design, inst.t);
    CHECK((primal_ate.w - dual_ate.w).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("dual solvers match the first-principles entropy oracle") {
  const auto inst = testutil::random_instance(24, 2, 51);
  const WeightSet dual_att = solve_dual_att(inst.design, inst.t);
  const Vector oracle_att = testutil::entropy_att_oracle(inst.design, inst.t);
  CHECK((dual_att.w - oracle_att).cwiseAbs().maxCoeff() <= 1e-4);

  const WeightSet dual_ate = solve_dual_ate(inst.design, inst.t);
  const Vector oracle_ate = testutil::entropy_ate_oracle(inst.design, inst.t);
  CHECK((dual_ate.w - oracle_ate).cwiseAbs().maxCoeff() <= 1e-4);
}

TEST_CASE("ATE dual on a mirror-symmetric design returns w = 2") {
  Matrix design(4, 2);
  design << 1, -1, 1, -1, 1, 1, 1, 1;
  const std::vector<int> t{0, 1, 0, 1};
  const WeightSet ws = solve_dual_ate(design, t);
  for (int i = 0; i < 4; ++i) CHECK(ws.w[i] == Approx(2.0).margin(1e-9));
}

TEST_CASE("ATE dual: constraints, bounds, local optimality") {
  const auto inst = testutil::random_instance(30, 2, 97);
  const WeightSet ws = solve_dual_ate(inst.design, inst.t);
  const Eigen::Index n = 30, m = inst.design.cols();

  for (Eigen::Index i = 0; i < n; ++i) CHECK(ws.w[i] >= 1.0);

  Matrix a(m, n);  // signed constraint matrix
  for (Eigen::Index i = 0; i < n; ++i)
    a.col(i) = (inst.t[size_t(i)] == 1 ? 1.0 : -1.0) * inst.design.row(i).transpose();
  const Vector resid = a * ws.w;
  for (Eigen::Index k = 0; k < m; ++k)
    CHECK(std::abs(resid[k]) / double(n) <= 1e-8 * testutil::column_scale(inst.design, k));

  // Feasible perturbations never improve the dual objective.
  const Eigen::FullPivLU<Matrix> lu(a);
  const Matrix null_basis = lu.kernel();
  REQUIRE(null_basis.cols() > 0);
  cbsr::Rng rng(5);
  const double base = entropy_ate_objective(ws.w);
  for (int rep = 0; rep < 10; ++rep) {
    Vector delta = Vector::Zero(n);
    for (Eigen::Index c = 0; c < null_basis.cols(); ++c)
      delta += rng.normal() * null_basis.col(c);
    delta *= 0.01 / std::max(1e-12, delta.cwiseAbs().maxCoeff());
    Vector cand = ws.w + delta;
    bool ok = true;
    for (Eigen::Index i = 0; i < n; ++i) ok = ok && cand[i] >= 1.0;
    if (!ok) continue;
    CHECK(entropy_ate_objective(cand) >= base - 1e-10);
  }

  // Same local-optimality probe for the ATT dual, over control weights.
  const WeightSet att = solve_dual_att(inst.design, inst.t);
  const double att_base = entropy_att_objective(att.w, inst.t);
  std::vector<Eigen::Index> controls;
  for (Eigen::Index i = 0; i < n; ++i)
    if (inst.t[size_t(i)] == 0) controls.push_back(i);
  Matrix ac(m, Eigen::Index(controls.size()));
  for (size_t c = 0; c < controls.size(); ++c)
    ac.col(Eigen::Index(c)) = inst.design.row(controls[c]).transpose();
  const Matrix nb = Eigen::FullPivLU<Matrix>(ac).kernel();
  for (int rep = 0; rep < 10 && nb.cols() > 0; ++rep) {
    Vector delta = Vector::Zero(Eigen::Index(controls.size()));
    for (Eigen::Index c = 0; c < nb.cols(); ++c) delta += rng.normal() * nb.col(c);
    delta *= 0.01 / std::max(1e-12, delta.cwiseAbs().maxCoeff());
    Vector cand = att.w;
    bool ok = true;
    for (size_t c = 0; c < controls.size(); ++c) {
      cand[controls[c]] += delta[Eigen::Index(c)];
      ok = ok && cand[controls[c]] > 0.0;
    }
    if (!ok) continue;
    CHECK(entropy_att_objective(cand, inst.t) >= att_base - 1e-10);
  }
}

TEST_CASE("dual solvers require intercept and feasibility") {
  Matrix no_intercept(4, 1);
  no_intercept << -1, -1, 1, 1;
  CHECK_THROWS_AS(solve_dual_att(no_intercept, {0, 1, 0, 1}), ConfigError);

  Matrix sep(4, 2);
  sep << 1, -1, 1, -1, 1, 1, 1, 1;
  CHECK_THROWS_AS(solve_dual_att(sep, {0, 0, 1, 1}), InfeasibleError);
  CHECK_THROWS_AS(solve_dual_ate(sep, {0, 0, 1, 1}), InfeasibleError);
}

TEST_CASE("balance report fields") {
  const auto inst = testutil::random_instance(80, 3, 15);
  const auto fit = fit_mle_score(inst.design, inst.t, kAtt);
  const WeightSet ws = fit_weights(fit, inst.t);
  std::vector<std::string> names{"x1", "x2", "x3"};
  const BalanceReport rep = balance_report(inst.x, names, inst.t, ws, fit.fitted_f);
  REQUIRE(rep.std_diff_pct.size() == 3);
  for (double v : rep.std_diff_pct) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1e-6);  // exact balance on the fitted columns
  }
  for (double v : rep.ks) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(rep.max_abs_imbalance <= 1e-10);
  REQUIRE(rep.dual_gap.has_value());
  CHECK(*rep.dual_gap <= 1e-10);
}
