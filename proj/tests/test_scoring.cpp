#include <catch2/catch.hpp>

#include "cbsr/scoring.hpp"

using namespace cbsr;

namespace {
const ScoringRule kAte = ScoringRule::for_estimand(Estimand::ATE);
const ScoringRule kAtc = ScoringRule::for_estimand(Estimand::ATC);
const ScoringRule kAtt = ScoringRule::for_estimand(Estimand::ATT);
const ScoringRule kOwate = ScoringRule::for_estimand(Estimand::OWATE);
const ScoringRule kNamed[4] = {kAte, kAtc, kAtt, kOwate};

double fd_hess(const ScoringRule& rule, double f, int t, double h = 1e-5) {
  return (score_grad(rule, f + h, t) - score_grad(rule, f - h, t)) / (2.0 * h);
}
}  // namespace

TEST_CASE("scoring rule construction and estimand table") {
  CHECK(kAte.alpha() == -1.0);
  CHECK(kAte.beta() == -1.0);
  CHECK(kAtc.estimand() == Estimand::ATC);
  CHECK(kAtt.estimand() == Estimand::ATT);
  CHECK(kOwate.estimand() == Estimand::OWATE);
  CHECK(ScoringRule(0.3, -0.7).estimand() == Estimand::Custom);
  CHECK_THROWS_AS(ScoringRule(1.5, 0.0), ConfigError);
  CHECK_THROWS_AS(ScoringRule(0.0, -1.01), ConfigError);
  CHECK(kAte.in_concave_range());
  CHECK_FALSE(ScoringRule(0.5, 0.5).in_concave_range());
}

TEST_CASE("logistic link and its inverse") {
  CHECK(link(0.5) == 0.0);
  CHECK(link_inv(0.0) == 0.5);
  CHECK_THROWS_AS(link(0.0), DomainError);
  CHECK_THROWS_AS(link(1.0), DomainError);
  CHECK_THROWS_AS(link(-0.2), DomainError);
  CHECK_THROWS_AS(link_inv(std::numeric_limits<double>::infinity()), DomainError);

  // Saturation clamps to [eps, 1-eps].
  CHECK(link_inv(1e4) == 1.0 - 1e-12);
  CHECK(link_inv(-1e4) == 1e-12);

  for (double p : {1e-6, 1e-3, 0.1, 0.25, 0.5, 0.77, 0.999, 1.0 - 1e-7})
    CHECK(link_inv(link(p)) == Approx(p).margin(1e-12));
}

TEST_CASE("weighting functions match the estimand table") {
  CHECK(weight(kAte, 0.25, 1) == Approx(4.0).epsilon(1e-14));          // 1/p
  CHECK(weight(kAte, 0.25, 0) == Approx(4.0 / 3.0).epsilon(1e-14));    // 1/(1-p)
  CHECK(weight(kAtc, 0.25, 1) == Approx(3.0).epsilon(1e-14));          // (1-p)/p
  CHECK(weight(kAtc, 0.25, 0) == Approx(1.0).epsilon(1e-14));
  CHECK(weight(kAtt, 0.25, 1) == Approx(1.0).epsilon(1e-14));
  CHECK(weight(kAtt, 0.25, 0) == Approx(1.0 / 3.0).epsilon(1e-14));    // p/(1-p)
  CHECK(weight(kOwate, 0.25, 1) == Approx(0.75).epsilon(1e-14));       // 1-p
  CHECK(weight(kOwate, 0.25, 0) == Approx(0.25).epsilon(1e-14));       // p
  CHECK_THROWS_AS(weight(kAte, 0.0, 1), DomainError);

  // Strict positivity inside the clamped range.
  for (double p : {1e-11, 1e-5, 0.5, 1.0 - 1e-5, 1.0 - 1e-11})
    for (int t : {0, 1})
      for (const auto& rule : kNamed) CHECK(weight(rule, p, t) > 0.0);
}

TEST_CASE("score gradients: sign, magnitude, examples") {
  CHECK(score_grad(kAte, 0.0, 1) == Approx(2.0).epsilon(1e-14));
  // d/df S at f=0 for the (0,0) rule: +(1-p) for t=1, -p for t=0.
  CHECK(score_grad(kOwate, 0.0, 1) == Approx(0.5).epsilon(1e-14));
  CHECK(score_grad(kOwate, 0.0, 0) == Approx(-0.5).epsilon(1e-14));

  for (const auto& rule : kNamed) {
    for (double f = -6.0; f <= 6.0; f += 1.0) {
      const double p = link_inv(f);
      CHECK(score_grad(rule, f, 1) == Approx(weight(rule, p, 1)).epsilon(1e-13));
      CHECK(score_grad(rule, f, 0) == Approx(-weight(rule, p, 0)).epsilon(1e-13));
      CHECK(score_grad(rule, f, 1) > 0.0);
      CHECK(score_grad(rule, f, 0) < 0.0);
    }
  }
}

TEST_CASE("score hessians: closed forms vs finite differences") {
  // The (0,-1) rule has a linear t=1 branch (log odds), so zero curvature.
  for (double f : {-3.0, 0.0, 2.5}) CHECK(score_hess(kAtt, f, 1) == 0.0);
  // The (-1,0) rule mirrors it on the t=0 branch.
  for (double f : {-3.0, 0.0, 2.5}) CHECK(score_hess(kAtc, f, 0) == 0.0);

  // Bernoulli-likelihood curvature at f=0 is -p(1-p) = -1/4 for t=1 and t=0.
  CHECK(score_hess(kOwate, 0.0, 1) == Approx(-0.25).epsilon(1e-14));
  CHECK(score_hess(kOwate, 0.0, 0) == Approx(-0.25).epsilon(1e-14));

  CHECK(score_hess(kAte, 0.0, 0) == Approx(fd_hess(kAte, 0.0, 0)).margin(1e-6));

  for (const auto& rule : kNamed)
    for (double f = -6.0; f <= 6.0; f += 1.0)
      for (int t : {0, 1})
        CHECK(score_hess(rule, f, t) == Approx(fd_hess(rule, f, t)).margin(1e-6));
}

TEST_CASE("finite-difference consistency across the full (alpha,beta) square") {
  for (int ia = 0; ia <= 10; ++ia) {
    for (int ib = 0; ib <= 10; ++ib) {
      const ScoringRule rule(-1.0 + 0.2 * ia, -1.0 + 0.2 * ib);
      for (double f = -6.0; f <= 6.0; f += 2.0)
        for (int t : {0, 1})
          CHECK(score_hess(rule, f, t) == Approx(fd_hess(rule, f, t)).margin(1e-6));
    }
  }
}

TEST_CASE("concavity holds on the concave subfamily lattice") {
  // S(l^-1(f), t) is concave in f exactly on [-1,0]^2; the fitters require it.
  for (int ia = 0; ia <= 10; ++ia) {
    for (int ib = 0; ib <= 10; ++ib) {
      const ScoringRule rule(-1.0 + 0.1 * ia, -1.0 + 0.1 * ib);
      REQUIRE(rule.in_concave_range());
      for (double f = -6.0; f <= 6.0; f += 1.0)
        for (int t : {0, 1}) CHECK(score_hess(rule, f, t) <= 1e-15);
    }
  }
  // Outside it, curvature goes positive: Brier score, t=1, small p.
  CHECK(score_hess(ScoringRule(1.0, 1.0), -2.0, 1) > 1e-3);
}

TEST_CASE("reflection symmetry of the family") {
  // S_{a,b}(p,1) = S_{b,a}(1-p,0) up to affine terms; on gradients:
  // grad_{a,b}(f,1) = -grad_{b,a}(-f,0).
  for (double a = -1.0; a <= 1.0; a += 0.5) {
    for (double b = -1.0; b <= 1.0; b += 0.5) {
      const ScoringRule r1(a, b), r2(b, a);
      for (double f = -5.0; f <= 5.0; f += 1.0)
        CHECK(score_grad(r1, f, 1) ==
              Approx(-score_grad(r2, -f, 0)).epsilon(1e-12).margin(1e-300));
    }
  }
}

TEST_CASE("score values: table forms and quadrature agreement") {
  CHECK(score_value(kAte, 0.5, 1) == Approx(-2.0).epsilon(1e-14));
  CHECK(score_value(kOwate, 0.5, 0) == Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(score_value(kAtt, 0.5, 1) == Approx(0.0).margin(1e-14));
  CHECK(score_value(kAtc, 0.5, 1) == Approx(-2.0).epsilon(1e-14));

  // Forcing the numeric route must reproduce the closed forms.
  for (const auto& rule : kNamed)
    for (double p : {0.02, 0.2, 0.5, 0.8, 0.97})
      for (int t : {0, 1})
        CHECK(score_value(rule, p, t, /*force_numeric=*/true) ==
              Approx(score_value(rule, p, t)).margin(1e-8));

  CHECK_THROWS_AS(score_value(kAte, 0.0, 1), DomainError);
}
