#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <string>

#include "cbsr/errors.hpp"
#include "cbsr/mathutil.hpp"

namespace cbsr::opt {

struct NewtonOptions {
  int max_iter = 200;
  int max_backtracks = 60;
  double grad_tol = 1e-13;        // sup-norm target on the (scaled) gradient
  double converged_tol = 1e-10;   // threshold for the reported converged flag
  double jitter0 = 1e-10;         // relative to mean curvature diagonal
  double diverge_sup = 30.0;      // sup-norm bound on the (scaled) iterate
};

struct NewtonResult {
  Vector x;
  double grad_sup = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Damped Newton ascent for a concave objective. The problem object supplies
//   grad(x) -> Vector and neg_hess(x) -> Matrix (PSD).
//
// Steps solve (neg_hess + jitter I) d = grad. Backtracking halves the step
// until the directional derivative at the candidate is nonnegative; for a
// concave objective this guarantees a gain of at least (t/2) * grad'd, i.e.
// monotone ascent with an Armijo-type constant of 1/2, without evaluating the
// objective (whose antiderivative has no closed form for custom rules).
//
// Throws SeparatedError when the iterate runs off to infinity (sup-norm
// beyond opts.diverge_sup in the caller's scaling) or the iteration budget is
// exhausted while the objective is still climbing, and SingularHessianError
// when the Newton system stays unsolvable under escalating jitter.
template <typename Problem>
NewtonResult newton_maximize(Problem& prob, Vector x0, const NewtonOptions& opts,
                             const char* what) {
  NewtonResult res;
  Vector x = std::move(x0);
  Vector g = prob.grad(x);

  for (int it = 0; it < opts.max_iter; ++it) {
    const double gsup = g.cwiseAbs().maxCoeff();
    res.x = x;
    res.grad_sup = gsup;
    res.iterations = it;
    if (gsup <= opts.grad_tol) {
      res.converged = true;
      return res;
    }

    Matrix nh = prob.neg_hess(x);
    const double diag_scale = std::max(nh.diagonal().cwiseAbs().mean(), 1e-300);
    double jitter = 0.0;
    Vector step;
    bool solved = false;
    for (int tries = 0; tries < 8 && !solved; ++tries) {
      Matrix m = nh;
      if (jitter > 0.0) m.diagonal().array() += jitter;
      Eigen::LDLT<Matrix> ldlt(m);
      if (ldlt.info() == Eigen::Success &&
          ldlt.vectorD().minCoeff() > 1e-14 * diag_scale) {
        step = ldlt.solve(g);
        if (step.allFinite()) solved = true;
      }
      jitter = (jitter == 0.0) ? opts.jitter0 * diag_scale : jitter * 100.0;
    }
    if (!solved)
      throw SingularHessianError(std::string(what) +
                                 ": Newton system singular beyond jitter tolerance");

    double tstep = 1.0;
    double t_hi = 0.0, slope_hi = 0.0;
    bool accepted = false;
    Vector cand, gcand;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      cand = x + tstep * step;
      gcand = prob.grad(cand);
      const double slope = gcand.allFinite() ? gcand.dot(step)
                                             : -std::numeric_limits<double>::infinity();
      if (slope >= 0.0) {
        // One secant refinement toward the 1D maximizer when we overshot,
        // then fall back to the guaranteed point if it lands short.
        if (t_hi > tstep && std::isfinite(slope_hi) && slope > slope_hi) {
          const double ts = tstep + slope * (t_hi - tstep) / (slope - slope_hi);
          if (ts > tstep && ts < t_hi) {
            const Vector cs = x + ts * step;
            const Vector gs = prob.grad(cs);
            if (gs.allFinite() && gs.dot(step) >= 0.0) {
              cand = cs;
              gcand = gs;
            }
          }
        }
        accepted = true;
        break;
      }
      t_hi = tstep;
      slope_hi = slope;
      tstep *= 0.5;
    }
    if (!accepted) {
      if (gsup <= 1e-6)
        return res;  // numerically at the optimum, flag carried by caller
      throw SeparatedError(std::string(what) + ": line search stalled far from stationarity");
    }
    x = cand;
    g = gcand;
    if (x.cwiseAbs().maxCoeff() > opts.diverge_sup)
      throw SeparatedError(std::string(what) +
                           ": iterate diverging, no finite maximizer (quasi-separation)");
  }

  res.x = x;
  res.grad_sup = g.cwiseAbs().maxCoeff();
  res.iterations = opts.max_iter;
  res.converged = res.grad_sup <= opts.converged_tol;
  if (!res.converged)
    throw SeparatedError(std::string(what) +
                         ": objective still improving at iteration limit (quasi-separation)");
  return res;
}

}  // namespace cbsr::opt
