#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "cbsr/glm_fit.hpp"
#include "cbsr/scoring.hpp"

namespace cbsr {

// Gradient boosting of the tailored score with depth-limited regression
// trees. Each iteration fits a tree to the per-unit score gradients
// g_i = dS/df(f_i, T_i) = (2T_i - 1) w_i, takes a 1-D line search along the
// tree, and applies the shrunk update f <- f + nu * eta_hat * h.
//
// Splits are found by exhaustive search over midpoint thresholds of sorted
// distinct feature values, maximizing the centered gradient imbalance of the
// indicator |sum_{left} g - (n_left/n_node) sum_node g|. At the boosting
// start the total gradient is zero (f0 solves the intercept problem), so the
// first stump is exactly the most imbalanced one among all (feature,
// threshold) indicators. Leaf values are mean gradients.

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1;
  int right = -1;
};

struct Tree {
  std::vector<TreeNode> nodes;

  bool is_leaf_only() const { return nodes.size() == 1 && nodes[0].feature < 0; }

  double predict_row(const Eigen::Ref<const Vector>& xrow) const {
    int k = 0;
    while (nodes[size_t(k)].feature >= 0) {
      const TreeNode& nd = nodes[size_t(k)];
      k = (xrow[nd.feature] <= nd.threshold) ? nd.left : nd.right;
    }
    return nodes[size_t(k)].value;
  }

  Vector predict(const Matrix& x) const {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = predict_row(x.row(i));
    return out;
  }
};

struct TreeEnsemble {
  double f0 = 0.0;
  double nu = 1.0;
  int depth = 1;
  ScoringRule rule{0.0, 0.0};
  std::vector<Tree> trees;
  std::vector<double> etas;  // line-search steps, pre-shrinkage
  int skipped = 0;           // degenerate iterations
  Vector fitted_f;           // on the training sample
  Vector fitted_p;
  int stopped_at = -1;       // iteration where the CV stop rule fired, if any

  Vector predict(const Matrix& x) const {
    Vector f = Vector::Constant(x.rows(), f0);
    for (size_t m = 0; m < trees.size(); ++m) f += nu * etas[m] * trees[m].predict(x);
    return f;
  }
};

namespace detail {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double criterion = 0.0;
};

// Best split of `idx` by centered gradient imbalance; deterministic
// tie-break: first feature, then smallest threshold (strict improvement).
inline SplitChoice best_split(const Matrix& x, const Vector& g,
                              const std::vector<Eigen::Index>& idx) {
  SplitChoice best;
  const size_t n = idx.size();
  if (n < 2) return best;
  double gtot = 0.0;
  for (auto i : idx) gtot += g[i];

  std::vector<Eigen::Index> order(idx);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return x(a, j) < x(b, j); });
    double gleft = 0.0;
    for (size_t k = 0; k + 1 < n; ++k) {
      gleft += g[order[k]];
      const double lo = x(order[k], j), hi = x(order[k + 1], j);
      if (lo == hi) continue;
      const double crit = std::abs(gleft - (double(k + 1) / double(n)) * gtot);
      if (crit > best.criterion) {
        best.found = true;
        best.feature = int(j);
        best.threshold = 0.5 * (lo + hi);
        best.criterion = crit;
      }
    }
  }
  if (best.criterion <= 0.0) best.found = false;
  return best;
}

inline int grow_tree(Tree& tree, const Matrix& x, const Vector& g,
                     std::vector<Eigen::Index>& idx, int depth_left) {
  double mean = 0.0;
  for (auto i : idx) mean += g[i];
  mean /= double(idx.size());

  const SplitChoice sc = (depth_left > 0) ? best_split(x, g, idx) : SplitChoice{};
  const int self = int(tree.nodes.size());
  tree.nodes.push_back(TreeNode{});
  if (!sc.found) {
    tree.nodes[size_t(self)].value = mean;
    return self;
  }
  std::vector<Eigen::Index> left, right;
  for (auto i : idx) (x(i, sc.feature) <= sc.threshold ? left : right).push_back(i);
  tree.nodes[size_t(self)].feature = sc.feature;
  tree.nodes[size_t(self)].threshold = sc.threshold;
  const int l = grow_tree(tree, x, g, left, depth_left - 1);
  const int r = grow_tree(tree, x, g, right, depth_left - 1);
  tree.nodes[size_t(self)].left = l;
  tree.nodes[size_t(self)].right = r;
  return self;
}

inline Tree fit_gradient_tree(const Matrix& x, const Vector& g, int depth) {
  Tree tree;
  std::vector<Eigen::Index> idx(size_t(x.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index(0));
  grow_tree(tree, x, g, idx, depth);
  return tree;
}

}  // namespace detail

// One-dimensional concave line search: eta_hat = argmax_{eta >= 0} of the
// mean score along f + eta h. Returns 0 when the directional derivative at 0
// is nonpositive; returns the cap when the objective still climbs where the
// predictor saturates. Otherwise the returned eta has |d/d eta| below 1e-8.
inline double line_search(const Vector& f, const Vector& h, const std::vector<int>& t,
                          const ScoringRule& rule) {
  const Eigen::Index n = f.size();
  const double habs = h.cwiseAbs().maxCoeff();
  if (habs <= 0.0) throw ConfigError("line_search: direction is identically zero");
  auto slope = [&](double eta) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      s += score_grad(rule, f[i] + eta * h[i], t[size_t(i)]) * h[i];
    return s / double(n);
  };
  const double s0 = slope(0.0);
  if (s0 <= 0.0) return 0.0;
  const double eta_cap = std::max(0.0, (40.0 - f.cwiseAbs().maxCoeff()) / habs);
  if (eta_cap == 0.0) return 0.0;

  // Bracket the zero of the (decreasing) slope by doubling.
  double lo = 0.0, slo = s0;
  double hi = std::min(1.0, eta_cap);
  double shi = slope(hi);
  while (shi > 0.0 && hi < eta_cap) {
    lo = hi;
    slo = shi;
    hi = std::min(2.0 * hi, eta_cap);
    shi = slope(hi);
  }
  if (shi > 0.0) return eta_cap;  // still ascending at the saturation bound

  // Safeguarded secant/bisection on [lo, hi].
  double eta = hi, seta = shi;
  for (int it = 0; it < 200; ++it) {
    const double denom = slo - seta;
    double cand = (denom != 0.0) ? lo + slo * (eta - lo) / denom : 0.5 * (lo + eta);
    if (!(cand > lo && cand < eta)) cand = 0.5 * (lo + eta);
    const double sc = slope(cand);
    if (std::abs(sc) <= 1e-12 * std::max(1.0, s0)) return cand;
    if (sc > 0.0) {
      lo = cand;
      slo = sc;
    } else {
      eta = cand;
      seta = sc;
    }
    if (eta - lo <= 1e-15 * std::max(1.0, eta)) break;
  }
  return 0.5 * (lo + eta);
}

struct BoostOptions {
  std::optional<double> cv_stop_target;  // stop once weight CV reaches this
};

inline TreeEnsemble fit_boost(const Matrix& x, const std::vector<int>& t,
                              const ScoringRule& rule, int depth, int n_trees,
                              double nu, const BoostOptions& opts = {}) {
  if (depth < 1 || depth > 3) throw ConfigError("fit_boost: depth must be in {1,2,3}");
  if (!(nu > 0.0 && nu <= 1.0)) throw ConfigError("fit_boost: nu must be in (0,1]");
  if (n_trees < 0) throw ConfigError("fit_boost: n_trees must be >= 0");
  detail::check_fit_inputs(x, t, rule, "fit_boost");

  const Eigen::Index n = x.rows();
  TreeEnsemble ens;
  ens.nu = nu;
  ens.depth = depth;
  ens.rule = rule;

  // f0 from the intercept-only score problem.
  const Matrix ones = Matrix::Ones(n, 1);
  ens.f0 = fit_mle_score(ones, t, rule).theta[0];
  Vector f = Vector::Constant(n, ens.f0);

  for (int m = 0; m < n_trees; ++m) {
    Vector g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = score_grad(rule, f[i], t[size_t(i)]);

    if (opts.cv_stop_target) {
      Vector w(n);
      for (Eigen::Index i = 0; i < n; ++i)
        w[i] = weight(rule, link_inv(f[i]), t[size_t(i)]);
      if (group_weight_cv(w, t) >= *opts.cv_stop_target) {
        ens.stopped_at = m;
        break;
      }
    }

    Tree tree = detail::fit_gradient_tree(x, g, depth);
    if (tree.is_leaf_only()) {
      ++ens.skipped;
      continue;
    }
    const Vector h = tree.predict(x);
    if (h.cwiseAbs().maxCoeff() == 0.0) {
      ++ens.skipped;
      continue;
    }
    const double eta = line_search(f, h, t, rule);
    f += nu * eta * h;
    ens.trees.push_back(std::move(tree));
    ens.etas.push_back(eta);
  }

  ens.fitted_f = f;
  ens.fitted_p = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) ens.fitted_p[i] = link_inv(f[i]);
  return ens;
}

inline WeightSet fit_weights(const TreeEnsemble& ens, const std::vector<int>& t) {
  return WeightSet::from_probabilities(ens.rule, ens.fitted_p, t, "boost", 0.0);
}

}  // namespace cbsr
