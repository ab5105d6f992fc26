#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbsr/dual_balance.hpp"
#include "cbsr/fit_boost.hpp"
#include "cbsr/fit_kernel.hpp"
#include "cbsr/fit_regularized.hpp"
#include "cbsr/glm_fit.hpp"
#include "cbsr/inference.hpp"
#include "cbsr/simulate.hpp"

namespace cbsr {

// Report builders shared by the CLI and the tests. Keys are emitted in a
// stable order (nlohmann::ordered_json).

using Json = nlohmann::ordered_json;

inline Json rule_json(const ScoringRule& rule) {
  return Json{{"estimand", estimand_name(rule.estimand())},
              {"alpha", rule.alpha()},
              {"beta", rule.beta()}};
}

inline Json vector_json(const Vector& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Json named_coef_json(const Vector& theta, const std::vector<std::string>& names) {
  Json obj = Json::object();
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    obj[names[size_t(i)]] = theta[i];
  return obj;
}

inline Json fit_report(const PropensityFit& fit, const Matrix& design,
                       const std::vector<std::string>& names,
                       const std::vector<int>& t) {
  const Vector resid = balance_residual(fit, design, t);
  return Json{{"fitter", "glm"},
              {"rule", rule_json(fit.rule)},
              {"theta", named_coef_json(fit.theta, names)},
              {"converged", fit.converged},
              {"grad_norm", fit.grad_norm},
              {"iterations", fit.iterations},
              {"balance_residuals", named_coef_json(resid, names)}};
}

inline Json fit_report(const RegularizedFit& fit, const Matrix& design,
                       const std::vector<std::string>& names,
                       const std::vector<int>& t) {
  const ImbalanceBound ib = imbalance_bound(fit, design, t);
  return Json{{"fitter", fit.norm_kind == PenaltyNorm::L1 ? "l1" : "l2"},
              {"rule", rule_json(fit.rule)},
              {"lambda", fit.lambda},
              {"theta", named_coef_json(fit.theta, names)},
              {"converged", fit.converged},
              {"kkt_residual", fit.kkt_residual},
              {"iterations", fit.iterations},
              {"imbalance", named_coef_json(ib.measured, names)},
              {"imbalance_bound", named_coef_json(ib.bound, names)},
              {"max_bias", ib.max_bias}};
}

inline Json fit_report(const KernelFit& fit) {
  return Json{{"fitter", "rkhs"},
              {"rule", rule_json(fit.rule)},
              {"kernel", fit.kernel.label()},
              {"lambda", fit.lambda},
              {"hnorm", fit.hnorm},
              {"max_bias", rkhs_max_bias(fit)},
              {"converged", fit.converged},
              {"grad_norm", fit.grad_norm},
              {"iterations", fit.iterations}};
}

inline Json tree_json(const Tree& tree) {
  Json nodes = Json::array();
  for (const auto& nd : tree.nodes) {
    if (nd.feature < 0)
      nodes.push_back(Json{{"leaf", nd.value}});
    else
      nodes.push_back(Json{{"feature", nd.feature},
                           {"threshold", nd.threshold},
                           {"left", nd.left},
                           {"right", nd.right}});
  }
  return nodes;
}

inline Json ensemble_json(const TreeEnsemble& ens) {
  Json trees = Json::array();
  for (const auto& tr : ens.trees) trees.push_back(tree_json(tr));
  return Json{{"fitter", "boost"},
              {"rule", rule_json(ens.rule)},
              {"f0", ens.f0},
              {"nu", ens.nu},
              {"depth", ens.depth},
              {"skipped", ens.skipped},
              {"etas", ens.etas},
              {"trees", trees}};
}

inline Tree tree_from_json(const Json& j) {
  Tree tree;
  for (const auto& nd : j) {
    TreeNode node;
    if (nd.contains("leaf")) {
      node.value = nd["leaf"].get<double>();
    } else {
      node.feature = nd["feature"].get<int>();
      node.threshold = nd["threshold"].get<double>();
      node.left = nd["left"].get<int>();
      node.right = nd["right"].get<int>();
    }
    tree.nodes.push_back(node);
  }
  return tree;
}

inline TreeEnsemble ensemble_from_json(const Json& j) {
  TreeEnsemble ens;
  ens.rule = ScoringRule(j["rule"]["alpha"].get<double>(), j["rule"]["beta"].get<double>());
  ens.f0 = j["f0"].get<double>();
  ens.nu = j["nu"].get<double>();
  ens.depth = j["depth"].get<int>();
  ens.skipped = j["skipped"].get<int>();
  ens.etas = j["etas"].get<std::vector<double>>();
  for (const auto& tj : j["trees"]) ens.trees.push_back(tree_from_json(tj));
  return ens;
}

inline Json path_json(const std::vector<PathPoint>& path,
                      const std::vector<std::string>& names) {
  Json arr = Json::array();
  for (const auto& pp : path)
    arr.push_back(Json{{"lambda", pp.lambda},
                       {"theta", named_coef_json(pp.fit.theta, names)},
                       {"weight_cv", pp.weight_cv},
                       {"max_bias", pp.max_bias},
                       {"kkt_residual", pp.fit.kkt_residual}});
  return arr;
}

inline std::string balance_csv(const BalanceReport& rep) {
  std::string out = "feature,std_diff_pct,weighted_ks\n";
  char buf[256];
  for (size_t k = 0; k < rep.feature_names.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g\n", rep.feature_names[k].c_str(),
                  rep.std_diff_pct[k], rep.ks[k]);
    out += buf;
  }
  return out;
}

inline Json balance_json(const BalanceReport& rep) {
  Json feats = Json::array();
  for (size_t k = 0; k < rep.feature_names.size(); ++k)
    feats.push_back(Json{{"feature", rep.feature_names[k]},
                         {"std_diff_pct", rep.std_diff_pct[k]},
                         {"weighted_ks", rep.ks[k]}});
  Json out{{"features", feats}, {"max_abs_imbalance", rep.max_abs_imbalance}};
  if (rep.dual_gap) out["dual_gap"] = *rep.dual_gap;
  return out;
}

inline Json ci_json(const HonestCI& ci) {
  return Json{{"center", ci.center},
              {"half_width_bias", ci.half_bias},
              {"half_width_noise", ci.half_noise},
              {"lo", ci.lo()},
              {"hi", ci.hi()},
              {"level", ci.level},
              {"norm_cl_mode", ci.norm_cl_mode}};
}

inline Json estimate_json(const EffectEstimate& est) {
  return Json{{"tau_hat", est.tau_hat},
              {"normalized", est.normalized},
              {"estimand", estimand_name(est.provenance.rule.estimand())},
              {"weights_from", est.provenance.fitter},
              {"lambda", est.provenance.lambda},
              {"w_l2", est.w_l2},
              {"n", est.n}};
}

inline Json metrics_json(const CellMetrics& m) {
  return Json{{"replicates", m.replicates},
              {"failures", m.failures},
              {"flagged", m.flagged},
              {"rmse", m.rmse},
              {"abs_bias", m.abs_bias},
              {"mean_abs_err", m.mean_abs_err},
              {"mean_max_bias", m.mean_max_bias},
              {"cover_naive", m.cover_naive},
              {"cover_honest", m.cover_honest},
              {"ci_ratio", m.ci_ratio}};
}

inline std::string metrics_csv_header() {
  return "design,method,estimand,replicates,failures,rmse,abs_bias,mean_abs_err,"
         "mean_max_bias,cover_naive,cover_honest,ci_ratio";
}

inline std::string metrics_csv_row(const std::string& design, const std::string& method,
                                   const std::string& estimand, const CellMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%s,%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                design.c_str(), method.c_str(), estimand.c_str(), m.replicates,
                m.failures, m.rmse, m.abs_bias, m.mean_abs_err, m.mean_max_bias,
                m.cover_naive, m.cover_honest, m.ci_ratio);
  return buf;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("write_text: cannot open '" + path + "' for writing");
  out << text;
}

}  // namespace cbsr
