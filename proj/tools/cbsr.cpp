// Command-line surface for the cbsr library: fit propensity models with
// tailored losses, emit balancing weights and balance diagnostics, estimate
// weighted average treatment effects with honest confidence intervals, and
// run the simulation designs.
//
// Exit codes: 0 success, 2 configuration error, 3 IO/data error, 4 numeric
// error (separation, singular systems, infeasible balance). Failures print a
// machine-readable error object to stdout.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <variant>

#include <CLI11.hpp>

#include "cbsr/cbsr.hpp"
#include "cbsr/report.hpp"

namespace {

using cbsr::Json;
using cbsr::Matrix;
using cbsr::Vector;

struct CommonArgs {
  std::string input;
  std::string treatment_col = "t";
  std::string outcome_col;
  std::string estimand = "att";
  std::string fitter = "glm";
  std::string features = "raw+intercept";
  double lambda = 1.0;
  std::string norm = "l2";
  std::string kernel = "gaussian";
  double sigma = 1.0;
  int degree = 2;
  double nu = 0.1;
  int depth = 1;
  int trees = 200;
  double cv_target = -1.0;
  int k_max = 8;
  double level = 0.95;
  std::uint64_t seed = 1;
  std::string out;
};

cbsr::ScoringRule parse_estimand(const std::string& s) {
  if (s == "ate") return cbsr::ScoringRule::for_estimand(cbsr::Estimand::ATE);
  if (s == "atc") return cbsr::ScoringRule::for_estimand(cbsr::Estimand::ATC);
  if (s == "att") return cbsr::ScoringRule::for_estimand(cbsr::Estimand::ATT);
  if (s == "owate") return cbsr::ScoringRule::for_estimand(cbsr::Estimand::OWATE);
  if (s.rfind("custom:", 0) == 0) {
    double a = 0.0, b = 0.0;
    if (std::sscanf(s.c_str() + 7, "%lf,%lf", &a, &b) != 2)
      throw cbsr::ConfigError("estimand: expected custom:alpha,beta");
    return cbsr::ScoringRule(a, b);
  }
  throw cbsr::ConfigError("estimand: unknown value '" + s + "'");
}

cbsr::FeatureMap parse_features(const std::string& s) {
  if (s == "raw") return cbsr::FeatureMap::raw();
  if (s == "raw+intercept" || s == "intercept") return cbsr::FeatureMap::raw_intercept();
  if (s == "standardized") return cbsr::FeatureMap::standardized();
  if (s.rfind("poly:", 0) == 0) return cbsr::FeatureMap::polynomial(std::atoi(s.c_str() + 5));
  throw cbsr::ConfigError("features: unknown value '" + s + "'");
}

cbsr::Kernel parse_kernel(const CommonArgs& a) {
  if (a.kernel == "gaussian") return cbsr::Kernel::gaussian(a.sigma);
  if (a.kernel == "laplace") return cbsr::Kernel::laplace(a.sigma);
  if (a.kernel == "poly" || a.kernel == "polynomial")
    return cbsr::Kernel::polynomial(a.degree);
  if (a.kernel == "linear") return cbsr::Kernel::linear();
  throw cbsr::ConfigError("kernel: unknown value '" + a.kernel + "'");
}

Json config_echo(const CommonArgs& a) {
  return Json{{"input", a.input},
              {"treatment_col", a.treatment_col},
              {"outcome_col", a.outcome_col},
              {"estimand", a.estimand},
              {"fitter", a.fitter},
              {"features", a.features},
              {"lambda", a.lambda},
              {"norm", a.norm},
              {"kernel", a.kernel},
              {"sigma", a.sigma},
              {"degree", a.degree},
              {"nu", a.nu},
              {"depth", a.depth},
              {"trees", a.trees},
              {"cv_target", a.cv_target},
              {"k_max", a.k_max},
              {"level", a.level},
              {"seed", a.seed}};
}

void add_common_flags(CLI::App* cmd, CommonArgs& a, bool need_input = true) {
  auto* in = cmd->add_option("--input", a.input, "input CSV path");
  if (need_input) in->required();
  cmd->add_option("--treatment-col", a.treatment_col, "treatment column name");
  cmd->add_option("--outcome-col", a.outcome_col, "outcome column name");
  cmd->add_option("--estimand", a.estimand, "ate|att|atc|owate|custom:a,b");
  cmd->add_option("--fitter", a.fitter, "glm|stepwise|l1|l2|rkhs|boost");
  cmd->add_option("--features", a.features, "raw|raw+intercept|poly:q|standardized");
  cmd->add_option("--lambda", a.lambda, "penalty level");
  cmd->add_option("--norm", a.norm, "penalty norm l1|l2");
  cmd->add_option("--kernel", a.kernel, "gaussian|laplace|poly|linear");
  cmd->add_option("--sigma", a.sigma, "kernel rate");
  cmd->add_option("--degree", a.degree, "polynomial degree");
  cmd->add_option("--nu", a.nu, "boosting shrinkage");
  cmd->add_option("--depth", a.depth, "tree depth");
  cmd->add_option("--trees", a.trees, "boosting iterations");
  cmd->add_option("--cv-target", a.cv_target, "weight-CV stopping target (enables search)");
  cmd->add_option("--k-max", a.k_max, "stepwise step budget");
  cmd->add_option("--level", a.level, "confidence level");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--out", a.out, "output path");
}

struct FitBundle {
  cbsr::WeightSet ws;
  Json report;
  double kkt_max_bias = std::numeric_limits<double>::quiet_NaN();
  std::optional<Vector> fitted_f;
  Matrix design;
  std::vector<std::string> names;
};

FitBundle run_fitter(const CommonArgs& a, const cbsr::Dataset& ds) {
  const cbsr::ScoringRule rule = parse_estimand(a.estimand);
  FitBundle fb;

  if (a.fitter == "rkhs") {
    const cbsr::Kernel k = parse_kernel(a);
    cbsr::KernelFit fit;
    if (a.cv_target > 0.0) {
      auto res = cbsr::fit_rkhs_until_cv(ds.x, ds.t, k, rule, a.cv_target);
      fit = std::move(res.fit);
    } else {
      fit = cbsr::fit_rkhs(ds.x, ds.t, k, rule, a.lambda);
    }
    fb.report = cbsr::fit_report(fit);
    fb.ws = cbsr::fit_weights(fit, ds.t);
    fb.kkt_max_bias = cbsr::rkhs_max_bias(fit);
    fb.fitted_f = fit.fitted_f;
    fb.design = ds.x;
    fb.names = ds.names;
    return fb;
  }
  if (a.fitter == "boost") {
    cbsr::TreeEnsemble ens = cbsr::fit_boost(ds.x, ds.t, rule, a.depth, a.trees, a.nu);
    fb.report = cbsr::ensemble_json(ens);
    fb.ws = cbsr::fit_weights(ens, ds.t);
    fb.fitted_f = ens.fitted_f;
    fb.design = ds.x;
    fb.names = ds.names;
    return fb;
  }

  const cbsr::FeatureMap fm = parse_features(a.features);
  fb.design = cbsr::expand(ds, fm);
  fb.names = cbsr::feature_names(ds, fm);

  if (a.fitter == "glm") {
    const cbsr::PropensityFit fit = cbsr::fit_mle_score(fb.design, ds.t, rule);
    fb.report = cbsr::fit_report(fit, fb.design, fb.names, ds.t);
    fb.ws = cbsr::fit_weights(fit, ds.t);
    fb.kkt_max_bias = 0.0;
    fb.fitted_f = fit.fitted_f;
    return fb;
  }
  if (a.fitter == "stepwise") {
    if (!fm.has_intercept())
      throw cbsr::ConfigError("stepwise requires an intercept feature map");
    const cbsr::StepwisePath path =
        cbsr::forward_stepwise(fb.design, ds.t, rule, a.k_max);
    if (path.steps.empty()) throw cbsr::ConfigError("stepwise produced no steps");
    const auto& last = path.steps.back();
    Json steps = Json::array();
    for (const auto& st : path.steps) {
      steps.push_back(Json{{"added_column", st.added_column < 0
                                                ? "(intercept)"
                                                : fb.names[size_t(st.added_column)]},
                           {"objective", st.objective},
                           {"theta", cbsr::named_coef_json(st.full_theta, fb.names)},
                           {"std_diffs", st.std_diffs}});
    }
    fb.report = Json{{"fitter", "stepwise"},
                     {"rule", cbsr::rule_json(rule)},
                     {"stopped_separated", path.stopped_separated},
                     {"steps", steps}};
    Vector p = last.fit.fitted_p;
    fb.ws = cbsr::WeightSet::from_probabilities(rule, p, ds.t, "stepwise");
    fb.kkt_max_bias = 0.0;
    fb.fitted_f = last.fit.fitted_f;
    return fb;
  }
  if (a.fitter == "l1" || a.fitter == "l2") {
    const cbsr::PenaltyNorm norm =
        (a.fitter == "l1" || a.norm == "l1") ? cbsr::PenaltyNorm::L1 : cbsr::PenaltyNorm::L2;
    cbsr::RegularizedFit fit;
    if (a.cv_target > 0.0) {
      auto res = cbsr::fit_until_cv(fb.design, ds.t, rule, norm, a.cv_target);
      fit = std::move(res.fit);
    } else {
      fit = cbsr::fit_penalized(fb.design, ds.t, rule, a.lambda, norm);
    }
    fb.report = cbsr::fit_report(fit, fb.design, fb.names, ds.t);
    fb.kkt_max_bias = cbsr::imbalance_bound(fit, fb.design, ds.t).max_bias;
    fb.ws = cbsr::fit_weights(fit, ds.t);
    fb.fitted_f = fit.fitted_f;
    return fb;
  }
  throw cbsr::ConfigError("fitter: unknown value '" + a.fitter + "'");
}

cbsr::Dataset load_input(const CommonArgs& a) {
  std::optional<std::string> ycol;
  if (!a.outcome_col.empty()) ycol = a.outcome_col;
  return cbsr::load_csv(a.input, a.treatment_col, ycol);
}

void emit(const CommonArgs& a, const Json& j) {
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty())
    std::cout << text;
  else
    cbsr::write_text(a.out, text);
}

int cmd_fit(const CommonArgs& a, const std::string& lambda_grid) {
  const cbsr::Dataset ds = load_input(a);
  Json out{{"command", "fit"}, {"config", config_echo(a)}};

  if (!lambda_grid.empty()) {
    // Penalized path report: per-lambda coefficients, weight CV, max bias.
    if (a.fitter != "l1" && a.fitter != "l2")
      throw cbsr::ConfigError("--lambda-grid needs --fitter l1 or l2");
    std::vector<double> grid;
    std::stringstream ss(lambda_grid);
    std::string tok;
    while (std::getline(ss, tok, ',')) grid.push_back(std::atof(tok.c_str()));
    const cbsr::FeatureMap fm = parse_features(a.features);
    const Matrix design = cbsr::expand(ds, fm);
    const auto names = cbsr::feature_names(ds, fm);
    const auto path = cbsr::lambda_path(
        design, ds.t, parse_estimand(a.estimand), grid,
        a.fitter == "l1" ? cbsr::PenaltyNorm::L1 : cbsr::PenaltyNorm::L2);
    out["path"] = cbsr::path_json(path, names);
    emit(a, out);
    return 0;
  }

  FitBundle fb = run_fitter(a, ds);
  out["fit"] = fb.report;
  emit(a, out);
  return 0;
}

int cmd_weights(const CommonArgs& a) {
  const cbsr::Dataset ds = load_input(a);
  FitBundle fb = run_fitter(a, ds);
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < fb.ws.n(); ++i)
    rows.push_back(Json{{"t", ds.t[size_t(i)]},
                        {"w", fb.ws.w[i]},
                        {"w_normalized", fb.ws.normalized[i]}});
  Json out{{"command", "weights"},
           {"config", config_echo(a)},
           {"provenance", Json{{"fitter", fb.ws.provenance.fitter},
                               {"lambda", fb.ws.provenance.lambda}}},
           {"weights", rows}};
  emit(a, out);
  return 0;
}

int cmd_diagnose(const CommonArgs& a, const std::string& csv_out) {
  const cbsr::Dataset ds = load_input(a);
  FitBundle fb = run_fitter(a, ds);

  // Diagnostics run on the non-constant design columns.
  std::vector<int> keep;
  for (Eigen::Index j = 0; j < fb.design.cols(); ++j)
    if (fb.design.col(j).minCoeff() != fb.design.col(j).maxCoeff()) keep.push_back(int(j));
  Matrix feats(fb.design.rows(), Eigen::Index(keep.size()));
  std::vector<std::string> names;
  for (size_t k = 0; k < keep.size(); ++k) {
    feats.col(Eigen::Index(k)) = fb.design.col(keep[k]);
    names.push_back(fb.names[size_t(keep[k])]);
  }
  const cbsr::BalanceReport rep =
      cbsr::balance_report(feats, names, ds.t, fb.ws, fb.fitted_f);

  std::printf("%-24s %12s %12s\n", "feature", "std diff (%)", "weighted KS");
  for (size_t k = 0; k < rep.feature_names.size(); ++k)
    std::printf("%-24s %12.4f %12.4f\n", rep.feature_names[k].c_str(),
                rep.std_diff_pct[k], rep.ks[k]);
  std::printf("max |imbalance| (normalized weights): %.3e\n", rep.max_abs_imbalance);
  if (rep.dual_gap) std::printf("dual gap: %.3e\n", *rep.dual_gap);

  Json out{{"command", "diagnose"}, {"config", config_echo(a)},
           {"fit", fb.report}, {"balance", cbsr::balance_json(rep)}};
  emit(a, out);
  if (!csv_out.empty()) cbsr::write_text(csv_out, cbsr::balance_csv(rep));
  return 0;
}

struct EstimateArgs {
  bool aipw = false;
  std::string outcome_model;  // "ols" or "ridge:lambda"
  double norm_cl = -1.0;
  std::string norm_cl_mode = "user";  // user|plugin
  double sigma_override = -1.0;
};

int cmd_estimate(const CommonArgs& a, const EstimateArgs& ea) {
  if (a.outcome_col.empty())
    throw cbsr::ConfigError("estimate: --outcome-col is required");
  if (ea.aipw && ea.outcome_model.empty())
    throw cbsr::ConfigError("estimate: --aipw requires --outcome-model (ols or ridge:lambda)");
  const cbsr::Dataset ds = load_input(a);
  FitBundle fb = run_fitter(a, ds);
  const cbsr::ScoringRule rule = parse_estimand(a.estimand);

  std::optional<Vector> ghat;
  cbsr::EffectEstimate est;
  if (ea.aipw) {
    double olambda = 0.0;
    if (ea.outcome_model.rfind("ridge:", 0) == 0)
      olambda = std::atof(ea.outcome_model.c_str() + 6);
    else if (ea.outcome_model != "ols")
      throw cbsr::ConfigError("estimate: unknown outcome model '" + ea.outcome_model + "'");
    const cbsr::Estimand e = rule.estimand();
    if (e != cbsr::Estimand::ATT && e != cbsr::Estimand::ATE)
      throw cbsr::ConfigError("estimate: AIPW is defined for ATT and ATE only");
    std::vector<char> mask0(ds.t.size()), mask1(ds.t.size());
    for (size_t i = 0; i < ds.t.size(); ++i) {
      mask0[i] = ds.t[i] == 0;
      mask1[i] = ds.t[i] == 1;
    }
    const Vector g0 = cbsr::fit_outcome_ridge(ds.x, *ds.y, mask0, olambda);
    if (e == cbsr::Estimand::ATT) {
      est = cbsr::aipw_att(ds, fb.ws, g0);
      ghat = g0;
    } else {
      const Vector g1 = cbsr::fit_outcome_ridge(ds.x, *ds.y, mask1, olambda);
      est = cbsr::aipw_ate(ds, fb.ws, g0, g1);
      Vector gmix(ds.n());
      for (Eigen::Index i = 0; i < ds.n(); ++i)
        gmix[i] = ds.t[size_t(i)] == 1 ? g1[i] : g0[i];
      ghat = gmix;
    }
  } else {
    est = cbsr::ipw_estimate(ds, fb.ws, true);
  }

  const double sig = ea.sigma_override >= 0.0 ? ea.sigma_override
                                              : cbsr::sigma_hat(ds, ghat);
  const cbsr::HonestCI naive = cbsr::naive_ci(est, sig, a.level);

  Json out{{"command", "estimate"}, {"config", config_echo(a)}};
  out["estimate"] = cbsr::estimate_json(est);
  out["sigma_hat"] = sig;
  out["naive_ci"] = cbsr::ci_json(naive);

  // Honest CI needs a norm limit: user-supplied, or the clearly-labeled
  // non-honest ridge plug-in of the outcome-coefficient norm.
  double norm_cl = -1.0;
  std::string mode = ea.norm_cl_mode;
  if (ea.norm_cl >= 0.0) {
    norm_cl = ea.norm_cl;
    mode = "user";
  } else if (ea.norm_cl_mode == "plugin") {
    std::vector<char> all(ds.t.size(), 1);
    const Vector pred = cbsr::fit_outcome_ridge(ds.x, *ds.y, all, 1.0);
    // Recover coefficients through a second pass: norm of the ridge slope.
    Matrix z(ds.n(), ds.d() + 1);
    z.col(0).setOnes();
    z.rightCols(ds.d()) = ds.x;
    Matrix aa = z.transpose() * z;
    for (Eigen::Index j = 1; j <= ds.d(); ++j) aa(j, j) += 1.0;
    const Vector beta = Eigen::LDLT<Matrix>(aa).solve(z.transpose() * *ds.y);
    norm_cl = beta.tail(ds.d()).norm();
    (void)pred;
  }
  if (norm_cl >= 0.0 && std::isfinite(fb.kkt_max_bias)) {
    const double nf = double(ds.n()) / fb.ws.group_sum(1);
    cbsr::HonestCI honest =
        cbsr::honest_ci(est, nf * fb.kkt_max_bias, norm_cl, sig, a.level);
    honest.norm_cl_mode = mode == "plugin" ? "plugin(non-honest)" : mode;
    out["max_bias"] = nf * fb.kkt_max_bias;
    out["norm_cl"] = norm_cl;
    out["honest_ci"] = cbsr::ci_json(honest);
  } else {
    out["honest_ci"] = nullptr;
    out["honest_ci_note"] =
        "honest interval needs --norm-cl (or --norm-cl-mode plugin) and a fitter "
        "with a max-bias bound (glm, stepwise, l1, l2, rkhs)";
  }
  emit(a, out);
  return 0;
}

struct SimulateArgs {
  std::string design = "highdim";
  int n = 1000;
  int d = 100;
  double rho = 1.0;
  int s_t = 5;
  int s_y = 5;
  double noise_sd = 5.0;
  std::string kernel_f = "poly:1";
  std::string kernel_g = "laplace:0.1";
  double f_scale = 1.0;
  double g_scale = 1.0;
  int replicates = 10;
  std::string norm_cl_mode = "oracle";
  double norm_cl_value = 0.0;
  std::string sigma_mode = "oracle";
  std::string outcome_model;
  bool per_replicate = false;
  std::string emit_data;
  int emit_replicate = 0;
  std::string json_out;
};

cbsr::Kernel parse_kernel_spec(const std::string& s) {
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  const double par = colon == std::string::npos ? 1.0 : std::atof(s.c_str() + colon + 1);
  if (kind == "gaussian") return cbsr::Kernel::gaussian(par);
  if (kind == "laplace") return cbsr::Kernel::laplace(par);
  if (kind == "poly" || kind == "polynomial") return cbsr::Kernel::polynomial(int(par));
  if (kind == "linear") return cbsr::Kernel::linear();
  throw cbsr::ConfigError("kernel spec: unknown '" + s + "'");
}

int cmd_simulate(const CommonArgs& a, const SimulateArgs& sa) {
  cbsr::SimSpec spec;
  if (sa.design == "highdim") {
    spec.design = cbsr::SimDesign::Highdim;
    spec.hd = cbsr::HighdimSpec{sa.rho, sa.s_t, sa.s_y, sa.n, sa.d, sa.noise_sd};
  } else if (sa.design == "gp_lowdim") {
    spec.design = cbsr::SimDesign::GpLowdim;
    spec.gp = cbsr::GpLowdimSpec{parse_kernel_spec(sa.kernel_f),
                                 parse_kernel_spec(sa.kernel_g),
                                 sa.noise_sd, sa.n, 5, sa.f_scale, sa.g_scale};
  } else if (sa.design == "kang_schafer") {
    spec.design = cbsr::SimDesign::KangSchafer;
    spec.kang_schafer_n = sa.n;
  } else {
    throw cbsr::ConfigError("simulate: unknown design '" + sa.design + "'");
  }

  cbsr::MethodConfig mc;
  mc.rule = parse_estimand(a.estimand);
  if (a.fitter == "glm") mc.fitter = cbsr::FitterKind::Glm;
  else if (a.fitter == "l2") mc.fitter = cbsr::FitterKind::Ridge;
  else if (a.fitter == "l1") mc.fitter = cbsr::FitterKind::Lasso;
  else if (a.fitter == "rkhs") mc.fitter = cbsr::FitterKind::Rkhs;
  else if (a.fitter == "boost") mc.fitter = cbsr::FitterKind::Boost;
  else if (a.fitter == "oracle-p") mc.fitter = cbsr::FitterKind::OracleTrueP;
  else throw cbsr::ConfigError("simulate: fitter must be glm|l1|l2|rkhs|boost|oracle-p");
  if (a.cv_target > 0.0)
    mc.cv_target = a.cv_target;
  else
    mc.lambda = a.lambda;
  mc.kernel = parse_kernel(a);
  mc.boost_depth = a.depth;
  mc.boost_trees = a.trees;
  mc.boost_nu = a.nu;
  mc.level = a.level;
  if (!sa.outcome_model.empty()) {
    mc.outcome_model = cbsr::OutcomeModel::Ridge;
    mc.outcome_lambda = sa.outcome_model.rfind("ridge:", 0) == 0
                            ? std::atof(sa.outcome_model.c_str() + 6)
                            : 0.0;
  }
  mc.norm_cl_mode = sa.norm_cl_mode == "oracle" ? cbsr::NormClMode::Oracle
                                                : cbsr::NormClMode::Fixed;
  mc.norm_cl_value = sa.norm_cl_value;
  mc.sigma_mode = sa.sigma_mode == "oracle" ? cbsr::SigmaMode::Oracle
                                            : cbsr::SigmaMode::Plugin;

  if (!sa.emit_data.empty()) {
    const std::uint64_t rs = cbsr::Rng::derive_seed(a.seed, std::uint64_t(sa.emit_replicate));
    if (spec.design == cbsr::SimDesign::Highdim) {
      cbsr::save_csv(cbsr::gen_highdim(spec.hd, rs).ds, sa.emit_data);
    } else if (spec.design == cbsr::SimDesign::GpLowdim) {
      cbsr::save_csv(cbsr::gen_gp_lowdim(spec.gp, rs).ds, sa.emit_data);
    } else {
      cbsr::save_csv(cbsr::gen_kang_schafer(spec.kang_schafer_n, rs).ds, sa.emit_data);
    }
  }

  const cbsr::ReplicationRun run =
      cbsr::run_replications(spec, mc, sa.replicates, a.seed);

  const std::string csv = cbsr::metrics_csv_header() + "\n" +
                          cbsr::metrics_csv_row(sa.design, mc.fitter_name(),
                                                a.estimand, run.metrics) + "\n";
  if (a.out.empty())
    std::cout << csv;
  else
    cbsr::write_text(a.out, csv);

  if (!sa.json_out.empty() || sa.per_replicate) {
    Json out{{"command", "simulate"}, {"config", config_echo(a)},
             {"design", sa.design},
             {"design_config",
              Json{{"n", sa.n}, {"d", sa.d}, {"rho", sa.rho}, {"s_t", sa.s_t},
                   {"s_y", sa.s_y}, {"noise_sd", sa.noise_sd},
                   {"kernel_f", sa.kernel_f}, {"kernel_g", sa.kernel_g},
                   {"f_scale", sa.f_scale}, {"g_scale", sa.g_scale},
                   {"replicates", sa.replicates}, {"norm_cl_mode", sa.norm_cl_mode},
                   {"sigma_mode", sa.sigma_mode}, {"outcome_model", sa.outcome_model}}},
             {"metrics", cbsr::metrics_json(run.metrics)}};
    if (sa.per_replicate) {
      Json reps = Json::array();
      for (const auto& rr : run.replicates) {
        Json rj{{"ok", rr.ok}};
        if (rr.ok) {
          rj["tau_hat"] = rr.tau_hat;
          rj["lambda"] = rr.lambda;
          rj["weight_cv"] = rr.weight_cv;
          rj["max_bias"] = rr.max_bias;
          rj["norm_cl"] = rr.norm_cl;
          rj["sigma"] = rr.sigma;
          rj["naive_ci"] = cbsr::ci_json(rr.naive);
          if (std::isfinite(rr.max_bias)) rj["honest_ci"] = cbsr::ci_json(rr.honest);
        } else {
          rj["error"] = rr.error;
        }
        reps.push_back(std::move(rj));
      }
      out["replicates"] = reps;
    }
    const std::string text = out.dump(2) + "\n";
    if (sa.json_out.empty())
      std::cout << text;
    else
      cbsr::write_text(sa.json_out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"covariate balancing propensity scores via tailored loss functions"};
  app.require_subcommand(1);

  CommonArgs fit_args, weights_args, diag_args, est_args, sim_args;
  EstimateArgs extra_est;
  SimulateArgs extra_sim;

  std::string lambda_grid;
  auto* fit = app.add_subcommand("fit", "fit a propensity model, write a fit report");
  add_common_flags(fit, fit_args);
  fit->add_option("--lambda-grid", lambda_grid,
                  "comma-separated ascending grid: emit a penalized path report");

  auto* wts = app.add_subcommand("weights", "fit and emit per-unit balancing weights");
  add_common_flags(wts, weights_args);

  std::string diag_csv;
  auto* diag = app.add_subcommand("diagnose", "fit and report covariate balance");
  add_common_flags(diag, diag_args);
  diag->add_option("--csv", diag_csv, "also write the balance table as CSV");

  auto* est = app.add_subcommand("estimate", "fit, estimate the WATE, report CIs");
  add_common_flags(est, est_args);
  est->add_flag("--aipw", extra_est.aipw, "augment with an outcome regression");
  est->add_option("--outcome-model", extra_est.outcome_model, "ols or ridge:lambda");
  est->add_option("--norm-cl", extra_est.norm_cl,
                  "upper confidence limit on the outcome-function norm");
  est->add_option("--norm-cl-mode", extra_est.norm_cl_mode, "user|plugin");
  est->add_option("--sigma-hat", extra_est.sigma_override, "override the noise SD");

  auto* sim = app.add_subcommand("simulate", "run seeded replications, emit metrics");
  add_common_flags(sim, sim_args, /*need_input=*/false);
  sim->add_option("--design", extra_sim.design, "kang_schafer|gp_lowdim|highdim");
  sim->add_option("--n", extra_sim.n, "sample size per replicate");
  sim->add_option("--d", extra_sim.d, "covariate dimension (highdim)");
  sim->add_option("--rho", extra_sim.rho, "propensity signal strength (highdim)");
  sim->add_option("--s-t", extra_sim.s_t, "propensity sparsity (highdim)");
  sim->add_option("--s-y", extra_sim.s_y, "outcome sparsity (highdim)");
  sim->add_option("--noise-sd", extra_sim.noise_sd, "outcome noise SD");
  sim->add_option("--kernel-f", extra_sim.kernel_f, "propensity GP kernel, kind:par");
  sim->add_option("--kernel-g", extra_sim.kernel_g, "outcome GP kernel, kind:par");
  sim->add_option("--f-scale", extra_sim.f_scale, "propensity GP scale");
  sim->add_option("--g-scale", extra_sim.g_scale, "outcome GP scale");
  sim->add_option("--replicates", extra_sim.replicates, "replicate count");
  sim->add_option("--norm-cl-mode", extra_sim.norm_cl_mode, "oracle|fixed");
  sim->add_option("--norm-cl", extra_sim.norm_cl_value, "fixed norm limit");
  sim->add_option("--sigma-mode", extra_sim.sigma_mode, "oracle|plugin");
  sim->add_option("--outcome-model", extra_sim.outcome_model, "ridge:lambda for AIPW");
  sim->add_flag("--per-replicate", extra_sim.per_replicate, "include per-replicate records");
  sim->add_option("--emit-data", extra_sim.emit_data, "write one replicate's dataset CSV");
  sim->add_option("--emit-replicate", extra_sim.emit_replicate, "replicate index for --emit-data");
  sim->add_option("--json", extra_sim.json_out, "also write a JSON report");

  auto fail = [&](const std::string& type, const std::string& msg, int code) {
    Json err{{"error", Json{{"type", type}, {"message", msg}}}};
    std::cout << err.dump(2) << "\n";
    return code;
  };

  try {
    app.parse(argc, argv);
    if (fit->parsed()) return cmd_fit(fit_args, lambda_grid);
    if (wts->parsed()) return cmd_weights(weights_args);
    if (diag->parsed()) return cmd_diagnose(diag_args, diag_csv);
    if (est->parsed()) return cmd_estimate(est_args, extra_est);
    if (sim->parsed()) return cmd_simulate(sim_args, extra_sim);
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << e.what() << "\n";
    return fail("config", e.what(), 2);
  } catch (const cbsr::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const cbsr::DataError& e) {
    return fail("io", e.what(), 3);
  } catch (const cbsr::SeparatedError& e) {
    return fail("separated", e.what(), 4);
  } catch (const cbsr::SingularHessianError& e) {
    return fail("singular_hessian", e.what(), 4);
  } catch (const cbsr::InfeasibleError& e) {
    return fail("infeasible", e.what(), 4);
  } catch (const cbsr::DomainError& e) {
    return fail("domain", e.what(), 4);
  } catch (const cbsr::Error& e) {
    return fail("numeric", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 4);
  }
}
