#include <catch2/catch.hpp>

#include <cstdlib>
#include <memory>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cbsr/simulate.hpp"
#include "support/test_util.hpp"

#ifndef CBSR_CLI_PATH
#error "CBSR_CLI_PATH must point at the built binary"
#endif

namespace {

using Json = nlohmann::json;

struct CliResult {
  int exit_code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  testutil::TempFile out("cli_stdout.txt");
  const std::string cmd =
      std::string(CBSR_CLI_PATH) + " " + args + " > " + out.path + " 2>&1";
  const int status = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out.path);
  std::stringstream ss;
  ss << in.rdbuf();
  res.output = ss.str();
  return res;
}

std::string make_toy_csv(const std::string& name, std::uint64_t seed, int n = 120,
                         bool with_outcome = true) {
  auto inst = testutil::random_instance(n, 3, seed);
  std::optional<cbsr::Vector> y;
  if (with_outcome) {
    cbsr::Rng rng(seed + 1);
    cbsr::Vector yy(n);
    for (int i = 0; i < n; ++i)
      yy[i] = 1.0 + inst.x(i, 0) + 0.5 * rng.normal() + double(inst.t[size_t(i)]);
    y = yy;
  }
  const cbsr::Dataset ds(inst.x, inst.t, y);
  static std::vector<std::unique_ptr<testutil::TempFile>> keep;
  keep.push_back(std::make_unique<testutil::TempFile>(name));
  cbsr::save_csv(ds, keep.back()->path);
  return keep.back()->path;
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  Json j;
  in >> j;
  return j;
}

}  // namespace

TEST_CASE("cli fit: report fields and exact balance") {
  const std::string csv = make_toy_csv("fit.csv", 11);
  testutil::TempFile rep("fit_report.json");
  const auto res = run_cli("fit --input " + csv +
                           " --treatment-col t --outcome-col y --estimand att "
                           "--fitter glm --out " +
                           rep.path);
  REQUIRE(res.exit_code == 0);
  const Json j = read_json(rep.path);
  CHECK(j["command"] == "fit");
  CHECK(j["config"]["estimand"] == "att");
  CHECK(j["fit"]["converged"] == true);
  for (const auto& [key, val] : j["fit"]["balance_residuals"].items())
    CHECK(std::abs(val.get<double>()) <= 1e-6);
}

TEST_CASE("cli exit codes: io, config, numeric") {
  CHECK(run_cli("fit --input /nonexistent.csv --treatment-col t").exit_code == 3);
  CHECK(run_cli("fit").exit_code == 2);
  CHECK(run_cli("frobnicate").exit_code == 2);

  const std::string csv = make_toy_csv("codes.csv", 12);
  CHECK(run_cli("fit --input " + csv + " --estimand bogus").exit_code == 2);
  CHECK(run_cli("fit --input " + csv + " --no-such-flag 1").exit_code == 2);

  // Treatment outside {0,1}.
  testutil::TempFile bad("bad_t.csv");
  {
    std::ofstream out(bad.path);
    out << "t,x1\n0,1\n1,2\n2,3\n";
  }
  const auto res = run_cli("fit --input " + bad.path + " --treatment-col t");
  CHECK(res.exit_code == 3);
  CHECK(Json::parse(res.output)["error"]["type"] == "io");

  // Separated data give the numeric exit code and a machine-readable type.
  testutil::TempFile sep("sep.csv");
  {
    std::ofstream out(sep.path);
    out << "t,x1\n0,-1\n0,-2\n1,1\n1,2\n0,-3\n1,3\n0,-1.5\n1,1.5\n0,-2.5\n1,2.5\n";
  }
  const auto res2 =
      run_cli("fit --input " + sep.path + " --treatment-col t --estimand ate");
  CHECK(res2.exit_code == 4);
  CHECK(Json::parse(res2.output)["error"]["type"] == "separated");
}

TEST_CASE("cli fit: rkhs report carries hnorm and max_bias") {
  const std::string csv = make_toy_csv("rkhs.csv", 13);
  testutil::TempFile rep("rkhs_report.json");
  const auto res = run_cli("fit --input " + csv +
                           " --treatment-col t --outcome-col y --estimand ate "
                           "--fitter rkhs --kernel laplace --sigma 0.1 "
                           "--lambda 0.5 --out " +
                           rep.path);
  REQUIRE(res.exit_code == 0);
  const Json j = read_json(rep.path);
  CHECK(j["fit"].contains("hnorm"));
  CHECK(j["fit"].contains("max_bias"));
  CHECK(j["fit"]["max_bias"].get<double>() ==
        Approx(0.5 * j["fit"]["hnorm"].get<double>()));
}

TEST_CASE("cli estimate: intervals and config validation") {
  const std::string csv = make_toy_csv("est.csv", 14);
  testutil::TempFile rep("est_report.json");
  const auto res = run_cli("estimate --input " + csv +
                           " --treatment-col t --outcome-col y --estimand att "
                           "--fitter l2 --lambda 0.1 --norm-cl 1.0 --out " +
                           rep.path);
  REQUIRE(res.exit_code == 0);
  const Json j = read_json(rep.path);
  CHECK(std::isfinite(j["estimate"]["tau_hat"].get<double>()));
  const double nlo = j["naive_ci"]["lo"], nhi = j["naive_ci"]["hi"];
  const double hlo = j["honest_ci"]["lo"], hhi = j["honest_ci"]["hi"];
  CHECK(hlo <= nlo);
  CHECK(hhi >= nhi);

  // --aipw without an outcome model is a config error.
  CHECK(run_cli("estimate --input " + csv +
                " --treatment-col t --outcome-col y --aipw")
            .exit_code == 2);
  // estimate requires the outcome column.
  CHECK(run_cli("estimate --input " + csv + " --treatment-col t").exit_code == 2);

  // AIPW with a ridge outcome model works end to end.
  const auto res2 = run_cli("estimate --input " + csv +
                            " --treatment-col t --outcome-col y --estimand att "
                            "--fitter glm --aipw --outcome-model ridge:1.0 --out " +
                            rep.path);
  CHECK(res2.exit_code == 0);
  CHECK(read_json(rep.path)["estimate"]["weights_from"] == "glm+aipw");
}

TEST_CASE("cli weights and diagnose") {
  const std::string csv = make_toy_csv("wts.csv", 15);
  testutil::TempFile rep("weights.json");
  const auto res = run_cli("weights --input " + csv +
                           " --treatment-col t --outcome-col y --estimand att --out " +
                           rep.path);
  REQUIRE(res.exit_code == 0);
  const Json j = read_json(rep.path);
  REQUIRE(j["weights"].is_array());
  double sums[2] = {0.0, 0.0};
  for (const auto& row : j["weights"])
    sums[row["t"].get<int>()] += row["w_normalized"].get<double>();
  CHECK(sums[0] == Approx(1.0).margin(1e-9));
  CHECK(sums[1] == Approx(1.0).margin(1e-9));

  testutil::TempFile diag("diag.json");
  const auto res2 = run_cli("diagnose --input " + csv +
                            " --treatment-col t --outcome-col y --estimand ate --out " +
                            diag.path);
  REQUIRE(res2.exit_code == 0);
  const Json dj = read_json(diag.path);
  CHECK(dj["balance"]["features"].size() == 3);
  CHECK(dj["balance"]["max_abs_imbalance"].get<double>() <= 1e-8);
}

TEST_CASE("cli fit: lambda-grid path report") {
  const std::string csv = make_toy_csv("path.csv", 21);
  testutil::TempFile rep("path_report.json");
  const auto res = run_cli("fit --input " + csv +
                           " --treatment-col t --outcome-col y --estimand ate "
                           "--fitter l2 --lambda-grid 0.05,0.2,0.8 --out " +
                           rep.path);
  REQUIRE(res.exit_code == 0);
  const Json j = read_json(rep.path);
  REQUIRE(j["path"].size() == 3);
  double prev = -1.0;
  for (const auto& pp : j["path"]) {
    CHECK(pp["max_bias"].get<double>() > prev);  // monotone along the grid
    prev = pp["max_bias"].get<double>();
    CHECK(pp.contains("weight_cv"));
    CHECK(pp.contains("theta"));
  }
  // An unsorted grid is a config error, as is a non-penalized fitter.
  CHECK(run_cli("fit --input " + csv +
                " --treatment-col t --outcome-col y --fitter l2 --lambda-grid 1,0.1")
            .exit_code == 2);
  CHECK(run_cli("fit --input " + csv +
                " --treatment-col t --outcome-col y --fitter glm --lambda-grid 0.1,1")
            .exit_code == 2);
}

TEST_CASE("cli diagnose: balance CSV") {
  const std::string csv = make_toy_csv("diagcsv.csv", 22);
  testutil::TempFile rep("diag2.json"), bal("balance.csv");
  const auto res = run_cli("diagnose --input " + csv +
                           " --treatment-col t --outcome-col y --estimand att "
                           "--fitter l2 --lambda 0.2 --out " + rep.path +
                           " --csv " + bal.path);
  REQUIRE(res.exit_code == 0);
  std::ifstream in(bal.path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "feature,std_diff_pct,weighted_ks");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("cli simulate: determinism and the simulate-then-estimate pipeline") {
  testutil::TempFile csv1("sim1.csv"), csv2("sim2.csv"), js("sim.json"), rep0("rep0.csv"),
      est("est_pipe.json");

  const std::string base =
      "simulate --design highdim --n 120 --d 8 --rho 1 --s-t 4 --s-y 4 "
      "--replicates 4 --fitter l2 --estimand att --cv-target 1.0 --seed 99";
  REQUIRE(run_cli(base + " --out " + csv1.path).exit_code == 0);
  REQUIRE(run_cli(base + " --out " + csv2.path).exit_code == 0);
  {
    std::ifstream a(csv1.path), b(csv2.path);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().find("highdim,l2,att,4,0,") != std::string::npos);
  }

  REQUIRE(run_cli(base + " --out " + csv1.path + " --json " + js.path +
                  " --per-replicate --emit-data " + rep0.path + " --emit-replicate 2")
              .exit_code == 0);
  const Json sim = read_json(js.path);
  const Json r2 = sim["replicates"][2];
  REQUIRE(r2["ok"] == true);

  // Re-estimate the emitted replicate through the estimate subcommand with
  // the oracle inputs echoed from the simulation record.
  std::ostringstream cmd;
  cmd << "estimate --input " << rep0.path
      << " --treatment-col t --outcome-col y --estimand att --fitter l2 "
         "--cv-target 1.0 --norm-cl "
      << r2["norm_cl"].get<double>() << " --sigma-hat " << r2["sigma"].get<double>()
      << " --out " << est.path;
  REQUIRE(run_cli(cmd.str()).exit_code == 0);
  const Json ej = read_json(est.path);
  CHECK(ej["estimate"]["tau_hat"].get<double>() ==
        Approx(r2["tau_hat"].get<double>()).margin(1e-9));
  CHECK(ej["honest_ci"]["lo"].get<double>() ==
        Approx(r2["honest_ci"]["lo"].get<double>()).margin(1e-9));
  CHECK(ej["honest_ci"]["hi"].get<double>() ==
        Approx(r2["honest_ci"]["hi"].get<double>()).margin(1e-9));
}
