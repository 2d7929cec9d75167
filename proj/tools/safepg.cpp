// Copyright 2026 The safepg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: run, sweep, regret-check, project-demo.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "safepg/config.hpp"
#include "safepg/harness.hpp"
#include "safepg/projection.hpp"
#include "safepg/regret.hpp"

namespace fs = std::filesystem;
using namespace safepg;

namespace {

ExperimentConfig load(const std::string& path, std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : parse_config(path);
  if (seed) cfg.seed = *seed;
  validate(cfg);
  return cfg;
}

void run_and_write(const ExperimentConfig& cfg, Method m, const fs::path& out) {
  const RunArtifacts art = run_method(cfg, m);
  write_artifacts(art, out);
  const auto& v = art.observations_until_safe;
  int worst = 0;
  for (int x : v) worst = std::max(worst, x);
  std::printf("%-18s rounds=%d final_cum_regret=%s max_observations_until_safe=%d -> %s\n",
              std::string(method_name(m)).c_str(), cfg.rounds,
              fmt9(art.regret.empty() ? 0.0 : art.regret.back().cum_regret).c_str(), worst,
              out.string().c_str());
}

// Runs the configured method, or every method into subdirectories when the
// config enables baselines and no method is given.
void run_config(const ExperimentConfig& cfg, const std::string& method, const fs::path& out) {
  if (!method.empty()) {
    run_and_write(cfg, parse_method(method), out);
  } else if (cfg.baselines) {
    for (Method m : {Method::kSafe, Method::kPG, Method::kMtlUnconstrained})
      run_and_write(cfg, m, out / std::string(method_name(m)));
  } else {
    run_and_write(cfg, Method::kSafe, out);
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = detail::trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

int project_demo() {
  // Two tasks in a 2-D policy space with a 1-D basis; the unconstrained
  // point violates both boxes.
  const int d = 2, k = 1, T = 2;
  Mat L(d, k);
  L << 2.0, 1.0;
  Mat S(k, T);
  S << 1.5, -1.0;
  const ThetaVector tilde = ThetaVector::from(L, S, false);
  std::vector<SafetyConstraint> cons(T);
  for (int t = 0; t < T; ++t) {
    cons[t].A = Mat::Identity(d, d);
    cons[t].b = Vec::Constant(d, 0.5);
  }
  cons[1].A = -Mat::Identity(d, d);
  const ProjectionParams prm{0.1, 0.1, 0.5, 2.0, 1.0};
  Mat L0(d, k);
  L0 << 1.0, 0.0;
  const ThetaVector anchor = ThetaVector::from(L0, Mat::Zero(k, T), true);

  auto show = [&](const char* label, const ThetaVector& th) {
    const FeasibilityReport rep = check_feasible(th, cons, prm.p, prm.q);
    std::printf("%s\n  L^T L eigenvalues in [%s, %s] (box [%g, %g])\n", label,
                fmt9(rep.lambda_min).c_str(), fmt9(rep.lambda_max).c_str(), prm.p, prm.q);
    for (int t = 0; t < T; ++t) {
      const Vec a = th.L() * th.S().col(t);
      std::printf("  task %d alpha = (%s, %s) violation = %s\n", t, fmt9(a(0)).c_str(),
                  fmt9(a(1)).c_str(), fmt9(rep.task_violation[t]).c_str());
    }
    std::printf("  feasible: %s\n", rep.feasible ? "yes" : "no");
    return rep.feasible;
  };
  show("before projection", tilde);
  const ProjectionResult res = project_constrained(tilde, cons, {0, 1}, prm, anchor);
  const bool ok = show("after projection", res.theta);
  std::printf("  Bregman divergence = %s\n", fmt9(res.divergence).c_str());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe lifelong policy search experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", method;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Config file (defaults if omitted)");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--method", method, "safe | pg | mtl-unconstrained")
      ->check(CLI::IsMember({"safe", "pg", "mtl-unconstrained"}));

  std::string param, values;
  auto* sweep = app.add_subcommand("sweep", "Run one experiment per parameter value");
  sweep->add_option("--config", config_path, "Base config file");
  sweep->add_option("--out", out_dir, "Output root; runs go to OUT/NAME=VALUE");
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--method", method, "safe | pg | mtl-unconstrained")
      ->check(CLI::IsMember({"safe", "pg", "mtl-unconstrained"}));
  sweep->add_option("--param", param, "Config key to vary")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();

  std::vector<std::string> runs;
  double tolerance = 2.0;
  std::string measure = "linearized";
  auto* check = app.add_subcommand("regret-check", "Test a regret sweep for sqrt(R) growth");
  check->add_option("--runs", runs, "Run directories; runs with equal R are averaged")->required()->expected(1, -1);
  check->add_option("--tolerance", tolerance, "Allowed spread of regret/sqrt(R)");
  check->add_option("--measure", measure, "linearized | exact")
      ->check(CLI::IsMember({"linearized", "exact"}));

  auto* demo = app.add_subcommand("project-demo", "Project a small infeasible instance");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) {
      run_config(load(config_path, seed), method, out_dir);
    } else if (*sweep) {
      const ExperimentConfig base = load(config_path, seed);
      for (const std::string& v : split_list(values))
        run_config(with_override(base, param, v), method, fs::path(out_dir) / (param + "=" + v));
    } else if (*check) {
      const auto curve = regret_curve(
          {runs.begin(), runs.end()},
          measure == "exact" ? RegretMeasure::kExact : RegretMeasure::kLinearized);
      for (const auto& [R, reg] : curve)
        std::printf("R=%d mean_regret=%s\n", R, fmt9(reg).c_str());
      const SublinearVerdict v = check_sublinear(curve, tolerance);
      std::printf("%s %s\n", v.pass ? "PASS" : "FAIL", v.report.c_str());
      return v.pass ? 0 : 1;
    } else if (*demo) {
      return project_demo();
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
