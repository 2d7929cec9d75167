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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "safepg/config.hpp"
#include "safepg/harness.hpp"

namespace safepg {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("safepg_test_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.rounds = 8;
  c.num_tasks = 3;
  c.n_traj = 6;
  c.horizon = 40;
  c.extra_traj = 2;
  c.seed = 3;
  return c;
}

TEST(ViolationsUntilSafe, Patterns) {
  EXPECT_EQ(violations_until_safe({{1.0, 1.0, 0.0}}, 10), std::vector<int>{3});
  EXPECT_EQ(violations_until_safe({{0.0, 0.0}}, 10), std::vector<int>{1});
  EXPECT_EQ(violations_until_safe({{}}, 10), std::vector<int>{0});
  EXPECT_EQ(violations_until_safe({{0.0, 0.5}}, 10), std::vector<int>{11});
  EXPECT_EQ(violations_until_safe({{1e-7, 0.0}}, 10), std::vector<int>{1});
}

TEST(Config, EmptyTextGivesDefaults) {
  EXPECT_EQ(parse_config_text("# nothing\n\n"), ExperimentConfig{});
}

TEST(Config, RoundTripsThroughText) {
  ExperimentConfig c = small_config();
  c.domain = Domain::kCartPole;
  c.mode = UpdateMode::kENac;
  c.eta = 0.125;
  c.mu1 = 1.0 / 3.0;
  c.cost_weighting = true;
  EXPECT_EQ(parse_config_text(write_config(c)), c);
}

TEST(Config, ErrorsNameTheLineAndKey) {
  try {
    parse_config_text("rounds = 10\nsigma = abc\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.key(), "sigma");
  }
  EXPECT_THROW(parse_config_text("bogus = 1\n"), ParseError);
  EXPECT_THROW(parse_config_text("k = 2\nk = 3\n"), ParseError);
  EXPECT_THROW(parse_config_text("rounds 10\n"), ParseError);
  EXPECT_THROW(parse_config_text("p = 3\nq = 2\n"), ConfigError);
  EXPECT_THROW(parse_config_text("domain = pendulum\n"), ParseError);
}

TEST(Config, Override) {
  const ExperimentConfig c = with_override(small_config(), "rounds", "50");
  EXPECT_EQ(c.rounds, 50);
  EXPECT_EQ(c.num_tasks, 3);
  EXPECT_THROW(with_override(small_config(), "nope", "1"), ConfigError);
}

TEST(Methods, NamesRoundTrip) {
  for (Method m : {Method::kSafe, Method::kPG, Method::kMtlUnconstrained})
    EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("sgd"), ConfigError);
}

TEST(Run, SafeRunProducesOneRowPerRound) {
  const ExperimentConfig cfg = small_config();
  const RunArtifacts art = run_method(cfg, Method::kSafe);
  ASSERT_EQ(art.rounds.size(), 8u);
  EXPECT_EQ(art.regret.size(), 8u);
  EXPECT_EQ(art.regret_linearized.size(), 8u);
  EXPECT_EQ(art.policy_path.size(), 8u);
  EXPECT_EQ(art.bounds.size(), 8u);
  EXPECT_EQ(art.observations_until_safe.size(), 3u);
  for (const RoundRow& r : art.rounds) {
    EXPECT_LE(r.max_violation, 1e-6);
    EXPECT_GE(r.lambda_min, cfg.p - 1e-6);
    EXPECT_LE(r.lambda_max, cfg.q + 1e-6);
  }
  EXPECT_EQ(art.lemma4_violations, 0);
  for (int i = 0; i < 3; ++i) EXPECT_LE(art.observations_until_safe[i], 1);
}

TEST(Run, SingleRoundSnapshotIsFeasible) {
  ExperimentConfig cfg = small_config();
  cfg.rounds = 1;
  const RunArtifacts art = run_method(cfg, Method::kSafe);
  ASSERT_EQ(art.rounds.size(), 1u);
  const Experiment ex = make_experiment(cfg);
  const ThetaVector th = ThetaVector::from(art.L, art.S, true);
  const FeasibilityReport rep = check_feasible(th, ex.constraints, cfg.p, cfg.q);
  EXPECT_LE(rep.task_violation[art.rounds[0].task_id], 1e-6);
  EXPECT_GE(rep.spectral_low, -1e-6);
  EXPECT_GE(rep.spectral_high, -1e-6);
}

TEST(Run, BaselinesRun) {
  const ExperimentConfig cfg = small_config();
  const RunArtifacts pg = run_method(cfg, Method::kPG);
  EXPECT_EQ(pg.rounds.size(), 8u);
  EXPECT_TRUE(pg.regret_linearized.empty());
  EXPECT_TRUE(pg.bounds.empty());
  const RunArtifacts mtl = run_method(cfg, Method::kMtlUnconstrained);
  EXPECT_EQ(mtl.rounds.size(), 8u);
  EXPECT_EQ(mtl.regret_linearized.size(), 8u);
}

TEST(Artifacts, SchemasAndDeterminism) {
  const ExperimentConfig cfg = small_config();
  const fs::path a = scratch("det_a"), b = scratch("det_b"), p = scratch("det_pg");
  write_artifacts(run_method(cfg, Method::kSafe), a);
  write_artifacts(run_method(cfg, Method::kSafe), b);
  for (const char* f : {"rounds.csv", "regret.csv", "violations.csv", "policy_path.csv",
                        "bounds.csv", "knowledge.csv", "config.echo"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const CsvTable rounds = read_csv(a / "rounds.csv");
  EXPECT_EQ(rounds.header, (std::vector<std::string>{"round", "task_id", "loss", "avg_cost",
                                                      "max_violation", "lambda_min_LtL",
                                                      "lambda_max_LtL"}));
  EXPECT_EQ(rounds.rows.size(), 8u);
  const CsvTable regret = read_csv(a / "regret.csv");
  EXPECT_EQ(regret.header.size(), 7u);
  EXPECT_EQ(regret.header[3], "cum_regret");
  EXPECT_EQ(read_csv(a / "violations.csv").rows.size(), 3u);
  const CsvTable path = read_csv(a / "policy_path.csv");
  const Experiment ex = make_experiment(cfg);
  EXPECT_EQ(path.header.size(), static_cast<std::size_t>(2 + ex.d));
  EXPECT_EQ(read_csv(a / "bounds.csv").column("lemma4_rhs"), 4);
  const std::string echo = slurp(a / "config.echo");
  EXPECT_EQ(parse_config_text(echo), cfg);

  write_artifacts(run_method(cfg, Method::kPG), p);
  EXPECT_FALSE(fs::exists(p / "bounds.csv"));
  EXPECT_EQ(final_regret(p).first, 8);
  EXPECT_THROW(final_regret(p, RegretMeasure::kLinearized), Error);
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(p);
}

TEST(Artifacts, SeedsChangeTheRun) {
  ExperimentConfig c1 = small_config(), c2 = small_config();
  c2.seed = 4;
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  write_artifacts(run_method(c1, Method::kSafe), a);
  write_artifacts(run_method(c2, Method::kSafe), b);
  EXPECT_NE(slurp(a / "rounds.csv"), slurp(b / "rounds.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

void fake_run(const fs::path& dir, const std::vector<double>& cum) {
  fs::create_directories(dir);
  std::ostringstream o;
  o << "round,realized,comparator,cum_regret,realized_linearized,comparator_linearized,"
       "cum_regret_linearized\n";
  for (std::size_t i = 0; i < cum.size(); ++i)
    o << i + 1 << ",0,0," << cum[i] << ",0,0," << 2.0 * cum[i] << '\n';
  write_text(dir / "regret.csv", o.str());
}

TEST(RegretCurve, AveragesRunsWithEqualLength) {
  const fs::path root = scratch("curve");
  fake_run(root / "a", {1.0, 2.0});
  fake_run(root / "b", {1.0, 4.0});
  fake_run(root / "c", {1.0, 2.0, 5.0});
  const auto exact = regret_curve({root / "c", root / "a", root / "b"}, RegretMeasure::kExact);
  ASSERT_EQ(exact.size(), 2u);
  EXPECT_EQ(exact[0], (std::pair<int, double>{2, 3.0}));
  EXPECT_EQ(exact[1], (std::pair<int, double>{3, 5.0}));
  const auto lin = regret_curve({root / "a", root / "b"}, RegretMeasure::kLinearized);
  EXPECT_EQ(lin[0].second, 6.0);
  fs::remove_all(root);
}

}  // namespace
}  // namespace safepg
