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

// Online experiment loop, baselines and CSV persistence.
//
// Random streams are derived from the seed with std::seed_seq so that every
// method sees the same tasks, the same task order and the same per-round
// noise: {seed, 0} generates tasks, {seed, 1} samples the task of each round
// and {seed, 2, round} drives that round's rollouts.

#ifndef SAFEPG_HARNESS_HPP_
#define SAFEPG_HARNESS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "safepg/config.hpp"
#include "safepg/dynamics.hpp"
#include "safepg/errors.hpp"
#include "safepg/lifelong.hpp"
#include "safepg/policy.hpp"
#include "safepg/projection.hpp"
#include "safepg/regret.hpp"
#include "safepg/rollout.hpp"

namespace safepg {

enum class Method { kSafe, kPG, kMtlUnconstrained };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kSafe: return "safe";
    case Method::kPG: return "pg";
    case Method::kMtlUnconstrained: return "mtl-unconstrained";
  }
  return "safe";
}

inline Method parse_method(std::string_view s) {
  if (s == "safe") return Method::kSafe;
  if (s == "pg") return Method::kPG;
  if (s == "mtl-unconstrained") return Method::kMtlUnconstrained;
  throw ConfigError("unknown method '" + std::string(s) +
                    "' (expected safe, pg or mtl-unconstrained)");
}

struct RoundRow {
  int round = 0;
  int task_id = 0;
  double loss = 0.0;      // loss of the played parameters on this round's batch
  double avg_cost = 0.0;  // mean trajectory cost of the batch
  double max_violation = 0.0;  // after the update, over observed tasks
  double lambda_min = std::numeric_limits<double>::quiet_NaN();
  double lambda_max = std::numeric_limits<double>::quiet_NaN();
};

struct PolicyRow {
  int iter = 0;
  int task_id = 0;
  Vec alpha;
};

struct BoundRow {
  int round = 0;
  double grad_norm = 0.0;
  double lemma1_bound = 0.0;
  bool lemma1_checked = false;
  double fhat_norm = 0.0;
  BoundConstants constants;
};

struct RunArtifacts {
  ExperimentConfig config;
  Method method = Method::kSafe;
  std::vector<RoundRow> rounds;
  std::vector<RegretRecord> regret;
  // Same rounds on the losses linearized at the learner's points; empty for
  // per-task learners, which have no shared parameter vector.
  std::vector<RegretRecord> regret_linearized;
  std::vector<int> observations_until_safe;
  std::vector<PolicyRow> policy_path;
  std::vector<BoundRow> bounds;
  // Per task, the constraint violation after each of its observations.
  std::vector<std::vector<double>> violation_trace;
  Mat L;      // final basis (empty for per-task learners)
  Mat S;      // final coefficients
  Mat alphas; // final per-task parameters, one column per task
  RoundHistory history;  // sufficient statistics of every round's batch
  bool comparator_converged = false;
  bool linear_comparator_converged = false;
  int lemma1_violations = 0;
  int lemma4_violations = 0;
};

struct Experiment {
  std::vector<TaskSpec> tasks;
  std::vector<SafetyConstraint> constraints;
  FeatureMap fmap;
  int d = 0;
  int action_dim = 1;
};

inline Experiment make_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  std::seed_seq seq{cfg.seed, std::uint64_t{0}};
  std::mt19937_64 rng(seq);
  TaskGenerationOptions opt;
  opt.sigma = cfg.sigma;
  opt.horizon = cfg.horizon;
  opt.dt = cfg.dt;
  opt.u_max = cfg.u_max;
  opt.constraint_scale = cfg.constraint_scale;
  opt.c_max = cfg.c_max;
  Experiment ex;
  ex.tasks = generate_tasks(cfg.domain, cfg.num_tasks, rng, opt);
  for (const TaskSpec& t : ex.tasks) ex.constraints.push_back(t.constraint);
  ex.fmap = linear_with_bias(state_dim(ex.tasks.front().system));
  ex.action_dim = action_dim(ex.tasks.front().system);
  ex.d = ex.fmap.feature_dim * ex.action_dim;
  return ex;
}

// Observations of each task until its policy is safe from then on: 0 for
// unobserved tasks, rounds + 1 when the last observation is still unsafe.
inline std::vector<int> violations_until_safe(
    const std::vector<std::vector<double>>& trace, int rounds, double tol = 1e-6) {
  std::vector<int> out;
  for (const auto& obs : trace) {
    if (obs.empty()) {
      out.push_back(0);
      continue;
    }
    int last_bad = -1;
    for (int i = 0; i < static_cast<int>(obs.size()); ++i)
      if (obs[i] > tol) last_bad = i;
    out.push_back(last_bad == static_cast<int>(obs.size()) - 1 ? rounds + 1 : last_bad + 2);
  }
  return out;
}

namespace detail {

inline std::mt19937_64 round_rng(std::uint64_t seed, int round) {
  std::seed_seq seq{seed, std::uint64_t{2}, static_cast<std::uint64_t>(round)};
  return std::mt19937_64(seq);
}

inline Vec initial_alpha(const ExperimentConfig& cfg, const TaskSpec& task, int d) {
  if (cfg.lqr_init) return lqr_policy_params(task.system, task.dt);
  return Vec::Zero(d);
}

inline BatchStats batch_stats(const ExperimentConfig& cfg, const Experiment& ex,
                              const std::vector<Trajectory>& batch) {
  const auto w = cfg.cost_weighting ? cost_weights(batch, cfg.cost_beta)
                                    : std::vector<double>{};
  return summarize(batch, ex.fmap, cfg.sigma, ex.action_dim, w);
}

inline void finish_regret(RunArtifacts& art, const Experiment& ex,
                          const RoundHistory& history, const std::vector<double>& realized,
                          const std::vector<ThetaVector>& candidates,
                          const std::vector<LinearizedLoss>& lins = {}) {
  const ExperimentConfig& cfg = art.config;
  ProjectionParams prm{cfg.mu1, cfg.mu2, cfg.p, cfg.q, cfg.c_max};
  ComparatorOptions copt;
  copt.inner_iters = std::max(50, cfg.inner_iters);
  const ComparatorResult comp =
      hindsight_comparator(history, ex.constraints, prm, candidates, copt);
  art.comparator_converged = comp.converged;
  std::vector<int> ids;
  for (const RoundEntry& e : history.rounds) ids.push_back(e.task_id);
  art.regret = empirical_regret(realized, losses_at(comp.theta, history), ids);
  if (!lins.empty()) {
    const LinearComparatorResult lc = linearized_comparator(
        lins, ex.constraints, history.observed(), cfg.p, cfg.q, cfg.c_max, candidates);
    art.linear_comparator_converged = lc.converged;
    art.regret_linearized = linearized_regret(lins, ids, lc.theta);
  }
  art.history = history;
}

}  // namespace detail

// Shared-basis learners: the safe learner projects every round, the
// unconstrained variant keeps the alternating-optimization output.
inline RunArtifacts run_lifelong(const ExperimentConfig& cfg, bool project) {
  const Experiment ex = make_experiment(cfg);
  RunArtifacts art;
  art.config = cfg;
  art.method = project ? Method::kSafe : Method::kMtlUnconstrained;
  art.violation_trace.resize(cfg.num_tasks);

  KnowledgeBase kb = init_knowledge(ex.d, cfg.k, cfg.zeta, cfg.p, cfg.q,
                                    cfg.num_tasks, cfg.mu1, cfg.mu2);
  ThetaVector theta = ThetaVector::from(kb, true);
  const ThetaVector theta_first = theta;
  RoundHistory history{cfg.num_tasks, {}};
  std::vector<double> realized;
  std::vector<ThetaVector> candidates;
  std::vector<LinearizedLoss> lins;
  std::set<int> observed;
  std::vector<bool> warm(cfg.num_tasks, false);
  double max_abs_loss = 0.0;
  const double eta = cfg.eta_value();
  const ProjectionParams prm{cfg.mu1, cfg.mu2, cfg.p, cfg.q, cfg.c_max};

  std::seed_seq sample_seq{cfg.seed, std::uint64_t{1}};
  std::mt19937_64 sampler(sample_seq);
  std::uniform_int_distribution<int> pick(0, cfg.num_tasks - 1);

  for (int j = 1; j <= cfg.rounds; ++j) {
    const int t = pick(sampler);
    const TaskSpec& task = ex.tasks[t];
    std::mt19937_64 rng = detail::round_rng(cfg.seed, j);

    // The first visit may use an LQR warm start instead of alpha = L * 0.
    const bool first_visit = !observed.count(t);
    Vec alpha = theta.L() * theta.S().col(t);
    if (first_visit && cfg.lqr_init) alpha = detail::initial_alpha(cfg, task, ex.d);
    const GaussianPolicy policy{alpha, cfg.sigma, ex.action_dim};
    const auto batch = rollout_batch(task, policy, ex.fmap, cfg.n_traj, rng);
    const BatchStats st = detail::batch_stats(cfg, ex, batch);

    // Bound checks at the played point.
    const double loss = task_loss(st, alpha);
    max_abs_loss = std::max(max_abs_loss, std::abs(loss));
    std::vector<const SafetyConstraint*> seen;
    for (int o : observed) seen.push_back(&ex.constraints[o]);
    BoundRow br;
    br.round = j;
    const Vec g = grad_alpha_loss(st, alpha);
    br.grad_norm = g.norm();
    br.lemma1_checked = check_feasible(theta, ex.constraints, cfg.p, cfg.q).feasible &&
                        !(first_visit && cfg.lqr_init);
    br.lemma1_bound = lemma1_grad_bound(task, seen, cfg.c_max, st.u_max, st.phi_max).value;
    if (br.lemma1_checked && br.grad_norm > br.lemma1_bound * (1.0 + 1e-9))
      ++art.lemma1_violations;
    lins.push_back(linearize_loss(
        [&](const ThetaVector& th) { return round_loss_and_grad(st, t, th); }, theta));
    if (!(first_visit && cfg.lqr_init)) {
      br.fhat_norm = lins.back().fhat.norm();
    } else {
      br.fhat_norm = std::sqrt(g.squaredNorm() + loss * loss);
    }
    br.constants = bound_constants(st, seen, ex.d, cfg.p, cfg.q, cfg.c_max, 1.5 * max_abs_loss);
    if (br.fhat_norm > br.constants.lemma4_rhs) ++art.lemma4_violations;
    art.bounds.push_back(br);
    realized.push_back(loss);

    // Update: unconstrained fit, then projection.
    history.add(t, st, eta);
    observed.insert(t);
    kb.L = theta.L();
    kb.S = theta.S();
    const AlternatingResult fit =
        alternating_optimize(kb, history, cfg.inner_iters, cfg.mode, cfg.rate_c);
    ThetaVector tilde = ThetaVector::from(fit.kb, false);
    if (project) {
      try {
        theta = project_constrained(tilde, ex.constraints, observed, prm, theta).theta;
      } catch (const Error& e) {
        throw Error("round " + std::to_string(j) + ": " + e.what());
      }
    } else {
      theta = tilde;
    }
    if (j == 1) candidates.push_back(project ? theta : theta_first);

    RoundRow row;
    row.round = j;
    row.task_id = t;
    row.loss = loss;
    row.avg_cost = mean_cost(batch);
    const FeasibilityReport rep = check_feasible(theta, ex.constraints, cfg.p, cfg.q);
    row.max_violation = -std::numeric_limits<double>::infinity();
    for (int o : observed) row.max_violation = std::max(row.max_violation, rep.task_violation[o]);
    row.lambda_min = rep.lambda_min;
    row.lambda_max = rep.lambda_max;
    art.rounds.push_back(row);
    art.violation_trace[t].push_back(rep.task_violation[t]);
    art.policy_path.push_back({j, t, theta.L() * theta.S().col(t)});
    warm[t] = true;
  }
  art.L = theta.L();
  art.S = theta.S();
  art.alphas = art.L * art.S;
  art.observations_until_safe = violations_until_safe(art.violation_trace, cfg.rounds);

  // The comparator lives in the safe set; unconstrained end points are
  // projected before they are used as starting candidates.
  ThetaVector final_point = theta;
  if (!project)
    final_point = project_constrained(theta, ex.constraints, observed, prm, theta_first).theta;
  candidates.insert(candidates.begin(), final_point);
  if (!project) candidates.back() = theta_first;
  detail::finish_regret(art, ex, history, realized, candidates, lins);
  return art;
}

inline RunArtifacts run_safe_lifelong(const ExperimentConfig& cfg) {
  return run_lifelong(cfg, true);
}

inline RunArtifacts run_baseline_unconstrained_mtl(const ExperimentConfig& cfg) {
  return run_lifelong(cfg, false);
}

// Independent per-task eNAC on the trajectory cost, with extra_traj more
// rollouts per round than the lifelong learners. Natural-gradient steps are
// normalized to length pg_rate in the Fisher metric.
inline RunArtifacts run_baseline_pg(const ExperimentConfig& cfg) {
  const Experiment ex = make_experiment(cfg);
  RunArtifacts art;
  art.config = cfg;
  art.method = Method::kPG;
  art.violation_trace.resize(cfg.num_tasks);
  Mat alphas(ex.d, cfg.num_tasks);
  for (int t = 0; t < cfg.num_tasks; ++t)
    alphas.col(t) = detail::initial_alpha(cfg, ex.tasks[t], ex.d);
  RoundHistory history{cfg.num_tasks, {}};
  std::vector<double> realized;
  std::set<int> observed;

  std::seed_seq sample_seq{cfg.seed, std::uint64_t{1}};
  std::mt19937_64 sampler(sample_seq);
  std::uniform_int_distribution<int> pick(0, cfg.num_tasks - 1);

  for (int j = 1; j <= cfg.rounds; ++j) {
    const int t = pick(sampler);
    const TaskSpec& task = ex.tasks[t];
    std::mt19937_64 rng = detail::round_rng(cfg.seed, j);
    const GaussianPolicy policy{alphas.col(t), cfg.sigma, ex.action_dim};
    const auto batch =
        rollout_batch(task, policy, ex.fmap, cfg.n_traj + cfg.extra_traj, rng);
    const BatchStats st = detail::batch_stats(cfg, ex, batch);
    realized.push_back(task_loss(st, policy.alpha));
    history.add(t, st, 1.0);
    observed.insert(t);

    const PGGradient pg = cost_policy_gradient(policy, batch, ex.fmap);
    const Vec dir = natural_direction(*pg.fisher, pg.grad);
    const double metric = std::sqrt(std::max(dir.dot(*pg.fisher * dir), 0.0));
    if (metric > 0.0 && std::isfinite(metric))
      alphas.col(t) = base_learner_step(BaseLearner::kENac, policy.alpha, pg,
                                        cfg.pg_rate / metric);

    RoundRow row;
    row.round = j;
    row.task_id = t;
    row.loss = realized.back();
    row.avg_cost = mean_cost(batch);
    row.max_violation = -std::numeric_limits<double>::infinity();
    for (int o : observed)
      row.max_violation = std::max(row.max_violation, ex.constraints[o].max_violation(alphas.col(o)));
    art.rounds.push_back(row);
    art.violation_trace[t].push_back(ex.constraints[t].max_violation(alphas.col(t)));
    art.policy_path.push_back({j, t, alphas.col(t)});
  }
  art.alphas = alphas;
  art.observations_until_safe = violations_until_safe(art.violation_trace, cfg.rounds);

  // Comparator in the shared-basis safe set, from the initial knowledge base.
  const KnowledgeBase kb0 = init_knowledge(ex.d, cfg.k, cfg.zeta, cfg.p, cfg.q,
                                           cfg.num_tasks, cfg.mu1, cfg.mu2);
  detail::finish_regret(art, ex, history, realized, {ThetaVector::from(kb0, true)});
  return art;
}

inline RunArtifacts run_method(const ExperimentConfig& cfg, Method m) {
  switch (m) {
    case Method::kSafe: return run_safe_lifelong(cfg);
    case Method::kPG: return run_baseline_pg(cfg);
    case Method::kMtlUnconstrained: return run_baseline_unconstrained_mtl(cfg);
  }
  return run_safe_lifelong(cfg);
}

// ---------------------------------------------------------------------------
// CSV persistence.

inline std::string fmt9(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  f << text;
}

inline void write_artifacts(const RunArtifacts& art, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream r;
  r << "round,task_id,loss,avg_cost,max_violation,lambda_min_LtL,lambda_max_LtL\n";
  for (const RoundRow& x : art.rounds)
    r << x.round << ',' << x.task_id << ',' << fmt9(x.loss) << ',' << fmt9(x.avg_cost) << ','
      << fmt9(x.max_violation) << ',' << fmt9(x.lambda_min) << ',' << fmt9(x.lambda_max) << '\n';
  write_text(dir / "rounds.csv", r.str());

  std::ostringstream g;
  g << "round,realized,comparator,cum_regret,realized_linearized,comparator_linearized,"
       "cum_regret_linearized\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j = 0; j < art.regret.size(); ++j) {
    const RegretRecord& x = art.regret[j];
    const bool lin = j < art.regret_linearized.size();
    g << x.round << ',' << fmt9(x.realized) << ',' << fmt9(x.comparator) << ','
      << fmt9(x.cum_regret) << ',' << fmt9(lin ? art.regret_linearized[j].realized : nan)
      << ',' << fmt9(lin ? art.regret_linearized[j].comparator : nan) << ','
      << fmt9(lin ? art.regret_linearized[j].cum_regret : nan) << '\n';
  }
  write_text(dir / "regret.csv", g.str());

  std::ostringstream v;
  v << "task_id,observations_until_safe\n";
  for (std::size_t t = 0; t < art.observations_until_safe.size(); ++t)
    v << t << ',' << art.observations_until_safe[t] << '\n';
  write_text(dir / "violations.csv", v.str());

  std::ostringstream p;
  const int d = art.policy_path.empty() ? 0 : static_cast<int>(art.policy_path.front().alpha.size());
  p << "iter,task_id";
  for (int i = 0; i < d; ++i) p << ",alpha_" << i;
  p << '\n';
  for (const PolicyRow& x : art.policy_path) {
    p << x.iter << ',' << x.task_id;
    for (Eigen::Index i = 0; i < x.alpha.size(); ++i) p << ',' << fmt9(x.alpha(i));
    p << '\n';
  }
  write_text(dir / "policy_path.csv", p.str());

  if (!art.bounds.empty()) {
    std::ostringstream b;
    b << "round,grad_norm,lemma1_bound,fhat_norm,lemma4_rhs,gamma1,gamma2,gamma3,gamma5,delta\n";
    for (const BoundRow& x : art.bounds)
      b << x.round << ',' << fmt9(x.grad_norm) << ',' << fmt9(x.lemma1_bound) << ','
        << fmt9(x.fhat_norm) << ',' << fmt9(x.constants.lemma4_rhs) << ','
        << fmt9(x.constants.gamma1) << ',' << fmt9(x.constants.gamma2) << ','
        << fmt9(x.constants.gamma3) << ',' << fmt9(x.constants.gamma5) << ','
        << fmt9(x.constants.delta) << '\n';
    write_text(dir / "bounds.csv", b.str());
  }

  // Final parameters: the shared basis and coefficients when present, and the
  // per-task policies in every case.
  std::ostringstream k;
  auto dump = [&](const char* name, const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      k << name << ',' << i;
      for (Eigen::Index j = 0; j < m.cols(); ++j) k << ',' << fmt9(m(i, j));
      k << '\n';
    }
  };
  k << "matrix,row,values...\n";
  if (art.L.size() > 0) {
    dump("L", art.L);
    dump("S", art.S);
  }
  dump("alpha", art.alphas);
  write_text(dir / "knowledge.csv", k.str());

  std::ostringstream c;
  c << "# method = " << method_name(art.method) << '\n' << write_config(art.config);
  write_text(dir / "config.echo", c.str());
}

// Minimal reader for the CSV files written above.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw Error("csv: missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read '" + path.string() + "'");
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (std::getline(f, line)) t.header = split(line);
  while (std::getline(f, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

enum class RegretMeasure { kExact, kLinearized };

// Final (R, cumulative regret) of a finished run directory.
inline std::pair<int, double> final_regret(const std::filesystem::path& dir,
                                           RegretMeasure m = RegretMeasure::kExact) {
  const CsvTable t = read_csv(dir / "regret.csv");
  if (t.rows.empty()) throw Error("regret.csv in '" + dir.string() + "' has no rows");
  const int c = t.column(m == RegretMeasure::kExact ? "cum_regret" : "cum_regret_linearized");
  const double v = std::stod(t.rows.back()[c]);
  if (!std::isfinite(v))
    throw Error("regret.csv in '" + dir.string() + "' has no value for this measure");
  return {static_cast<int>(t.rows.size()), v};
}

// Regret curve of a sweep: runs with the same R (different seeds) are averaged.
inline std::vector<std::pair<int, double>> regret_curve(
    const std::vector<std::filesystem::path>& dirs, RegretMeasure m = RegretMeasure::kExact) {
  std::map<int, std::pair<double, int>> acc;
  for (const auto& dir : dirs) {
    const auto [R, reg] = final_regret(dir, m);
    acc[R].first += reg;
    acc[R].second += 1;
  }
  std::vector<std::pair<int, double>> out;
  for (const auto& [R, sum] : acc) out.emplace_back(R, sum.first / sum.second);
  return out;
}

}  // namespace safepg

#endif  // SAFEPG_HARNESS_HPP_
