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

#ifndef SAFEPG_ROLLOUT_HPP_
#define SAFEPG_ROLLOUT_HPP_

#include <algorithm>
#include <random>
#include <vector>

#include "safepg/dynamics.hpp"
#include "safepg/errors.hpp"
#include "safepg/policy.hpp"

namespace safepg {

// One episode from a given initial state. Actions are sampled from the
// policy, clipped to [-u_max, u_max] and recorded after clipping.
inline Trajectory rollout_from(const TaskSpec& task, const GaussianPolicy& policy,
                               const FeatureMap& fmap, const Vec& x0,
                               std::mt19937_64& rng) {
  policy.validate(fmap);
  require(task.horizon >= 1, "rollout: horizon must be >= 1");
  require(policy.action_dim == action_dim(task.system),
          "rollout: policy action dimension does not match the system");
  require(fmap.state_dim == state_dim(task.system),
          "rollout: feature map state dimension does not match the system");
  std::normal_distribution<double> noise(0.0, 1.0);
  Trajectory tr;
  tr.states.reserve(task.horizon + 1);
  tr.actions.reserve(task.horizon);
  tr.costs.reserve(task.horizon);
  tr.states.push_back(x0);
  for (int m = 0; m < task.horizon; ++m) {
    const Vec& x = tr.states.back();
    Vec u = policy.mean(fmap(x));
    for (Eigen::Index i = 0; i < u.size(); ++i)
      u(i) = std::clamp(u(i) + policy.sigma * noise(rng), -task.u_max, task.u_max);
    Vec next = step(task.system, x, u, task.dt);
    if (!next.allFinite()) throw DivergedTrajectory(m);
    tr.costs.push_back(step_cost(task.system, next, u));
    tr.actions.push_back(std::move(u));
    tr.states.push_back(std::move(next));
  }
  return tr;
}

inline Trajectory rollout(const TaskSpec& task, const GaussianPolicy& policy,
                          const FeatureMap& fmap, std::mt19937_64& rng) {
  const Vec x0 = sample_initial_state(task.system, rng);
  return rollout_from(task, policy, fmap, x0, rng);
}

inline std::vector<Trajectory> rollout_batch(const TaskSpec& task,
                                             const GaussianPolicy& policy,
                                             const FeatureMap& fmap, int count,
                                             std::mt19937_64& rng) {
  require(count >= 1, "rollout_batch: count must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(rollout(task, policy, fmap, rng));
  return out;
}

inline double mean_cost(const std::vector<Trajectory>& batch) {
  require(!batch.empty(), "mean_cost: empty batch");
  double total = 0.0;
  for (const Trajectory& tr : batch) total += trajectory_cost(tr);
  return total / static_cast<double>(batch.size());
}

}  // namespace safepg

#endif  // SAFEPG_ROLLOUT_HPP_
