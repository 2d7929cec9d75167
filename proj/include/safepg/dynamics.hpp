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

// Benchmark dynamical systems: a mass-spring-damper, a damped cart-pole and a
// six-state quadrotor attitude model, all integrated with explicit Euler.

#ifndef SAFEPG_DYNAMICS_HPP_
#define SAFEPG_DYNAMICS_HPP_

#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "safepg/constraint.hpp"
#include "safepg/errors.hpp"
#include "safepg/linalg.hpp"

namespace safepg {

inline constexpr double kGravity = 9.81;

enum class Domain { kSimpleMass, kCartPole, kQuadrotor };

inline Domain parse_domain(std::string_view name) {
  if (name == "simple_mass") return Domain::kSimpleMass;
  if (name == "cart_pole") return Domain::kCartPole;
  if (name == "quadrotor") return Domain::kQuadrotor;
  throw ConfigError("unknown domain '" + std::string(name) +
                    "' (expected simple_mass, cart_pole or quadrotor)");
}

inline std::string_view domain_name(Domain d) {
  switch (d) {
    case Domain::kSimpleMass: return "simple_mass";
    case Domain::kCartPole: return "cart_pole";
    case Domain::kQuadrotor: return "quadrotor";
  }
  return "unknown";
}

struct SimpleMass {
  double spring_k = 1.0;   // N/m
  double damping_d = 0.0;  // Ns/m
  double mass_m = 1.0;     // kg
  double goal_position = 0.0;
  double goal_velocity = 0.0;
};

struct CartPole {
  double cart_mass = 1.0;    // kg
  double pole_mass = 0.1;    // kg
  double pole_length = 0.5;  // m
  double damping = 0.1;      // Ns/m, on the cart
};

// Attitude-only quadrotor. Actions are rotor-speed deviations from hover.
struct Quadrotor {
  double inertia_xx = 7.5e-3;  // kg m^2
  double inertia_yy = 7.5e-3;
  double inertia_zz = 1.3e-2;
  double thrust_factor = 3.13e-5;  // N s^2
  double drag_factor = 7.5e-7;     // N m s^2
  double rod_length = 0.23;        // m
  double body_mass = 0.65;         // kg, sets the hover speed only

  double hover_speed() const {
    return std::sqrt(body_mass * kGravity / (4.0 * thrust_factor));
  }
};

using SystemParams = std::variant<SimpleMass, CartPole, Quadrotor>;

inline Domain domain_of(const SystemParams& sys) {
  return static_cast<Domain>(sys.index());
}

inline int state_dim(const SystemParams& sys) {
  switch (domain_of(sys)) {
    case Domain::kSimpleMass: return 2;
    case Domain::kCartPole: return 4;
    case Domain::kQuadrotor: return 6;
  }
  return 0;
}

inline int action_dim(const SystemParams& sys) {
  return domain_of(sys) == Domain::kQuadrotor ? 4 : 1;
}

inline double default_u_max(Domain d) {
  return d == Domain::kQuadrotor ? 100.0 : 10.0;
}

inline void validate(const SystemParams& sys) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SimpleMass>) {
          require(s.mass_m > 0 && s.spring_k > 0 && s.damping_d >= 0,
                  "SimpleMass: mass and spring must be > 0, damping >= 0");
        } else if constexpr (std::is_same_v<T, CartPole>) {
          require(s.cart_mass > 0 && s.pole_mass > 0 && s.pole_length > 0 &&
                      s.damping >= 0,
                  "CartPole: masses and length must be > 0, damping >= 0");
        } else {
          require(s.inertia_xx > 0 && s.inertia_yy > 0 && s.inertia_zz > 0 &&
                      s.thrust_factor > 0 && s.drag_factor > 0 &&
                      s.rod_length > 0 && s.body_mass > 0,
                  "Quadrotor: all constants must be > 0");
        }
      },
      sys);
}

// Continuous-time state derivative.
inline Vec state_derivative(const SystemParams& sys, const Vec& x,
                            const Vec& u) {
  return std::visit(
      [&](const auto& s) -> Vec {
        using T = std::decay_t<decltype(s)>;
        Vec dx(x.size());
        if constexpr (std::is_same_v<T, SimpleMass>) {
          dx(0) = x(1);
          dx(1) = (u(0) - s.spring_k * x(0) - s.damping_d * x(1)) / s.mass_m;
        } else if constexpr (std::is_same_v<T, CartPole>) {
          // theta = 0 is upright; pole_length is the full pole length.
          const double half = 0.5 * s.pole_length;
          const double total = s.cart_mass + s.pole_mass;
          const double sin_t = std::sin(x(2));
          const double cos_t = std::cos(x(2));
          const double temp = (u(0) - s.damping * x(1) +
                               s.pole_mass * half * x(3) * x(3) * sin_t) /
                              total;
          const double theta_acc =
              (kGravity * sin_t - cos_t * temp) /
              (half * (4.0 / 3.0 - s.pole_mass * cos_t * cos_t / total));
          dx(0) = x(1);
          dx(1) = temp - s.pole_mass * half * theta_acc * cos_t / total;
          dx(2) = x(3);
          dx(3) = theta_acc;
        } else {
          // State (roll, pitch, yaw, roll rate, pitch rate, yaw rate).
          const double w_h = s.hover_speed();
          double w2[4];
          for (int i = 0; i < 4; ++i) w2[i] = (w_h + u(i)) * (w_h + u(i));
          const double roll_torque = s.thrust_factor * (w2[3] - w2[1]);
          const double pitch_torque = s.thrust_factor * (w2[2] - w2[0]);
          const double yaw_torque =
              s.drag_factor * (w2[1] + w2[3] - w2[0] - w2[2]);
          const double p = x(3), q = x(4), r = x(5);
          dx(0) = p;
          dx(1) = q;
          dx(2) = r;
          dx(3) = q * r * (s.inertia_yy - s.inertia_zz) / s.inertia_xx +
                  s.rod_length * roll_torque / s.inertia_xx;
          dx(4) = p * r * (s.inertia_zz - s.inertia_xx) / s.inertia_yy +
                  s.rod_length * pitch_torque / s.inertia_yy;
          dx(5) = p * q * (s.inertia_xx - s.inertia_yy) / s.inertia_zz +
                  yaw_torque / s.inertia_zz;
        }
        return dx;
      },
      sys);
}

inline Vec step(const SystemParams& sys, const Vec& state, const Vec& action,
                double dt) {
  require(dt > 0, "step: dt must be > 0");
  require(state.size() == state_dim(sys), "step: state dimension mismatch");
  require(action.size() == action_dim(sys), "step: action dimension mismatch");
  return state + dt * state_derivative(sys, state, action);
}

inline Vec goal_state(const SystemParams& sys) {
  Vec g = Vec::Zero(state_dim(sys));
  if (const auto* sm = std::get_if<SimpleMass>(&sys)) {
    g(0) = sm->goal_position;
    g(1) = sm->goal_velocity;
  }
  return g;
}

inline constexpr double kActionCostWeight = 0.01;

// Quadratic regulator cost on the successor state, Q = I and R = 0.01 I.
inline double step_cost(const SystemParams& sys, const Vec& next_state,
                        const Vec& action) {
  const Vec e = next_state - goal_state(sys);
  return e.squaredNorm() + kActionCostWeight * action.squaredNorm();
}

inline Vec sample_initial_state(const SystemParams& sys, std::mt19937_64& rng) {
  auto uni = [&](double half_width) {
    return std::uniform_real_distribution<double>(-half_width, half_width)(rng);
  };
  Vec x(state_dim(sys));
  switch (domain_of(sys)) {
    case Domain::kSimpleMass:
      x << uni(1.0), uni(0.5);
      break;
    case Domain::kCartPole:
      x << uni(0.2), uni(0.1), uni(0.1), uni(0.1);
      break;
    case Domain::kQuadrotor:
      x << uni(0.2), uni(0.2), uni(0.2), uni(0.1), uni(0.1), uni(0.1);
      break;
  }
  return x;
}

struct TaskSpec {
  int task_id = 0;
  SystemParams system;
  SafetyConstraint constraint;
  double sigma = 0.1;
  int horizon = 150;
  double dt = 0.01;
  double u_max = 10.0;
};

struct Trajectory {
  std::vector<Vec> states;   // M + 1
  std::vector<Vec> actions;  // M
  std::vector<double> costs; // M

  int length() const { return static_cast<int>(actions.size()); }
};

inline double trajectory_cost(const Trajectory& traj) {
  require(!traj.costs.empty(), "trajectory_cost: empty trajectory");
  return std::accumulate(traj.costs.begin(), traj.costs.end(), 0.0) /
         static_cast<double>(traj.costs.size());
}

struct TaskGenerationOptions {
  double sigma = 0.1;
  int horizon = 150;
  double dt = 0.01;
  double u_max = 0.0;  // 0 selects the domain default
  // Constraint seeding: b_i = constraint_scale * c_max / sqrt(d) * U(0.75, 1),
  // so ||b|| < c_max and alpha = 0 is strictly inside every safe set.
  double constraint_scale = 0.8;
  double c_max = 1.0;
};

// Policy parameter dimension for the linear-with-bias feature map.
inline int policy_dim(const SystemParams& sys) {
  return (state_dim(sys) + 1) * action_dim(sys);
}

inline std::vector<TaskSpec> generate_tasks(Domain domain, int count,
                                            std::mt19937_64& rng,
                                            const TaskGenerationOptions& opt = {}) {
  require(count >= 1, "generate_tasks: count must be >= 1");
  require(opt.sigma > 0 && opt.horizon >= 1 && opt.dt > 0,
          "generate_tasks: sigma, horizon and dt must be positive");
  require(opt.constraint_scale > 0 && opt.constraint_scale < 1 && opt.c_max > 0,
          "generate_tasks: constraint_scale must be in (0,1), c_max > 0");
  auto draw = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  std::vector<TaskSpec> tasks;
  tasks.reserve(count);
  for (int t = 0; t < count; ++t) {
    TaskSpec task;
    task.task_id = t;
    switch (domain) {
      case Domain::kSimpleMass: {
        SimpleMass s;
        s.spring_k = draw(1.0, 10.0);
        s.damping_d = draw(0.1, 1.0);
        s.mass_m = draw(0.5, 5.0);
        s.goal_position = draw(-1.0, 1.0);
        s.goal_velocity = 0.0;
        task.system = s;
        break;
      }
      case Domain::kCartPole: {
        CartPole s;
        s.cart_mass = draw(0.5, 2.0);
        s.pole_mass = draw(0.05, 0.5);
        s.pole_length = draw(0.3, 1.0);
        s.damping = draw(0.05, 0.5);
        task.system = s;
        break;
      }
      case Domain::kQuadrotor: {
        Quadrotor s;
        s.inertia_xx *= draw(0.5, 1.5);
        s.inertia_yy *= draw(0.5, 1.5);
        s.inertia_zz *= draw(0.5, 1.5);
        task.system = s;
        break;
      }
    }
    task.sigma = opt.sigma;
    task.horizon = opt.horizon;
    task.dt = opt.dt;
    task.u_max = opt.u_max > 0 ? opt.u_max : default_u_max(domain);

    const int d = policy_dim(task.system);
    const double scale =
        opt.constraint_scale * opt.c_max / std::sqrt(static_cast<double>(d));
    task.constraint.A = Mat::Zero(d, d);
    task.constraint.b = Vec(d);
    for (int i = 0; i < d; ++i) {
      task.constraint.A(i, i) = draw(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      task.constraint.b(i) = scale * draw(0.75, 1.0);
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

// Discrete-time LQR gain K (u = -K x) for the Euler discretization of the
// dynamics linearized at the origin, with the same Q = I, R = 0.01 I weights
// as step_cost.
inline Mat lqr_gain(const SystemParams& sys, double dt, int max_iters = 20000) {
  const int n = state_dim(sys);
  const int m = action_dim(sys);
  const Vec x0 = Vec::Zero(n);
  const Vec u0 = Vec::Zero(m);
  const double h = 1e-6;
  Mat a = Mat::Identity(n, n);
  Mat b = Mat::Zero(n, m);
  for (int i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e(i) = h;
    a.col(i) += dt * (state_derivative(sys, x0 + e, u0) -
                      state_derivative(sys, x0 - e, u0)) / (2 * h);
  }
  for (int i = 0; i < m; ++i) {
    Vec e = Vec::Zero(m);
    e(i) = h;
    b.col(i) = dt * (state_derivative(sys, x0, u0 + e) -
                     state_derivative(sys, x0, u0 - e)) / (2 * h);
  }
  const Mat q = Mat::Identity(n, n);
  const Mat r = kActionCostWeight * Mat::Identity(m, m);
  Mat p = q;
  Mat k = Mat::Zero(m, n);
  for (int it = 0; it < max_iters; ++it) {
    const Mat s = r + b.transpose() * p * b;
    k = s.ldlt().solve(b.transpose() * p * a);
    const Mat next = q + a.transpose() * p * (a - b * k);
    const double change = (next - p).norm();
    p = symmetrize(next);
    if (change <= 1e-10 * (1.0 + p.norm())) return k;
  }
  throw NumericalFailure("lqr_gain: Riccati iteration did not converge");
}

// Policy parameters reproducing u = -K x under the linear-with-bias features,
// one (state_dim + 1) block per action dimension.
inline Vec lqr_policy_params(const SystemParams& sys, double dt) {
  const Mat k = lqr_gain(sys, dt);
  const int n = state_dim(sys);
  const int m = action_dim(sys);
  Vec alpha = Vec::Zero((n + 1) * m);
  for (int i = 0; i < m; ++i) alpha.segment(i * (n + 1), n) = -k.row(i).transpose();
  return alpha;
}

}  // namespace safepg

#endif  // SAFEPG_DYNAMICS_HPP_
