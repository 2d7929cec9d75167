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

// Experiment configuration: flat "key = value" text with '#' comments.

#ifndef SAFEPG_CONFIG_HPP_
#define SAFEPG_CONFIG_HPP_

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "safepg/dynamics.hpp"
#include "safepg/errors.hpp"
#include "safepg/lifelong.hpp"

namespace safepg {

struct ExperimentConfig {
  Domain domain = Domain::kSimpleMass;
  int rounds = 150;
  int num_tasks = 10;
  int k = 2;
  double mu1 = 0.1;
  double mu2 = 0.1;
  double p = 0.5;
  double q = 2.0;
  double zeta = 1.0;
  double c_max = 1.0;
  double sigma = 0.1;
  int n_traj = 50;
  int horizon = 150;
  double dt = 0.01;
  int inner_iters = 10;
  UpdateMode mode = UpdateMode::kClosedForm;
  double eta = 0.0;  // 0 selects the theorem schedule 1 / sqrt(R)
  bool baselines = false;
  int extra_traj = 50;
  std::uint64_t seed = 1;
  // Not part of the core protocol; see README.
  double u_max = 0.0;  // 0 selects the domain default
  bool cost_weighting = false;
  double cost_beta = 5.0;
  double constraint_scale = 0.8;
  bool lqr_init = false;
  double pg_rate = 1.0;
  double rate_c = 0.9;

  double eta_value() const {
    return eta > 0.0 ? eta : 1.0 / std::sqrt(static_cast<double>(rounds));
  }

  bool operator==(const ExperimentConfig&) const = default;
};

inline std::string_view mode_name(UpdateMode m) {
  switch (m) {
    case UpdateMode::kClosedForm: return "closed_form";
    case UpdateMode::kEReinforce: return "eREINFORCE";
    case UpdateMode::kENac: return "eNAC";
  }
  return "closed_form";
}

inline UpdateMode parse_mode(std::string_view s) {
  if (s == "closed_form") return UpdateMode::kClosedForm;
  if (s == "eREINFORCE" || s == "ereinforce") return UpdateMode::kEReinforce;
  if (s == "eNAC" || s == "enac") return UpdateMode::kENac;
  throw ConfigError("unknown mode '" + std::string(s) +
                    "' (expected closed_form, eREINFORCE or eNAC)");
}

inline void validate(const ExperimentConfig& c) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  check(c.rounds >= 1, "rounds must be >= 1");
  check(c.num_tasks >= 1, "num_tasks must be >= 1");
  check(c.k >= 1, "k must be >= 1");
  check(c.mu1 > 0 && c.mu2 > 0, "mu1 and mu2 must be > 0");
  check(c.p > 0 && c.p <= c.q, "need 0 < p <= q");
  check(c.zeta * c.zeta >= c.p && c.zeta * c.zeta <= c.q, "need p <= zeta^2 <= q");
  check(c.c_max > 0, "c_max must be > 0");
  check(c.sigma > 0, "sigma must be > 0");
  check(c.n_traj >= 1, "n_traj must be >= 1");
  check(c.horizon >= 1, "horizon must be >= 1");
  check(c.dt > 0, "dt must be > 0");
  check(c.inner_iters >= 1, "inner_iters must be >= 1");
  check(c.eta >= 0, "eta must be 'theorem' or a positive number");
  check(c.extra_traj >= 0, "extra_traj must be >= 0");
  check(c.u_max >= 0, "u_max must be >= 0");
  check(c.cost_beta >= 0, "cost_beta must be >= 0");
  check(c.constraint_scale > 0 && c.constraint_scale < 1, "constraint_scale must be in (0, 1)");
  check(c.pg_rate > 0, "pg_rate must be > 0");
  check(c.rate_c > 0 && c.rate_c < 1, "rate_c must be in (0, 1)");
  SystemParams probe;
  switch (c.domain) {
    case Domain::kSimpleMass: probe = SimpleMass{}; break;
    case Domain::kCartPole: probe = CartPole{}; break;
    case Domain::kQuadrotor: probe = Quadrotor{}; break;
  }
  check(c.k <= policy_dim(probe), "k must not exceed the policy dimension");
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& value, int line, const std::string& key) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty())
    throw ParseError(line, key, "malformed value '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ParseError(line, key, "malformed boolean '" + v + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string raw;
  std::set<std::string> seen;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ParseError(line, "", "expected 'key = value'");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string v = detail::trim(body.substr(eq + 1));
    if (!seen.insert(key).second)
      throw ParseError(line, key, "duplicate key");
    auto num = [&]<typename T>(T& field) { field = detail::parse_number<T>(v, line, key); };
    try {
      if (key == "domain") c.domain = parse_domain(v);
      else if (key == "rounds") num(c.rounds);
      else if (key == "num_tasks") num(c.num_tasks);
      else if (key == "k") num(c.k);
      else if (key == "mu1") num(c.mu1);
      else if (key == "mu2") num(c.mu2);
      else if (key == "p") num(c.p);
      else if (key == "q") num(c.q);
      else if (key == "zeta") num(c.zeta);
      else if (key == "c_max") num(c.c_max);
      else if (key == "sigma") num(c.sigma);
      else if (key == "n_traj") num(c.n_traj);
      else if (key == "horizon") num(c.horizon);
      else if (key == "dt") num(c.dt);
      else if (key == "inner_iters") num(c.inner_iters);
      else if (key == "mode") c.mode = parse_mode(v);
      else if (key == "eta") c.eta = v == "theorem" ? 0.0 : detail::parse_number<double>(v, line, key);
      else if (key == "baselines") c.baselines = detail::parse_bool(v, line, key);
      else if (key == "extra_traj") num(c.extra_traj);
      else if (key == "seed") num(c.seed);
      else if (key == "u_max") num(c.u_max);
      else if (key == "cost_weighting") c.cost_weighting = detail::parse_bool(v, line, key);
      else if (key == "cost_beta") num(c.cost_beta);
      else if (key == "constraint_scale") num(c.constraint_scale);
      else if (key == "lqr_init") c.lqr_init = detail::parse_bool(v, line, key);
      else if (key == "pg_rate") num(c.pg_rate);
      else if (key == "rate_c") num(c.rate_c);
      else throw ParseError(line, key, "unknown key");
    } catch (const ConfigError& e) {
      throw ParseError(line, key, e.what());
    }
  }
  validate(c);
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

// Every key with its resolved value; parse_config_text(write_config(c)) == c.
inline std::string write_config(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "domain = " << domain_name(c.domain) << "\n"
    << "rounds = " << c.rounds << "\n"
    << "num_tasks = " << c.num_tasks << "\n"
    << "k = " << c.k << "\n"
    << "mu1 = " << detail::fmt17(c.mu1) << "\n"
    << "mu2 = " << detail::fmt17(c.mu2) << "\n"
    << "p = " << detail::fmt17(c.p) << "\n"
    << "q = " << detail::fmt17(c.q) << "\n"
    << "zeta = " << detail::fmt17(c.zeta) << "\n"
    << "c_max = " << detail::fmt17(c.c_max) << "\n"
    << "sigma = " << detail::fmt17(c.sigma) << "\n"
    << "n_traj = " << c.n_traj << "\n"
    << "horizon = " << c.horizon << "\n"
    << "dt = " << detail::fmt17(c.dt) << "\n"
    << "inner_iters = " << c.inner_iters << "\n"
    << "mode = " << mode_name(c.mode) << "\n"
    << "eta = " << (c.eta > 0 ? detail::fmt17(c.eta) : std::string("theorem")) << "\n"
    << "baselines = " << (c.baselines ? "true" : "false") << "\n"
    << "extra_traj = " << c.extra_traj << "\n"
    << "seed = " << c.seed << "\n"
    << "u_max = " << detail::fmt17(c.u_max) << "\n"
    << "cost_weighting = " << (c.cost_weighting ? "true" : "false") << "\n"
    << "cost_beta = " << detail::fmt17(c.cost_beta) << "\n"
    << "constraint_scale = " << detail::fmt17(c.constraint_scale) << "\n"
    << "lqr_init = " << (c.lqr_init ? "true" : "false") << "\n"
    << "pg_rate = " << detail::fmt17(c.pg_rate) << "\n"
    << "rate_c = " << detail::fmt17(c.rate_c) << "\n";
  return o.str();
}

// Applies a single "key = value" override, as used by parameter sweeps.
inline ExperimentConfig with_override(const ExperimentConfig& base, const std::string& key,
                                      const std::string& value) {
  std::string text = write_config(base);
  std::istringstream in(text);
  std::string line, out;
  bool found = false;
  while (std::getline(in, line)) {
    if (detail::trim(line.substr(0, line.find('='))) == key) {
      out += key + " = " + value + "\n";
      found = true;
    } else {
      out += line + "\n";
    }
  }
  if (!found) throw ConfigError("unknown key '" + key + "'");
  return parse_config_text(out);
}

}  // namespace safepg

#endif  // SAFEPG_CONFIG_HPP_
