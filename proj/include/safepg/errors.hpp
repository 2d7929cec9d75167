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

#ifndef SAFEPG_ERRORS_HPP_
#define SAFEPG_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace safepg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (dimensions, signs, ranges).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A linear solve or factorization failed despite regularization.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// A property that must hold by construction was observed to fail.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  InfeasibleError(int task_id, const std::string& what)
      : Error(task_id >= 0 ? "task " + std::to_string(task_id) + ": " + what
                           : what),
        task_id_(task_id) {}

  // -1 when the infeasibility is not attributable to a single task.
  int task_id() const { return task_id_; }

 private:
  int task_id_;
};

class DivergedTrajectory : public Error {
 public:
  explicit DivergedTrajectory(int step)
      : Error("trajectory diverged (non-finite state) at step " +
              std::to_string(step)),
        step_(step) {}

  int step() const { return step_; }

 private:
  int step_;
};

class ParseError : public Error {
 public:
  ParseError(int line, std::string key, const std::string& what)
      : Error("line " + std::to_string(line) +
              (key.empty() ? "" : " (key '" + key + "')") + ": " + what),
        line_(line),
        key_(std::move(key)) {}

  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace safepg

#endif  // SAFEPG_ERRORS_HPP_
