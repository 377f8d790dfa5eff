/*
 * Copyright (c) 2026, The precipdiff Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace precipdiff {

/// Process exit codes used by the command-line driver.
enum class ExitCode : int { kOk = 0, kFailure = 1, kValidation = 2, kNumeric = 3 };

/// Bad input data or arguments: shape, unit, range or bounds violations.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Missing or inconsistent configuration (unknown profile, absent stats).
class ConfigError : public ValidationError {
 public:
  explicit ConfigError(const std::string& what) : ValidationError(what) {}
};

/// Corrupt, truncated or unreadable files.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Training divergence (non-finite loss or gradients).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace precipdiff
