// Copyright 2026 The kdlab Authors.
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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kdlab {

/// Base of every error raised by the library. `category()` is a stable,
/// machine-parsable token used by the CLI for its one-line error report.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual std::string_view category() const noexcept { return "runtime"; }
};

/// Invalid or inconsistent configuration (bad field, unsupported combination).
class ConfigError : public Error {
 public:
  using Error::Error;
  std::string_view category() const noexcept override { return "config"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  std::string_view category() const noexcept override { return "shape"; }
};

/// A numeric argument outside the domain of the operation (T <= 0, alpha > 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
  std::string_view category() const noexcept override { return "domain"; }
};

/// Teacher feature map cannot be reduced onto the student's shape.
class AdaptationError : public Error {
 public:
  using Error::Error;
  std::string_view category() const noexcept override { return "adaptation"; }
};

/// Missing datasets, unreachable downloads, checksum mismatches.
class EnvironmentError : public Error {
 public:
  using Error::Error;
  std::string_view category() const noexcept override { return "environment"; }
};

class StorageError : public Error {
 public:
  using Error::Error;
  std::string_view category() const noexcept override { return "storage"; }
};

}  // namespace kdlab
