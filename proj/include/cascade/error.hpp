// Copyright 2026 The Cascade Authors. All Rights Reserved.
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

namespace cascade {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value, missing key, or unsatisfiable request.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Messages carry a byte offset or line number.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values or divergence during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition (stale cache, probability
// outside [0,1], ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Oracle enumeration would exceed its term budget.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Class index or stage index out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

}  // namespace cascade
