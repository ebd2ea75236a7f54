// Copyright 2026 The chanprune Authors.
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

namespace chanprune {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent manifest / blob / snapshot contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Tensor or layer shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-finite values, divergence, undefined normalization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// I/O failure on a file path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace chanprune
