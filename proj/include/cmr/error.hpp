/*
 * Copyright 2026 The cmrsynth Authors
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

namespace cmr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// data_io
class MissingFileError : public Error {
 public:
  using Error::Error;
};
class CorruptHeaderError : public Error {
 public:
  using Error::Error;
};
class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};
class LabelDomainError : public Error {
 public:
  using Error::Error;
};

class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// Raised when a preprocessing step cannot produce a meaningful result
// (all-background crop, coincident percentiles, impossible phantom geometry).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefiniteError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

class UntrainedModelError : public Error {
 public:
  using Error::Error;
};

}  // namespace cmr
