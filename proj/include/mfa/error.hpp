// Copyright 2026 The mfakit Authors.
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

#ifndef MFA_ERROR_HPP_
#define MFA_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace mfa {

// Root of every error the toolkit throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MFA_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

MFA_DEFINE_ERROR(ShapeError);
MFA_DEFINE_ERROR(NumericError);
MFA_DEFINE_ERROR(GenotypeError);
MFA_DEFINE_ERROR(GraphError);
MFA_DEFINE_ERROR(SliceError);
MFA_DEFINE_ERROR(FormatError);
MFA_DEFINE_ERROR(TapError);
MFA_DEFINE_ERROR(ConfigError);
MFA_DEFINE_ERROR(PipelineError);
MFA_DEFINE_ERROR(DivergenceError);
MFA_DEFINE_ERROR(NoFeasibleCandidate);

#undef MFA_DEFINE_ERROR

// Raised by latency prediction when the lookup table lacks an operator.
class MissingEntry : public Error {
 public:
  explicit MissingEntry(std::string key)
      : Error("latency table has no entry for '" + key + "'"), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace mfa

#endif  // MFA_ERROR_HPP_
