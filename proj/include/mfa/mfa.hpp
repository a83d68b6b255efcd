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

#ifndef MFA_MFA_HPP_
#define MFA_MFA_HPP_

#include "mfa/builders.hpp"
#include "mfa/costmodel.hpp"
#include "mfa/dataio.hpp"
#include "mfa/engine/adam.hpp"
#include "mfa/engine/executor.hpp"
#include "mfa/engine/losses.hpp"
#include "mfa/engine/stages.hpp"
#include "mfa/error.hpp"
#include "mfa/evaluate.hpp"
#include "mfa/genotype.hpp"
#include "mfa/graph.hpp"
#include "mfa/latency.hpp"
#include "mfa/ops.hpp"
#include "mfa/pipeline.hpp"
#include "mfa/resize.hpp"
#include "mfa/rng.hpp"
#include "mfa/search.hpp"
#include "mfa/sharing.hpp"
#include "mfa/tensor.hpp"
#include "mfa/weights.hpp"

#endif  // MFA_MFA_HPP_
