// Copyright 2026 The thermofield Authors
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

// Randomised finite-difference checks of every differentiable composite.
// All checks run at 64-bit with central differences.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace thermofield::testing {

struct GradCheckResult {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  int worst_instance = -1;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

GradCheckResult check_hash_encode(int instances, std::uint64_t seed);
/// One result per network of the field (density, proposal, colour, thermal,
/// single-head variants).
std::vector<GradCheckResult> check_mlps(int instances, std::uint64_t seed);
GradCheckResult check_composite(int instances, std::uint64_t seed);
/// rgb, thermal, distortion and interlevel terms.
std::vector<GradCheckResult> check_loss_terms(int instances, std::uint64_t seed);
/// Proposal grid -> proposal MLP -> weights -> interlevel penalty.
GradCheckResult check_proposal_path(int instances, std::uint64_t seed);
/// Rays -> hash grid -> MLPs -> compositing -> colour, thermal and
/// distortion losses, cycling through all field modes.
GradCheckResult check_pipeline(int instances, std::uint64_t seed);

}  // namespace thermofield::testing
