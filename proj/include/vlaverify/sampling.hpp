// Copyright 2026 The vlaverify Authors
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

// Test-time sampling strategies that turn one policy into a pool of
// candidate action chunks, with budget accounting.
//
// Every candidate (k, j) draws from stream.substream(k, j), so pools built
// from one stream are nested across sizes and the hybrid strategy reduces
// exactly to repeated sampling (K = 1) and to rephrase sampling (m = 1).

#pragma once

#include "vlaverify/rephrase.hpp"
#include "vlaverify/world.hpp"

#include <atomic>
#include <span>
#include <string>
#include <vector>

namespace vlaverify::sampling {

using world::ActionChunk;
using world::Instruction;
using world::WorldState;

enum class Strategy { Repeated, Gaussian, Rephrase, Hybrid };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

/// Nominal parameter count charged per policy forward in the FLOPs proxy.
inline constexpr double kNominalPolicyParams = 1.0e6;

/// The synthetic phrasing-sensitive policy with a forward counter.
class Policy {
 public:
  explicit Policy(world::BasePolicyParams params = {}, world::WorldConfig config = {},
                  double param_count = kNominalPolicyParams)
      : params_(params), config_(config), param_count_(param_count) {}

  Policy(const Policy& other)
      : params_(other.params_), config_(other.config_), param_count_(other.param_count_) {}

  ActionChunk sample(const WorldState& state, const Instruction& instruction,
                     std::mt19937_64& rng) const;

  const world::BasePolicyParams& params() const { return params_; }
  const world::WorldConfig& config() const { return config_; }
  double param_count() const { return param_count_; }
  uint64_t forward_count() const { return forwards_.load(); }
  void reset_forward_count() { forwards_.store(0); }

 private:
  world::BasePolicyParams params_;
  world::WorldConfig config_;
  double param_count_;
  mutable std::atomic<uint64_t> forwards_{0};
};

struct Candidate {
  ActionChunk action;
  size_t k = 0;  // rephrase index
  size_t j = 0;  // sample index within the rephrase
};

struct Budget {
  size_t candidate_count = 0;
  uint64_t policy_forward_count = 0;
  uint64_t cheap_draws = 0;  // Gaussian draws, not charged as forwards
  double flops_proxy = 0.0;
};

struct CandidatePool {
  std::vector<Candidate> candidates;
  Strategy strategy = Strategy::Repeated;
  Budget budget;

  size_t size() const { return candidates.size(); }
};

/// Diagonal Gaussian over flattened chunks; std is floored at eps.
struct GaussianFit {
  VectorXr mean;
  VectorXr std;
  Index rows = 0, cols = 0;

  static GaussianFit fit(std::span<const ActionChunk> samples, double eps);
  /// One draw, clamped to [-1, 1].
  ActionChunk draw(std::mt19937_64& rng) const;
};

CandidatePool sample_repeated(const Policy& policy, const WorldState& state,
                              const Instruction& instruction, size_t m, const RngStream& stream);

CandidatePool sample_gaussian(const Policy& policy, const WorldState& state,
                              const Instruction& instruction, size_t fit_n, size_t m, double eps,
                              const RngStream& stream);

CandidatePool sample_rephrase(const Policy& policy, const WorldState& state,
                              const rephrase::RephraseSet& rephrases, const RngStream& stream);

CandidatePool sample_hybrid(const Policy& policy, const WorldState& state,
                            const rephrase::RephraseSet& rephrases, size_t m_per,
                            const RngStream& stream);

/// Minimum NRMSE of any candidate against a_star.
double oracle_min_error(const CandidatePool& pool, const ActionChunk& a_star);

struct ModelSizes {
  double policy_params = kNominalPolicyParams;
  double verifier_params = 0.0;
};

/// Sum over models of 2 * params * forwards. A proxy, not a measurement.
double flops_proxy(uint64_t policy_forwards, uint64_t verifier_forwards, const ModelSizes& sizes);

}  // namespace vlaverify::sampling
