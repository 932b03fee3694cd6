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

// Hierarchical test-time verification: propose K x M candidates, score them
// against the user's instruction, pick the best rephrase by mean score and
// then the best action within it.

#pragma once

#include "vlaverify/rephrase.hpp"
#include "vlaverify/sampling.hpp"
#include "vlaverify/verifier.hpp"
#include "vlaverify/world.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace vlaverify::inference {

using sampling::Policy;
using world::ActionChunk;
using world::ActionHistory;
using world::Instruction;
using world::WorldState;

struct InferenceConfig {
  size_t K = 8;
  size_t M = 5;
  uint64_t rephrase_seed = 0;
  int max_chunks = 12;
  bool cache_text = true;
};

struct Proposal {
  size_t k = 0;
  size_t j = 0;
  ActionChunk action;
};

/// K*M proposals in (k, j) order; candidate (k, j) uses stream.substream(k, j).
std::vector<Proposal> propose(const Policy& policy, const WorldState& o,
                              const rephrase::RephraseSet& rephrases, size_t m,
                              const RngStream& stream);

struct ScoreMatrix {
  MatrixXr values;         // K x M
  VectorXr rephrase_means;  // K
};

struct SelectionResult {
  size_t k_star = 0;
  size_t j_star = 0;
  ActionChunk chosen_action;
  Instruction chosen_rephrase;
  ScoreMatrix score_matrix;
};

/// Scores candidate actions for one (observation, history, instruction).
class ActionScorer {
 public:
  virtual ~ActionScorer() = default;
  /// Scores (history, chunk) sequences; `histories` pairs with `actions`.
  /// `cached_text` (may be null) holds precomputed features of `l`.
  virtual std::vector<double> score_sequences(const WorldState& o, const Instruction& l,
                                              const rephrase::TextEmbedding* cached_text,
                                              std::span<const ActionHistory> histories,
                                              std::span<const ActionChunk> actions) const = 0;
  /// All candidates share the history `h`.
  std::vector<double> score(const WorldState& o, const ActionHistory& h, const Instruction& l,
                            const rephrase::TextEmbedding* cached_text,
                            std::span<const ActionChunk> actions) const;
  /// Encoder used for boot-time caching, if the scorer reads text features.
  virtual const rephrase::TextEncoder* text_encoder() const { return nullptr; }
};

/// The verifier ensemble: one fused embedding per call, one action embedding
/// per candidate.
class EnsembleScorer : public ActionScorer {
 public:
  explicit EnsembleScorer(const verifier::Ensemble& ensemble) : ensemble_(ensemble) {}
  std::vector<double> score_sequences(const WorldState& o, const Instruction& l,
                                      const rephrase::TextEmbedding* cached_text,
                                      std::span<const ActionHistory> histories,
                                      std::span<const ActionChunk> actions) const override;
  const rephrase::TextEncoder* text_encoder() const override { return &ensemble_.encoders(); }
  const verifier::Ensemble& ensemble() const { return ensemble_; }

 private:
  const verifier::Ensemble& ensemble_;
};

/// Negative NRMSE to the oracle chunk of the instruction's intent.
class OracleScorer : public ActionScorer {
 public:
  explicit OracleScorer(world::WorldConfig config = {}) : config_(config) {}
  std::vector<double> score_sequences(const WorldState& o, const Instruction& l,
                                      const rephrase::TextEmbedding* cached_text,
                                      std::span<const ActionHistory> histories,
                                      std::span<const ActionChunk> actions) const override;

 private:
  world::WorldConfig config_;
};

/// Uniform scores in [-1, 1], seeded per call.
class RandomScorer : public ActionScorer {
 public:
  explicit RandomScorer(uint64_t seed) : seed_(seed) {}
  std::vector<double> score_sequences(const WorldState& o, const Instruction& l,
                                      const rephrase::TextEmbedding* cached_text,
                                      std::span<const ActionHistory> histories,
                                      std::span<const ActionChunk> actions) const override;

 private:
  uint64_t seed_;
  mutable std::atomic<uint64_t> calls_{0};
};

/// Scores every proposal against the original instruction. Proposals must
/// cover the K x M grid exactly once.
ScoreMatrix score_all(const ActionScorer& scorer, const WorldState& o, const ActionHistory& h,
                      const Instruction& original, std::span<const Proposal> proposals, size_t k,
                      size_t m, const rephrase::TextEmbedding* cached_text = nullptr);

/// k* = argmax of row means, j* = argmax of row k*; lowest index wins ties.
/// Fills indices and the matrix; the chosen action and rephrase are left
/// empty.
SelectionResult select(const ScoreMatrix& scores);

class EpisodeError : public std::runtime_error {
 public:
  EpisodeError(int step, const std::string& what)
      : std::runtime_error("episode aborted at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct VerifiedEpisode {
  world::EpisodeResult result;
  std::vector<SelectionResult> per_step;
  uint64_t text_encoder_calls = 0;
};

/// Rephrases once (and caches their features), then at each chunk boundary
/// proposes, scores, selects and executes. Chunk t draws from stream.child(t).
VerifiedEpisode run_verified_episode(const Policy& policy, const ActionScorer& scorer,
                                     const world::Scenario& scenario,
                                     const InferenceConfig& config, const RngStream& stream);

/// The policy alone under the same stream protocol as K = M = 1.
world::EpisodeResult run_bare_episode(const Policy& policy, const world::Scenario& scenario,
                                      int max_chunks, const RngStream& stream);

struct TracePoint {
  size_t step = 0;
  double score = 0.0;
};

/// Score of each executed (o_t, h_t, a_t) against the original instruction.
std::vector<TracePoint> score_trace(const ActionScorer& scorer,
                                    const std::vector<world::TrajectoryStep>& trajectory,
                                    const Instruction& original);

void write_trace_header(std::ostream& out);
void write_trace_rows(std::ostream& out, size_t episode_id, const std::vector<TracePoint>& trace,
                      bool success);

/// One self-describing JSON line per episode.
std::string episode_report(uint64_t seed, const InferenceConfig& config,
                           const VerifiedEpisode& episode);

}  // namespace vlaverify::inference
