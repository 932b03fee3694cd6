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

// Contrastive verifier: frozen feature maps, a trainable text-aware fusion
// tower and an action transformer, trained with bidirectional InfoNCE.

#pragma once

#include "vlaverify/dataset.hpp"
#include "vlaverify/numerics.hpp"
#include "vlaverify/rephrase.hpp"
#include "vlaverify/world.hpp"

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vlaverify::verifier {

using world::ActionChunk;
using world::ActionHistory;
using world::DatasetRecord;
using world::Instruction;
using world::WorldState;

struct FrozenEncoderSpec {
  uint64_t seed = 0x5eed5eedULL;
  Index obs_input_dim = 24;
  Index text_vocab_size = 4096;
  Index feature_dim = 64;

  friend bool operator==(const FrozenEncoderSpec&, const FrozenEncoderSpec&) = default;
};

/// Fixed random feature maps. Observation: one tanh feature row per entity
/// (gripper, objects, containers). Text: one hashed-bucket row per token.
class FrozenEncoders : public rephrase::TextEncoder {
 public:
  explicit FrozenEncoders(const FrozenEncoderSpec& spec);

  MatrixXr encode_obs(const WorldState& state) const;
  MatrixXr encode_text(const Instruction& instruction) const override;

  Index bucket(const std::string& token) const;
  /// Raw per-entity inputs before the random map.
  MatrixXr obs_inputs(const WorldState& state) const;
  /// Hash over both tables, for checking they never change.
  uint64_t fingerprint() const;
  const FrozenEncoderSpec& spec() const { return spec_; }

 private:
  FrozenEncoderSpec spec_;
  MatrixXr obs_map_;     // obs_input_dim x feature_dim
  MatrixXr text_table_;  // vocab x feature_dim
};

struct VerifierConfig {
  Index width = 64;
  Index embed_dim = 64;
  int fusion_heads = 1;
  int action_heads = 2;
  int action_layers = 2;
  Index ffn_dim = 128;
  Index max_text_tokens = 24;  // longer instructions are truncated
  Index history_window = 8;
  Index chunk_length = 8;
  Index action_dim = world::kActionDim;
  double ln_eps = 1e-5;

  friend bool operator==(const VerifierConfig&, const VerifierConfig&) = default;
};

struct FusionCache;
struct ActionCache;

class VerifierModel {
 public:
  VerifierModel(const VerifierConfig& config, const FrozenEncoderSpec& frozen, uint64_t init_seed);
  VerifierModel(const VerifierModel& other);
  VerifierModel& operator=(const VerifierModel& other);
  VerifierModel(VerifierModel&&) noexcept;
  VerifierModel& operator=(VerifierModel&&) noexcept;
  ~VerifierModel();

  const VerifierConfig& config() const { return config_; }
  const FrozenEncoderSpec& frozen_spec() const { return encoders_->spec(); }
  const FrozenEncoders& encoders() const { return *encoders_; }
  std::shared_ptr<const FrozenEncoders> shared_encoders() const { return encoders_; }

  /// Trainable tensors in a fixed order with unique names.
  std::vector<ParameterXr*> parameters();
  std::vector<const ParameterXr*> parameters() const;
  std::vector<ParameterXr*> fusion_parameters();
  std::vector<ParameterXr*> action_parameters();
  ParameterXr& parameter(const std::string& name);
  size_t parameter_count() const;
  void zero_grad();

  /// Unnormalized fused embeddings, one row per (obs, text) pair.
  MatrixXr fuse_batch(std::span<const MatrixXr> obs_tokens, std::span<const MatrixXr> text_tokens,
                      FusionCache* cache = nullptr) const;
  void fuse_backward(const FusionCache& cache, const MatrixXr& d_fused);

  /// Unnormalized action embeddings, one row per (history, chunk) pair.
  MatrixXr encode_action_batch(std::span<const ActionHistory> histories,
                               std::span<const ActionChunk> chunks,
                               ActionCache* cache = nullptr) const;
  void encode_action_backward(const ActionCache& cache, const MatrixXr& d_action);

  VectorXr fuse(const MatrixXr& obs_tokens, const MatrixXr& text_tokens) const;
  VectorXr encode_action(const ActionHistory& history, const ActionChunk& chunk) const;

 private:
  struct Params;
  VerifierConfig config_;
  std::shared_ptr<const FrozenEncoders> encoders_;
  std::unique_ptr<Params> p_;
};

/// Unit-norm version of a vector; the norm is floored at 1e-12.
VectorXr normalized(const VectorXr& v);

/// Cosine of the fused and action embeddings.
double score(const VerifierModel& model, const WorldState& o, const ActionHistory& h,
             const Instruction& l, const ActionChunk& a);

/// Keys are intent ids; values are the instruction variants for that intent.
using InstructionSets = std::map<uint64_t, std::vector<Instruction>>;

/// One grammar rephrase set of size `per_intent` for every intent in `records`.
InstructionSets build_instruction_sets(const std::vector<DatasetRecord>& records,
                                       size_t per_intent, uint64_t seed);

/// Each record repeated once per instruction of its intent, observation and
/// action unchanged.
std::vector<DatasetRecord> augment_dataset(const std::vector<DatasetRecord>& records,
                                           const InstructionSets& sets);

struct InfoNceResult {
  double loss = 0.0;
  MatrixXr d_fused;   // dL/d(raw fused rows)
  MatrixXr d_action;  // dL/d(raw action rows)
};

/// Symmetric InfoNCE on raw (unnormalized) embeddings, S = f a^T / tau.
InfoNceResult infonce_loss(const MatrixXr& fused, const MatrixXr& actions, double temperature);

/// Loss on a minibatch; with_grad zeroes and fills the model's gradients.
double infonce_step(VerifierModel& model, std::span<const DatasetRecord> batch,
                    double temperature, bool with_grad = true);

struct TrainConfig {
  size_t batch_size = 64;
  size_t steps = 2000;
  double lr = 1e-3;
  double temperature = 1.0;
  uint64_t seed = 0;
};

struct TrainLogRow {
  size_t step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  VerifierModel model;
  std::vector<TrainLogRow> log;
};

/// Adam on shuffled minibatches. Throws NumericError on a non-finite loss.
TrainResult train(VerifierModel model, const std::vector<DatasetRecord>& data,
                  const TrainConfig& config);

/// Averages members' unit embeddings per modality and re-normalizes.
class Ensemble {
 public:
  explicit Ensemble(std::vector<VerifierModel> members);
  Ensemble(const Ensemble& other) : members_(other.members_) {}

  size_t size() const { return members_.size(); }
  const std::vector<VerifierModel>& members() const { return members_; }
  const FrozenEncoders& encoders() const { return members_.front().encoders(); }
  Index embed_dim() const { return members_.front().config().embed_dim; }

  VectorXr fused_embedding(const MatrixXr& obs_tokens, const MatrixXr& text_tokens) const;
  /// Rows are unit action embeddings.
  MatrixXr action_embeddings(std::span<const ActionHistory> histories,
                             std::span<const ActionChunk> chunks) const;

  uint64_t fused_calls() const { return fused_calls_.load(); }
  uint64_t action_calls() const { return action_calls_.load(); }
  void reset_counters() {
    fused_calls_.store(0);
    action_calls_.store(0);
  }

 private:
  std::vector<VerifierModel> members_;
  mutable std::atomic<uint64_t> fused_calls_{0};
  mutable std::atomic<uint64_t> action_calls_{0};
};

double ensemble_score(const Ensemble& ensemble, const WorldState& o, const ActionHistory& h,
                      const Instruction& l, const ActionChunk& a);

// Checkpoints -----------------------------------------------------------------

inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  CheckpointVersionError(uint32_t found, uint32_t expected)
      : CheckpointError("checkpoint version " + std::to_string(found) +
                        " is not supported (expected " + std::to_string(expected) + ")"),
        found_(found) {}
  uint32_t found() const { return found_; }

 private:
  uint32_t found_;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

void save_checkpoint(const Ensemble& ensemble, const std::filesystem::path& path);
void save_checkpoint(const VerifierModel& model, const std::filesystem::path& path);
Ensemble load_ensemble(const std::filesystem::path& path);
/// Loads a single-member checkpoint.
VerifierModel load_model(const std::filesystem::path& path);

}  // namespace vlaverify::verifier
