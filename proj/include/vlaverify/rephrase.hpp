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

// Instruction rephrasing: a slot grammar that enumerates paraphrases of an
// intent, boot-time caching of their text features, and k-means curation.

#pragma once

#include "vlaverify/numerics.hpp"
#include "vlaverify/world.hpp"

#include <atomic>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlaverify::rephrase {

using world::Instruction;
using world::IntentKey;

class ParseError : public std::invalid_argument {
 public:
  ParseError(const std::string& slot, const std::string& message)
      : std::invalid_argument(message), slot_(slot) {}
  const std::string& slot() const { return slot_; }

 private:
  std::string slot_;
};

class CapacityError : public std::invalid_argument {
 public:
  CapacityError(size_t requested, size_t maximum)
      : std::invalid_argument("grammar can produce at most " + std::to_string(maximum) +
                              " distinct rephrases, " + std::to_string(requested) + " requested"),
        maximum_(maximum) {}
  size_t maximum() const { return maximum_; }

 private:
  size_t maximum_;
};

/// Frozen text features of one instruction plus a unit-norm summary vector
/// (normalized mean of the token rows).
struct TextEmbedding {
  MatrixXr tokens;
  VectorXr unit;
};

enum class RephraseSource { Grammar, Remote };

struct RephraseSet {
  Instruction original;
  std::vector<Instruction> variants;  // variants[0] == original
  RephraseSource source = RephraseSource::Grammar;
  std::optional<std::vector<TextEmbedding>> cached_text_embeddings;

  size_t size() const { return variants.size(); }
};

/// Slot-synonym paraphrase grammar over the world's vocabulary.
class ParaphraseGrammar {
 public:
  ParaphraseGrammar();

  /// Recovers the intent key an instruction expresses.
  IntentKey parse(const std::vector<std::string>& tokens) const;

  /// Every distinct surface form of `key`, grouped by template.
  std::vector<std::vector<std::vector<std::string>>> enumerate(const IntentKey& key) const;
  size_t capacity(const IntentKey& key) const;

  /// All vocabulary words the grammar can emit.
  std::vector<std::string> vocabulary() const;

  struct Element {
    enum class Kind { Literal, Verb, Grab, Color, Shape, Prep, Destination } kind;
    std::string literal;
  };
  using Template = std::vector<Element>;

  const std::vector<Template>& templates() const { return templates_; }

 private:
  std::vector<Template> templates_;
};

const ParaphraseGrammar& default_grammar();

/// Deterministic in (instruction, K, seed); sets for smaller K are prefixes of
/// sets for larger K under the same seed.
RephraseSet grammar_rephrase(const Instruction& instruction, size_t k, uint64_t seed);

/// Anything that can turn an instruction into frozen text features.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual MatrixXr encode_text(const Instruction& instruction) const = 0;
  uint64_t text_calls() const { return calls_.load(); }
  void reset_text_calls() { calls_.store(0); }

 protected:
  void count_text_call() const { calls_.fetch_add(1); }

 private:
  mutable std::atomic<uint64_t> calls_{0};
};

TextEmbedding embed_text(const TextEncoder& encoder, const Instruction& instruction);

/// Encodes every variant once; later scoring reads from the cache.
RephraseSet boot_time_cache(RephraseSet set, const TextEncoder& encoder);

struct CurationResult {
  std::vector<size_t> indices;  // ascending
  bool degenerate = false;      // duplicate points left clusters empty
};

/// k-means (k-means++ seeding, at most 100 Lloyd iterations, Euclidean
/// distance) and the point nearest each centroid.
CurationResult kmeans_curate(const std::vector<VectorXr>& embeddings, size_t target_count,
                             uint64_t seed);
std::vector<Instruction> kmeans_curate(const std::vector<Instruction>& instructions,
                                       const std::vector<VectorXr>& embeddings,
                                       size_t target_count, uint64_t seed);

}  // namespace vlaverify::rephrase
