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

#include "vlaverify/rephrase.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace vlaverify::rephrase {
namespace {

using world::Color;
using world::ContainerKind;
using world::Shape;
using world::Verb;
using Phrase = std::vector<std::string>;
using Kind = ParaphraseGrammar::Element::Kind;

const std::array<std::vector<std::string>, world::kNumColors> kColorWords = {{
    {"red", "crimson", "scarlet"},
    {"green", "emerald", "lime"},
    {"blue", "azure", "navy"},
    {"yellow", "golden", "lemon"},
    {"orange", "tangerine", "amber"},
    {"purple", "violet", "lavender"},
}};

const std::array<std::vector<std::string>, world::kNumShapes> kShapeWords = {{
    {"block", "cube", "brick"},
    {"ball", "sphere", "orb"},
    {"cylinder", "can", "tube"},
    {"ring", "hoop", "donut"},
}};

const std::array<std::vector<std::string>, world::kNumContainerKinds> kContainerWords = {{
    {"plate", "dish", "platter"},
    {"bowl", "basin", "pot"},
    {"basket", "bin", "hamper"},
    {"tray", "board", "platform"},
}};

const std::vector<std::string> kPutVerbs = {"put", "place", "set", "drop"};
const std::vector<std::string> kStackVerbs = {"stack", "put", "place", "set"};
const std::vector<std::string> kGrabPhrases = {"pick up", "take", "grab", "lift"};
const std::vector<std::string> kOnPreps = {"on", "onto", "on top of"};
const std::vector<std::string> kInPreps = {"in", "into", "inside"};

Phrase split(const std::string& phrase) { return world::tokenize(phrase); }

const std::vector<std::string>& verbs_for(Verb v) {
  return v == Verb::Put ? kPutVerbs : kStackVerbs;
}

const std::vector<std::string>& preps_for(const IntentKey& key) {
  if (key.verb == Verb::Stack) return kOnPreps;
  return std::string(world::container_preposition(key.destination_kind)) == "in" ? kInPreps
                                                                                   : kOnPreps;
}

const char* slot_name(Kind k) {
  switch (k) {
    case Kind::Verb:
    case Kind::Grab:
      return "verb";
    case Kind::Color:
      return "color";
    case Kind::Shape:
      return "shape";
    case Kind::Prep:
      return "preposition";
    case Kind::Destination:
      return "destination";
    case Kind::Literal:
      break;
  }
  return "literal";
}

bool matches_at(const std::vector<std::string>& tokens, size_t pos, const Phrase& phrase) {
  if (pos + phrase.size() > tokens.size()) return false;
  return std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<long>(pos));
}

struct Bindings {
  std::string verb;
  std::string prep;
  int color = -1, shape = -1;
  bool dest_is_container = false;
  int dest_kind = -1, dest_color = -1, dest_shape = -1;
};

struct Failure {
  size_t position = 0;
  std::string slot;
  bool set = false;

  void note(size_t pos, const std::string& s) {
    if (!set || pos > position) {
      position = pos;
      slot = s;
      set = true;
    }
  }
};

class Matcher {
 public:
  Matcher(const std::vector<std::string>& tokens, const ParaphraseGrammar::Template& tpl,
          Failure& failure)
      : tokens_(tokens), tpl_(tpl), failure_(failure) {}

  bool run(Bindings& out) { return step(0, 0, out); }

 private:
  bool step(size_t e, size_t pos, Bindings& b) {
    if (e == tpl_.size()) {
      if (pos == tokens_.size()) return true;
      failure_.note(pos, "end of instruction");
      return false;
    }
    const auto& el = tpl_[e];
    auto try_phrase = [&](const std::string& phrase, auto&& bind) {
      const Phrase p = split(phrase);
      if (!matches_at(tokens_, pos, p)) return false;
      Bindings next = b;
      bind(next);
      if (step(e + 1, pos + p.size(), next)) {
        b = next;
        return true;
      }
      return false;
    };
    bool ok = false;
    switch (el.kind) {
      case Kind::Literal:
        ok = try_phrase(el.literal, [](Bindings&) {});
        if (!ok && !matches_at(tokens_, pos, split(el.literal))) {
          failure_.note(pos, "'" + el.literal + "'");
        }
        return ok;
      case Kind::Verb: {
        std::set<std::string> all(kPutVerbs.begin(), kPutVerbs.end());
        all.insert(kStackVerbs.begin(), kStackVerbs.end());
        for (const auto& v : all) {
          if (try_phrase(v, [&](Bindings& n) { n.verb = v; })) return true;
        }
        break;
      }
      case Kind::Grab:
        for (const auto& g : kGrabPhrases) {
          if (try_phrase(g, [](Bindings&) {})) return true;
        }
        break;
      case Kind::Color:
        for (int c = 0; c < world::kNumColors; ++c) {
          for (const auto& w : kColorWords[c]) {
            if (try_phrase(w, [&](Bindings& n) { n.color = c; })) return true;
          }
        }
        break;
      case Kind::Shape:
        for (int s = 0; s < world::kNumShapes; ++s) {
          for (const auto& w : kShapeWords[s]) {
            if (try_phrase(w, [&](Bindings& n) { n.shape = s; })) return true;
          }
        }
        break;
      case Kind::Prep: {
        std::set<std::string> all(kOnPreps.begin(), kOnPreps.end());
        all.insert(kInPreps.begin(), kInPreps.end());
        for (const auto& p : all) {
          if (try_phrase(p, [&](Bindings& n) { n.prep = p; })) return true;
        }
        break;
      }
      case Kind::Destination:
        for (int k = 0; k < world::kNumContainerKinds; ++k) {
          for (const auto& w : kContainerWords[k]) {
            if (try_phrase(w, [&](Bindings& n) {
                  n.dest_is_container = true;
                  n.dest_kind = k;
                })) {
              return true;
            }
          }
        }
        for (int c = 0; c < world::kNumColors; ++c) {
          for (const auto& cw : kColorWords[c]) {
            for (int s = 0; s < world::kNumShapes; ++s) {
              for (const auto& sw : kShapeWords[s]) {
                if (try_phrase(cw + " " + sw, [&](Bindings& n) {
                      n.dest_is_container = false;
                      n.dest_color = c;
                      n.dest_shape = s;
                    })) {
                  return true;
                }
              }
            }
          }
        }
        break;
    }
    failure_.note(pos, slot_name(el.kind));
    return false;
  }

  const std::vector<std::string>& tokens_;
  const ParaphraseGrammar::Template& tpl_;
  Failure& failure_;
};

ParaphraseGrammar::Element lit(const char* s) { return {Kind::Literal, s}; }
ParaphraseGrammar::Element slot(Kind k) { return {k, {}}; }

}  // namespace

ParaphraseGrammar::ParaphraseGrammar() {
  templates_ = {
      {slot(Kind::Verb), lit("the"), slot(Kind::Color), slot(Kind::Shape), slot(Kind::Prep),
       lit("the"), slot(Kind::Destination)},
      {slot(Kind::Grab), lit("the"), slot(Kind::Color), slot(Kind::Shape), lit("and"),
       slot(Kind::Verb), lit("it"), slot(Kind::Prep), lit("the"), slot(Kind::Destination)},
      {slot(Kind::Verb), lit("the"), slot(Kind::Shape), lit("that"), lit("is"), slot(Kind::Color),
       slot(Kind::Prep), lit("the"), slot(Kind::Destination)},
      {lit("move"), lit("the"), slot(Kind::Color), slot(Kind::Shape), lit("to"), lit("the"),
       slot(Kind::Destination)},
      {lit("bring"), lit("the"), slot(Kind::Color), slot(Kind::Shape), lit("to"), lit("the"),
       slot(Kind::Destination)},
  };
}

IntentKey ParaphraseGrammar::parse(const std::vector<std::string>& tokens) const {
  Failure failure;
  for (const auto& tpl : templates_) {
    Bindings b;
    if (!Matcher(tokens, tpl, failure).run(b)) continue;
    IntentKey key;
    key.target_color = static_cast<Color>(b.color);
    key.target_shape = static_cast<Shape>(b.shape);
    if (b.dest_is_container) {
      key.verb = Verb::Put;
      key.destination_kind = static_cast<ContainerKind>(b.dest_kind);
    } else {
      key.verb = Verb::Stack;
      key.destination_color = static_cast<Color>(b.dest_color);
      key.destination_shape = static_cast<Shape>(b.dest_shape);
      if (key.destination_color == key.target_color && key.destination_shape == key.target_shape) {
        throw ParseError("destination", "destination names the target object itself");
      }
    }
    if (!b.verb.empty()) {
      const auto& allowed = verbs_for(key.verb);
      if (std::find(allowed.begin(), allowed.end(), b.verb) == allowed.end()) {
        throw ParseError("verb", "verb '" + b.verb + "' does not fit a " +
                                     world::verb_name(key.verb) + " instruction");
      }
    }
    if (!b.prep.empty()) {
      const auto& allowed = preps_for(key);
      if (std::find(allowed.begin(), allowed.end(), b.prep) == allowed.end()) {
        throw ParseError("preposition", "preposition '" + b.prep + "' does not fit this destination");
      }
    }
    return key;
  }
  std::ostringstream msg;
  msg << "cannot parse instruction '";
  for (size_t i = 0; i < tokens.size(); ++i) msg << (i ? " " : "") << tokens[i];
  msg << "': slot " << failure.slot << " does not match ";
  if (failure.position < tokens.size()) {
    msg << "'" << tokens[failure.position] << "' at token " << failure.position;
  } else {
    msg << "the end of the instruction";
  }
  throw ParseError(failure.slot, msg.str());
}

std::vector<std::vector<std::vector<std::string>>> ParaphraseGrammar::enumerate(
    const IntentKey& key) const {
  std::vector<std::vector<Phrase>> groups;
  std::set<std::string> seen;
  for (const auto& tpl : templates_) {
    std::vector<std::vector<std::string>> choices;
    for (const auto& el : tpl) {
      switch (el.kind) {
        case Kind::Literal:
          choices.push_back({el.literal});
          break;
        case Kind::Verb:
          choices.push_back(verbs_for(key.verb));
          break;
        case Kind::Grab:
          choices.push_back(kGrabPhrases);
          break;
        case Kind::Color:
          choices.push_back(kColorWords[static_cast<size_t>(key.target_color)]);
          break;
        case Kind::Shape:
          choices.push_back(kShapeWords[static_cast<size_t>(key.target_shape)]);
          break;
        case Kind::Prep:
          choices.push_back(preps_for(key));
          break;
        case Kind::Destination:
          if (key.verb == Verb::Put) {
            choices.push_back(kContainerWords[static_cast<size_t>(key.destination_kind)]);
          } else {
            std::vector<std::string> d;
            for (const auto& c : kColorWords[static_cast<size_t>(key.destination_color)])
              for (const auto& s : kShapeWords[static_cast<size_t>(key.destination_shape)])
                d.push_back(c + " " + s);
            choices.push_back(std::move(d));
          }
          break;
      }
    }
    std::vector<Phrase> group;
    std::vector<size_t> idx(choices.size(), 0);
    while (true) {
      std::string joined;
      for (size_t i = 0; i < choices.size(); ++i) {
        if (i) joined += ' ';
        joined += choices[i][idx[i]];
      }
      if (seen.insert(joined).second) group.push_back(split(joined));
      size_t i = choices.size();
      while (i > 0) {
        --i;
        if (++idx[i] < choices[i].size()) break;
        idx[i] = 0;
        if (i == 0) {
          i = choices.size() + 1;
          break;
        }
      }
      if (i == choices.size() + 1) break;
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

size_t ParaphraseGrammar::capacity(const IntentKey& key) const {
  size_t n = 0;
  for (const auto& g : enumerate(key)) n += g.size();
  return n;
}

std::vector<std::string> ParaphraseGrammar::vocabulary() const {
  std::set<std::string> words;
  auto add = [&](const std::string& phrase) {
    for (auto& t : split(phrase)) words.insert(t);
  };
  for (const auto& ws : kColorWords)
    for (const auto& w : ws) add(w);
  for (const auto& ws : kShapeWords)
    for (const auto& w : ws) add(w);
  for (const auto& ws : kContainerWords)
    for (const auto& w : ws) add(w);
  for (const auto* list : {&kPutVerbs, &kStackVerbs, &kGrabPhrases, &kOnPreps, &kInPreps})
    for (const auto& w : *list) add(w);
  for (const auto& tpl : templates_)
    for (const auto& el : tpl)
      if (el.kind == Kind::Literal) add(el.literal);
  return {words.begin(), words.end()};
}

const ParaphraseGrammar& default_grammar() {
  static const ParaphraseGrammar grammar;
  return grammar;
}

RephraseSet grammar_rephrase(const Instruction& instruction, size_t k, uint64_t seed) {
  if (k < 1) throw std::invalid_argument("grammar_rephrase: K must be at least 1");
  const auto& grammar = default_grammar();
  const IntentKey key = grammar.parse(instruction.tokens);
  RephraseSet set;
  set.original = instruction;
  set.source = RephraseSource::Grammar;
  set.variants.push_back(instruction);
  if (k == 1) return set;

  auto groups = grammar.enumerate(key);
  size_t capacity = 0;
  for (auto& g : groups) {
    g.erase(std::remove(g.begin(), g.end(), instruction.tokens), g.end());
    capacity += g.size();
  }
  if (k - 1 > capacity) throw CapacityError(k - 1, capacity);

  auto rng = RngStream(hash_combine(seed, instruction.surface_id)).engine();
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);
  std::vector<size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<size_t> cursor(groups.size(), 0);
  while (set.variants.size() < k) {
    for (size_t g : order) {
      if (set.variants.size() == k) break;
      if (cursor[g] < groups[g].size()) {
        set.variants.emplace_back(groups[g][cursor[g]++], instruction.intent_id);
      }
    }
  }
  return set;
}

TextEmbedding embed_text(const TextEncoder& encoder, const Instruction& instruction) {
  TextEmbedding e;
  e.tokens = encoder.encode_text(instruction);
  const RowVectorXr mean = e.tokens.colwise().mean();
  const double n = std::max(mean.norm(), 1e-12);
  e.unit = (mean / n).transpose();
  return e;
}

RephraseSet boot_time_cache(RephraseSet set, const TextEncoder& encoder) {
  std::vector<TextEmbedding> cache;
  cache.reserve(set.variants.size());
  for (const auto& v : set.variants) cache.push_back(embed_text(encoder, v));
  set.cached_text_embeddings = std::move(cache);
  return set;
}

CurationResult kmeans_curate(const std::vector<VectorXr>& points, size_t target_count,
                             uint64_t seed) {
  const size_t n = points.size();
  if (target_count > n) {
    throw std::invalid_argument("kmeans_curate: target_count " + std::to_string(target_count) +
                                " exceeds " + std::to_string(n) + " points");
  }
  CurationResult result;
  if (target_count == 0) return result;
  if (target_count == n) {
    result.indices.resize(n);
    std::iota(result.indices.begin(), result.indices.end(), 0);
    return result;
  }
  const Index dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw DimensionError("kmeans_curate: mixed embedding dimensions");
  }

  auto rng = RngStream(seed).engine();
  std::vector<VectorXr> centers;
  std::vector<bool> chosen(n, false);
  {
    std::uniform_int_distribution<size_t> first(0, n - 1);
    const size_t f = first(rng);
    centers.push_back(points[f]);
    chosen[f] = true;
  }
  std::vector<double> d2(n);
  while (centers.size() < target_count) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, (points[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    size_t pick = n;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      const double r = u(rng);
      double acc = 0.0;
      for (size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && r < acc) {
          pick = i;
          break;
        }
      }
      if (pick == n) {
        for (size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      result.degenerate = true;
      for (size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    centers.push_back(points[pick]);
  }

  std::vector<size_t> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (size_t i = 0; i < n; ++i) {
      size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (size_t c = 0; c < centers.size(); ++c) {
        const double d = (points[i] - centers[c]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<VectorXr> sums(centers.size(), VectorXr::Zero(dim));
    std::vector<size_t> counts(centers.size(), 0);
    for (size_t i = 0; i < n; ++i) {
      sums[assign[i]] += points[i];
      ++counts[assign[i]];
    }
    for (size_t c = 0; c < centers.size(); ++c) {
      if (counts[c] == 0) {
        result.degenerate = true;
      } else {
        centers[c] = sums[c] / static_cast<double>(counts[c]);
      }
    }
  }

  std::vector<bool> taken(n, false);
  for (const auto& c : centers) {
    size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d = (points[i] - c).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    taken[best] = true;
    result.indices.push_back(best);
  }
  std::sort(result.indices.begin(), result.indices.end());
  return result;
}

std::vector<Instruction> kmeans_curate(const std::vector<Instruction>& instructions,
                                       const std::vector<VectorXr>& embeddings,
                                       size_t target_count, uint64_t seed) {
  if (instructions.size() != embeddings.size()) {
    throw std::invalid_argument("kmeans_curate: one embedding per instruction required");
  }
  std::vector<Instruction> out;
  for (size_t i : kmeans_curate(embeddings, target_count, seed).indices) {
    out.push_back(instructions[i]);
  }
  return out;
}

}  // namespace vlaverify::rephrase
