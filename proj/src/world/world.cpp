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

#include "vlaverify/world.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vlaverify::world {

const char* color_name(Color c) {
  static constexpr std::array<const char*, kNumColors> names = {"red",    "green",  "blue",
                                                                 "yellow", "orange", "purple"};
  return names.at(static_cast<size_t>(c));
}

const char* shape_name(Shape s) {
  static constexpr std::array<const char*, kNumShapes> names = {"block", "ball", "cylinder",
                                                                 "ring"};
  return names.at(static_cast<size_t>(s));
}

const char* container_name(ContainerKind k) {
  static constexpr std::array<const char*, kNumContainerKinds> names = {"plate", "bowl",
                                                                         "basket", "tray"};
  return names.at(static_cast<size_t>(k));
}

const char* verb_name(Verb v) { return v == Verb::Put ? "put" : "stack"; }

const char* container_preposition(ContainerKind k) {
  return (k == ContainerKind::Bowl || k == ContainerKind::Basket) ? "in" : "on";
}

const Object& WorldState::object(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return o;
  throw LookupError("no object with id " + std::to_string(id));
}

Object& WorldState::object(int id) {
  for (auto& o : objects)
    if (o.id == id) return o;
  throw LookupError("no object with id " + std::to_string(id));
}

const Container& WorldState::container(int id) const {
  for (const auto& c : containers)
    if (c.id == id) return c;
  throw LookupError("no container with id " + std::to_string(id));
}

bool operator==(const WorldState& a, const WorldState& b) {
  if (a.objects.size() != b.objects.size() || a.containers.size() != b.containers.size() ||
      a.held != b.held || a.gripper.position != b.gripper.position ||
      a.gripper.grasp != b.gripper.grasp) {
    return false;
  }
  for (size_t i = 0; i < a.objects.size(); ++i) {
    const auto &x = a.objects[i], &y = b.objects[i];
    if (x.id != y.id || x.position != y.position || x.color != y.color || x.shape != y.shape)
      return false;
  }
  for (size_t i = 0; i < a.containers.size(); ++i) {
    const auto &x = a.containers[i], &y = b.containers[i];
    if (x.id != y.id || x.position != y.position || x.color != y.color || x.kind != y.kind)
      return false;
  }
  return true;
}

uint64_t IntentKey::hash() const {
  uint64_t h = hash_combine(0x1f7e3a5b9c2d4e61ULL, static_cast<uint64_t>(verb));
  h = hash_combine(h, static_cast<uint64_t>(target_color));
  h = hash_combine(h, static_cast<uint64_t>(target_shape));
  if (verb == Verb::Put) {
    h = hash_combine(h, static_cast<uint64_t>(destination_kind));
  } else {
    h = hash_combine(h, static_cast<uint64_t>(destination_color));
    h = hash_combine(h, static_cast<uint64_t>(destination_shape));
  }
  return h;
}

void validate_intent(const WorldState& state, const Intent& intent) {
  (void)state.object(intent.target_object);
  if (intent.verb == Verb::Put) {
    (void)state.container(intent.destination);
  } else {
    (void)state.object(intent.destination);
    if (intent.destination == intent.target_object)
      throw LookupError("stack destination equals the target object");
  }
}

IntentKey intent_key(const WorldState& state, const Intent& intent) {
  validate_intent(state, intent);
  IntentKey key;
  key.verb = intent.verb;
  const auto& target = state.object(intent.target_object);
  key.target_color = target.color;
  key.target_shape = target.shape;
  if (intent.verb == Verb::Put) {
    key.destination_kind = state.container(intent.destination).kind;
  } else {
    const auto& d = state.object(intent.destination);
    key.destination_color = d.color;
    key.destination_shape = d.shape;
  }
  return key;
}

Intent resolve_intent(const WorldState& state, uint64_t intent_id) {
  for (const auto& target : state.objects) {
    for (const auto& c : state.containers) {
      Intent in{Verb::Put, target.id, c.id};
      if (intent_key(state, in).hash() == intent_id) return in;
    }
    for (const auto& d : state.objects) {
      if (d.id == target.id) continue;
      Intent in{Verb::Stack, target.id, d.id};
      if (intent_key(state, in).hash() == intent_id) return in;
    }
  }
  throw LookupError("intent " + std::to_string(intent_id) + " does not refer to this world");
}

uint64_t surface_hash(const std::vector<std::string>& tokens) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) h = fnv1a(" ", h);
    h = fnv1a(tokens[i], h);
  }
  return h;
}

Instruction::Instruction(std::vector<std::string> toks, uint64_t intent)
    : tokens(std::move(toks)), intent_id(intent), surface_id(surface_hash(tokens)) {
  if (tokens.empty()) throw std::invalid_argument("instruction must not be empty");
}

std::string Instruction::text() const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Instruction canonical_instruction(const IntentKey& key) {
  std::vector<std::string> t;
  if (key.verb == Verb::Put) {
    t = {"put", "the", color_name(key.target_color), shape_name(key.target_shape),
         container_preposition(key.destination_kind), "the", container_name(key.destination_kind)};
  } else {
    t = {"stack", "the", color_name(key.target_color), shape_name(key.target_shape),
         "on", "the", color_name(key.destination_color), shape_name(key.destination_shape)};
  }
  return Instruction(std::move(t), key.hash());
}

Scenario generate_world(uint64_t seed, int n_objects, int n_containers) {
  if (n_objects < 2) throw std::invalid_argument("generate_world: need at least 2 objects");
  if (n_containers < 1 || n_containers > kNumContainerKinds) {
    throw std::invalid_argument("generate_world: n_containers must be in [1, " +
                                std::to_string(kNumContainerKinds) + "]");
  }
  if (n_objects > kNumColors * kNumShapes) {
    throw std::invalid_argument("generate_world: too many objects");
  }
  const WorldConfig cfg;
  std::mt19937_64 rng(splitmix64(seed ^ 0x5eedULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> inner(0.1, 0.9);

  std::vector<Eigen::Vector2d> placed;
  auto place = [&]() {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      Eigen::Vector2d p(inner(rng), inner(rng));
      bool ok = true;
      for (const auto& q : placed) ok = ok && (p - q).norm() >= cfg.min_separation;
      if (ok) {
        placed.push_back(p);
        return p;
      }
    }
    throw std::runtime_error("generate_world: could not place entities");
  };

  Scenario sc;
  sc.seed = seed;
  std::vector<int> pairs(kNumColors * kNumShapes);
  std::iota(pairs.begin(), pairs.end(), 0);
  for (int i = 0; i < n_objects; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pairs.size()) - 1);
    std::swap(pairs[i], pairs[pick(rng)]);
    Object o;
    o.id = i;
    o.color = static_cast<Color>(pairs[i] / kNumShapes);
    o.shape = static_cast<Shape>(pairs[i] % kNumShapes);
    o.position = place();
    sc.state.objects.push_back(o);
  }
  std::array<int, kNumContainerKinds> kinds = {0, 1, 2, 3};
  std::uniform_int_distribution<int> any_color(0, kNumColors - 1);
  for (int i = 0; i < n_containers; ++i) {
    std::uniform_int_distribution<int> pick(i, kNumContainerKinds - 1);
    std::swap(kinds[i], kinds[pick(rng)]);
    Container c;
    c.id = i;
    c.kind = static_cast<ContainerKind>(kinds[i]);
    c.color = static_cast<Color>(any_color(rng));
    c.position = place();
    sc.state.containers.push_back(c);
  }
  sc.state.gripper.position = Eigen::Vector2d(unit(rng), unit(rng));
  sc.state.gripper.grasp = 0.0;

  std::uniform_int_distribution<int> pick_target(0, n_objects - 1);
  sc.intent.target_object = pick_target(rng);
  if (unit(rng) < 0.5) {
    sc.intent.verb = Verb::Put;
    std::uniform_int_distribution<int> pick_dest(0, n_containers - 1);
    sc.intent.destination = pick_dest(rng);
  } else {
    sc.intent.verb = Verb::Stack;
    std::uniform_int_distribution<int> pick_dest(0, n_objects - 2);
    int d = pick_dest(rng);
    if (d >= sc.intent.target_object) ++d;
    sc.intent.destination = d;
  }
  sc.instruction = canonical_instruction(intent_key(sc.state, sc.intent));
  return sc;
}

Eigen::Vector2d destination_position(const WorldState& state, const Intent& intent) {
  return intent.verb == Verb::Put ? state.container(intent.destination).position
                                  : state.object(intent.destination).position;
}

void apply_step(WorldState& state, const Eigen::Ref<const RowVectorXr>& step,
                const WorldConfig& config) {
  if (step.size() != kActionDim) {
    throw DimensionError("apply_step: expected " + std::to_string(kActionDim) +
                         " action entries, got " + std::to_string(step.size()));
  }
  auto& g = state.gripper;
  g.position.x() = std::clamp(g.position.x() + config.step_size * step(0), 0.0, 1.0);
  g.position.y() = std::clamp(g.position.y() + config.step_size * step(1), 0.0, 1.0);
  g.grasp = std::clamp(g.grasp + config.grasp_rate * step(2), 0.0, 1.0);
  if (state.held >= 0 && g.grasp < 0.5) state.held = -1;
  if (state.held < 0 && g.grasp >= 0.5) {
    double best = config.grasp_radius;
    for (const auto& o : state.objects) {
      const double d = (o.position - g.position).norm();
      if (d <= best) {
        best = d;
        state.held = o.id;
      }
    }
  }
  if (state.held >= 0) state.object(state.held).position = g.position;
}

ActionChunk controller_chunk(const WorldState& state, const Intent& intent,
                             const WorldConfig& config, const Eigen::Vector2d& goal_offset) {
  validate_intent(state, intent);
  WorldState sim = state;
  ActionChunk chunk = ActionChunk::Zero(config.chunk_length, kActionDim);
  for (int t = 0; t < config.chunk_length; ++t) {
    Eigen::Vector2d move = Eigen::Vector2d::Zero();
    double grip = -1.0;
    const Eigen::Vector2d pos = sim.gripper.position;
    if (sim.held == intent.target_object) {
      const Eigen::Vector2d goal = destination_position(sim, intent) + goal_offset;
      move = config.gain * (goal - pos);
      grip = 1.0;
    } else if (sim.held >= 0) {
      grip = -1.0;
    } else {
      const Eigen::Vector2d goal = sim.object(intent.target_object).position + goal_offset;
      move = config.gain * (goal - pos);
      grip = (goal - pos).norm() <= 0.5 * config.grasp_radius ? 1.0 : -1.0;
    }
    chunk(t, 0) = std::clamp(move.x(), -1.0, 1.0);
    chunk(t, 1) = std::clamp(move.y(), -1.0, 1.0);
    chunk(t, 2) = grip;
    apply_step(sim, chunk.row(t), config);
  }
  return chunk;
}

ActionChunk oracle_action(const WorldState& state, const Intent& intent,
                          const WorldConfig& config) {
  return controller_chunk(state, intent, config);
}

ActionChunk oracle_action(const WorldState& state, const Intent& intent, int chunk_length) {
  WorldConfig cfg;
  cfg.chunk_length = chunk_length;
  return controller_chunk(state, intent, cfg);
}

double nrmse(const ActionChunk& a, const ActionChunk& a_star) {
  require_same_shape(a, a_star, "nrmse");
  if (a.size() == 0) throw DimensionError("nrmse: empty action");
  const double mse = (a - a_star).squaredNorm() / static_cast<double>(a.size());
  return std::sqrt(mse) / 2.0;
}

bool is_good_phrase(uint64_t surface_id, const BasePolicyParams& params) {
  return unit_interval(hash_combine(surface_id, params.seed)) < params.good_phrase_fraction;
}

Eigen::Vector2d phrase_drift(uint64_t surface_id, const BasePolicyParams& params) {
  if (is_good_phrase(surface_id, params)) return Eigen::Vector2d::Zero();
  const double angle =
      2.0 * M_PI * unit_interval(hash_combine(hash_combine(surface_id, params.seed), 1));
  return params.drift_scale * Eigen::Vector2d(std::cos(angle), std::sin(angle));
}

ActionChunk perturb_chunk(const ActionChunk& mean, double temperature, std::mt19937_64& rng) {
  if (temperature <= 0.0) return mean;
  std::normal_distribution<double> noise(0.0, temperature);
  ActionChunk out = mean;
  for (Index i = 0; i < out.size(); ++i) {
    out.data()[i] = std::clamp(out.data()[i] + noise(rng), -1.0, 1.0);
  }
  return out;
}

ActionChunk base_policy_sample(const WorldState& state, const Instruction& instruction,
                               const BasePolicyParams& params, const WorldConfig& config,
                               std::mt19937_64& rng) {
  if (instruction.tokens.empty()) throw std::invalid_argument("policy: empty instruction");
  const Intent intent = resolve_intent(state, instruction.intent_id);
  const ActionChunk mean =
      controller_chunk(state, intent, config, phrase_drift(instruction.surface_id, params));
  return perturb_chunk(mean, params.noise_temperature, rng);
}

ActionHistory empty_history(const WorldConfig& config) {
  return ActionHistory::Zero(config.history_window, kActionDim);
}

ActionHistory advance_history(const ActionHistory& history, const ActionChunk& executed) {
  if (history.cols() != executed.cols()) {
    throw DimensionError("advance_history: history " + shape_string(history) + " vs chunk " +
                         shape_string(executed));
  }
  const Index w = history.rows();
  ActionHistory out(w, history.cols());
  if (executed.rows() >= w) {
    out = executed.bottomRows(w);
  } else {
    const Index keep = w - executed.rows();
    out.topRows(keep) = history.bottomRows(keep);
    out.bottomRows(executed.rows()) = executed;
  }
  return out;
}

bool is_delivered(const WorldState& state, const Intent& intent, const WorldConfig& config) {
  const auto& target = state.object(intent.target_object);
  return (target.position - destination_position(state, intent)).norm() <=
         config.deliver_tolerance;
}

void ProgressTracker::update(const WorldState& state, const Intent& intent,
                             const WorldConfig& config) {
  const auto& target = state.object(intent.target_object);
  if ((state.gripper.position - target.position).norm() <= config.grasp_radius) approached = true;
  if (state.held == intent.target_object) grasped = approached = true;
  if (grasped && is_delivered(state, intent, config)) delivered = true;
}

double ProgressTracker::progress() const {
  if (delivered) return 1.0;
  if (grasped) return 2.0 / 3.0;
  if (approached) return 1.0 / 3.0;
  return 0.0;
}

EpisodeResult run_episode(const ActionSource& source, const Scenario& scenario, int max_chunks,
                          const WorldConfig& config) {
  EpisodeResult result;
  WorldState state = scenario.state;
  ActionHistory history = empty_history(config);
  ProgressTracker tracker;
  for (int c = 0; c < max_chunks && !tracker.delivered; ++c) {
    ActionChunk chunk = source(state, history);
    if (chunk.rows() != config.chunk_length || chunk.cols() != kActionDim) {
      throw DimensionError("run_episode: action source returned " + shape_string(chunk));
    }
    result.trajectory.push_back({state, history, chunk, std::nullopt});
    for (Index t = 0; t < chunk.rows(); ++t) {
      apply_step(state, chunk.row(t), config);
      tracker.update(state, scenario.intent, config);
    }
    history = advance_history(history, chunk);
  }
  result.success = tracker.delivered;
  result.progress = tracker.progress();
  return result;
}

}  // namespace vlaverify::world
