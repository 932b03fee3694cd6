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

// Synthetic tabletop world: a 2-D gripper, a few colored objects and
// containers, an oracle controller, and a stochastic base policy whose
// output depends on the surface form of the instruction it is given.

#pragma once

#include "vlaverify/numerics.hpp"
#include "vlaverify/random.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlaverify::world {

inline constexpr int kActionDim = 4;  // dx, dy, dgrasp, pad
inline constexpr int kNumColors = 6;
inline constexpr int kNumShapes = 4;
inline constexpr int kNumContainerKinds = 4;

enum class Color : int { Red, Green, Blue, Yellow, Orange, Purple };
enum class Shape : int { Block, Ball, Cylinder, Ring };
enum class ContainerKind : int { Plate, Bowl, Basket, Tray };
enum class Verb : int { Put, Stack };

const char* color_name(Color c);
const char* shape_name(Shape s);
const char* container_name(ContainerKind k);
const char* verb_name(Verb v);
/// Canonical preposition used with a destination ("on" for plates, "in" for bowls).
const char* container_preposition(ContainerKind k);

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct Object {
  int id = 0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Color color = Color::Red;
  Shape shape = Shape::Block;
};

struct Gripper {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double grasp = 0.0;  // 0 open, 1 closed
};

struct Container {
  int id = 0;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Color color = Color::Red;
  ContainerKind kind = ContainerKind::Plate;
};

struct WorldState {
  std::vector<Object> objects;
  Gripper gripper;
  std::vector<Container> containers;
  int held = -1;  // id of the object latched in the gripper

  const Object& object(int id) const;
  Object& object(int id);
  const Container& container(int id) const;
};

bool operator==(const WorldState& a, const WorldState& b);

struct Intent {
  Verb verb = Verb::Put;
  int target_object = 0;
  int destination = 0;  // container id for Put, object id for Stack
};

/// The world-independent meaning of an intent: which attributes name the
/// target and the destination. Instructions carry its hash as intent_id.
struct IntentKey {
  Verb verb = Verb::Put;
  Color target_color = Color::Red;
  Shape target_shape = Shape::Block;
  ContainerKind destination_kind = ContainerKind::Plate;  // Put
  Color destination_color = Color::Red;                   // Stack
  Shape destination_shape = Shape::Block;                 // Stack

  uint64_t hash() const;
  friend bool operator==(const IntentKey&, const IntentKey&) = default;
};

IntentKey intent_key(const WorldState& state, const Intent& intent);
/// Finds the intent in `state` whose key hashes to `intent_id`.
Intent resolve_intent(const WorldState& state, uint64_t intent_id);
void validate_intent(const WorldState& state, const Intent& intent);

struct Instruction {
  std::vector<std::string> tokens;
  uint64_t intent_id = 0;
  uint64_t surface_id = 0;

  Instruction() = default;
  Instruction(std::vector<std::string> toks, uint64_t intent);

  std::string text() const;
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

uint64_t surface_hash(const std::vector<std::string>& tokens);
std::vector<std::string> tokenize(const std::string& text);
/// Template rendering used for dataset instructions.
Instruction canonical_instruction(const IntentKey& key);

using ActionChunk = MatrixXr;    // H x kActionDim, entries in [-1, 1]
using ActionHistory = MatrixXr;  // W x kActionDim, zero padded at episode start

struct WorldConfig {
  int chunk_length = 8;
  int history_window = 8;
  double step_size = 0.04;        // displacement per unit action per step
  double gain = 8.0;              // proportional controller gain
  double grasp_rate = 0.5;
  double grasp_radius = 0.06;
  double deliver_tolerance = 0.05;
  double min_separation = 0.15;
};

struct Scenario {
  uint64_t seed = 0;
  WorldState state;
  Intent intent;
  Instruction instruction;
};

Scenario generate_world(uint64_t seed, int n_objects = 3, int n_containers = 2);

Eigen::Vector2d destination_position(const WorldState& state, const Intent& intent);

/// Integrates one control step in place.
void apply_step(WorldState& state, const Eigen::Ref<const RowVectorXr>& step,
                const WorldConfig& config);

/// H-step proportional controller: approach, grasp, carry. `goal_offset`
/// displaces every goal the controller steers to.
ActionChunk controller_chunk(const WorldState& state, const Intent& intent,
                             const WorldConfig& config,
                             const Eigen::Vector2d& goal_offset = Eigen::Vector2d::Zero());

ActionChunk oracle_action(const WorldState& state, const Intent& intent, const WorldConfig& config);
ActionChunk oracle_action(const WorldState& state, const Intent& intent, int chunk_length);

/// Root mean squared error over all entries divided by the action range (2).
double nrmse(const ActionChunk& a, const ActionChunk& a_star);

struct BasePolicyParams {
  double drift_scale = 0.3;
  double noise_temperature = 0.1;
  double good_phrase_fraction = 0.5;
  uint64_t seed = 0;
};

bool is_good_phrase(uint64_t surface_id, const BasePolicyParams& params);
/// Deterministic goal displacement induced by a surface form.
Eigen::Vector2d phrase_drift(uint64_t surface_id, const BasePolicyParams& params);

ActionChunk base_policy_sample(const WorldState& state, const Instruction& instruction,
                               const BasePolicyParams& params, const WorldConfig& config,
                               std::mt19937_64& rng);

/// Adds noise to a noiseless policy chunk; shared by batched sampling.
ActionChunk perturb_chunk(const ActionChunk& mean, double temperature, std::mt19937_64& rng);

ActionHistory empty_history(const WorldConfig& config);
/// Slides the history window by the executed chunk.
ActionHistory advance_history(const ActionHistory& history, const ActionChunk& executed);

/// Staged task progress: approached, grasped, delivered.
struct ProgressTracker {
  bool approached = false;
  bool grasped = false;
  bool delivered = false;

  void update(const WorldState& state, const Intent& intent, const WorldConfig& config);
  double progress() const;
};

bool is_delivered(const WorldState& state, const Intent& intent, const WorldConfig& config);

struct TrajectoryStep {
  WorldState observation;
  ActionHistory history;
  ActionChunk action;
  std::optional<double> score;
};

struct EpisodeResult {
  std::vector<TrajectoryStep> trajectory;
  bool success = false;
  double progress = 0.0;
};

using ActionSource = std::function<ActionChunk(const WorldState&, const ActionHistory&)>;

EpisodeResult run_episode(const ActionSource& source, const Scenario& scenario, int max_chunks,
                          const WorldConfig& config = {});

}  // namespace vlaverify::world
