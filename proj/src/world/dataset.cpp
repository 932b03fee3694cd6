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

#include "vlaverify/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace vlaverify::world {
namespace {

using nlohmann::json;

void put_vec2(std::string& out, const Eigen::Vector2d& v) {
  out += '[';
  out += format_real(v.x());
  out += ',';
  out += format_real(v.y());
  out += ']';
}

void put_matrix(std::string& out, const MatrixXr& m) {
  out += '[';
  for (Index r = 0; r < m.rows(); ++r) {
    if (r) out += ',';
    out += '[';
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_real(m(r, c));
    }
    out += ']';
  }
  out += ']';
}

std::string quoted(const std::string& s) { return json(s).dump(); }

Eigen::Vector2d get_vec2(const json& j) {
  return Eigen::Vector2d(j.at(0).get<double>(), j.at(1).get<double>());
}

MatrixXr get_matrix(const json& j) {
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows ? static_cast<Index>(j.at(0).size()) : 0;
  MatrixXr m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (static_cast<Index>(j.at(r).size()) != cols) throw std::runtime_error("ragged matrix");
    for (Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

}  // namespace

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string to_json_line(const DatasetRecord& r) {
  std::string out = "{\"world_seed\":" + std::to_string(r.world_seed) + ",\"state\":{\"objects\":[";
  for (size_t i = 0; i < r.state.objects.size(); ++i) {
    const auto& o = r.state.objects[i];
    if (i) out += ',';
    out += "{\"id\":" + std::to_string(o.id) + ",\"position\":";
    put_vec2(out, o.position);
    out += ",\"color\":" + quoted(color_name(o.color)) + ",\"shape\":" + quoted(shape_name(o.shape)) +
           "}";
  }
  out += "],\"gripper\":{\"position\":";
  put_vec2(out, r.state.gripper.position);
  out += ",\"grasp\":" + format_real(r.state.gripper.grasp) + "},\"containers\":[";
  for (size_t i = 0; i < r.state.containers.size(); ++i) {
    const auto& c = r.state.containers[i];
    if (i) out += ',';
    out += "{\"id\":" + std::to_string(c.id) + ",\"position\":";
    put_vec2(out, c.position);
    out += ",\"color\":" + quoted(color_name(c.color)) + ",\"kind\":" + quoted(container_name(c.kind)) +
           "}";
  }
  out += "],\"held\":" + std::to_string(r.state.held) + "},\"history\":";
  put_matrix(out, r.history);
  out += ",\"instruction_tokens\":[";
  for (size_t i = 0; i < r.instruction_tokens.size(); ++i) {
    if (i) out += ',';
    out += quoted(r.instruction_tokens[i]);
  }
  out += "],\"intent_id\":" + std::to_string(r.intent_id) + ",\"action\":";
  put_matrix(out, r.action);
  out += '}';
  return out;
}

namespace {

template <typename Enum, int N>
Enum enum_from_name(const std::string& name, const char* (*namer)(Enum), const char* what) {
  for (int i = 0; i < N; ++i) {
    if (name == namer(static_cast<Enum>(i))) return static_cast<Enum>(i);
  }
  throw std::runtime_error(std::string("unknown ") + what + " '" + name + "'");
}

}  // namespace

DatasetRecord parse_record(const std::string& line) {
  const json j = json::parse(line);
  DatasetRecord r;
  r.world_seed = j.at("world_seed").get<uint64_t>();
  const json& s = j.at("state");
  for (const auto& o : s.at("objects")) {
    Object obj;
    obj.id = o.at("id").get<int>();
    obj.position = get_vec2(o.at("position"));
    obj.color = enum_from_name<Color, kNumColors>(o.at("color").get<std::string>(), color_name,
                                                  "color");
    obj.shape = enum_from_name<Shape, kNumShapes>(o.at("shape").get<std::string>(), shape_name,
                                                  "shape");
    r.state.objects.push_back(obj);
  }
  r.state.gripper.position = get_vec2(s.at("gripper").at("position"));
  r.state.gripper.grasp = s.at("gripper").at("grasp").get<double>();
  for (const auto& c : s.at("containers")) {
    Container con;
    con.id = c.at("id").get<int>();
    con.position = get_vec2(c.at("position"));
    con.color = enum_from_name<Color, kNumColors>(c.at("color").get<std::string>(), color_name,
                                                  "color");
    con.kind = enum_from_name<ContainerKind, kNumContainerKinds>(c.at("kind").get<std::string>(),
                                                                 container_name, "container");
    r.state.containers.push_back(con);
  }
  r.state.held = s.at("held").get<int>();
  r.history = get_matrix(j.at("history"));
  r.instruction_tokens = j.at("instruction_tokens").get<std::vector<std::string>>();
  r.intent_id = j.at("intent_id").get<uint64_t>();
  r.action = get_matrix(j.at("action"));
  return r;
}

void write_records(std::ostream& out, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

std::vector<DatasetRecord> read_records(std::istream& in) {
  std::vector<DatasetRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_records_file(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_records(out, records);
}

std::vector<DatasetRecord> read_records_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_records(in);
}

std::vector<DatasetRecord> sample_oracle_tuples(uint64_t seed, int n_tuples,
                                                const WorldConfig& config, int n_objects,
                                                int n_containers) {
  std::vector<DatasetRecord> out;
  out.reserve(static_cast<size_t>(n_tuples));
  const RngStream root(seed);
  for (int i = 0; i < n_tuples; ++i) {
    const uint64_t world_seed = root.child(static_cast<uint64_t>(i)).key();
    const Scenario sc = generate_world(world_seed, n_objects, n_containers);
    const auto oracle = [&](const WorldState& s, const ActionHistory&) {
      return oracle_action(s, sc.intent, config);
    };
    const EpisodeResult ep = run_episode(oracle, sc, 20, config);
    auto rng = root.child(static_cast<uint64_t>(i)).child("pick").engine();
    std::uniform_int_distribution<size_t> pick(0, ep.trajectory.size() - 1);
    const auto& step = ep.trajectory[pick(rng)];
    DatasetRecord r;
    r.world_seed = world_seed;
    r.state = step.observation;
    r.history = step.history;
    r.instruction_tokens = sc.instruction.tokens;
    r.intent_id = sc.instruction.intent_id;
    r.action = step.action;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace vlaverify::world
