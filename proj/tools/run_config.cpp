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

#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace vlaverify::cli {

namespace {

struct KeySpec {
  ValueType type;
  const char* default_value;
};

const std::map<std::string, KeySpec>& schema() {
  using T = ValueType;
  static const std::map<std::string, KeySpec> keys = {
      {"seed", {T::Uint, "0"}},
      {"world.chunk_length", {T::Int, "8"}},
      {"world.history_window", {T::Int, "8"}},
      {"world.step_size", {T::Real, "0.04"}},
      {"world.gain", {T::Real, "8"}},
      {"policy.drift_scale", {T::Real, "0.3"}},
      {"policy.noise_temperature", {T::Real, "0.1"}},
      {"policy.good_phrase_fraction", {T::Real, "0.5"}},
      {"policy.seed", {T::Uint, "0"}},
      {"data.tuples", {T::Uint, "5000"}},
      {"data.rephrases_per_intent", {T::Uint, "16"}},
      {"model.width", {T::Uint, "64"}},
      {"model.embed_dim", {T::Uint, "64"}},
      {"model.action_layers", {T::Uint, "2"}},
      {"model.action_heads", {T::Uint, "2"}},
      {"model.ffn_dim", {T::Uint, "128"}},
      {"train.batch_size", {T::Uint, "64"}},
      {"train.steps", {T::Uint, "2000"}},
      {"train.lr", {T::Real, "0.001"}},
      {"train.temperature", {T::Real, "0.1"}},
      {"ensemble.size", {T::Uint, "1"}},
      {"eval.tuples", {T::Uint, "1000"}},
      {"eval.pool_size", {T::Uint, "64"}},
      {"eval.rmse_ns", {T::IntList, "1,2,4,16"}},
      {"infer.episodes", {T::Uint, "100"}},
      {"infer.K", {T::Uint, "8"}},
      {"infer.M", {T::Uint, "5"}},
      {"infer.max_chunks", {T::Uint, "12"}},
      {"infer.cache_text", {T::Bool, "true"}},
      {"infer.scorer", {T::String, "verifier"}},
      {"scale.strategies", {T::StringList, "repeated,gaussian,rephrase,hybrid"}},
      {"scale.k_grid", {T::IntList, "1,2,4,8,16,32,64"}},
      {"scale.n_tuples", {T::Uint, "200"}},
      {"scale.fit_n", {T::Uint, "8"}},
      {"scale.eps", {T::Real, "0.001"}},
      {"scale.hybrid_max_rephrases", {T::Uint, "8"}},
      {"scale.resamples", {T::Uint, "1000"}},
      {"study.axis", {T::String, "data_multiplier"}},
      {"study.levels", {T::RealList, "1,2,4"}},
      {"study.seeds", {T::IntList, "0,1,2"}},
      {"study.train_tuples", {T::Uint, "500"}},
      {"study.eval_tuples", {T::Uint, "200"}},
      {"study.rephrases_per_intent", {T::Uint, "4"}},
      {"study.steps", {T::Uint, "300"}},
      {"bench.batch_sizes", {T::IntList, "1,2,4,8,16,32"}},
      {"bench.repeats", {T::Uint, "5"}},
      {"bench.warmup", {T::Uint, "2"}},
      {"bench.policy_fixed_ms", {T::Real, "20"}},
      {"bench.policy_per_sample_ms", {T::Real, "1.5"}},
      {"bench.overlap", {T::Bool, "true"}},
      {"rephrase.k", {T::Uint, "8"}},
      {"rephrase.remote.endpoint", {T::String, ""}},
      {"rephrase.remote.model", {T::String, ""}},
      {"rephrase.remote.api_key_env", {T::String, "VLAVERIFY_API_KEY"}},
      {"rephrase.remote.timeout_ms", {T::Uint, "30000"}},
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0") return out = false, true;
  return false;
}

bool valid_scalar(ValueType type, const std::string& s) {
  int64_t i;
  uint64_t u;
  double d;
  bool b;
  switch (type) {
    case ValueType::Int:
    case ValueType::IntList:
      return parse_number(s, i);
    case ValueType::Uint:
      return parse_number(s, u);
    case ValueType::Real:
    case ValueType::RealList:
      return parse_number(s, d);
    case ValueType::Bool:
      return parse_bool(s, b);
    case ValueType::String:
    case ValueType::StringList:
      return true;
  }
  return false;
}

bool is_list(ValueType t) {
  return t == ValueType::IntList || t == ValueType::RealList || t == ValueType::StringList;
}

}  // namespace

const char* type_name(ValueType type) {
  switch (type) {
    case ValueType::Int:
      return "int";
    case ValueType::Uint:
      return "non-negative int";
    case ValueType::Real:
      return "real";
    case ValueType::Bool:
      return "bool";
    case ValueType::String:
      return "string";
    case ValueType::IntList:
      return "list of int";
    case ValueType::RealList:
      return "list of real";
    case ValueType::StringList:
      return "list of string";
  }
  return "?";
}

RunConfig::RunConfig() {
  for (const auto& [key, spec] : schema()) values_[key] = spec.default_value;
}

ValueType RunConfig::type_of(const std::string& key) {
  const auto it = schema().find(key);
  if (it == schema().end()) throw ConfigError(key, "unknown config key '" + key + "'");
  return it->second.type;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const ValueType type = type_of(key);
  const std::string v = trim(value);
  const auto items = is_list(type) ? split_list(v) : std::vector<std::string>{v};
  for (const auto& item : items) {
    if (!valid_scalar(type, item)) {
      throw ConfigError(key, "config key '" + key + "' expects " + type_name(type) + ", got '" +
                                 v + "'");
    }
  }
  values_[key] = v;
}

void RunConfig::merge_text(std::istream& in, const std::string& source) {
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  merge_text(in, path.string());
}

void RunConfig::merge_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("", "override '" + assignment + "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& RunConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::require_type(const std::string& key, ValueType type) const {
  if (type_of(key) != type) {
    throw ConfigError(key, std::string("config key '") + key + "' is not of type " +
                               type_name(type));
  }
}

int64_t RunConfig::get_int(const std::string& key) const {
  require_type(key, ValueType::Int);
  int64_t v = 0;
  parse_number(raw(key), v);
  return v;
}

uint64_t RunConfig::get_uint(const std::string& key) const {
  require_type(key, ValueType::Uint);
  uint64_t v = 0;
  parse_number(raw(key), v);
  return v;
}

double RunConfig::get_real(const std::string& key) const {
  require_type(key, ValueType::Real);
  double v = 0.0;
  parse_number(raw(key), v);
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  require_type(key, ValueType::Bool);
  bool v = false;
  parse_bool(raw(key), v);
  return v;
}

std::vector<int64_t> RunConfig::get_int_list(const std::string& key) const {
  require_type(key, ValueType::IntList);
  std::vector<int64_t> out;
  for (const auto& item : split_list(raw(key))) parse_number(item, out.emplace_back());
  return out;
}

std::vector<double> RunConfig::get_real_list(const std::string& key) const {
  require_type(key, ValueType::RealList);
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) parse_number(item, out.emplace_back());
  return out;
}

std::vector<std::string> RunConfig::get_string_list(const std::string& key) const {
  require_type(key, ValueType::StringList);
  return split_list(raw(key));
}

void RunConfig::write(std::ostream& out) const {
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
}

void RunConfig::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("", "cannot write " + path.string());
  write(out);
}

}  // namespace vlaverify::cli
