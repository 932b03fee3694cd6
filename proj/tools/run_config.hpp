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

// Flat key=value run configuration with a typed schema. Files hold one
// `key = value` per line ('#' starts a comment); list values are
// comma-separated. Later sources override earlier ones.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlaverify::cli {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class ValueType { Int, Uint, Real, Bool, String, IntList, RealList, StringList };

const char* type_name(ValueType type);

class RunConfig {
 public:
  /// All keys at their defaults.
  RunConfig();

  /// Validates against the schema; rejects unknown keys and mistyped values.
  void set(const std::string& key, const std::string& value);
  void merge_file(const std::filesystem::path& path);
  void merge_text(std::istream& in, const std::string& source);
  /// "key=value" overrides, as given to --set.
  void merge_assignment(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& raw(const std::string& key) const;

  int64_t get_int(const std::string& key) const;
  uint64_t get_uint(const std::string& key) const;
  size_t get_size(const std::string& key) const { return static_cast<size_t>(get_uint(key)); }
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  const std::string& get_string(const std::string& key) const { return raw(key); }
  std::vector<int64_t> get_int_list(const std::string& key) const;
  std::vector<double> get_real_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  /// Resolved config, one sorted `key = value` per line.
  void write(std::ostream& out) const;
  void write_file(const std::filesystem::path& path) const;

  static ValueType type_of(const std::string& key);

 private:
  void require_type(const std::string& key, ValueType type) const;
  std::map<std::string, std::string> values_;
};

}  // namespace vlaverify::cli
