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

// Line-delimited dataset records: one self-describing JSON object per
// (observation, history, instruction, action) tuple. Reals are written with
// 17 significant digits so a read-back reproduces every bit.

#pragma once

#include "vlaverify/world.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace vlaverify::world {

struct DatasetRecord {
  uint64_t world_seed = 0;
  WorldState state;
  ActionHistory history;
  std::vector<std::string> instruction_tokens;
  uint64_t intent_id = 0;
  ActionChunk action;

  Instruction instruction() const { return Instruction(instruction_tokens, intent_id); }
};

std::string format_real(double v);
std::string to_json_line(const DatasetRecord& record);
DatasetRecord parse_record(const std::string& line);

void write_records(std::ostream& out, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_records(std::istream& in);
void write_records_file(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_records_file(const std::string& path);

/// Samples tuples from oracle rollouts: world i uses seed hash(seed, i) and
/// contributes the chunk at a uniformly chosen step before delivery.
std::vector<DatasetRecord> sample_oracle_tuples(uint64_t seed, int n_tuples,
                                                const WorldConfig& config = {},
                                                int n_objects = 3, int n_containers = 2);

}  // namespace vlaverify::world
