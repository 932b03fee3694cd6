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

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vlaverify {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

/// 64-bit FNV-1a.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Maps a hash to [0, 1).
inline double unit_interval(uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

/// A position in a tree of reproducible random streams. Any leaf can be
/// recreated from the root seed and its path, so a single candidate can be
/// regenerated in isolation.
class RngStream {
 public:
  explicit RngStream(uint64_t seed = 0) : key_(splitmix64(seed)) {}

  RngStream child(uint64_t index) const { return RngStream(hash_combine(key_, index), Tag{}); }
  RngStream child(std::string_view label) const { return child(fnv1a(label)); }
  RngStream substream(uint64_t k, uint64_t j) const { return child(k).child(j); }

  std::mt19937_64 engine() const { return std::mt19937_64(key_); }
  uint64_t key() const { return key_; }

 private:
  struct Tag {};
  RngStream(uint64_t key, Tag) : key_(key) {}
  uint64_t key_;
};

}  // namespace vlaverify
