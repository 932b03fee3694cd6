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

// Optional rephrasing through a chat-completions endpoint, using the shipped
// prompt files. Never required offline; callers usually wrap it with the
// grammar fallback.

#pragma once

#include "vlaverify/rephrase.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlaverify::rephrase {

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RemoteProviderConfig {
  std::string endpoint_url;  // e.g. https://host/v1/chat/completions
  std::string model_name;
  std::string api_key_env_var = "VLAVERIFY_API_KEY";
  std::chrono::milliseconds timeout{30000};
  double temperature = 1.0;
  std::string system_prompt;
  std::string user_prompt_template;
};

/// Directory holding system_prompt.txt and user_prompt.txt.
std::filesystem::path default_prompt_dir();

/// Reads both prompt files; throws if either is missing or empty.
RemoteProviderConfig load_prompts(RemoteProviderConfig config,
                                  const std::filesystem::path& prompt_dir = default_prompt_dir());

std::string fill_user_prompt(const std::string& prompt_template, const std::string& instruction,
                             size_t batch_number);

/// Textual stand-in for the scene image.
std::string describe_scene(const world::WorldState& state);

/// Items of the last numbered list ("1. ...", "2) ...") in `content`,
/// numbered consecutively from 1. Surrounding quotes and commas are stripped.
std::vector<std::string> parse_numbered_list(const std::string& content);

/// Asks for K-1 rephrases (the original is always variants[0]). Throws
/// ProviderError on transport failure, non-2xx status, a malformed list or
/// fewer than K-1 items.
RephraseSet remote_rephrase(const Instruction& instruction, const std::string& scene_description,
                            size_t k, const RemoteProviderConfig& config);

using WarningSink = std::function<void(const std::string&)>;

/// remote_rephrase, falling back to grammar_rephrase (with a warning) when the
/// provider fails.
RephraseSet rephrase_with_fallback(const Instruction& instruction,
                                   const std::string& scene_description, size_t k, uint64_t seed,
                                   const RemoteProviderConfig& config, const WarningSink& warn = {});

}  // namespace vlaverify::rephrase
