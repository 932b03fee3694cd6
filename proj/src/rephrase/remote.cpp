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

#include "vlaverify/remote.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

#ifndef VLAVERIFY_PROMPT_DIR
#define VLAVERIFY_PROMPT_DIR "data/prompts"
#endif

namespace vlaverify::rephrase {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open prompt file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (ss.str().empty()) throw std::runtime_error("prompt file " + path.string() + " is empty");
  return ss.str();
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n\"',");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"',");
  return s.substr(b, e - b + 1);
}

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ProviderError("endpoint url has no scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::filesystem::path default_prompt_dir() { return VLAVERIFY_PROMPT_DIR; }

RemoteProviderConfig load_prompts(RemoteProviderConfig config,
                                  const std::filesystem::path& prompt_dir) {
  config.system_prompt = read_file(prompt_dir / "system_prompt.txt");
  config.user_prompt_template = read_file(prompt_dir / "user_prompt.txt");
  return config;
}

std::string fill_user_prompt(const std::string& prompt_template, const std::string& instruction,
                             size_t batch_number) {
  std::string out = prompt_template;
  replace_all(out, "{instruction}", instruction);
  replace_all(out, "{batch_number}", std::to_string(batch_number));
  return out;
}

std::string describe_scene(const world::WorldState& state) {
  std::ostringstream s;
  char buf[64];
  s << "A flat table seen from above.";
  for (const auto& o : state.objects) {
    std::snprintf(buf, sizeof buf, " at (%.2f, %.2f).", o.position.x(), o.position.y());
    s << " A " << world::color_name(o.color) << ' ' << world::shape_name(o.shape) << buf;
  }
  for (const auto& c : state.containers) {
    std::snprintf(buf, sizeof buf, " at (%.2f, %.2f).", c.position.x(), c.position.y());
    s << " A " << world::color_name(c.color) << ' ' << world::container_name(c.kind) << buf;
  }
  std::snprintf(buf, sizeof buf, " The gripper is at (%.2f, %.2f).", state.gripper.position.x(),
                state.gripper.position.y());
  s << buf;
  return s.str();
}

std::vector<std::string> parse_numbered_list(const std::string& content) {
  static const std::regex item(R"(^\s*(\d+)[.)]\s+(.+)$)");
  std::vector<std::string> current, last;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::smatch m;
    if (!std::regex_match(line, m, item)) continue;
    const size_t n = std::stoul(m[1].str());
    if (n == 1) {
      current.clear();
    } else if (n != current.size() + 1) {
      throw ProviderError("malformed numbered list: item " + std::to_string(n) + " follows item " +
                          std::to_string(current.size()));
    }
    current.push_back(trim(m[2].str()));
    last = current;
  }
  if (last.empty()) throw ProviderError("malformed response: no numbered list found");
  return last;
}

RephraseSet remote_rephrase(const Instruction& instruction, const std::string& scene_description,
                            size_t k, const RemoteProviderConfig& config) {
  if (k < 1 || k > 32) throw std::invalid_argument("remote_rephrase: K must be in [1, 32]");
  if (config.system_prompt.empty() || config.user_prompt_template.empty()) {
    throw ProviderError("remote provider prompts are not loaded");
  }
  RephraseSet set;
  set.original = instruction;
  set.source = RephraseSource::Remote;
  set.variants.push_back(instruction);
  if (k == 1) return set;

  const size_t wanted = k - 1;
  nlohmann::json body = {
      {"model", config.model_name},
      {"temperature", config.temperature},
      {"messages",
       {{{"role", "system"}, {"content", config.system_prompt}},
        {{"role", "user"},
         {"content", fill_user_prompt(config.user_prompt_template, instruction.text(), wanted)}},
        {{"role", "user"}, {"content", "Scene description: " + scene_description}}}},
  };

  const Endpoint ep = split_url(config.endpoint_url);
  httplib::Client client(ep.base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!config.api_key_env_var.empty()) {
    const char* key = std::getenv(config.api_key_env_var.c_str());
    if (key == nullptr || *key == '\0') {
      throw ProviderError("API key variable " + config.api_key_env_var + " is not set");
    }
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = client.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) {
    throw ProviderError("provider unreachable at " + config.endpoint_url + ": " +
                        httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProviderError("provider returned HTTP " + std::to_string(res->status));
  }
  std::string content;
  try {
    const auto reply = nlohmann::json::parse(res->body);
    content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("malformed provider response: ") + e.what());
  }
  const auto items = parse_numbered_list(content);
  if (items.size() < wanted) {
    throw ProviderError("provider returned " + std::to_string(items.size()) + " rephrases, " +
                        std::to_string(wanted) + " requested");
  }
  for (size_t i = 0; i < wanted; ++i) {
    auto tokens = world::tokenize(items[i]);
    if (tokens.empty()) throw ProviderError("provider returned an empty rephrase");
    set.variants.emplace_back(std::move(tokens), instruction.intent_id);
  }
  return set;
}

RephraseSet rephrase_with_fallback(const Instruction& instruction,
                                   const std::string& scene_description, size_t k, uint64_t seed,
                                   const RemoteProviderConfig& config, const WarningSink& warn) {
  try {
    return remote_rephrase(instruction, scene_description, k, config);
  } catch (const ProviderError& e) {
    const std::string msg =
        std::string("warning: remote rephrasing failed (") + e.what() + "), using grammar";
    if (warn) {
      warn(msg);
    } else {
      std::cerr << msg << '\n';
    }
    return grammar_rephrase(instruction, k, seed);
  }
}

}  // namespace vlaverify::rephrase
