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

#include "vlaverify/inference.hpp"

#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

namespace vlaverify::inference {

std::vector<Proposal> propose(const Policy& policy, const WorldState& o,
                              const rephrase::RephraseSet& rephrases, size_t m,
                              const RngStream& stream) {
  const auto pool = sampling::sample_hybrid(policy, o, rephrases, m, stream);
  std::vector<Proposal> out;
  out.reserve(pool.size());
  for (const auto& c : pool.candidates) out.push_back({c.k, c.j, c.action});
  return out;
}

std::vector<double> ActionScorer::score(const WorldState& o, const ActionHistory& h,
                                        const Instruction& l,
                                        const rephrase::TextEmbedding* cached_text,
                                        std::span<const ActionChunk> actions) const {
  const std::vector<ActionHistory> hist(actions.size(), h);
  return score_sequences(o, l, cached_text, hist, actions);
}

namespace {

void require_paired(std::span<const ActionHistory> histories, std::span<const ActionChunk> actions) {
  if (histories.size() != actions.size()) {
    throw std::invalid_argument("score: " + std::to_string(histories.size()) + " histories for " +
                                std::to_string(actions.size()) + " actions");
  }
}

}  // namespace

std::vector<double> EnsembleScorer::score_sequences(const WorldState& o, const Instruction& l,
                                                    const rephrase::TextEmbedding* cached_text,
                                                    std::span<const ActionHistory> histories,
                                                    std::span<const ActionChunk> actions) const {
  require_paired(histories, actions);
  const auto& enc = ensemble_.encoders();
  const VectorXr f = cached_text ? ensemble_.fused_embedding(enc.encode_obs(o), cached_text->tokens)
                                 : ensemble_.fused_embedding(enc.encode_obs(o), enc.encode_text(l));
  const MatrixXr a = ensemble_.action_embeddings(histories, actions);
  std::vector<double> out(actions.size());
  for (size_t i = 0; i < actions.size(); ++i) {
    out[i] = a.row(static_cast<Index>(i)).dot(f.transpose());
  }
  return out;
}

std::vector<double> OracleScorer::score_sequences(const WorldState& o, const Instruction& l,
                                                  const rephrase::TextEmbedding*,
                                                  std::span<const ActionHistory> histories,
                                                  std::span<const ActionChunk> actions) const {
  require_paired(histories, actions);
  const auto intent = world::resolve_intent(o, l.intent_id);
  const ActionChunk a_star = world::oracle_action(o, intent, config_);
  std::vector<double> out;
  out.reserve(actions.size());
  for (const auto& a : actions) out.push_back(-world::nrmse(a, a_star));
  return out;
}

std::vector<double> RandomScorer::score_sequences(const WorldState&, const Instruction&,
                                                  const rephrase::TextEmbedding*,
                                                  std::span<const ActionHistory> histories,
                                                  std::span<const ActionChunk> actions) const {
  require_paired(histories, actions);
  auto rng = RngStream(seed_).child(calls_.fetch_add(1)).engine();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> out(actions.size());
  for (auto& v : out) v = u(rng);
  return out;
}

ScoreMatrix score_all(const ActionScorer& scorer, const WorldState& o, const ActionHistory& h,
                      const Instruction& original, std::span<const Proposal> proposals, size_t k,
                      size_t m, const rephrase::TextEmbedding* cached_text) {
  if (k < 1 || m < 1) throw std::invalid_argument("score_all: K and M must be at least 1");
  if (proposals.size() != k * m) {
    throw std::invalid_argument("score_all: " + std::to_string(proposals.size()) +
                                " proposals do not fill a " + std::to_string(k) + "x" +
                                std::to_string(m) + " grid");
  }
  std::vector<ActionChunk> ordered(k * m);
  std::vector<bool> filled(k * m, false);
  for (const auto& p : proposals) {
    if (p.k >= k || p.j >= m || filled[p.k * m + p.j]) {
      throw std::invalid_argument("score_all: proposal (" + std::to_string(p.k) + ", " +
                                  std::to_string(p.j) + ") is outside the grid or repeated");
    }
    filled[p.k * m + p.j] = true;
    ordered[p.k * m + p.j] = p.action;
  }
  const auto scores = scorer.score(o, h, original, cached_text, ordered);
  ScoreMatrix s;
  s.values.resize(static_cast<Index>(k), static_cast<Index>(m));
  for (size_t i = 0; i < k * m; ++i) s.values.data()[i] = scores[i];
  s.rephrase_means = s.values.rowwise().mean();
  return s;
}

SelectionResult select(const ScoreMatrix& scores) {
  const auto& v = scores.values;
  if (v.rows() < 1 || v.cols() < 1) throw std::invalid_argument("select: empty score matrix");
  if (scores.rephrase_means.size() != v.rows()) {
    throw std::invalid_argument("select: rephrase means do not match the matrix");
  }
  SelectionResult r;
  r.score_matrix = scores;
  double best = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < v.rows(); ++k) {
    if (scores.rephrase_means(k) > best) {
      best = scores.rephrase_means(k);
      r.k_star = static_cast<size_t>(k);
    }
  }
  best = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < v.cols(); ++j) {
    if (v(static_cast<Index>(r.k_star), j) > best) {
      best = v(static_cast<Index>(r.k_star), j);
      r.j_star = static_cast<size_t>(j);
    }
  }
  return r;
}

VerifiedEpisode run_verified_episode(const Policy& policy, const ActionScorer& scorer,
                                     const world::Scenario& scenario,
                                     const InferenceConfig& config, const RngStream& stream) {
  if (config.K < 1 || config.M < 1) throw std::invalid_argument("inference: K and M must be >= 1");
  VerifiedEpisode episode;
  const auto* encoder = scorer.text_encoder();
  const uint64_t calls_before = encoder ? encoder->text_calls() : 0;

  rephrase::RephraseSet rephrases =
      rephrase::grammar_rephrase(scenario.instruction, config.K, config.rephrase_seed);
  if (config.cache_text && encoder) rephrases = rephrase::boot_time_cache(std::move(rephrases), *encoder);
  const rephrase::TextEmbedding* cached =
      rephrases.cached_text_embeddings ? &rephrases.cached_text_embeddings->front() : nullptr;

  int step = 0;
  auto source = [&](const WorldState& o, const ActionHistory& h) {
    try {
      const auto proposals = propose(policy, o, rephrases, config.M, stream.child(static_cast<uint64_t>(step)));
      SelectionResult sel =
          select(score_all(scorer, o, h, scenario.instruction, proposals, config.K, config.M, cached));
      sel.chosen_action = proposals[sel.k_star * config.M + sel.j_star].action;
      sel.chosen_rephrase = rephrases.variants[sel.k_star];
      episode.per_step.push_back(sel);
      ++step;
      return sel.chosen_action;
    } catch (const EpisodeError&) {
      throw;
    } catch (const std::exception& e) {
      throw EpisodeError(step, e.what());
    }
  };
  episode.result = world::run_episode(source, scenario, config.max_chunks, policy.config());
  for (size_t t = 0; t < episode.result.trajectory.size(); ++t) {
    const auto& sel = episode.per_step[t];
    episode.result.trajectory[t].score =
        sel.score_matrix.values(static_cast<Index>(sel.k_star), static_cast<Index>(sel.j_star));
  }
  episode.text_encoder_calls = encoder ? encoder->text_calls() - calls_before : 0;
  return episode;
}

world::EpisodeResult run_bare_episode(const Policy& policy, const world::Scenario& scenario,
                                      int max_chunks, const RngStream& stream) {
  uint64_t step = 0;
  auto source = [&](const WorldState& o, const ActionHistory&) {
    auto rng = stream.child(step++).substream(0, 0).engine();
    return policy.sample(o, scenario.instruction, rng);
  };
  return world::run_episode(source, scenario, max_chunks, policy.config());
}

std::vector<TracePoint> score_trace(const ActionScorer& scorer,
                                    const std::vector<world::TrajectoryStep>& trajectory,
                                    const Instruction& original) {
  if (trajectory.empty()) throw std::invalid_argument("score_trace: empty trajectory");
  std::vector<TracePoint> out;
  out.reserve(trajectory.size());
  for (size_t t = 0; t < trajectory.size(); ++t) {
    const auto& s = trajectory[t];
    const auto v = scorer.score(s.observation, s.history, original, nullptr, std::span(&s.action, 1));
    out.push_back({t, v.front()});
  }
  return out;
}

void write_trace_header(std::ostream& out) { out << "episode_id,step,score,success\n"; }

void write_trace_rows(std::ostream& out, size_t episode_id, const std::vector<TracePoint>& trace,
                      bool success) {
  for (const auto& p : trace) {
    out << episode_id << ',' << p.step << ',' << world::format_real(p.score) << ','
        << (success ? 1 : 0) << '\n';
  }
}

std::string episode_report(uint64_t seed, const InferenceConfig& config,
                           const VerifiedEpisode& episode) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["config"] = {{"K", config.K}, {"M", config.M}, {"rephrase_seed", config.rephrase_seed},
                 {"max_chunks", config.max_chunks}, {"cache_text", config.cache_text}};
  j["success"] = episode.result.success;
  j["progress"] = episode.result.progress;
  j["steps"] = episode.result.trajectory.size();
  auto steps = nlohmann::ordered_json::array();
  for (const auto& s : episode.per_step) {
    std::vector<double> means(s.score_matrix.rephrase_means.data(),
                              s.score_matrix.rephrase_means.data() + s.score_matrix.rephrase_means.size());
    steps.push_back({{"k_star", s.k_star}, {"j_star", s.j_star}, {"S", means}});
  }
  j["per_step"] = std::move(steps);
  return j.dump();
}

}  // namespace vlaverify::inference
