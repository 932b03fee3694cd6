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

#include "vlaverify/sampling.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace vlaverify::sampling {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Repeated:
      return "repeated";
    case Strategy::Gaussian:
      return "gaussian";
    case Strategy::Rephrase:
      return "rephrase";
    case Strategy::Hybrid:
      return "hybrid";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (auto s : {Strategy::Repeated, Strategy::Gaussian, Strategy::Rephrase, Strategy::Hybrid}) {
    if (name == strategy_name(s)) return s;
  }
  throw std::invalid_argument("unknown strategy '" + name +
                              "' (expected repeated, gaussian, rephrase or hybrid)");
}

ActionChunk Policy::sample(const WorldState& state, const Instruction& instruction,
                           std::mt19937_64& rng) const {
  forwards_.fetch_add(1);
  return world::base_policy_sample(state, instruction, params_, config_, rng);
}

GaussianFit GaussianFit::fit(std::span<const ActionChunk> samples, double eps) {
  if (samples.empty()) throw std::invalid_argument("GaussianFit: no samples");
  if (!(eps > 0.0)) throw ConfigurationError("GaussianFit: eps must be positive");
  GaussianFit g;
  g.rows = samples[0].rows();
  g.cols = samples[0].cols();
  const Index n = g.rows * g.cols;
  g.mean = VectorXr::Zero(n);
  for (const auto& s : samples) {
    require_same_shape(s, samples[0], "GaussianFit");
    g.mean += Eigen::Map<const VectorXr>(s.data(), n);
  }
  g.mean /= static_cast<double>(samples.size());
  VectorXr var = VectorXr::Zero(n);
  for (const auto& s : samples) {
    var += (Eigen::Map<const VectorXr>(s.data(), n) - g.mean).cwiseAbs2();
  }
  var /= static_cast<double>(samples.size());
  g.std = var.cwiseSqrt().cwiseMax(eps);
  return g;
}

ActionChunk GaussianFit::draw(std::mt19937_64& rng) const {
  std::normal_distribution<double> z(0.0, 1.0);
  ActionChunk out(rows, cols);
  for (Index i = 0; i < out.size(); ++i) {
    out.data()[i] = std::clamp(mean(i) + std(i) * z(rng), -1.0, 1.0);
  }
  return out;
}

namespace {

void finish_budget(CandidatePool& pool, const Policy& policy) {
  pool.budget.candidate_count = pool.candidates.size();
  pool.budget.flops_proxy =
      flops_proxy(pool.budget.policy_forward_count, 0, ModelSizes{policy.param_count(), 0.0});
}

CandidatePool fan_out(const Policy& policy, const WorldState& state,
                      const rephrase::RephraseSet& rephrases, size_t m_per,
                      const RngStream& stream, Strategy strategy) {
  if (rephrases.variants.empty()) throw std::invalid_argument("sampling: empty rephrase set");
  if (m_per < 1) throw std::invalid_argument("sampling: need at least one sample per rephrase");
  CandidatePool pool;
  pool.strategy = strategy;
  pool.candidates.reserve(rephrases.size() * m_per);
  for (size_t k = 0; k < rephrases.size(); ++k) {
    for (size_t j = 0; j < m_per; ++j) {
      auto rng = stream.substream(k, j).engine();
      pool.candidates.push_back({policy.sample(state, rephrases.variants[k], rng), k, j});
    }
  }
  pool.budget.policy_forward_count = pool.candidates.size();
  finish_budget(pool, policy);
  return pool;
}

}  // namespace

CandidatePool sample_repeated(const Policy& policy, const WorldState& state,
                              const Instruction& instruction, size_t m, const RngStream& stream) {
  if (m < 1) throw std::invalid_argument("sample_repeated: m must be at least 1");
  rephrase::RephraseSet single;
  single.original = instruction;
  single.variants = {instruction};
  return fan_out(policy, state, single, m, stream, Strategy::Repeated);
}

CandidatePool sample_gaussian(const Policy& policy, const WorldState& state,
                              const Instruction& instruction, size_t fit_n, size_t m, double eps,
                              const RngStream& stream) {
  if (fit_n < 2) throw std::invalid_argument("sample_gaussian: fit_n must be at least 2");
  if (m < 1) throw std::invalid_argument("sample_gaussian: m must be at least 1");
  std::vector<ActionChunk> fit_samples;
  fit_samples.reserve(fit_n);
  const RngStream fit_stream = stream.child("gaussian-fit");
  for (size_t i = 0; i < fit_n; ++i) {
    auto rng = fit_stream.child(i).engine();
    fit_samples.push_back(policy.sample(state, instruction, rng));
  }
  const GaussianFit g = GaussianFit::fit(fit_samples, eps);
  CandidatePool pool;
  pool.strategy = Strategy::Gaussian;
  pool.candidates.reserve(m);
  for (size_t j = 0; j < m; ++j) {
    auto rng = stream.substream(0, j).engine();
    pool.candidates.push_back({g.draw(rng), 0, j});
  }
  pool.budget.policy_forward_count = fit_n;
  pool.budget.cheap_draws = m;
  finish_budget(pool, policy);
  return pool;
}

CandidatePool sample_rephrase(const Policy& policy, const WorldState& state,
                              const rephrase::RephraseSet& rephrases, const RngStream& stream) {
  return fan_out(policy, state, rephrases, 1, stream, Strategy::Rephrase);
}

CandidatePool sample_hybrid(const Policy& policy, const WorldState& state,
                            const rephrase::RephraseSet& rephrases, size_t m_per,
                            const RngStream& stream) {
  return fan_out(policy, state, rephrases, m_per, stream, Strategy::Hybrid);
}

double oracle_min_error(const CandidatePool& pool, const ActionChunk& a_star) {
  if (pool.candidates.empty()) throw std::invalid_argument("oracle_min_error: empty pool");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : pool.candidates) best = std::min(best, world::nrmse(c.action, a_star));
  return best;
}

double flops_proxy(uint64_t policy_forwards, uint64_t verifier_forwards, const ModelSizes& sizes) {
  return 2.0 * sizes.policy_params * static_cast<double>(policy_forwards) +
         2.0 * sizes.verifier_params * static_cast<double>(verifier_forwards);
}

}  // namespace vlaverify::sampling
