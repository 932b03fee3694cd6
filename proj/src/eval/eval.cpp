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

#include "vlaverify/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <ostream>
#include <thread>

#ifndef VLAVERIFY_VERSION
#define VLAVERIFY_VERSION "0.0.0"
#endif

namespace vlaverify::eval {

using world::format_real;

Interval bootstrap_ci(std::span<const double> values, size_t resamples, double level,
                      uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("bootstrap_ci: no values");
  if (resamples < 1) throw std::invalid_argument("bootstrap_ci: need at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level in (0, 1)");
  auto rng = RngStream(seed).child("bootstrap").engine();
  std::uniform_int_distribution<size_t> pick(0, values.size() - 1);
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double sum = 0.0;
    for (size_t i = 0; i < values.size(); ++i) sum += values[pick(rng)];
    m = sum / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double tail = 0.5 * (1.0 - level);
  auto at = [&](double q) {
    const auto idx = static_cast<size_t>(std::floor(q * static_cast<double>(resamples - 1) + 0.5));
    return means[std::min(idx, resamples - 1)];
  };
  return {at(tail), at(1.0 - tail)};
}

ScalingResult scaling_experiment(const ScalingConfig& config) {
  if (config.k_grid.empty() || !std::is_sorted(config.k_grid.begin(), config.k_grid.end()) ||
      std::adjacent_find(config.k_grid.begin(), config.k_grid.end()) != config.k_grid.end() ||
      config.k_grid.front() < 1) {
    throw std::invalid_argument("scaling_experiment: k_grid must be strictly ascending and >= 1");
  }
  if (config.n_tuples < 30) throw std::invalid_argument("scaling_experiment: need >= 30 tuples");
  const size_t k_max = config.k_grid.back();
  const size_t hmax = std::max<size_t>(1, config.hybrid_max_rephrases);
  for (size_t k : config.k_grid) {
    if (k % std::min(k, hmax) != 0) {
      throw std::invalid_argument("scaling_experiment: hybrid needs k divisible by min(k, " +
                                  std::to_string(hmax) + "), got " + std::to_string(k));
    }
  }
  const sampling::Policy policy(config.policy, config.world);
  const auto tuples = world::sample_oracle_tuples(config.seed, static_cast<int>(config.n_tuples),
                                                  config.world);
  const size_t n_strat = config.strategies.size(), n_k = config.k_grid.size();
  ScalingResult result;
  result.per_tuple.assign(n_strat, std::vector<std::vector<double>>(tuples.size(),
                                                                    std::vector<double>(n_k)));
  const RngStream root = RngStream(config.seed).child("scaling");
  for (size_t t = 0; t < tuples.size(); ++t) {
    const auto& rec = tuples[t];
    const auto instr = rec.instruction();
    const RngStream stream = root.child(t);
    const uint64_t rephrase_seed = hash_combine(config.seed, t);
    for (size_t s = 0; s < n_strat; ++s) {
      auto& row = result.per_tuple[s][t];
      auto prefix_mins = [&](const sampling::CandidatePool& pool) {
        double best = std::numeric_limits<double>::infinity();
        size_t g = 0;
        for (size_t i = 0; i < pool.size() && g < n_k; ++i) {
          best = std::min(best, world::nrmse(pool.candidates[i].action, rec.action));
          while (g < n_k && config.k_grid[g] == i + 1) row[g++] = best;
        }
      };
      switch (config.strategies[s]) {
        case Strategy::Repeated:
          prefix_mins(sampling::sample_repeated(policy, rec.state, instr, k_max, stream));
          break;
        case Strategy::Gaussian:
          prefix_mins(sampling::sample_gaussian(policy, rec.state, instr, config.fit_n, k_max,
                                                config.gaussian_eps, stream));
          break;
        case Strategy::Rephrase:
          prefix_mins(sampling::sample_rephrase(
              policy, rec.state, rephrase::grammar_rephrase(instr, k_max, rephrase_seed), stream));
          break;
        case Strategy::Hybrid:
          for (size_t g = 0; g < n_k; ++g) {
            const size_t k = config.k_grid[g];
            const size_t kk = std::min(k, hmax);
            const auto set = rephrase::grammar_rephrase(instr, kk, rephrase_seed);
            row[g] = sampling::oracle_min_error(
                sampling::sample_hybrid(policy, rec.state, set, k / kk, stream), rec.action);
          }
          break;
      }
    }
  }
  for (size_t s = 0; s < n_strat; ++s) {
    ScalingCurve curve;
    curve.strategy = config.strategies[s];
    for (size_t g = 0; g < n_k; ++g) {
      std::vector<double> column(tuples.size());
      for (size_t t = 0; t < tuples.size(); ++t) column[t] = result.per_tuple[s][t][g];
      const size_t k = config.k_grid[g];
      CurvePoint p;
      p.k = k;
      p.mean_error = std::accumulate(column.begin(), column.end(), 0.0) /
                     static_cast<double>(column.size());
      const Interval ci = bootstrap_ci(column, config.bootstrap_resamples, 0.95,
                                       hash_combine(hash_combine(config.seed, s), g));
      p.ci_low = ci.low;
      p.ci_high = ci.high;
      const uint64_t forwards = curve.strategy == Strategy::Gaussian ? config.fit_n : k;
      p.flops_proxy = sampling::flops_proxy(forwards, 0, {policy.param_count(), 0.0});
      curve.points.push_back(p);
    }
    result.curves.push_back(std::move(curve));
  }
  return result;
}

void write_curve_csv(std::ostream& out, const ScalingCurve& curve) {
  out << "k,mean_min_nrmse,ci_low,ci_high,flops_proxy\n";
  for (const auto& p : curve.points) {
    out << p.k << ',' << format_real(p.mean_error) << ',' << format_real(p.ci_low) << ','
        << format_real(p.ci_high) << ',' << format_real(p.flops_proxy) << '\n';
  }
}

PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw std::invalid_argument("fit_power_law: need at least 3 points");
  std::vector<double> x, y;
  for (const auto& [k, e] : points) {
    if (!(k > 0.0) || !(e > 0.0)) {
      throw DomainError("fit_power_law: k and e must be positive, got (" + format_real(k) + ", " +
                        format_real(e) + ")");
    }
    x.push_back(std::log(k));
    y.push_back(std::log(e));
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("fit_power_law: all k are equal");
  PowerLawFit fit;
  if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); })) {
    fit.a = points.front().second;
    fit.b = 0.0;
    fit.r_squared = 0.0;
    fit.flat = true;
    return fit;
  }
  fit.b = sxy / sxx;
  fit.a = std::exp(my - fit.b * mx);
  double ss_res = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (my + fit.b * (x[i] - mx));
    ss_res += r * r;
  }
  fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  return fit;
}

namespace {

PowerLawFit fit_floored(const ScalingCurve& curve, bool use_flops) {
  std::vector<std::pair<double, double>> pts;
  size_t floored = 0;
  for (const auto& p : curve.points) {
    double e = p.mean_error;
    if (e < kErrorFloor) {
      e = kErrorFloor;
      ++floored;
    }
    pts.emplace_back(use_flops ? p.flops_proxy : static_cast<double>(p.k), e);
  }
  PowerLawFit fit = fit_power_law(pts);
  fit.floored = floored;
  return fit;
}

size_t argmax_lowest(const std::vector<double>& v) {
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

PowerLawFit fit_curve(const ScalingCurve& curve) { return fit_floored(curve, false); }
PowerLawFit fit_curve_flops(const ScalingCurve& curve) { return fit_floored(curve, true); }

RetrievalResult top1_retrieval(const inference::ActionScorer& scorer,
                               const std::vector<DatasetRecord>& tuples, size_t pool_size,
                               uint64_t seed, DistractorHistory mode) {
  if (pool_size < 2) throw std::invalid_argument("top1_retrieval: pool_size must be >= 2");
  if (tuples.size() < pool_size) {
    throw std::invalid_argument("top1_retrieval: " + std::to_string(tuples.size()) +
                                " tuples cannot fill pools of " + std::to_string(pool_size));
  }
  const RngStream root = RngStream(seed).child("retrieval");
  RetrievalResult r;
  std::vector<size_t> others(tuples.size() - 1);
  std::vector<world::ActionChunk> pool(pool_size);
  std::vector<world::ActionHistory> histories(pool_size);
  for (size_t i = 0; i < tuples.size(); ++i) {
    auto rng = root.child(i).engine();
    std::iota(others.begin(), others.begin() + static_cast<long>(i), 0);
    std::iota(others.begin() + static_cast<long>(i), others.end(), i + 1);
    for (size_t d = 0; d + 1 < pool_size; ++d) {
      std::uniform_int_distribution<size_t> pick(d, others.size() - 1);
      std::swap(others[d], others[pick(rng)]);
    }
    const size_t slot = std::uniform_int_distribution<size_t>(0, pool_size - 1)(rng);
    for (size_t p = 0, d = 0; p < pool_size; ++p) {
      const auto& src = p == slot ? tuples[i] : tuples[others[d++]];
      pool[p] = src.action;
      histories[p] = mode == DistractorHistory::Sequence ? src.history : tuples[i].history;
    }
    const auto scores = scorer.score_sequences(tuples[i].state, tuples[i].instruction(), nullptr,
                                               histories, pool);
    if (argmax_lowest(scores) == slot) ++r.hits;
    ++r.total;
  }
  r.accuracy = static_cast<double>(r.hits) / static_cast<double>(r.total);
  return r;
}

ClassificationResult metrics_from_confusion(const Confusion& c) {
  ClassificationResult r;
  r.confusion = c;
  const double tp = static_cast<double>(c.tp);
  if (c.tp + c.fp == 0 || c.tp + c.fn == 0) r.zero_division = true;
  r.precision = c.tp + c.fp > 0 ? tp / static_cast<double>(c.tp + c.fp) : 0.0;
  r.recall = c.tp + c.fn > 0 ? tp / static_cast<double>(c.tp + c.fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  return r;
}

ClassificationResult binary_classification(std::span<const double> positive_scores,
                                           std::span<const double> negative_scores,
                                           double threshold) {
  if (positive_scores.empty() || negative_scores.empty()) {
    throw std::invalid_argument("binary_classification: both sets must be non-empty");
  }
  Confusion c;
  for (double s : positive_scores) (s > threshold ? c.tp : c.fn)++;
  for (double s : negative_scores) (s > threshold ? c.fp : c.tn)++;
  return metrics_from_confusion(c);
}

PairScores pair_scores(const inference::ActionScorer& scorer,
                       const std::vector<DatasetRecord>& tuples, uint64_t seed) {
  if (tuples.size() < 2) throw std::invalid_argument("pair_scores: need at least two tuples");
  const RngStream root = RngStream(seed).child("pairs");
  PairScores out;
  for (size_t i = 0; i < tuples.size(); ++i) {
    auto rng = root.child(i).engine();
    size_t j = std::uniform_int_distribution<size_t>(0, tuples.size() - 2)(rng);
    if (j >= i) ++j;
    const std::vector<world::ActionChunk> pair = {tuples[i].action, tuples[j].action};
    const std::vector<world::ActionHistory> hist = {tuples[i].history, tuples[j].history};
    const auto s =
        scorer.score_sequences(tuples[i].state, tuples[i].instruction(), nullptr, hist, pair);
    out.positives.push_back(s[0]);
    out.negatives.push_back(s[1]);
  }
  return out;
}

double rmse(const world::ActionChunk& a, const world::ActionChunk& b) {
  require_same_shape(a, b, "rmse");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

std::vector<RmseRow> rmse_vs_candidates(const inference::ActionScorer& scorer,
                                        const sampling::Policy& policy,
                                        const std::vector<size_t>& ns,
                                        const std::vector<DatasetRecord>& tuples, uint64_t seed) {
  if (ns.empty() || !std::is_sorted(ns.begin(), ns.end()) || ns.front() < 1) {
    throw std::invalid_argument("rmse_vs_candidates: Ns must be ascending and >= 1");
  }
  if (tuples.empty()) throw std::invalid_argument("rmse_vs_candidates: no tuples");
  std::vector<RmseRow> rows(ns.size());
  const RngStream root = RngStream(seed).child("scaling");
  for (size_t t = 0; t < tuples.size(); ++t) {
    const auto& rec = tuples[t];
    const auto instr = rec.instruction();
    const auto pool = sampling::sample_repeated(policy, rec.state, instr, ns.back(), root.child(t));
    std::vector<world::ActionChunk> actions;
    for (const auto& c : pool.candidates) actions.push_back(c.action);
    const auto scores = scorer.score(rec.state, rec.history, instr, nullptr, actions);
    for (size_t g = 0; g < ns.size(); ++g) {
      const std::vector<double> head(scores.begin(), scores.begin() + static_cast<long>(ns[g]));
      const auto& chosen = actions[argmax_lowest(head)];
      rows[g].mean_rmse += rmse(chosen, rec.action);
      rows[g].mean_nrmse += world::nrmse(chosen, rec.action);
    }
  }
  for (size_t g = 0; g < ns.size(); ++g) {
    rows[g].n = ns[g];
    rows[g].mean_rmse /= static_cast<double>(tuples.size());
    rows[g].mean_nrmse /= static_cast<double>(tuples.size());
  }
  return rows;
}

EpisodeStudy run_episode_study(const sampling::Policy& policy,
                               const inference::ActionScorer& scorer, size_t n_episodes,
                               const inference::InferenceConfig& config, uint64_t seed) {
  if (n_episodes < 1) throw std::invalid_argument("run_episode_study: need at least one episode");
  const RngStream scenarios = RngStream(seed).child("episodes");
  const RngStream control = RngStream(seed).child("control");
  EpisodeStudy study;
  for (size_t e = 0; e < n_episodes; ++e) {
    EpisodeOutcome out;
    out.scenario_seed = scenarios.child(e).key();
    const auto scenario = world::generate_world(out.scenario_seed);
    inference::InferenceConfig c = config;
    c.rephrase_seed = hash_combine(config.rephrase_seed, out.scenario_seed);
    out.verified = inference::run_verified_episode(policy, scorer, scenario, c, control.child(e));
    out.bare = inference::run_bare_episode(policy, scenario, c.max_chunks, control.child(e));
    study.verified_success_rate += out.verified.result.success;
    study.bare_success_rate += out.bare.success;
    study.verified_mean_progress += out.verified.result.progress;
    study.bare_mean_progress += out.bare.progress;
    study.episodes.push_back(std::move(out));
  }
  const double n = static_cast<double>(n_episodes);
  study.verified_success_rate /= n;
  study.bare_success_rate /= n;
  study.verified_mean_progress /= n;
  study.bare_mean_progress /= n;
  return study;
}

// Studies ---------------------------------------------------------------------

const char* axis_name(StudyAxis axis) {
  switch (axis) {
    case StudyAxis::DataMultiplier:
      return "data_multiplier";
    case StudyAxis::ModelWidth:
      return "model_width";
    case StudyAxis::BatchSize:
      return "batch_size";
    case StudyAxis::TrainSteps:
      return "train_steps";
    case StudyAxis::EnsembleSize:
      return "ensemble_size";
  }
  return "?";
}

StudyAxis parse_axis(const std::string& name) {
  for (auto a : {StudyAxis::DataMultiplier, StudyAxis::ModelWidth, StudyAxis::BatchSize,
                 StudyAxis::TrainSteps, StudyAxis::EnsembleSize}) {
    if (name == axis_name(a)) return a;
  }
  throw std::invalid_argument("unknown study axis '" + name + "'");
}

StudyConfig apply_level(const StudyConfig& base, StudyAxis axis, double level) {
  if (!(level > 0.0)) throw std::invalid_argument("study level must be positive");
  StudyConfig c = base;
  const auto as_count = [&](double v) { return static_cast<size_t>(std::max(1.0, std::round(v))); };
  switch (axis) {
    case StudyAxis::DataMultiplier:
      c.rephrases_per_intent = as_count(static_cast<double>(base.rephrases_per_intent) * level);
      break;
    case StudyAxis::ModelWidth:
      c.model.width = static_cast<Index>(as_count(level));
      c.model.ffn_dim = 2 * c.model.width;
      break;
    case StudyAxis::BatchSize:
      c.train.batch_size = as_count(level);
      break;
    case StudyAxis::TrainSteps:
      c.train.steps = as_count(level);
      break;
    case StudyAxis::EnsembleSize:
      c.ensemble_size = as_count(level);
      break;
  }
  return c;
}

double study_point(const StudyConfig& config, uint64_t seed) {
  const auto train_tuples = world::sample_oracle_tuples(
      hash_combine(config.data_seed, fnv1a("train")), static_cast<int>(config.train_tuples));
  const auto eval_tuples = world::sample_oracle_tuples(
      hash_combine(config.data_seed, fnv1a("eval")), static_cast<int>(config.eval_tuples));
  const auto sets =
      verifier::build_instruction_sets(train_tuples, config.rephrases_per_intent, config.data_seed);
  const auto data = verifier::augment_dataset(train_tuples, sets);
  std::vector<verifier::VerifierModel> members;
  for (size_t m = 0; m < config.ensemble_size; ++m) {
    const uint64_t member_seed = hash_combine(seed, m);
    verifier::TrainConfig tc = config.train;
    tc.seed = member_seed;
    members.push_back(
        verifier::train(verifier::VerifierModel(config.model, config.frozen, member_seed), data, tc)
            .model);
  }
  const verifier::Ensemble ensemble(std::move(members));
  const inference::EnsembleScorer scorer(ensemble);
  return top1_retrieval(scorer, eval_tuples, config.pool_size, seed).accuracy;
}

StudyResult scaling_study(StudyAxis axis, const std::vector<double>& levels,
                          const StudyConfig& base, const std::vector<uint64_t>& seeds) {
  if (levels.empty()) throw std::invalid_argument("scaling_study: no levels");
  if (seeds.empty()) throw std::invalid_argument("scaling_study: no seeds");
  StudyResult result;
  result.axis = axis;
  for (double level : levels) {
    const StudyConfig c = apply_level(base, axis, level);
    StudyRow row;
    row.level = level;
    for (uint64_t s : seeds) row.accuracies.push_back(study_point(c, s));
    const double n = static_cast<double>(row.accuracies.size());
    row.mean = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
    row.std = row.accuracies.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    result.rows.push_back(std::move(row));
  }
  if (result.rows.size() < 2) {
    result.degenerate = true;
    result.monotone_fraction = 1.0;
  } else {
    size_t up = 0;
    for (size_t i = 1; i < result.rows.size(); ++i) up += result.rows[i].mean >= result.rows[i - 1].mean;
    result.monotone_fraction = static_cast<double>(up) / static_cast<double>(result.rows.size() - 1);
  }
  return result;
}

void write_study_csv(std::ostream& out, const StudyResult& result) {
  out << "level,retrieval_accuracy,mean,std\n";
  for (const auto& row : result.rows) {
    for (double a : row.accuracies) {
      out << format_real(row.level) << ',' << format_real(a) << ',' << format_real(row.mean) << ','
          << format_real(row.std) << '\n';
    }
  }
}

// Compute -----------------------------------------------------------------------

double compute_estimate(double n_params, double n_tokens) {
  if (n_params < 0.0 || n_tokens < 0.0) throw std::invalid_argument("compute_estimate: negative input");
  return 6.0 * n_params * n_tokens;
}

double frozen_aware_estimate(double fwd_flops, double bwd_flops, double samples) {
  if (fwd_flops < 0.0 || bwd_flops < 0.0 || samples < 0.0) {
    throw std::invalid_argument("frozen_aware_estimate: negative input");
  }
  return (fwd_flops + bwd_flops) * samples;
}

double relative_cost(double flops, double base_flops) {
  if (!(base_flops > 0.0)) throw std::invalid_argument("relative_cost: base must be positive");
  return flops / base_flops;
}

// Bench -------------------------------------------------------------------------

double LatencyRow::policy_throughput() const {
  return static_cast<double>(batch_size) / (policy_ms / 1000.0);
}
double LatencyRow::image_text_throughput() const {
  return static_cast<double>(batch_size) / (image_text_ms / 1000.0);
}
double LatencyRow::action_encoder_throughput() const {
  return static_cast<double>(batch_size) / (action_encoder_ms / 1000.0);
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<LatencyRow> latency_bench(const sampling::Policy& policy,
                                      const verifier::Ensemble& ensemble,
                                      const BenchConfig& config) {
  if (config.repeats < 5 || config.warmup < 2) {
    throw std::invalid_argument("latency_bench: need repeats >= 5 and warmup >= 2");
  }
  const auto scenario = world::generate_world(config.seed);
  const auto history = world::empty_history(policy.config());
  const auto& enc = ensemble.encoders();
  const RngStream root = RngStream(config.seed).child("bench");
  std::vector<LatencyRow> rows;
  for (size_t b : config.batch_sizes) {
    if (b < 1) throw std::invalid_argument("latency_bench: batch sizes must be >= 1");
    std::vector<double> pol, img, act, tot;
    const std::vector<world::ActionHistory> histories(b, history);
    for (size_t rep = 0; rep < config.warmup + config.repeats; ++rep) {
      std::vector<world::ActionChunk> chunks(b);
      double policy_ms = 0.0, image_ms = 0.0, action_ms = 0.0;
      const auto t0 = Clock::now();
      auto image_text = [&] {
        const auto s = Clock::now();
        for (size_t i = 0; i < b; ++i) {
          ensemble.fused_embedding(enc.encode_obs(scenario.state),
                                   enc.encode_text(scenario.instruction));
        }
        return ms_since(s);
      };
      std::future<double> image_future;
      if (config.overlap) image_future = std::async(std::launch::async, image_text);
      {
        const auto s = Clock::now();
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(
            config.policy_fixed_ms + config.policy_per_sample_ms * static_cast<double>(b)));
        for (size_t i = 0; i < b; ++i) {
          auto rng = root.child(rep).substream(0, i).engine();
          chunks[i] = policy.sample(scenario.state, scenario.instruction, rng);
        }
        policy_ms = ms_since(s);
      }
      image_ms = config.overlap ? image_future.get() : image_text();
      {
        const auto s = Clock::now();
        ensemble.action_embeddings(histories, chunks);
        action_ms = ms_since(s);
      }
      const double total_ms = ms_since(t0);
      if (rep >= config.warmup) {
        pol.push_back(policy_ms);
        img.push_back(image_ms);
        act.push_back(action_ms);
        tot.push_back(total_ms);
      }
    }
    rows.push_back({b, median(pol), median(img), median(act), median(tot)});
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<LatencyRow>& rows) {
  out << "batch_size,policy_ms,policy_throughput,image_text_ms,image_text_throughput,"
         "action_encoder_ms,action_encoder_throughput,total_ms\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.2f,%.3f,%.2f,%.3f,%.2f,%.3f\n", r.batch_size,
                  r.policy_ms, r.policy_throughput(), r.image_text_ms, r.image_text_throughput(),
                  r.action_encoder_ms, r.action_encoder_throughput(), r.total_ms);
    out << buf;
  }
}

std::string version_string() { return std::string("vlaverify ") + VLAVERIFY_VERSION; }

void write_manifest(const std::filesystem::path& path,
                    const std::map<std::string, std::string>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << "version=" << version_string() << '\n';
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

}  // namespace vlaverify::eval
