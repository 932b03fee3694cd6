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

// Experiment instruments: scaling curves with power-law fits, retrieval and
// classification metrics, selection ablations, training-scale studies,
// compute estimates and the latency bench.

#pragma once

#include "vlaverify/dataset.hpp"
#include "vlaverify/inference.hpp"
#include "vlaverify/sampling.hpp"
#include "vlaverify/verifier.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vlaverify::eval {

using sampling::Strategy;
using world::DatasetRecord;

// Scaling curves ----------------------------------------------------------------

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Percentile bootstrap interval of the mean.
Interval bootstrap_ci(std::span<const double> values, size_t resamples, double level,
                      uint64_t seed);

struct CurvePoint {
  size_t k = 0;
  double mean_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double flops_proxy = 0.0;
};

struct ScalingCurve {
  Strategy strategy = Strategy::Repeated;
  std::vector<CurvePoint> points;
};

struct ScalingConfig {
  std::vector<Strategy> strategies = {Strategy::Repeated, Strategy::Gaussian, Strategy::Rephrase,
                                      Strategy::Hybrid};
  std::vector<size_t> k_grid = {1, 2, 4, 8, 16, 32, 64};
  size_t n_tuples = 200;
  world::BasePolicyParams policy;
  world::WorldConfig world;
  size_t fit_n = 8;
  double gaussian_eps = 1e-3;
  size_t hybrid_max_rephrases = 8;  // hybrid uses K = min(k, this), m = k / K
  size_t bootstrap_resamples = 1000;
  uint64_t seed = 0;
};

struct ScalingResult {
  std::vector<ScalingCurve> curves;
  /// per_tuple[s][t][g]: min NRMSE of strategy s on tuple t at k_grid[g].
  std::vector<std::vector<std::vector<double>>> per_tuple;
};

ScalingResult scaling_experiment(const ScalingConfig& config);

void write_curve_csv(std::ostream& out, const ScalingCurve& curve);

// Power-law fits ----------------------------------------------------------------

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct PowerLawFit {
  double a = 0.0;
  double b = 0.0;
  double r_squared = 0.0;
  bool flat = false;   // no variance in log e; r_squared reported as 0
  size_t floored = 0;  // points raised to the zero floor before fitting
};

inline constexpr double kErrorFloor = 1e-9;

/// OLS of log e on log k over (k, e) points; needs >= 3 points, all positive.
PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points);

/// Fits a curve's mean errors against k, flooring exact zeros at kErrorFloor.
PowerLawFit fit_curve(const ScalingCurve& curve);
/// Same, against the FLOPs proxy.
PowerLawFit fit_curve_flops(const ScalingCurve& curve);

// Retrieval and classification --------------------------------------------------

struct RetrievalResult {
  double accuracy = 0.0;
  size_t hits = 0;
  size_t total = 0;
};

/// How distractors are paired with histories. `Sequence` keeps each
/// distractor's own (history, chunk); `SharedHistory` scores every chunk
/// under the query tuple's history, which hides history/chunk continuity.
enum class DistractorHistory { Sequence, SharedHistory };

/// Each tuple's ground truth hidden at a random slot among pool_size - 1
/// distractors drawn from other tuples.
RetrievalResult top1_retrieval(const inference::ActionScorer& scorer,
                               const std::vector<DatasetRecord>& tuples, size_t pool_size,
                               uint64_t seed,
                               DistractorHistory mode = DistractorHistory::Sequence);

struct Confusion {
  size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct ClassificationResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool zero_division = false;  // no predicted positives (or no positives at all)
  Confusion confusion;
};

ClassificationResult metrics_from_confusion(const Confusion& c);

/// A score above `threshold` counts as a positive prediction.
ClassificationResult binary_classification(std::span<const double> positive_scores,
                                           std::span<const double> negative_scores,
                                           double threshold);

struct PairScores {
  std::vector<double> positives;  // ground-truth chunk
  std::vector<double> negatives;  // chunk of a random other tuple
};

PairScores pair_scores(const inference::ActionScorer& scorer,
                       const std::vector<DatasetRecord>& tuples, uint64_t seed);

// Selection ablation ------------------------------------------------------------

struct RmseRow {
  size_t n = 0;
  double mean_rmse = 0.0;
  double mean_nrmse = 0.0;
};

/// For each N: N repeated samples per tuple, keep the scorer's argmax and
/// measure its error to the tuple's ground-truth chunk.
std::vector<RmseRow> rmse_vs_candidates(const inference::ActionScorer& scorer,
                                        const sampling::Policy& policy,
                                        const std::vector<size_t>& ns,
                                        const std::vector<DatasetRecord>& tuples, uint64_t seed);

double rmse(const world::ActionChunk& a, const world::ActionChunk& b);

// Episode comparison --------------------------------------------------------------

struct EpisodeOutcome {
  uint64_t scenario_seed = 0;
  inference::VerifiedEpisode verified;
  world::EpisodeResult bare;
};

struct EpisodeStudy {
  std::vector<EpisodeOutcome> episodes;
  double verified_success_rate = 0.0;
  double bare_success_rate = 0.0;
  double verified_mean_progress = 0.0;
  double bare_mean_progress = 0.0;
};

/// Runs verified and bare control on the same seeded scenarios. Episode e
/// uses scenario seed RngStream(seed).child("episodes").child(e).key() and
/// sampling stream RngStream(seed).child("control").child(e) for both arms.
EpisodeStudy run_episode_study(const sampling::Policy& policy,
                               const inference::ActionScorer& scorer, size_t n_episodes,
                               const inference::InferenceConfig& config, uint64_t seed);

// Training-scale studies ----------------------------------------------------------

enum class StudyAxis { DataMultiplier, ModelWidth, BatchSize, TrainSteps, EnsembleSize };

const char* axis_name(StudyAxis axis);
StudyAxis parse_axis(const std::string& name);

struct StudyConfig {
  size_t train_tuples = 500;
  size_t eval_tuples = 200;
  size_t rephrases_per_intent = 4;
  size_t pool_size = 64;
  verifier::VerifierConfig model;
  verifier::FrozenEncoderSpec frozen;
  verifier::TrainConfig train;
  size_t ensemble_size = 1;
  uint64_t data_seed = 0;
};

struct StudyRow {
  double level = 0.0;
  std::vector<double> accuracies;  // one per seed
  double mean = 0.0;
  double std = 0.0;
};

struct StudyResult {
  StudyAxis axis = StudyAxis::DataMultiplier;
  std::vector<StudyRow> rows;
  double monotone_fraction = 1.0;  // share of adjacent levels where the mean improves
  bool degenerate = false;         // fewer than two levels
};

/// Applies `level` to the axis of `base`.
StudyConfig apply_level(const StudyConfig& base, StudyAxis axis, double level);

/// Trains and evaluates one verifier (or ensemble) and returns its retrieval
/// accuracy on held-out tuples.
double study_point(const StudyConfig& config, uint64_t seed);

StudyResult scaling_study(StudyAxis axis, const std::vector<double>& levels,
                          const StudyConfig& base, const std::vector<uint64_t>& seeds);

void write_study_csv(std::ostream& out, const StudyResult& result);

// Compute estimates ---------------------------------------------------------------

/// Training compute approximation 6 N D.
double compute_estimate(double n_params, double n_tokens);
/// Per-sample (forward + backward) cost times samples.
double frozen_aware_estimate(double fwd_flops, double bwd_flops, double samples);
double relative_cost(double flops, double base_flops);

// Latency bench -----------------------------------------------------------------

struct LatencyRow {
  size_t batch_size = 0;
  double policy_ms = 0.0;
  double image_text_ms = 0.0;
  double action_encoder_ms = 0.0;
  double total_ms = 0.0;

  double policy_throughput() const;
  double image_text_throughput() const;
  double action_encoder_throughput() const;
};

struct BenchConfig {
  std::vector<size_t> batch_sizes = {1, 2, 4, 8, 16, 32};
  size_t repeats = 5;
  size_t warmup = 2;
  /// Device cost model for the policy forward: fixed + per-sample sleep.
  double policy_fixed_ms = 20.0;
  double policy_per_sample_ms = 1.5;
  bool overlap = true;  // run image-text encoding concurrently with the policy
  uint64_t seed = 0;
};

/// Median stage times per batch size.
std::vector<LatencyRow> latency_bench(const sampling::Policy& policy,
                                      const verifier::Ensemble& ensemble,
                                      const BenchConfig& config);

void write_bench_csv(std::ostream& out, const std::vector<LatencyRow>& rows);

// Output helpers ----------------------------------------------------------------

/// Version string recorded in manifests.
std::string version_string();

/// Writes `key=value` lines (sorted) plus the version.
void write_manifest(const std::filesystem::path& path,
                    const std::map<std::string, std::string>& entries);

}  // namespace vlaverify::eval
