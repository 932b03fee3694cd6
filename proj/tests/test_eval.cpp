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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace vlaverify::eval {
namespace {

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

TEST(PowerLaw, RecoversExactLaw) {
  std::vector<std::pair<double, double>> pts;
  for (double k : {1.0, 2.0, 4.0, 8.0, 16.0, 64.0}) pts.emplace_back(k, 2.0 * std::pow(k, -0.5));
  const auto fit = fit_power_law(pts);
  EXPECT_NEAR(fit.a, 2.0, 1e-12);
  EXPECT_NEAR(fit.b, -0.5, 1e-12);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_FALSE(fit.flat);
}

TEST(PowerLaw, RSquaredMatchesHandComputation) {
  // log e = {0, -1, 0} at log k = {0, 1, 2}: slope 0, residual SS = syy, R^2 = 0.
  const std::vector<std::pair<double, double>> pts = {
      {1.0, 1.0}, {std::exp(1.0), std::exp(-1.0)}, {std::exp(2.0), 1.0}};
  const auto fit = fit_power_law(pts);
  EXPECT_NEAR(fit.b, 0.0, 1e-12);
  EXPECT_NEAR(fit.r_squared, 0.0, 1e-12);
}

TEST(PowerLaw, FlatAndInvalidInputs) {
  const std::vector<std::pair<double, double>> flat = {{1, 0.3}, {2, 0.3}, {4, 0.3}};
  const auto fit = fit_power_law(flat);
  EXPECT_TRUE(fit.flat);
  EXPECT_EQ(fit.b, 0.0);
  EXPECT_EQ(fit.r_squared, 0.0);
  const std::vector<std::pair<double, double>> neg = {{1, 0.3}, {2, 0.0}, {4, 0.3}};
  EXPECT_THROW(fit_power_law(neg), DomainError);
  const std::vector<std::pair<double, double>> two = {{1, 0.3}, {2, 0.2}};
  EXPECT_THROW(fit_power_law(two), std::invalid_argument);
  const std::vector<std::pair<double, double>> same_k = {{2, 0.3}, {2, 0.2}, {2, 0.1}};
  EXPECT_THROW(fit_power_law(same_k), DomainError);
}

TEST(PowerLaw, CurveFitFloorsZeros) {
  ScalingCurve c;
  c.points = {{1, 0.5, 0, 0, 2}, {2, 0.25, 0, 0, 4}, {4, 0.0, 0, 0, 8}};
  const auto fit = fit_curve(c);
  EXPECT_EQ(fit.floored, 1u);
  EXPECT_LT(fit.b, 0.0);
}

TEST(PowerLaw, FlopsAxisShiftsOnlyThePrefactor) {
  ScalingCurve c;
  for (size_t k : {1, 2, 4, 8}) {
    c.points.push_back({k, 0.3 * std::pow(k, -0.4), 0, 0, 10.0 * static_cast<double>(k)});
  }
  const auto by_k = fit_curve(c), by_f = fit_curve_flops(c);
  EXPECT_NEAR(by_k.b, by_f.b, 1e-12);
  EXPECT_NEAR(by_f.a, 0.3 * std::pow(10.0, 0.4), 1e-12);
}

TEST(Bootstrap, ConstantSampleHasZeroWidth) {
  const std::vector<double> v(20, 0.7);
  const auto ci = bootstrap_ci(v, 200, 0.95, 1);
  EXPECT_DOUBLE_EQ(ci.low, 0.7);
  EXPECT_DOUBLE_EQ(ci.high, 0.7);
}

TEST(Bootstrap, WidthMatchesNormalApproximation) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(400);
  for (auto& x : v) x = u(rng);
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 400.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double se = std::sqrt(ss / 400.0) / std::sqrt(400.0);
  const auto ci = bootstrap_ci(v, 4000, 0.95, 2);
  EXPECT_LT(ci.low, mean);
  EXPECT_GT(ci.high, mean);
  EXPECT_NEAR(ci.high - ci.low, 2 * 1.959964 * se, 0.15 * 2 * 1.959964 * se);
  const auto again = bootstrap_ci(v, 4000, 0.95, 2);
  EXPECT_EQ(ci.low, again.low);
  EXPECT_THROW(bootstrap_ci({}, 10, 0.95, 0), std::invalid_argument);
  EXPECT_THROW(bootstrap_ci(v, 10, 1.0, 0), std::invalid_argument);
}

TEST(Classification, ConfusionMetrics) {
  const auto r = metrics_from_confusion({78, 24, 0, 22});
  EXPECT_DOUBLE_EQ(r.precision, 78.0 / 102.0);
  EXPECT_DOUBLE_EQ(r.recall, 78.0 / 100.0);
  EXPECT_NEAR(r.f1, 156.0 / 202.0, 1e-15);
  EXPECT_FALSE(r.zero_division);
  const auto none = metrics_from_confusion({0, 0, 10, 5});
  EXPECT_TRUE(none.zero_division);
  EXPECT_EQ(none.f1, 0.0);
}

TEST(Classification, ThresholdIsStrict) {
  const std::vector<double> pos = {0.5, 0.1, 0.0}, neg = {0.0, -0.2, 0.3};
  const auto r = binary_classification(pos, neg, 0.0);
  EXPECT_EQ(r.confusion.tp, 2u);
  EXPECT_EQ(r.confusion.fn, 1u);
  EXPECT_EQ(r.confusion.fp, 1u);
  EXPECT_EQ(r.confusion.tn, 2u);
  EXPECT_THROW(binary_classification({}, neg, 0.0), std::invalid_argument);
}

class RetrievalTest : public ::testing::Test {
 protected:
  std::vector<DatasetRecord> tuples = world::sample_oracle_tuples(31, 200);
};

TEST_F(RetrievalTest, OracleRetrievesEveryDistinctTuple) {
  // Identical chunks tie under any scorer, so keep one tuple per chunk.
  std::set<std::vector<double>> seen;
  std::vector<DatasetRecord> distinct;
  for (const auto& t : tuples) {
    if (seen.insert(std::vector<double>(t.action.data(), t.action.data() + t.action.size())).second) {
      distinct.push_back(t);
    }
  }
  ASSERT_GT(distinct.size(), 150u);
  const auto r = top1_retrieval(inference::OracleScorer{}, distinct, 16, 3);
  EXPECT_EQ(r.total, distinct.size());
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST_F(RetrievalTest, RandomScorerNearChance) {
  const auto many = world::sample_oracle_tuples(32, 2000);
  const auto r = top1_retrieval(inference::RandomScorer(5), many, 16, 3);
  const double p = 1.0 / 16.0;
  EXPECT_NEAR(r.accuracy, p, 4.0 * std::sqrt(p * (1 - p) / 2000.0));
}

TEST_F(RetrievalTest, DeterministicAndValidated) {
  const inference::RandomScorer a(1), b(1);
  EXPECT_EQ(top1_retrieval(a, tuples, 8, 4).hits, top1_retrieval(b, tuples, 8, 4).hits);
  EXPECT_THROW(top1_retrieval(a, tuples, 1, 0), std::invalid_argument);
  EXPECT_THROW(top1_retrieval(a, tuples, 201, 0), std::invalid_argument);
}

TEST_F(RetrievalTest, OraclePairsSeparateAtZero) {
  const auto ps = pair_scores(inference::OracleScorer{}, tuples, 2);
  ASSERT_EQ(ps.positives.size(), tuples.size());
  ASSERT_EQ(ps.negatives.size(), tuples.size());
  for (double s : ps.positives) EXPECT_EQ(s, 0.0);
  for (double s : ps.negatives) EXPECT_LT(s, 0.0);
}

TEST_F(RetrievalTest, OracleRmseShrinksWithCandidates) {
  const sampling::Policy policy;
  const auto subset = std::vector<DatasetRecord>(tuples.begin(), tuples.begin() + 50);
  const auto rows = rmse_vs_candidates(inference::OracleScorer{}, policy, {1, 2, 4, 16}, subset, 0);
  ASSERT_EQ(rows.size(), 4u);
  for (size_t i = 1; i < rows.size(); ++i) {
    EXPECT_LE(rows[i].mean_nrmse, rows[i - 1].mean_nrmse);
  }
  EXPECT_LT(rows.back().mean_rmse, rows.front().mean_rmse);
  EXPECT_THROW(rmse_vs_candidates(inference::OracleScorer{}, policy, {4, 2}, subset, 0),
               std::invalid_argument);
}

TEST(Rmse, HandComputed) {
  world::ActionChunk a = world::ActionChunk::Zero(1, 2), b(1, 2);
  b << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(rmse(a, b), std::sqrt(12.5));
}

TEST(ScalingExperiment, PrefixMinimaAndCurveShape) {
  ScalingConfig cfg;
  cfg.k_grid = {1, 2, 4, 8};
  cfg.n_tuples = 30;
  cfg.bootstrap_resamples = 100;
  cfg.hybrid_max_rephrases = 4;
  const auto r = scaling_experiment(cfg);
  ASSERT_EQ(r.curves.size(), 4u);
  for (size_t s = 0; s < 3; ++s) {
    for (const auto& row : r.per_tuple[s]) {
      for (size_t g = 1; g < row.size(); ++g) EXPECT_LE(row[g], row[g - 1]);
    }
  }
  for (const auto& c : r.curves) {
    for (const auto& p : c.points) {
      EXPECT_LE(p.ci_low, p.mean_error);
      EXPECT_GE(p.ci_high, p.mean_error);
    }
  }
  const auto& gauss = r.curves[1].points;
  EXPECT_EQ(gauss.front().flops_proxy, gauss.back().flops_proxy);
  EXPECT_EQ(r.curves[0].points.back().flops_proxy, 8 * r.curves[0].points.front().flops_proxy);

  std::ostringstream csv;
  write_curve_csv(csv, r.curves[0]);
  const auto lines = lines_of(csv.str());
  EXPECT_EQ(lines.front(), "k,mean_min_nrmse,ci_low,ci_high,flops_proxy");
  EXPECT_EQ(lines.size(), 5u);
}

TEST(ScalingExperiment, RejectsBadGrids) {
  ScalingConfig cfg;
  cfg.k_grid = {1, 4, 2};
  EXPECT_THROW(scaling_experiment(cfg), std::invalid_argument);
  cfg.k_grid = {1, 12};
  cfg.hybrid_max_rephrases = 8;
  EXPECT_THROW(scaling_experiment(cfg), std::invalid_argument);
  cfg.k_grid = {1, 2};
  cfg.n_tuples = 10;
  EXPECT_THROW(scaling_experiment(cfg), std::invalid_argument);
}

TEST(Compute, Estimates) {
  EXPECT_DOUBLE_EQ(compute_estimate(1e6, 2e3), 1.2e10);
  EXPECT_DOUBLE_EQ(frozen_aware_estimate(3.0, 5.0, 10.0), 80.0);
  EXPECT_DOUBLE_EQ(relative_cost(80.0, 1.2e10), 80.0 / 1.2e10);
  EXPECT_THROW(compute_estimate(-1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(relative_cost(1.0, 0.0), std::invalid_argument);
}

TEST(Study, LevelsMapToConfig) {
  const StudyConfig base;
  EXPECT_EQ(apply_level(base, StudyAxis::DataMultiplier, 2).rephrases_per_intent,
            2 * base.rephrases_per_intent);
  const auto w = apply_level(base, StudyAxis::ModelWidth, 32);
  EXPECT_EQ(w.model.width, 32);
  EXPECT_EQ(w.model.ffn_dim, 64);
  EXPECT_EQ(apply_level(base, StudyAxis::BatchSize, 16).train.batch_size, 16u);
  EXPECT_EQ(apply_level(base, StudyAxis::TrainSteps, 50).train.steps, 50u);
  EXPECT_EQ(apply_level(base, StudyAxis::EnsembleSize, 3).ensemble_size, 3u);
  EXPECT_THROW(apply_level(base, StudyAxis::BatchSize, 0), std::invalid_argument);
  for (auto a : {StudyAxis::DataMultiplier, StudyAxis::ModelWidth, StudyAxis::BatchSize,
                 StudyAxis::TrainSteps, StudyAxis::EnsembleSize}) {
    EXPECT_EQ(parse_axis(axis_name(a)), a);
  }
  EXPECT_THROW(parse_axis("depth"), std::invalid_argument);
}

TEST(Study, TinyRunHasOneRowPerLevel) {
  StudyConfig base;
  base.train_tuples = 40;
  base.eval_tuples = 32;
  base.pool_size = 8;
  base.rephrases_per_intent = 2;
  base.model.width = 16;
  base.model.embed_dim = 16;
  base.model.ffn_dim = 32;
  base.model.action_layers = 1;
  base.train.batch_size = 8;
  base.train.steps = 3;
  const auto r = scaling_study(StudyAxis::TrainSteps, {2, 4}, base, {0, 1});
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_FALSE(r.degenerate);
  for (const auto& row : r.rows) EXPECT_EQ(row.accuracies.size(), 2u);
  EXPECT_EQ(study_point(apply_level(base, StudyAxis::TrainSteps, 2), 0), r.rows[0].accuracies[0]);
  std::ostringstream csv;
  write_study_csv(csv, r);
  EXPECT_EQ(lines_of(csv.str()).size(), 5u);
  EXPECT_TRUE(scaling_study(StudyAxis::TrainSteps, {2}, base, {0}).degenerate);
}

TEST(EpisodeStudy, OracleAlwaysDelivers) {
  const sampling::Policy policy;
  const inference::OracleScorer oracle;
  inference::InferenceConfig cfg;
  const auto s = run_episode_study(policy, oracle, 5, cfg, 1);
  ASSERT_EQ(s.episodes.size(), 5u);
  EXPECT_EQ(s.verified_success_rate, 1.0);
  EXPECT_EQ(s.episodes[2].scenario_seed, RngStream(1).child("episodes").child(2).key());
  const auto again = run_episode_study(policy, oracle, 5, cfg, 1);
  EXPECT_EQ(again.bare_success_rate, s.bare_success_rate);
  EXPECT_EQ(again.bare_mean_progress, s.bare_mean_progress);
}

TEST(Bench, RowsAndCsvLayout) {
  verifier::VerifierConfig vc;
  vc.width = 16;
  vc.embed_dim = 16;
  vc.ffn_dim = 32;
  const verifier::Ensemble ens({verifier::VerifierModel(vc, verifier::FrozenEncoderSpec{}, 1)});
  BenchConfig bc;
  bc.batch_sizes = {1, 4};
  bc.policy_fixed_ms = 0.5;
  bc.policy_per_sample_ms = 0.1;
  const auto rows = latency_bench(sampling::Policy{}, ens, bc);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GE(r.policy_ms, bc.policy_fixed_ms);
    EXPECT_GT(r.action_encoder_ms, 0.0);
    EXPECT_GE(r.total_ms, r.policy_ms);
  }
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  const auto lines = lines_of(csv.str());
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0],
            "batch_size,policy_ms,policy_throughput,image_text_ms,image_text_throughput,"
            "action_encoder_ms,action_encoder_throughput,total_ms");
  EXPECT_EQ(std::count(lines[1].begin(), lines[1].end(), ','), 7);
  bc.repeats = 4;
  EXPECT_THROW(latency_bench(sampling::Policy{}, ens, bc), std::invalid_argument);
}

TEST(Manifest, StartsWithVersion) {
  const auto path = std::filesystem::temp_directory_path() / "vlaverify_manifest_test.txt";
  write_manifest(path, {{"seed", "3"}});
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "version=" + version_string() + "\nseed=3\n");
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace vlaverify::eval
