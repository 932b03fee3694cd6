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

// vlaverify command-line driver. Every command resolves a RunConfig
// (defaults < --config file < --set overrides < dedicated flags), writes it
// next to its outputs and reports failures as one JSON line on stderr.

#include "run_config.hpp"

#include "vlaverify/dataset.hpp"
#include "vlaverify/eval.hpp"
#include "vlaverify/inference.hpp"
#include "vlaverify/remote.hpp"
#include "vlaverify/rephrase.hpp"
#include "vlaverify/sampling.hpp"
#include "vlaverify/verifier.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace vlaverify;
using cli::RunConfig;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shared option plumbing -----------------------------------------------------------

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::string out;
};

void add_common(CLI::App& cmd, Common& c, const std::string& default_out) {
  cmd.add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  cmd.add_option("--set", c.overrides, "config override key=value (repeatable)");
  cmd.add_option("--seed", c.seed, "master seed");
  c.out = default_out;
  cmd.add_option("--out", c.out, "output directory")->capture_default_str();
}

// Binds a flag to a config key; set flags are applied after all files.
template <typename T>
void bind_flag(CLI::App& cmd, const std::string& flag, const std::string& key,
          std::vector<std::function<void(RunConfig&)>>& appliers, const std::string& help) {
  auto value = std::make_shared<std::optional<T>>();
  cmd.add_option(flag, *value, help);
  appliers.push_back([value, key](RunConfig& cfg) {
    if (value->has_value()) {
      if constexpr (std::is_same_v<T, std::string>) {
        cfg.set(key, **value);
      } else {
        cfg.set(key, std::to_string(**value));
      }
    }
  });
}

RunConfig resolve(const Common& c, const std::vector<std::function<void(RunConfig&)>>& appliers) {
  RunConfig cfg;
  if (!c.config_file.empty()) cfg.merge_file(c.config_file);
  for (const auto& o : c.overrides) cfg.merge_assignment(o);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  for (const auto& apply : appliers) apply(cfg);
  return cfg;
}

fs::path prepare_out(const std::string& out) {
  fs::create_directories(out);
  return fs::path(out);
}

void finish(const fs::path& dir, const RunConfig& cfg, const std::string& command,
            std::map<std::string, std::string> entries) {
  cfg.write_file(dir / "config.resolved");
  entries["command"] = command;
  eval::write_manifest(dir / "manifest.txt", entries);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

// Config to library structs ------------------------------------------------------

world::WorldConfig world_config(const RunConfig& cfg) {
  world::WorldConfig w;
  w.chunk_length = static_cast<int>(cfg.get_int("world.chunk_length"));
  w.history_window = static_cast<int>(cfg.get_int("world.history_window"));
  w.step_size = cfg.get_real("world.step_size");
  w.gain = cfg.get_real("world.gain");
  return w;
}

world::BasePolicyParams policy_params(const RunConfig& cfg) {
  world::BasePolicyParams p;
  p.drift_scale = cfg.get_real("policy.drift_scale");
  p.noise_temperature = cfg.get_real("policy.noise_temperature");
  p.good_phrase_fraction = cfg.get_real("policy.good_phrase_fraction");
  p.seed = cfg.get_uint("policy.seed");
  return p;
}

verifier::VerifierConfig model_config(const RunConfig& cfg) {
  const auto w = world_config(cfg);
  verifier::VerifierConfig m;
  m.width = static_cast<Index>(cfg.get_uint("model.width"));
  m.embed_dim = static_cast<Index>(cfg.get_uint("model.embed_dim"));
  m.action_layers = static_cast<Index>(cfg.get_uint("model.action_layers"));
  m.action_heads = static_cast<Index>(cfg.get_uint("model.action_heads"));
  m.ffn_dim = static_cast<Index>(cfg.get_uint("model.ffn_dim"));
  m.history_window = w.history_window;
  m.chunk_length = w.chunk_length;
  return m;
}

verifier::TrainConfig train_config(const RunConfig& cfg) {
  verifier::TrainConfig t;
  t.batch_size = cfg.get_size("train.batch_size");
  t.steps = cfg.get_size("train.steps");
  t.lr = cfg.get_real("train.lr");
  t.temperature = cfg.get_real("train.temperature");
  t.seed = cfg.get_uint("seed");
  return t;
}

template <typename T>
std::vector<size_t> as_sizes(const std::vector<T>& v, const std::string& key) {
  std::vector<size_t> out;
  for (auto x : v) {
    if (x < 0) throw cli::ConfigError(key, "config key '" + key + "' must be non-negative");
    out.push_back(static_cast<size_t>(x));
  }
  return out;
}

fs::path data_file(const std::string& data, const char* default_name) {
  const fs::path p(data);
  if (fs::is_directory(p)) return p / default_name;
  return p;
}

std::vector<world::DatasetRecord> read_data(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("data file " + path.string() + " not found");
  return world::read_records_file(path.string());
}

std::vector<world::DatasetRecord> held_out_tuples(const RunConfig& cfg, const std::string& data) {
  if (!data.empty()) return read_data(data_file(data, "tuples.jsonl"));
  return world::sample_oracle_tuples(hash_combine(cfg.get_uint("seed"), fnv1a("held-out")),
                                     static_cast<int>(cfg.get_uint("eval.tuples")),
                                     world_config(cfg));
}

std::string num(double v) { return world::format_real(v); }

// Commands -------------------------------------------------------------------------

struct GenDataArgs {
  Common common;
  bool force = false;
};

int cmd_gen_data(const RunConfig& cfg, const GenDataArgs& args) {
  const fs::path dir(args.common.out);
  if (fs::exists(dir) && !fs::is_empty(dir) && !args.force) {
    throw UsageError("output directory " + dir.string() + " is not empty; pass --force");
  }
  prepare_out(args.common.out);
  const uint64_t seed = cfg.get_uint("seed");
  const auto tuples = world::sample_oracle_tuples(
      seed, static_cast<int>(cfg.get_uint("data.tuples")), world_config(cfg));
  const auto sets =
      verifier::build_instruction_sets(tuples, cfg.get_size("data.rephrases_per_intent"), seed);
  const auto augmented = verifier::augment_dataset(tuples, sets);
  world::write_records_file((dir / "tuples.jsonl").string(), tuples);
  world::write_records_file((dir / "augmented.jsonl").string(), augmented);
  auto out = open_out(dir / "instruction_sets.jsonl");
  for (const auto& [intent, instructions] : sets) {
    nlohmann::ordered_json j;
    j["intent_id"] = intent;
    j["instructions"] = nlohmann::json::array();
    for (const auto& instr : instructions) j["instructions"].push_back(instr.text());
    out << j.dump() << '\n';
  }
  finish(dir, cfg, "gen-data",
         {{"tuples", std::to_string(tuples.size())},
          {"intents", std::to_string(sets.size())},
          {"augmented", std::to_string(augmented.size())}});
  std::cout << "tuples=" << tuples.size() << " intents=" << sets.size()
            << " augmented=" << augmented.size() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const Common& common, const std::string& data) {
  const auto records = read_data(data_file(data, "augmented.jsonl"));
  const fs::path dir = prepare_out(common.out);
  const auto model_cfg = model_config(cfg);
  const auto base = train_config(cfg);
  const size_t members = cfg.get_size("ensemble.size");
  if (members < 1) throw cli::ConfigError("ensemble.size", "ensemble.size must be at least 1");
  auto log = open_out(dir / "train_log.csv");
  auto timing = open_out(dir / "train_timing.csv");
  log << "member,step,loss\n";
  timing << "member,step,wall_ms\n";
  std::vector<verifier::VerifierModel> trained;
  for (size_t m = 0; m < members; ++m) {
    verifier::TrainConfig tc = base;
    tc.seed = hash_combine(base.seed, m);
    auto result = verifier::train(
        verifier::VerifierModel(model_cfg, verifier::FrozenEncoderSpec{}, tc.seed), records, tc);
    for (const auto& row : result.log) {
      log << m << ',' << row.step << ',' << num(row.loss) << '\n';
      timing << m << ',' << row.step << ',' << num(row.wall_ms) << '\n';
    }
    const double last = result.log.empty() ? 0.0 : result.log.back().loss;
    std::cout << "member " << m << ": steps=" << tc.steps << " final_loss=" << num(last) << '\n';
    trained.push_back(std::move(result.model));
  }
  const verifier::Ensemble ensemble(std::move(trained));
  verifier::save_checkpoint(ensemble, dir / "verifier.ckpt");
  finish(dir, cfg, "train",
         {{"records", std::to_string(records.size())},
          {"members", std::to_string(members)},
          {"parameters", std::to_string(ensemble.members().front().parameter_count())}});
  std::cout << "checkpoint: " << (dir / "verifier.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const RunConfig& cfg, const Common& common, const std::string& ckpt,
             const std::string& data) {
  const auto ensemble = verifier::load_ensemble(ckpt);
  const auto tuples = held_out_tuples(cfg, data);
  const fs::path dir = prepare_out(common.out);
  const inference::EnsembleScorer scorer(ensemble);
  const uint64_t seed = cfg.get_uint("seed");
  const size_t pool = cfg.get_size("eval.pool_size");
  const auto top1 = eval::top1_retrieval(scorer, tuples, pool, seed);
  const auto shared = eval::top1_retrieval(scorer, tuples, pool, seed,
                                           eval::DistractorHistory::SharedHistory);
  const auto pairs = eval::pair_scores(scorer, tuples, seed);
  const auto cls = eval::binary_classification(pairs.positives, pairs.negatives, 0.0);
  auto out = open_out(dir / "eval.csv");
  out << "metric,value\n"
      << "top1_accuracy," << num(top1.accuracy) << '\n'
      << "top1_shared_history," << num(shared.accuracy) << '\n'
      << "chance," << num(1.0 / static_cast<double>(pool)) << '\n'
      << "precision," << num(cls.precision) << '\n'
      << "recall," << num(cls.recall) << '\n'
      << "f1," << num(cls.f1) << '\n'
      << "tp," << cls.confusion.tp << '\n'
      << "fp," << cls.confusion.fp << '\n'
      << "tn," << cls.confusion.tn << '\n'
      << "fn," << cls.confusion.fn << '\n';
  const sampling::Policy policy(policy_params(cfg), world_config(cfg));
  const auto rows = eval::rmse_vs_candidates(
      scorer, policy, as_sizes(cfg.get_int_list("eval.rmse_ns"), "eval.rmse_ns"), tuples, seed);
  auto rmse_out = open_out(dir / "rmse.csv");
  rmse_out << "n,mean_rmse,mean_nrmse\n";
  for (const auto& r : rows) {
    rmse_out << r.n << ',' << num(r.mean_rmse) << ',' << num(r.mean_nrmse) << '\n';
  }
  finish(dir, cfg, "eval", {{"checkpoint", ckpt}, {"tuples", std::to_string(tuples.size())}});
  std::cout << "top1=" << num(top1.accuracy) << " (chance " << num(1.0 / static_cast<double>(pool))
            << ", shared-history " << num(shared.accuracy) << ") precision=" << num(cls.precision)
            << " recall=" << num(cls.recall) << " f1=" << num(cls.f1) << '\n';
  return 0;
}

int cmd_scale(const RunConfig& cfg, const Common& common) {
  eval::ScalingConfig sc;
  sc.strategies.clear();
  for (const auto& name : cfg.get_string_list("scale.strategies")) {
    sc.strategies.push_back(sampling::parse_strategy(name));
  }
  sc.k_grid = as_sizes(cfg.get_int_list("scale.k_grid"), "scale.k_grid");
  sc.n_tuples = cfg.get_size("scale.n_tuples");
  sc.policy = policy_params(cfg);
  sc.world = world_config(cfg);
  sc.fit_n = cfg.get_size("scale.fit_n");
  sc.gaussian_eps = cfg.get_real("scale.eps");
  sc.hybrid_max_rephrases = cfg.get_size("scale.hybrid_max_rephrases");
  sc.bootstrap_resamples = cfg.get_size("scale.resamples");
  sc.seed = cfg.get_uint("seed");
  const auto result = eval::scaling_experiment(sc);
  const fs::path dir = prepare_out(common.out);
  auto fits = open_out(dir / "fits.csv");
  fits << "strategy,axis,a,b,r_squared,flat,floored\n";
  for (const auto& curve : result.curves) {
    const std::string name = sampling::strategy_name(curve.strategy);
    auto out = open_out(dir / ("curve_" + name + ".csv"));
    eval::write_curve_csv(out, curve);
    std::cout << name << ":";
    for (const auto& p : curve.points) std::cout << " k" << p.k << "=" << num(p.mean_error);
    std::cout << '\n';
    if (curve.points.size() < 3) continue;
    // Gaussian spends a fixed fit_n forwards at every k, so its flops axis is constant.
    const bool flops_vary = std::any_of(curve.points.begin(), curve.points.end(), [&](const auto& p) {
      return p.flops_proxy != curve.points.front().flops_proxy;
    });
    for (const bool flops : {false, true}) {
      if (flops && !flops_vary) continue;
      const auto fit = flops ? eval::fit_curve_flops(curve) : eval::fit_curve(curve);
      fits << name << ',' << (flops ? "flops" : "candidates") << ',' << num(fit.a) << ','
           << num(fit.b) << ',' << num(fit.r_squared) << ',' << fit.flat << ',' << fit.floored
           << '\n';
      if (!flops) {
        std::cout << "  fit: a=" << num(fit.a) << " b=" << num(fit.b)
                  << " r2=" << num(fit.r_squared) << '\n';
      }
    }
  }
  finish(dir, cfg, "scale", {{"tuples", std::to_string(sc.n_tuples)}});
  return 0;
}

int cmd_study(const RunConfig& cfg, const Common& common) {
  eval::StudyConfig base;
  base.train_tuples = cfg.get_size("study.train_tuples");
  base.eval_tuples = cfg.get_size("study.eval_tuples");
  base.rephrases_per_intent = cfg.get_size("study.rephrases_per_intent");
  base.pool_size = cfg.get_size("eval.pool_size");
  base.model = model_config(cfg);
  base.train = train_config(cfg);
  base.train.steps = cfg.get_size("study.steps");
  base.ensemble_size = cfg.get_size("ensemble.size");
  base.data_seed = cfg.get_uint("seed");
  const auto axis = eval::parse_axis(cfg.get_string("study.axis"));
  std::vector<uint64_t> seeds;
  for (auto s : as_sizes(cfg.get_int_list("study.seeds"), "study.seeds")) seeds.push_back(s);
  const auto result = eval::scaling_study(axis, cfg.get_real_list("study.levels"), base, seeds);
  const fs::path dir = prepare_out(common.out);
  auto out = open_out(dir / "study.csv");
  eval::write_study_csv(out, result);
  for (const auto& row : result.rows) {
    std::cout << eval::axis_name(axis) << "=" << num(row.level) << " mean=" << num(row.mean)
              << " std=" << num(row.std) << '\n';
  }
  std::cout << "monotone_fraction=" << num(result.monotone_fraction)
            << (result.degenerate ? " (degenerate: single level)" : "") << '\n';
  finish(dir, cfg, "study", {{"axis", eval::axis_name(axis)}});
  return 0;
}

int cmd_infer(const RunConfig& cfg, const Common& common, const std::string& ckpt) {
  const std::string kind = cfg.get_string("infer.scorer");
  std::optional<verifier::Ensemble> ensemble;
  std::unique_ptr<inference::ActionScorer> scorer;
  const uint64_t seed = cfg.get_uint("seed");
  if (kind == "verifier") {
    if (ckpt.empty()) throw UsageError("infer with the verifier scorer needs --ckpt");
    ensemble.emplace(verifier::load_ensemble(ckpt));
    scorer = std::make_unique<inference::EnsembleScorer>(*ensemble);
  } else if (kind == "oracle") {
    scorer = std::make_unique<inference::OracleScorer>(world_config(cfg));
  } else if (kind == "random") {
    scorer = std::make_unique<inference::RandomScorer>(seed);
  } else {
    throw cli::ConfigError("infer.scorer", "infer.scorer must be verifier, oracle or random");
  }
  inference::InferenceConfig ic;
  ic.K = cfg.get_size("infer.K");
  ic.M = cfg.get_size("infer.M");
  ic.max_chunks = static_cast<int>(cfg.get_uint("infer.max_chunks"));
  ic.cache_text = cfg.get_bool("infer.cache_text");
  ic.rephrase_seed = seed;
  const bool degenerate = ic.K == 1 && ic.M == 1;
  const sampling::Policy policy(policy_params(cfg), world_config(cfg));
  const auto study =
      eval::run_episode_study(policy, *scorer, cfg.get_size("infer.episodes"), ic, seed);
  const fs::path dir = prepare_out(common.out);
  auto episodes = open_out(dir / "episodes.jsonl");
  auto traces = open_out(dir / "traces.csv");
  inference::write_trace_header(traces);
  for (size_t e = 0; e < study.episodes.size(); ++e) {
    const auto& ep = study.episodes[e];
    episodes << inference::episode_report(ep.scenario_seed, ic, ep.verified) << '\n';
    const auto scenario = world::generate_world(ep.scenario_seed);
    inference::write_trace_rows(
        traces, e, inference::score_trace(*scorer, ep.verified.result.trajectory, scenario.instruction),
        ep.verified.result.success);
  }
  auto summary = open_out(dir / "summary.csv");
  summary << "mode,episodes,success_rate,mean_progress\n"
          << "verified," << study.episodes.size() << ',' << num(study.verified_success_rate) << ','
          << num(study.verified_mean_progress) << '\n'
          << "bare," << study.episodes.size() << ',' << num(study.bare_success_rate) << ','
          << num(study.bare_mean_progress) << '\n';
  finish(dir, cfg, "infer", {{"scorer", kind}, {"degenerate", degenerate ? "true" : "false"}});
  std::cout << "verified: success=" << num(study.verified_success_rate)
            << " progress=" << num(study.verified_mean_progress)
            << "\nbare:     success=" << num(study.bare_success_rate)
            << " progress=" << num(study.bare_mean_progress) << '\n';
  if (degenerate) std::cout << "degenerate: bare policy equivalent\n";
  return 0;
}

int cmd_bench(const RunConfig& cfg, const Common& common, const std::string& ckpt) {
  std::optional<verifier::Ensemble> ensemble;
  if (!ckpt.empty()) {
    ensemble.emplace(verifier::load_ensemble(ckpt));
  } else {
    std::vector<verifier::VerifierModel> members;
    members.emplace_back(model_config(cfg), verifier::FrozenEncoderSpec{}, cfg.get_uint("seed"));
    ensemble.emplace(std::move(members));
  }
  eval::BenchConfig bc;
  bc.batch_sizes = as_sizes(cfg.get_int_list("bench.batch_sizes"), "bench.batch_sizes");
  bc.repeats = cfg.get_size("bench.repeats");
  bc.warmup = cfg.get_size("bench.warmup");
  bc.policy_fixed_ms = cfg.get_real("bench.policy_fixed_ms");
  bc.policy_per_sample_ms = cfg.get_real("bench.policy_per_sample_ms");
  bc.overlap = cfg.get_bool("bench.overlap");
  bc.seed = cfg.get_uint("seed");
  const sampling::Policy policy(policy_params(cfg), world_config(cfg));
  const auto rows = eval::latency_bench(policy, *ensemble, bc);
  const fs::path dir = prepare_out(common.out);
  auto out = open_out(dir / "bench.csv");
  eval::write_bench_csv(out, rows);
  eval::write_bench_csv(std::cout, rows);
  finish(dir, cfg, "bench", {{"rows", std::to_string(rows.size())}});
  return 0;
}

int cmd_rephrase(const RunConfig& cfg, const Common& common, const std::string& text,
                 bool remote, bool write_out) {
  const world::Instruction instr(world::tokenize(text), 0);
  if (instr.tokens.empty()) throw UsageError("--instruction is empty");
  const size_t k = cfg.get_size("rephrase.k");
  const uint64_t seed = cfg.get_uint("seed");
  rephrase::RephraseSet set;
  if (remote) {
    rephrase::RemoteProviderConfig rc;
    rc.endpoint_url = cfg.get_string("rephrase.remote.endpoint");
    rc.model_name = cfg.get_string("rephrase.remote.model");
    rc.api_key_env_var = cfg.get_string("rephrase.remote.api_key_env");
    rc.timeout = std::chrono::milliseconds(cfg.get_uint("rephrase.remote.timeout_ms"));
    if (rc.endpoint_url.empty()) {
      throw cli::ConfigError("rephrase.remote.endpoint", "--remote needs rephrase.remote.endpoint");
    }
    const char* key = std::getenv(rc.api_key_env_var.c_str());
    if (key == nullptr || *key == '\0') {
      throw UsageError("--remote needs an API key in $" + rc.api_key_env_var);
    }
    rc = rephrase::load_prompts(rc);
    set = rephrase::rephrase_with_fallback(instr, "", k, seed, rc, [](const std::string& w) {
      std::cerr << w << '\n';
    });
  } else {
    set = rephrase::grammar_rephrase(instr, k, seed);
  }
  for (const auto& v : set.variants) std::cout << v.text() << '\n';
  if (write_out) {
    const fs::path dir = prepare_out(common.out);
    auto out = open_out(dir / "rephrases.txt");
    for (const auto& v : set.variants) out << v.text() << '\n';
    finish(dir, cfg, "rephrase",
           {{"source", set.source == rephrase::RephraseSource::Grammar ? "grammar" : "remote"}});
  }
  return 0;
}

void report_error(const std::string& kind, const std::string& message,
                  const std::string& key = "") {
  nlohmann::ordered_json j;
  j["error"] = kind;
  if (!key.empty()) j["key"] = key;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time action verification toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", eval::version_string());

  using Appliers = std::vector<std::function<void(RunConfig&)>>;

  GenDataArgs gen;
  Appliers gen_ap;
  auto* gen_cmd = app.add_subcommand("gen-data", "sample oracle tuples and augment instructions");
  add_common(*gen_cmd, gen.common, "data");
  bind_flag<uint64_t>(*gen_cmd, "--tuples", "data.tuples", gen_ap, "number of base tuples");
  bind_flag<uint64_t>(*gen_cmd, "--rephrases-per-intent", "data.rephrases_per_intent", gen_ap,
                 "instructions per intent");
  gen_cmd->add_flag("--force", gen.force, "write into a non-empty directory");

  Common train;
  Appliers train_ap;
  std::string train_data;
  auto* train_cmd = app.add_subcommand("train", "train a verifier (or ensemble)");
  add_common(*train_cmd, train, "model");
  train_cmd->add_option("--data", train_data, "augmented records (file or gen-data dir)")
      ->required();
  bind_flag<uint64_t>(*train_cmd, "--steps", "train.steps", train_ap, "optimizer steps");
  bind_flag<uint64_t>(*train_cmd, "--batch-size", "train.batch_size", train_ap, "minibatch size");
  bind_flag<uint64_t>(*train_cmd, "--members", "ensemble.size", train_ap, "ensemble members");

  Common ev;
  Appliers ev_ap;
  std::string ev_ckpt, ev_data;
  auto* eval_cmd = app.add_subcommand("eval", "retrieval, classification and RMSE ablation");
  add_common(*eval_cmd, ev, "eval");
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", ev_data, "held-out tuples (file or gen-data dir)");
  bind_flag<uint64_t>(*eval_cmd, "--pool-size", "eval.pool_size", ev_ap, "retrieval pool size");

  Common sc;
  Appliers sc_ap;
  auto* scale_cmd = app.add_subcommand("scale", "oracle-error scaling curves and power-law fits");
  add_common(*scale_cmd, sc, "scale");
  bind_flag<std::string>(*scale_cmd, "--strategy-grid", "scale.strategies", sc_ap,
                    "comma-separated strategies");
  bind_flag<std::string>(*scale_cmd, "--k-grid", "scale.k_grid", sc_ap, "comma-separated k values");

  Common st;
  Appliers st_ap;
  auto* study_cmd = app.add_subcommand("study", "verifier training-scale study");
  add_common(*study_cmd, st, "study");
  bind_flag<std::string>(*study_cmd, "--axis", "study.axis", st_ap, "study axis");
  bind_flag<std::string>(*study_cmd, "--levels", "study.levels", st_ap, "comma-separated levels");

  Common inf;
  Appliers inf_ap;
  std::string inf_ckpt;
  auto* infer_cmd = app.add_subcommand("infer", "verified versus bare episodes");
  add_common(*infer_cmd, inf, "infer");
  infer_cmd->add_option("--ckpt", inf_ckpt, "checkpoint")->check(CLI::ExistingFile);
  bind_flag<uint64_t>(*infer_cmd, "--episodes", "infer.episodes", inf_ap, "episode count");
  bind_flag<uint64_t>(*infer_cmd, "--K", "infer.K", inf_ap, "rephrases per step");
  bind_flag<uint64_t>(*infer_cmd, "--M", "infer.M", inf_ap, "samples per rephrase");
  bind_flag<std::string>(*infer_cmd, "--scorer", "infer.scorer", inf_ap, "verifier, oracle or random");

  Common be;
  Appliers be_ap;
  std::string be_ckpt;
  auto* bench_cmd = app.add_subcommand("bench", "stage latency per batch size");
  add_common(*bench_cmd, be, "bench");
  bench_cmd->add_option("--ckpt", be_ckpt, "checkpoint (default: fresh model)")
      ->check(CLI::ExistingFile);
  bind_flag<std::string>(*bench_cmd, "--batch-sizes", "bench.batch_sizes", be_ap,
                    "comma-separated batch sizes");

  Common rp;
  Appliers rp_ap;
  std::string rp_text;
  bool rp_remote = false;
  auto* rephrase_cmd = app.add_subcommand("rephrase", "rephrase one instruction");
  add_common(*rephrase_cmd, rp, "");
  rephrase_cmd->add_option("--instruction", rp_text, "instruction text")->required();
  bind_flag<uint64_t>(*rephrase_cmd, "--k", "rephrase.k", rp_ap, "set size including the original");
  rephrase_cmd->add_flag("--remote", rp_remote, "use the remote provider (needs an API key)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(resolve(gen.common, gen_ap), gen);
    if (*train_cmd) return cmd_train(resolve(train, train_ap), train, train_data);
    if (*eval_cmd) return cmd_eval(resolve(ev, ev_ap), ev, ev_ckpt, ev_data);
    if (*scale_cmd) return cmd_scale(resolve(sc, sc_ap), sc);
    if (*study_cmd) return cmd_study(resolve(st, st_ap), st);
    if (*infer_cmd) return cmd_infer(resolve(inf, inf_ap), inf, inf_ckpt);
    if (*bench_cmd) return cmd_bench(resolve(be, be_ap), be, be_ckpt);
    if (*rephrase_cmd) {
      return cmd_rephrase(resolve(rp, rp_ap), rp, rp_text, rp_remote, !rp.out.empty());
    }
  } catch (const cli::ConfigError& e) {
    report_error("config", e.what(), e.key());
    return 2;
  } catch (const UsageError& e) {
    report_error("usage", e.what());
    return 2;
  } catch (const verifier::CheckpointError& e) {
    report_error("checkpoint", e.what());
    return 1;
  } catch (const rephrase::ProviderError& e) {
    report_error("provider", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    report_error("argument", e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error("runtime", e.what());
    return 1;
  }
  return 0;
}
