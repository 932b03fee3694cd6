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

#include "vlaverify/verifier.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace vlaverify::verifier {

// Frozen encoders -------------------------------------------------------------

FrozenEncoders::FrozenEncoders(const FrozenEncoderSpec& spec) : spec_(spec) {
  if (spec.obs_input_dim < 24 || spec.text_vocab_size < 1 || spec.feature_dim < 1) {
    throw ConfigurationError("frozen encoders: obs_input_dim must be >= 24 and sizes positive");
  }
  std::normal_distribution<double> z(0.0, 1.0);
  auto obs_rng = RngStream(spec.seed).child("obs").engine();
  obs_map_.resize(spec.obs_input_dim, spec.feature_dim);
  for (Index i = 0; i < obs_map_.size(); ++i) obs_map_.data()[i] = 0.5 * z(obs_rng);
  auto text_rng = RngStream(spec.seed).child("text").engine();
  text_table_.resize(spec.text_vocab_size, spec.feature_dim);
  for (Index i = 0; i < text_table_.size(); ++i) text_table_.data()[i] = z(text_rng);
}

MatrixXr FrozenEncoders::obs_inputs(const WorldState& state) const {
  const Index rows = 1 + static_cast<Index>(state.objects.size() + state.containers.size());
  MatrixXr x = MatrixXr::Zero(rows, spec_.obs_input_dim);
  auto place = [&](Index r, int type, const Eigen::Vector2d& p) {
    x(r, type) = 1.0;
    x(r, 3) = 2.0 * p.x() - 1.0;
    x(r, 4) = 2.0 * p.y() - 1.0;
    x(r, 21) = 1.0;
    // Gripper-relative offset, as seen from a wrist camera.
    x(r, 22) = 2.0 * (p.x() - state.gripper.position.x());
    x(r, 23) = 2.0 * (p.y() - state.gripper.position.y());
  };
  place(0, 0, state.gripper.position);
  x(0, 5) = state.gripper.grasp;
  x(0, 6) = state.held >= 0 ? 1.0 : 0.0;
  Index r = 1;
  for (const auto& o : state.objects) {
    place(r, 1, o.position);
    x(r, 6) = state.held == o.id ? 1.0 : 0.0;
    x(r, 7 + static_cast<int>(o.color)) = 1.0;
    x(r, 13 + static_cast<int>(o.shape)) = 1.0;
    ++r;
  }
  for (const auto& c : state.containers) {
    place(r, 2, c.position);
    x(r, 7 + static_cast<int>(c.color)) = 1.0;
    x(r, 17 + static_cast<int>(c.kind)) = 1.0;
    ++r;
  }
  return x;
}

MatrixXr FrozenEncoders::encode_obs(const WorldState& state) const {
  return (obs_inputs(state) * obs_map_).array().tanh().matrix();
}

Index FrozenEncoders::bucket(const std::string& token) const {
  return static_cast<Index>(fnv1a(token) % static_cast<uint64_t>(spec_.text_vocab_size));
}

MatrixXr FrozenEncoders::encode_text(const Instruction& instruction) const {
  count_text_call();
  if (instruction.tokens.empty()) throw std::invalid_argument("encode_text: empty instruction");
  MatrixXr out(static_cast<Index>(instruction.tokens.size()), spec_.feature_dim);
  for (size_t i = 0; i < instruction.tokens.size(); ++i) {
    out.row(static_cast<Index>(i)) = text_table_.row(bucket(instruction.tokens[i]));
  }
  return out;
}

uint64_t FrozenEncoders::fingerprint() const {
  auto hash = [](const MatrixXr& m, uint64_t h) {
    const auto* bytes = reinterpret_cast<const char*>(m.data());
    return fnv1a(std::string_view(bytes, static_cast<size_t>(m.size()) * sizeof(double)), h);
  };
  return hash(text_table_, hash(obs_map_, 0xcbf29ce484222325ULL));
}

// Model parameters ------------------------------------------------------------

namespace {

struct LnParams {
  ParameterXr g, b;
  LnParams() = default;
  LnParams(const std::string& prefix, Index dim) : g(prefix + ".gain", 1, dim), b(prefix + ".bias", 1, dim) {
    g.value.setOnes();
  }
};

struct FfnParams {
  LnParams ln;
  ParameterXr w1, b1, w2, b2;
  FfnParams() = default;
  FfnParams(const std::string& prefix, Index dim, Index hidden)
      : ln(prefix + ".ln", dim),
        w1(prefix + ".w1", dim, hidden),
        b1(prefix + ".b1", 1, hidden),
        w2(prefix + ".w2", hidden, dim),
        b2(prefix + ".b2", 1, dim) {}
};

struct FfnCache {
  LayerNormCache<double> ln;
  MatrixXr in, h, g;
};

MatrixXr ffn_forward(const FfnParams& p, const MatrixXr& x, double eps, FfnCache* c) {
  LayerNormCache<double> ln;
  MatrixXr in = layer_norm(x, p.ln.g, p.ln.b, eps, c ? &ln : nullptr);
  MatrixXr h = affine(in, p.w1, p.b1);
  MatrixXr g = gelu(h);
  MatrixXr out = affine(g, p.w2, p.b2);
  if (c) {
    c->ln = std::move(ln);
    c->in = std::move(in);
    c->h = std::move(h);
    c->g = std::move(g);
  }
  return out;
}

MatrixXr ffn_backward(FfnParams& p, const FfnCache& c, const MatrixXr& dout) {
  const MatrixXr dg = affine_backward(c.g, dout, p.w2, p.b2);
  const MatrixXr dh = gelu_backward(c.h, dg);
  const MatrixXr din = affine_backward(c.in, dh, p.w1, p.b1);
  return layer_norm_backward(c.ln, din, p.ln.g, p.ln.b);
}

struct ActionLayer {
  LnParams ln;
  AttentionParams<double> attn;
  FfnParams ffn;
};

void init_normal(ParameterXr& p, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, std);
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = z(rng);
}

void init_fan_in(ParameterXr& p, std::mt19937_64& rng) {
  init_normal(p, 1.0 / std::sqrt(static_cast<double>(p.value.rows())), rng);
}

void init_attention(AttentionParams<double>& a, std::mt19937_64& rng) {
  for (auto* w : {&a.wq, &a.wk, &a.wv, &a.wo}) init_fan_in(*w, rng);
}

void init_ffn(FfnParams& f, std::mt19937_64& rng) {
  init_fan_in(f.w1, rng);
  init_fan_in(f.w2, rng);
}

void append(std::vector<ParameterXr*>& out, LnParams& ln) {
  out.push_back(&ln.g);
  out.push_back(&ln.b);
}

void append(std::vector<ParameterXr*>& out, FfnParams& f) {
  append(out, f.ln);
  for (auto* p : {&f.w1, &f.b1, &f.w2, &f.b2}) out.push_back(p);
}

void append(std::vector<ParameterXr*>& out, AttentionParams<double>& a) {
  for (auto* p : a.parameters()) out.push_back(p);
}

}  // namespace

struct VerifierModel::Params {
  // fusion tower
  ParameterXr text_w, text_b, text_pos, obs_w, obs_b;
  LnParams obs_ln, query_ln;
  AttentionParams<double> cross;
  FfnParams fusion_ffn;
  ParameterXr fusion_out_w, fusion_out_b;
  // action tower
  ParameterXr act_w, act_b, act_pos;
  std::vector<ActionLayer> layers;
  LnParams act_final_ln;
  ParameterXr act_out_w, act_out_b;

  Params(const VerifierConfig& c, Index feature_dim)
      : text_w("fusion.text_proj.w", feature_dim, c.width),
        text_b("fusion.text_proj.b", 1, c.width),
        text_pos("fusion.text_pos", c.max_text_tokens, c.width),
        obs_w("fusion.obs_proj.w", feature_dim, c.width),
        obs_b("fusion.obs_proj.b", 1, c.width),
        obs_ln("fusion.obs_ln", c.width),
        query_ln("fusion.query_ln", c.width),
        cross("fusion.cross", c.width, c.fusion_heads),
        fusion_ffn("fusion.ffn", c.width, c.ffn_dim),
        fusion_out_w("fusion.out.w", c.width, c.embed_dim),
        fusion_out_b("fusion.out.b", 1, c.embed_dim),
        act_w("action.in_proj.w", c.action_dim, c.width),
        act_b("action.in_proj.b", 1, c.width),
        act_pos("action.pos", c.history_window + c.chunk_length, c.width),
        act_final_ln("action.final_ln", c.width),
        act_out_w("action.out.w", c.width, c.embed_dim),
        act_out_b("action.out.b", 1, c.embed_dim) {
    for (int l = 0; l < c.action_layers; ++l) {
      const std::string prefix = "action.layer" + std::to_string(l);
      layers.push_back({LnParams(prefix + ".attn_ln", c.width),
                        AttentionParams<double>(prefix + ".attn", c.width, c.action_heads),
                        FfnParams(prefix + ".ffn", c.width, c.ffn_dim)});
    }
  }

  std::vector<ParameterXr*> fusion() {
    std::vector<ParameterXr*> out = {&text_w, &text_b, &text_pos, &obs_w, &obs_b};
    append(out, obs_ln);
    append(out, query_ln);
    append(out, cross);
    append(out, fusion_ffn);
    out.push_back(&fusion_out_w);
    out.push_back(&fusion_out_b);
    return out;
  }

  std::vector<ParameterXr*> action() {
    std::vector<ParameterXr*> out = {&act_w, &act_b, &act_pos};
    for (auto& l : layers) {
      append(out, l.ln);
      append(out, l.attn);
      append(out, l.ffn);
    }
    append(out, act_final_ln);
    out.push_back(&act_out_w);
    out.push_back(&act_out_b);
    return out;
  }
};

struct FusionCache {
  SegmentLayout text_layout, obs_layout;
  MatrixXr text_in, obs_in, o0, t0, t1, pooled;
  std::vector<Index> positions;
  LayerNormCache<double> obs_ln, query_ln;
  AttentionCache<double> cross;
  FfnCache ffn;
};

struct ActionCache {
  struct Layer {
    LayerNormCache<double> ln;
    AttentionCache<double> attn;
    FfnCache ffn;
  };
  SegmentLayout layout;
  MatrixXr input, pooled;
  std::vector<Layer> layers;
  LayerNormCache<double> final_ln;
};

VerifierModel::VerifierModel(const VerifierConfig& config, const FrozenEncoderSpec& frozen,
                             uint64_t init_seed)
    : config_(config), encoders_(std::make_shared<const FrozenEncoders>(frozen)) {
  if (config.width < 1 || config.embed_dim < 1 || config.ffn_dim < 1 ||
      config.max_text_tokens < 1 || config.action_layers < 0) {
    throw ConfigurationError("verifier: sizes must be positive");
  }
  p_ = std::make_unique<Params>(config, frozen.feature_dim);
  auto rng = RngStream(init_seed).child("verifier-init").engine();
  init_fan_in(p_->text_w, rng);
  init_normal(p_->text_pos, 0.1, rng);
  init_fan_in(p_->obs_w, rng);
  init_attention(p_->cross, rng);
  init_ffn(p_->fusion_ffn, rng);
  init_fan_in(p_->fusion_out_w, rng);
  init_fan_in(p_->act_w, rng);
  init_normal(p_->act_pos, 0.1, rng);
  for (auto& l : p_->layers) {
    init_attention(l.attn, rng);
    init_ffn(l.ffn, rng);
  }
  init_fan_in(p_->act_out_w, rng);
}

VerifierModel::VerifierModel(const VerifierModel& other)
    : config_(other.config_),
      encoders_(other.encoders_),
      p_(std::make_unique<Params>(*other.p_)) {}

VerifierModel& VerifierModel::operator=(const VerifierModel& other) {
  if (this != &other) {
    config_ = other.config_;
    encoders_ = other.encoders_;
    p_ = std::make_unique<Params>(*other.p_);
  }
  return *this;
}

VerifierModel::VerifierModel(VerifierModel&&) noexcept = default;
VerifierModel& VerifierModel::operator=(VerifierModel&&) noexcept = default;
VerifierModel::~VerifierModel() = default;

std::vector<ParameterXr*> VerifierModel::fusion_parameters() { return p_->fusion(); }
std::vector<ParameterXr*> VerifierModel::action_parameters() { return p_->action(); }

std::vector<ParameterXr*> VerifierModel::parameters() {
  auto out = p_->fusion();
  const auto act = p_->action();
  out.insert(out.end(), act.begin(), act.end());
  return out;
}

std::vector<const ParameterXr*> VerifierModel::parameters() const {
  auto mut = const_cast<VerifierModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

ParameterXr& VerifierModel::parameter(const std::string& name) {
  for (auto* p : parameters()) {
    if (p->name == name) return *p;
  }
  throw world::LookupError("verifier: no parameter named " + name);
}

size_t VerifierModel::parameter_count() const {
  size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<size_t>(p->size());
  return n;
}

void VerifierModel::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

// Fusion tower ----------------------------------------------------------------

MatrixXr VerifierModel::fuse_batch(std::span<const MatrixXr> obs_tokens,
                                   std::span<const MatrixXr> text_tokens,
                                   FusionCache* cache) const {
  if (obs_tokens.size() != text_tokens.size() || obs_tokens.empty()) {
    throw DimensionError("fuse: need one observation per instruction");
  }
  const Index f = encoders_->spec().feature_dim;
  SegmentLayout tl, ol;
  for (size_t i = 0; i < obs_tokens.size(); ++i) {
    if (obs_tokens[i].cols() != f || text_tokens[i].cols() != f) {
      throw DimensionError("fuse: features must have " + std::to_string(f) + " columns, got " +
                           shape_string(obs_tokens[i]) + " and " + shape_string(text_tokens[i]));
    }
    if (obs_tokens[i].rows() < 1 || text_tokens[i].rows() < 1) {
      throw DimensionError("fuse: empty observation or instruction");
    }
    tl.lengths.push_back(std::min(text_tokens[i].rows(), config_.max_text_tokens));
    ol.lengths.push_back(obs_tokens[i].rows());
  }
  MatrixXr text(tl.total(), f), obs(ol.total(), f);
  std::vector<Index> positions(static_cast<size_t>(tl.total()));
  {
    Index tr = 0, orow = 0;
    for (size_t i = 0; i < obs_tokens.size(); ++i) {
      const Index len = tl.lengths[i];
      text.middleRows(tr, len) = text_tokens[i].topRows(len);
      for (Index t = 0; t < len; ++t) positions[static_cast<size_t>(tr + t)] = t;
      tr += len;
      obs.middleRows(orow, ol.lengths[i]) = obs_tokens[i];
      orow += ol.lengths[i];
    }
  }
  const auto& p = *p_;
  MatrixXr t0 = affine(text, p.text_w, p.text_b);
  for (Index r = 0; r < t0.rows(); ++r) t0.row(r) += p.text_pos.value.row(positions[static_cast<size_t>(r)]);
  MatrixXr o0 = affine(obs, p.obs_w, p.obs_b);

  LayerNormCache<double> obs_ln_c, query_ln_c;
  const MatrixXr kv = layer_norm(o0, p.obs_ln.g, p.obs_ln.b, config_.ln_eps, cache ? &obs_ln_c : nullptr);
  const MatrixXr q = layer_norm(t0, p.query_ln.g, p.query_ln.b, config_.ln_eps,
                                cache ? &query_ln_c : nullptr);
  AttentionCache<double> attn_c;
  MatrixXr t1 = t0 + multi_head_attention(q, kv, kv, tl, ol, p.cross, cache ? &attn_c : nullptr);
  FfnCache ffn_c;
  const MatrixXr t2 = t1 + ffn_forward(p.fusion_ffn, t1, config_.ln_eps, cache ? &ffn_c : nullptr);
  MatrixXr pooled = segment_mean(t2, tl);
  MatrixXr out = affine(pooled, p.fusion_out_w, p.fusion_out_b);
  if (cache) {
    cache->text_layout = tl;
    cache->obs_layout = ol;
    cache->text_in = std::move(text);
    cache->obs_in = std::move(obs);
    cache->o0 = std::move(o0);
    cache->t0 = std::move(t0);
    cache->t1 = std::move(t1);
    cache->pooled = std::move(pooled);
    cache->positions = std::move(positions);
    cache->obs_ln = std::move(obs_ln_c);
    cache->query_ln = std::move(query_ln_c);
    cache->cross = std::move(attn_c);
    cache->ffn = std::move(ffn_c);
  }
  return out;
}

void VerifierModel::fuse_backward(const FusionCache& c, const MatrixXr& d_fused) {
  auto& p = *p_;
  const MatrixXr dpooled = affine_backward(c.pooled, d_fused, p.fusion_out_w, p.fusion_out_b);
  const MatrixXr dt2 = segment_mean_backward(dpooled, c.text_layout);
  MatrixXr dt1 = dt2 + ffn_backward(p.fusion_ffn, c.ffn, dt2);
  const auto g = multi_head_attention_backward(c.cross, dt1, p.cross);
  MatrixXr dt0 = dt1 + layer_norm_backward(c.query_ln, g.dxq, p.query_ln.g, p.query_ln.b);
  const MatrixXr do0 = layer_norm_backward(c.obs_ln, MatrixXr(g.dxk + g.dxv), p.obs_ln.g, p.obs_ln.b);
  affine_backward(c.obs_in, do0, p.obs_w, p.obs_b);
  for (Index r = 0; r < dt0.rows(); ++r) {
    p.text_pos.grad.row(c.positions[static_cast<size_t>(r)]) += dt0.row(r);
  }
  affine_backward(c.text_in, dt0, p.text_w, p.text_b);
}

// Action tower ----------------------------------------------------------------

MatrixXr VerifierModel::encode_action_batch(std::span<const ActionHistory> histories,
                                            std::span<const ActionChunk> chunks,
                                            ActionCache* cache) const {
  if (histories.size() != chunks.size() || chunks.empty()) {
    throw DimensionError("encode_action: need one history per chunk");
  }
  const Index w = config_.history_window, h = config_.chunk_length, d = config_.action_dim;
  const Index len = w + h;
  const auto b = static_cast<Index>(chunks.size());
  MatrixXr input(b * len, d);
  for (Index i = 0; i < b; ++i) {
    const auto& hist = histories[static_cast<size_t>(i)];
    const auto& chunk = chunks[static_cast<size_t>(i)];
    if (hist.rows() != w || hist.cols() != d || chunk.rows() != h || chunk.cols() != d) {
      throw DimensionError("encode_action: expected history " + shape_string(w, d) + " and chunk " +
                           shape_string(h, d) + ", got " + shape_string(hist) + " and " +
                           shape_string(chunk));
    }
    input.middleRows(i * len, w) = hist;
    input.middleRows(i * len + w, h) = chunk;
  }
  const auto& p = *p_;
  const SegmentLayout layout = SegmentLayout::uniform(b, len);
  MatrixXr x = affine(input, p.act_w, p.act_b);
  for (Index i = 0; i < b; ++i) x.middleRows(i * len, len) += p.act_pos.value;
  std::vector<ActionCache::Layer> layer_caches;
  for (const auto& layer : p.layers) {
    ActionCache::Layer lc;
    const MatrixXr a_in = layer_norm(x, layer.ln.g, layer.ln.b, config_.ln_eps, cache ? &lc.ln : nullptr);
    x += multi_head_attention(a_in, a_in, a_in, layout, layout, layer.attn, cache ? &lc.attn : nullptr);
    x += ffn_forward(layer.ffn, x, config_.ln_eps, cache ? &lc.ffn : nullptr);
    if (cache) layer_caches.push_back(std::move(lc));
  }
  LayerNormCache<double> final_c;
  const MatrixXr xf = layer_norm(x, p.act_final_ln.g, p.act_final_ln.b, config_.ln_eps,
                                 cache ? &final_c : nullptr);
  MatrixXr pooled = segment_mean(xf, layout);
  MatrixXr out = affine(pooled, p.act_out_w, p.act_out_b);
  if (cache) {
    cache->layout = layout;
    cache->input = std::move(input);
    cache->pooled = std::move(pooled);
    cache->layers = std::move(layer_caches);
    cache->final_ln = std::move(final_c);
  }
  return out;
}

void VerifierModel::encode_action_backward(const ActionCache& c, const MatrixXr& d_action) {
  auto& p = *p_;
  const MatrixXr dpooled = affine_backward(c.pooled, d_action, p.act_out_w, p.act_out_b);
  MatrixXr dx = layer_norm_backward(c.final_ln, segment_mean_backward(dpooled, c.layout),
                                    p.act_final_ln.g, p.act_final_ln.b);
  for (size_t l = p.layers.size(); l-- > 0;) {
    auto& layer = p.layers[l];
    const auto& lc = c.layers[l];
    dx += ffn_backward(layer.ffn, lc.ffn, dx);
    const auto g = multi_head_attention_backward(lc.attn, dx, layer.attn);
    dx += layer_norm_backward(lc.ln, MatrixXr(g.dxq + g.dxk + g.dxv), layer.ln.g, layer.ln.b);
  }
  const Index len = config_.history_window + config_.chunk_length;
  for (Index i = 0; i < c.layout.count(); ++i) p.act_pos.grad += dx.middleRows(i * len, len);
  affine_backward(c.input, dx, p.act_w, p.act_b);
}

VectorXr VerifierModel::fuse(const MatrixXr& obs_tokens, const MatrixXr& text_tokens) const {
  return fuse_batch(std::span(&obs_tokens, 1), std::span(&text_tokens, 1)).row(0).transpose();
}

VectorXr VerifierModel::encode_action(const ActionHistory& history, const ActionChunk& chunk) const {
  return encode_action_batch(std::span(&history, 1), std::span(&chunk, 1)).row(0).transpose();
}

// Scoring ---------------------------------------------------------------------

VectorXr normalized(const VectorXr& v) {
  const MatrixXr row = v.transpose();
  return normalize_rows(row).row(0).transpose();
}

double score(const VerifierModel& model, const WorldState& o, const ActionHistory& h,
             const Instruction& l, const ActionChunk& a) {
  const auto& enc = model.encoders();
  const VectorXr f = normalized(model.fuse(enc.encode_obs(o), enc.encode_text(l)));
  const VectorXr e = normalized(model.encode_action(h, a));
  return f.dot(e);
}

// Data augmentation -----------------------------------------------------------

InstructionSets build_instruction_sets(const std::vector<DatasetRecord>& records,
                                       size_t per_intent, uint64_t seed) {
  InstructionSets sets;
  for (const auto& r : records) {
    if (sets.count(r.intent_id)) continue;
    const auto set = rephrase::grammar_rephrase(r.instruction(), per_intent, seed);
    sets.emplace(r.intent_id, set.variants);
  }
  return sets;
}

std::vector<DatasetRecord> augment_dataset(const std::vector<DatasetRecord>& records,
                                           const InstructionSets& sets) {
  std::vector<DatasetRecord> out;
  size_t total = 0;
  for (const auto& r : records) {
    const auto it = sets.find(r.intent_id);
    if (it == sets.end()) {
      throw world::LookupError("augment_dataset: no instruction set for intent " +
                               std::to_string(r.intent_id));
    }
    total += it->second.size();
  }
  out.reserve(total);
  for (const auto& r : records) {
    for (const auto& instr : sets.at(r.intent_id)) {
      DatasetRecord copy = r;
      copy.instruction_tokens = instr.tokens;
      out.push_back(std::move(copy));
    }
  }
  return out;
}

// InfoNCE ---------------------------------------------------------------------

InfoNceResult infonce_loss(const MatrixXr& fused, const MatrixXr& actions, double temperature) {
  require_same_shape(fused, actions, "infonce_loss");
  if (!(temperature > 0.0)) throw ConfigurationError("infonce: temperature must be positive");
  VectorXr fn, an;
  const MatrixXr f = normalize_rows(fused, 1e-12, &fn);
  const MatrixXr a = normalize_rows(actions, 1e-12, &an);
  const MatrixXr s = (f * a.transpose()) / temperature;
  const auto [row_loss, row_grad] = row_softmax_nll(s);
  const MatrixXr st = s.transpose();
  const auto [col_loss, col_grad] = row_softmax_nll(st);
  InfoNceResult r;
  r.loss = 0.5 * (row_loss + col_loss);
  const MatrixXr ds = 0.5 * (row_grad + col_grad.transpose()) / temperature;
  r.d_fused = normalize_rows_backward(f, fn, MatrixXr(ds * a));
  r.d_action = normalize_rows_backward(a, an, MatrixXr(ds.transpose() * f));
  return r;
}

double infonce_step(VerifierModel& model, std::span<const DatasetRecord> batch,
                    double temperature, bool with_grad) {
  if (batch.empty()) throw std::invalid_argument("infonce_step: empty batch");
  const auto& enc = model.encoders();
  std::vector<MatrixXr> obs, text;
  std::vector<ActionHistory> hist;
  std::vector<ActionChunk> chunks;
  obs.reserve(batch.size());
  text.reserve(batch.size());
  hist.reserve(batch.size());
  chunks.reserve(batch.size());
  for (const auto& r : batch) {
    obs.push_back(enc.encode_obs(r.state));
    text.push_back(enc.encode_text(r.instruction()));
    hist.push_back(r.history);
    chunks.push_back(r.action);
  }
  FusionCache fc;
  ActionCache ac;
  const MatrixXr f = model.fuse_batch(obs, text, with_grad ? &fc : nullptr);
  const MatrixXr a = model.encode_action_batch(hist, chunks, with_grad ? &ac : nullptr);
  const InfoNceResult r = infonce_loss(f, a, temperature);
  if (with_grad) {
    model.zero_grad();
    model.fuse_backward(fc, r.d_fused);
    model.encode_action_backward(ac, r.d_action);
  }
  return r.loss;
}

TrainResult train(VerifierModel model, const std::vector<DatasetRecord>& data,
                  const TrainConfig& config) {
  if (config.batch_size < 2) throw ConfigurationError("train: batch_size must be at least 2");
  if (data.size() < config.batch_size) {
    throw ConfigurationError("train: dataset of " + std::to_string(data.size()) +
                             " records is smaller than batch_size " +
                             std::to_string(config.batch_size));
  }
  Adam<double> adam(AdamConfig{config.lr});
  auto params = model.parameters();
  auto rng = RngStream(config.seed).child("shuffle").engine();
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  size_t cursor = 0;

  TrainResult result{std::move(model), {}};
  result.log.reserve(config.steps);
  std::vector<DatasetRecord> batch(config.batch_size);
  const auto start = std::chrono::steady_clock::now();
  for (size_t step = 1; step <= config.steps; ++step) {
    if (cursor + config.batch_size > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    uint64_t batch_hash = 0;
    for (size_t i = 0; i < config.batch_size; ++i) {
      batch[i] = data[order[cursor + i]];
      batch_hash = hash_combine(batch_hash, order[cursor + i]);
    }
    cursor += config.batch_size;
    const double loss = infonce_step(result.model, batch, config.temperature, true);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "train: non-finite loss at step " << step << " (batch hash " << std::hex
          << batch_hash << ")";
      throw NumericError(msg.str());
    }
    adam.step(params);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({step, loss, ms});
  }
  return result;
}

// Ensemble --------------------------------------------------------------------

Ensemble::Ensemble(std::vector<VerifierModel> members) : members_(std::move(members)) {
  if (members_.empty()) throw ConfigurationError("ensemble: needs at least one member");
  for (const auto& m : members_) {
    if (m.config().embed_dim != members_.front().config().embed_dim) {
      throw ConfigurationError("ensemble: mixed embedding dimensions");
    }
    if (!(m.config() == members_.front().config())) {
      throw ConfigurationError("ensemble: members differ in architecture");
    }
    if (!(m.frozen_spec() == members_.front().frozen_spec())) {
      throw ConfigurationError("ensemble: members use different frozen encoders");
    }
  }
}

VectorXr Ensemble::fused_embedding(const MatrixXr& obs_tokens, const MatrixXr& text_tokens) const {
  fused_calls_.fetch_add(1);
  if (members_.size() == 1) return normalized(members_.front().fuse(obs_tokens, text_tokens));
  VectorXr sum = VectorXr::Zero(embed_dim());
  for (const auto& m : members_) sum += normalized(m.fuse(obs_tokens, text_tokens));
  return normalized(sum / static_cast<double>(members_.size()));
}

MatrixXr Ensemble::action_embeddings(std::span<const ActionHistory> histories,
                                     std::span<const ActionChunk> chunks) const {
  action_calls_.fetch_add(chunks.size());
  if (members_.size() == 1) {
    return normalize_rows(members_.front().encode_action_batch(histories, chunks));
  }
  MatrixXr sum = MatrixXr::Zero(static_cast<Index>(chunks.size()), embed_dim());
  for (const auto& m : members_) sum += normalize_rows(m.encode_action_batch(histories, chunks));
  return normalize_rows(MatrixXr(sum / static_cast<double>(members_.size())));
}

double ensemble_score(const Ensemble& ensemble, const WorldState& o, const ActionHistory& h,
                      const Instruction& l, const ActionChunk& a) {
  const auto& enc = ensemble.encoders();
  const VectorXr f = ensemble.fused_embedding(enc.encode_obs(o), enc.encode_text(l));
  const VectorXr e = ensemble.action_embeddings(std::span(&h, 1), std::span(&a, 1)).row(0).transpose();
  return f.dot(e);
}

// Checkpoints -----------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian");

constexpr char kMagic[8] = {'V', 'L', 'A', 'V', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
  put<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    T v;
    need(sizeof v, what);
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_doubles(double* dst, size_t n, const std::string& what) {
    need(n * sizeof(double), what.c_str());
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  bool done() const { return pos_ == bytes_.size(); }
  size_t size() const { return bytes_.size(); }

 private:
  void need(size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointTruncatedError("checkpoint truncated while reading " + std::string(what) +
                                     " at byte " + std::to_string(pos_) + " of " +
                                     std::to_string(bytes_.size()));
    }
  }
  std::string bytes_;
  size_t pos_ = 0;
};

std::map<std::string, std::string> metadata(const Ensemble& e) {
  const auto& c = e.members().front().config();
  const auto& f = e.members().front().frozen_spec();
  return {
      {"members", std::to_string(e.size())},
      {"frozen.seed", std::to_string(f.seed)},
      {"frozen.obs_input_dim", std::to_string(f.obs_input_dim)},
      {"frozen.text_vocab_size", std::to_string(f.text_vocab_size)},
      {"frozen.feature_dim", std::to_string(f.feature_dim)},
      {"config.width", std::to_string(c.width)},
      {"config.embed_dim", std::to_string(c.embed_dim)},
      {"config.fusion_heads", std::to_string(c.fusion_heads)},
      {"config.action_heads", std::to_string(c.action_heads)},
      {"config.action_layers", std::to_string(c.action_layers)},
      {"config.ffn_dim", std::to_string(c.ffn_dim)},
      {"config.max_text_tokens", std::to_string(c.max_text_tokens)},
      {"config.history_window", std::to_string(c.history_window)},
      {"config.chunk_length", std::to_string(c.chunk_length)},
      {"config.action_dim", std::to_string(c.action_dim)},
      {"config.ln_eps", world::format_real(c.ln_eps)},
  };
}

long long meta_int(const std::map<std::string, std::string>& m, const std::string& key) {
  const auto it = m.find(key);
  if (it == m.end()) throw CheckpointFormatError("checkpoint metadata lacks " + key);
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw CheckpointFormatError("checkpoint metadata " + key + " is not an integer");
  }
}

}  // namespace

void save_checkpoint(const Ensemble& ensemble, const std::filesystem::path& path) {
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, sizeof kMagic);
  put<uint32_t>(out, kCheckpointVersion);
  const auto meta = metadata(ensemble);
  put<uint32_t>(out, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_string(out, k);
    put_string(out, v);
  }
  for (const auto& member : ensemble.members()) {
    const auto params = member.parameters();
    put<uint32_t>(out, static_cast<uint32_t>(params.size()));
    for (const auto* p : params) {
      put_string(out, p->name);
      put<uint32_t>(out, 2);
      put<uint64_t>(out, static_cast<uint64_t>(p->value.rows()));
      put<uint64_t>(out, static_cast<uint64_t>(p->value.cols()));
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::string bytes = out.str();
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw CheckpointError("failed writing checkpoint " + path.string());
}

void save_checkpoint(const VerifierModel& model, const std::filesystem::path& path) {
  save_checkpoint(Ensemble({model}), path);
}

Ensemble load_ensemble(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << file.rdbuf();
  Reader in(ss.str());
  char magic[sizeof kMagic];
  for (char& ch : magic) ch = in.get<char>("magic");
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw CheckpointFormatError(path.string() + " is not a verifier checkpoint");
  }
  const auto version = in.get<uint32_t>("version");
  if (version != kCheckpointVersion) throw CheckpointVersionError(version, kCheckpointVersion);
  std::map<std::string, std::string> meta;
  const auto n_meta = in.get<uint32_t>("metadata count");
  for (uint32_t i = 0; i < n_meta; ++i) {
    std::string k = in.get_string("metadata key");
    meta[k] = in.get_string("metadata value");
  }
  FrozenEncoderSpec frozen;
  frozen.seed = std::stoull(meta.count("frozen.seed") ? meta.at("frozen.seed") : "x");
  frozen.obs_input_dim = meta_int(meta, "frozen.obs_input_dim");
  frozen.text_vocab_size = meta_int(meta, "frozen.text_vocab_size");
  frozen.feature_dim = meta_int(meta, "frozen.feature_dim");
  VerifierConfig c;
  c.width = meta_int(meta, "config.width");
  c.embed_dim = meta_int(meta, "config.embed_dim");
  c.fusion_heads = static_cast<int>(meta_int(meta, "config.fusion_heads"));
  c.action_heads = static_cast<int>(meta_int(meta, "config.action_heads"));
  c.action_layers = static_cast<int>(meta_int(meta, "config.action_layers"));
  c.ffn_dim = meta_int(meta, "config.ffn_dim");
  c.max_text_tokens = meta_int(meta, "config.max_text_tokens");
  c.history_window = meta_int(meta, "config.history_window");
  c.chunk_length = meta_int(meta, "config.chunk_length");
  c.action_dim = meta_int(meta, "config.action_dim");
  c.ln_eps = std::stod(meta.count("config.ln_eps") ? meta.at("config.ln_eps") : "nan");
  const auto members = meta_int(meta, "members");
  if (members < 1) throw CheckpointFormatError("checkpoint has no members");

  std::vector<VerifierModel> models;
  for (long long m = 0; m < members; ++m) {
    VerifierModel model(c, frozen, 0);
    const auto params = model.parameters();
    const auto count = in.get<uint32_t>("tensor count");
    if (count != params.size()) {
      throw CheckpointShapeError("checkpoint member " + std::to_string(m) + " has " +
                                 std::to_string(count) + " tensors, model expects " +
                                 std::to_string(params.size()));
    }
    std::set<std::string> seen;
    for (uint32_t t = 0; t < count; ++t) {
      const std::string name = in.get_string("tensor name");
      const auto rank = in.get<uint32_t>("tensor rank");
      if (rank != 2) throw CheckpointShapeError("tensor " + name + " has rank " + std::to_string(rank));
      const auto rows = in.get<uint64_t>("tensor shape");
      const auto cols = in.get<uint64_t>("tensor shape");
      ParameterXr* target = nullptr;
      for (auto* p : params) {
        if (p->name == name) target = p;
      }
      if (target == nullptr || !seen.insert(name).second) {
        throw CheckpointFormatError("unexpected tensor " + name + " in checkpoint");
      }
      if (static_cast<Index>(rows) != target->value.rows() ||
          static_cast<Index>(cols) != target->value.cols()) {
        throw CheckpointShapeError("tensor " + name + " has shape " +
                                   shape_string(static_cast<Index>(rows), static_cast<Index>(cols)) +
                                   ", model expects " + shape_string(target->value));
      }
      in.get_doubles(target->value.data(), static_cast<size_t>(target->value.size()), name);
    }
    models.push_back(std::move(model));
  }
  if (!in.done()) throw CheckpointFormatError("trailing bytes after checkpoint tensors");
  return Ensemble(std::move(models));
}

VerifierModel load_model(const std::filesystem::path& path) {
  Ensemble e = load_ensemble(path);
  if (e.size() != 1) {
    throw CheckpointFormatError("checkpoint holds " + std::to_string(e.size()) +
                                " members, expected a single model");
  }
  return e.members().front();
}

}  // namespace vlaverify::verifier
