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

// Dense layers with hand-written backward passes.
//
// Every 2-D quantity is a row-major Eigen matrix. Batched sequences are
// stacked along rows ((B*T) x D) and described by a SegmentLayout, so a
// single GEMM covers the whole batch and attention runs per segment.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vlaverify {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXr = Matrix<double>;
using RowVectorXr = RowVector<double>;
using VectorXr = Vector<double>;
using Index = Eigen::Index;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigurationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

template <typename A, typename B>
void require_same_shape(const Eigen::EigenBase<A>& a, const Eigen::EigenBase<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a) +
                         " vs " + shape_string(b));
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// A trainable tensor with its gradient accumulator.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols)
      : name(std::move(n)),
        value(Matrix<Scalar>::Zero(rows, cols)),
        grad(Matrix<Scalar>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Index size() const { return value.size(); }
};

using ParameterXr = Parameter<double>;

/// Rows of a stacked matrix grouped into consecutive segments.
struct SegmentLayout {
  std::vector<Index> lengths;

  static SegmentLayout uniform(Index count, Index length) {
    return SegmentLayout{std::vector<Index>(static_cast<size_t>(count), length)};
  }
  Index count() const { return static_cast<Index>(lengths.size()); }
  Index total() const { return std::accumulate(lengths.begin(), lengths.end(), Index{0}); }
  std::vector<Index> offsets() const {
    std::vector<Index> out(lengths.size(), 0);
    for (size_t i = 1; i < lengths.size(); ++i) out[i] = out[i - 1] + lengths[i - 1];
    return out;
  }
};

// ---------------------------------------------------------------------------
// affine: y = x w + b

template <typename Scalar>
Matrix<Scalar> affine(const Matrix<Scalar>& x, const Parameter<Scalar>& w,
                      const Parameter<Scalar>& b) {
  if (x.cols() != w.value.rows()) {
    throw DimensionError("affine: input " + shape_string(x) + " does not match weight " +
                         shape_string(w.value));
  }
  if (b.value.rows() != 1 || b.value.cols() != w.value.cols()) {
    throw DimensionError("affine: bias " + shape_string(b.value) + " does not match weight " +
                         shape_string(w.value));
  }
  Matrix<Scalar> y = x * w.value;
  y.rowwise() += b.value.row(0);
  return y;
}

/// Accumulates dL/dw and dL/db; returns dL/dx.
template <typename Scalar>
Matrix<Scalar> affine_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy,
                               Parameter<Scalar>& w, Parameter<Scalar>& b) {
  if (dy.rows() != x.rows() || dy.cols() != w.value.cols()) {
    throw DimensionError("affine_backward: upstream " + shape_string(dy) + " vs output " +
                         shape_string(x.rows(), w.value.cols()));
  }
  w.grad.noalias() += x.transpose() * dy;
  b.grad += dy.colwise().sum();
  return dy * w.value.transpose();
}

// ---------------------------------------------------------------------------
// layer normalization over the last dimension

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> inv_std;
};

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Parameter<Scalar>& gain,
                          const Parameter<Scalar>& bias, Scalar eps,
                          LayerNormCache<Scalar>* cache = nullptr) {
  const Index d = x.cols();
  if (d < 1) throw DimensionError("layer_norm: empty feature dimension");
  if (!(eps > Scalar(0))) throw ConfigurationError("layer_norm: eps must be positive");
  if (gain.value.cols() != d || bias.value.cols() != d) {
    throw DimensionError("layer_norm: input " + shape_string(x) + " vs gain " +
                         shape_string(gain.value));
  }
  Matrix<Scalar> xhat(x.rows(), d);
  Vector<Scalar> inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / Scalar(d);
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std(r);
  }
  Matrix<Scalar> y = xhat.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += bias.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormCache<Scalar>& cache, const Matrix<Scalar>& dy,
                                   Parameter<Scalar>& gain, Parameter<Scalar>& bias) {
  require_same_shape(cache.xhat, dy, "layer_norm_backward");
  const Index d = dy.cols();
  gain.grad += (dy.array() * cache.xhat.array()).matrix().colwise().sum();
  bias.grad += dy.colwise().sum();
  Matrix<Scalar> dxhat = dy.array().rowwise() * gain.value.row(0).array();
  Matrix<Scalar> dx(dy.rows(), d);
  for (Index r = 0; r < dy.rows(); ++r) {
    const Scalar sum_d = dxhat.row(r).sum();
    const Scalar sum_dx = dxhat.row(r).dot(cache.xhat.row(r));
    dx.row(r) = (cache.inv_std(r) / Scalar(d)) *
                (Scalar(d) * dxhat.row(r).array() - sum_d - cache.xhat.row(r).array() * sum_dx)
                    .matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// GELU (tanh approximation)

template <typename Scalar>
Matrix<Scalar> gelu(const Matrix<Scalar>& x) {
  const Scalar c = std::sqrt(Scalar(2) / Scalar(M_PI));
  return x.unaryExpr([c](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::tanh(c * (v + Scalar(0.044715) * v * v * v)));
  });
}

template <typename Scalar>
Matrix<Scalar> gelu_backward(const Matrix<Scalar>& x, const Matrix<Scalar>& dy) {
  require_same_shape(x, dy, "gelu_backward");
  const Scalar c = std::sqrt(Scalar(2) / Scalar(M_PI));
  Matrix<Scalar> dx(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar v = x.data()[i];
    const Scalar u = c * (v + Scalar(0.044715) * v * v * v);
    const Scalar t = std::tanh(u);
    const Scalar du = c * (Scalar(1) + Scalar(3) * Scalar(0.044715) * v * v);
    const Scalar g = Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * v * (Scalar(1) - t * t) * du;
    dx.data()[i] = dy.data()[i] * g;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// softmax helpers

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Matrix<Scalar> row_softmax(const Matrix<Scalar>& s) {
  Matrix<Scalar> p(s.rows(), s.cols());
  for (Index r = 0; r < s.rows(); ++r) {
    const Scalar m = s.row(r).maxCoeff();
    p.row(r) = (s.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Mean over rows of -log softmax(scores[i,:])[i]; returns (loss, dL/dscores).
template <typename Scalar>
std::pair<Scalar, Matrix<Scalar>> row_softmax_nll(const Matrix<Scalar>& scores) {
  if (scores.rows() != scores.cols()) {
    throw DimensionError("row_softmax_nll: expected a square matrix, got " +
                         shape_string(scores));
  }
  const Index n = scores.rows();
  Matrix<Scalar> grad = row_softmax(scores);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar m = scores.row(i).maxCoeff();
    const Scalar lse = m + std::log((scores.row(i).array() - m).exp().sum());
    loss += lse - scores(i, i);
    grad(i, i) -= Scalar(1);
  }
  loss /= Scalar(n);
  grad /= Scalar(n);
  return {loss, grad};
}

// ---------------------------------------------------------------------------
// multi-head attention over segmented sequences

template <typename Scalar>
struct AttentionParams {
  Parameter<Scalar> wq, bq, wk, wv, bv, wo, bo;
  int heads = 1;

  AttentionParams() = default;
  AttentionParams(const std::string& prefix, Index dim, int n_heads)
      : wq(prefix + ".wq", dim, dim),
        bq(prefix + ".bq", 1, dim),
        wk(prefix + ".wk", dim, dim),
        wv(prefix + ".wv", dim, dim),
        bv(prefix + ".bv", 1, dim),
        wo(prefix + ".wo", dim, dim),
        bo(prefix + ".bo", 1, dim),
        heads(n_heads) {
    if (n_heads < 1 || dim % n_heads != 0) {
      throw ConfigurationError("attention: width " + std::to_string(dim) +
                               " is not divisible by heads=" + std::to_string(n_heads));
    }
  }

  Index dim() const { return wq.value.rows(); }

  std::vector<Parameter<Scalar>*> parameters() { return {&wq, &bq, &wk, &wv, &bv, &wo, &bo}; }
};

template <typename Scalar>
struct AttentionCache {
  Matrix<Scalar> xq, xk, xv;
  Matrix<Scalar> q, k, v;
  Matrix<Scalar> mixed;
  std::vector<Matrix<Scalar>> probs;  // [segment * heads + head]
  SegmentLayout q_layout, k_layout;
};

/// Scaled dot-product attention. Queries of segment s attend only to keys of
/// segment s. Keys carry no bias: softmax is invariant to it.
template <typename Scalar>
Matrix<Scalar> multi_head_attention(const Matrix<Scalar>& xq, const Matrix<Scalar>& xk,
                                    const Matrix<Scalar>& xv, const SegmentLayout& q_layout,
                                    const SegmentLayout& k_layout,
                                    const AttentionParams<Scalar>& p,
                                    AttentionCache<Scalar>* cache = nullptr) {
  const Index dim = p.dim();
  if (dim % p.heads != 0) {
    throw ConfigurationError("attention: width " + std::to_string(dim) +
                             " is not divisible by heads=" + std::to_string(p.heads));
  }
  if (xq.cols() != dim || xk.cols() != dim || xv.cols() != dim) {
    throw DimensionError("attention: inputs " + shape_string(xq) + ", " + shape_string(xk) +
                         ", " + shape_string(xv) + " do not match width " + std::to_string(dim));
  }
  if (xk.rows() != xv.rows()) {
    throw DimensionError("attention: keys " + shape_string(xk) + " vs values " +
                         shape_string(xv));
  }
  if (q_layout.count() != k_layout.count() || q_layout.total() != xq.rows() ||
      k_layout.total() != xk.rows()) {
    throw DimensionError("attention: segment layout does not cover the inputs");
  }
  Matrix<Scalar> q = affine(xq, p.wq, p.bq);
  Matrix<Scalar> k = xk * p.wk.value;
  Matrix<Scalar> v = affine(xv, p.wv, p.bv);

  const Index dh = dim / p.heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  const auto q_off = q_layout.offsets();
  const auto k_off = k_layout.offsets();
  Matrix<Scalar> mixed(xq.rows(), dim);
  std::vector<Matrix<Scalar>> probs;
  if (cache) probs.reserve(static_cast<size_t>(q_layout.count() * p.heads));
  for (Index s = 0; s < q_layout.count(); ++s) {
    const Index qo = q_off[s], ql = q_layout.lengths[s];
    const Index ko = k_off[s], kl = k_layout.lengths[s];
    if (kl < 1 && ql > 0) throw DimensionError("attention: segment without keys");
    for (int h = 0; h < p.heads; ++h) {
      Matrix<Scalar> scores =
          (q.block(qo, h * dh, ql, dh) * k.block(ko, h * dh, kl, dh).transpose()) * scale;
      Matrix<Scalar> prob = row_softmax(scores);
      mixed.block(qo, h * dh, ql, dh).noalias() = prob * v.block(ko, h * dh, kl, dh);
      if (cache) probs.push_back(std::move(prob));
    }
  }
  Matrix<Scalar> out = affine(mixed, p.wo, p.bo);
  if (cache) {
    cache->xq = xq;
    cache->xk = xk;
    cache->xv = xv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->mixed = std::move(mixed);
    cache->probs = std::move(probs);
    cache->q_layout = q_layout;
    cache->k_layout = k_layout;
  }
  return out;
}

template <typename Scalar>
struct AttentionGrads {
  Matrix<Scalar> dxq, dxk, dxv;
};

template <typename Scalar>
AttentionGrads<Scalar> multi_head_attention_backward(const AttentionCache<Scalar>& c,
                                                     const Matrix<Scalar>& dout,
                                                     AttentionParams<Scalar>& p) {
  const Index dim = p.dim();
  const Index dh = dim / p.heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> dmixed = affine_backward(c.mixed, dout, p.wo, p.bo);
  Matrix<Scalar> dq = Matrix<Scalar>::Zero(c.q.rows(), dim);
  Matrix<Scalar> dk = Matrix<Scalar>::Zero(c.k.rows(), dim);
  Matrix<Scalar> dv = Matrix<Scalar>::Zero(c.v.rows(), dim);
  const auto q_off = c.q_layout.offsets();
  const auto k_off = c.k_layout.offsets();
  for (Index s = 0; s < c.q_layout.count(); ++s) {
    const Index qo = q_off[s], ql = c.q_layout.lengths[s];
    const Index ko = k_off[s], kl = c.k_layout.lengths[s];
    for (int h = 0; h < p.heads; ++h) {
      const Matrix<Scalar>& prob = c.probs[static_cast<size_t>(s * p.heads + h)];
      const Matrix<Scalar> dmix = dmixed.block(qo, h * dh, ql, dh);
      const Matrix<Scalar> vs = c.v.block(ko, h * dh, kl, dh);
      Matrix<Scalar> dprob = dmix * vs.transpose();
      dv.block(ko, h * dh, kl, dh).noalias() += prob.transpose() * dmix;
      Matrix<Scalar> dscores(ql, kl);
      for (Index r = 0; r < ql; ++r) {
        const Scalar inner = dprob.row(r).dot(prob.row(r));
        dscores.row(r) = (prob.row(r).array() * (dprob.row(r).array() - inner)).matrix();
      }
      dscores *= scale;
      dq.block(qo, h * dh, ql, dh).noalias() += dscores * c.k.block(ko, h * dh, kl, dh);
      dk.block(ko, h * dh, kl, dh).noalias() += dscores.transpose() * c.q.block(qo, h * dh, ql, dh);
    }
  }
  AttentionGrads<Scalar> g;
  g.dxq = affine_backward(c.xq, dq, p.wq, p.bq);
  p.wk.grad.noalias() += c.xk.transpose() * dk;
  g.dxk = dk * p.wk.value.transpose();
  g.dxv = affine_backward(c.xv, dv, p.wv, p.bv);
  return g;
}

// ---------------------------------------------------------------------------
// pooling and normalization

/// Mean of each segment's rows: (total x D) -> (segments x D).
template <typename Scalar>
Matrix<Scalar> segment_mean(const Matrix<Scalar>& x, const SegmentLayout& layout) {
  if (layout.total() != x.rows()) throw DimensionError("segment_mean: layout does not cover input");
  Matrix<Scalar> out(layout.count(), x.cols());
  const auto off = layout.offsets();
  for (Index s = 0; s < layout.count(); ++s) {
    const Index len = layout.lengths[s];
    if (len < 1) throw DimensionError("segment_mean: empty segment");
    out.row(s) = x.middleRows(off[s], len).colwise().sum() / Scalar(len);
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> segment_mean_backward(const Matrix<Scalar>& dy, const SegmentLayout& layout) {
  Matrix<Scalar> dx(layout.total(), dy.cols());
  const auto off = layout.offsets();
  for (Index s = 0; s < layout.count(); ++s) {
    const Index len = layout.lengths[s];
    dx.middleRows(off[s], len).rowwise() = dy.row(s) / Scalar(len);
  }
  return dx;
}

/// Row-wise L2 normalization; the norm is floored at eps.
template <typename Scalar>
Matrix<Scalar> normalize_rows(const Matrix<Scalar>& x, Scalar eps = Scalar(1e-12),
                              Vector<Scalar>* norms = nullptr) {
  Matrix<Scalar> y(x.rows(), x.cols());
  Vector<Scalar> n(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    n(r) = std::max(x.row(r).norm(), eps);
    y.row(r) = x.row(r) / n(r);
  }
  if (norms) *norms = std::move(n);
  return y;
}

template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const Matrix<Scalar>& y, const Vector<Scalar>& norms,
                                       const Matrix<Scalar>& dy) {
  Matrix<Scalar> dx(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    dx.row(r) = (dy.row(r) - y.row(r) * y.row(r).dot(dy.row(r))) / norms(r);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are keyed by position in the
/// parameter list, which must stay fixed across steps.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<Parameter<Scalar>* const> params) {
    if (first_.empty()) {
      for (auto* p : params) {
        first_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        second_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (first_.size() != params.size()) {
      throw ConfigurationError("adam: parameter list changed between steps");
    }
    ++t_;
    const Scalar b1 = Scalar(config_.beta1), b2 = Scalar(config_.beta2);
    const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(t_));
    const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * p.grad;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= Scalar(config_.lr) * (first_[i].array() / c1) /
                         ((second_[i].array() / c2).sqrt() + Scalar(config_.eps));
    }
  }

  long steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  long t_ = 0;
  std::vector<Matrix<Scalar>> first_, second_;
};

// ---------------------------------------------------------------------------
// finite-difference gradient oracle

/// Evaluates the loss; when `with_grad` is set it must also accumulate the
/// analytic gradient into the parameters (after zeroing them).
template <typename Scalar>
using LossFunction = std::function<Scalar(bool with_grad)>;

struct GradCheckOptions {
  double step = 1e-5;
  size_t max_coordinates = 256;
  uint64_t seed = 0;
  double denominator_floor = 1e-8;
};

/// Max over checked coordinates of |g_analytic - g_fd| / max(|g_fd|, floor),
/// with central differences. Large models are checked on a seeded random
/// subsample of max_coordinates coordinates.
template <typename Scalar>
double finite_diff_check(const LossFunction<Scalar>& loss,
                         std::span<Parameter<Scalar>* const> params,
                         const GradCheckOptions& options = {}) {
  if (!(options.step >= 1e-7 && options.step <= 1e-3)) {
    throw ConfigurationError("finite_diff_check: step " + std::to_string(options.step) +
                             " outside [1e-7, 1e-3]");
  }
  for (auto* p : params) p->zero_grad();
  const Scalar base = loss(true);
  if (!std::isfinite(static_cast<double>(base))) {
    throw NumericError("finite_diff_check: non-finite loss");
  }
  std::vector<Matrix<Scalar>> analytic;
  std::vector<std::pair<size_t, Index>> coords;
  for (size_t i = 0; i < params.size(); ++i) {
    analytic.push_back(params[i]->grad);
    for (Index j = 0; j < params[i]->value.size(); ++j) coords.emplace_back(i, j);
  }
  if (coords.size() > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }
  const Scalar h = Scalar(options.step);
  double worst = 0.0;
  for (const auto& [pi, j] : coords) {
    Scalar& slot = params[pi]->value.data()[j];
    const Scalar saved = slot;
    slot = saved + h;
    const Scalar up = loss(false);
    slot = saved - h;
    const Scalar down = loss(false);
    slot = saved;
    if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(down))) {
      throw NumericError("finite_diff_check: non-finite loss at " + params[pi]->name);
    }
    const double fd = static_cast<double>((up - down) / (Scalar(2) * h));
    const double an = static_cast<double>(analytic[pi].data()[j]);
    const double rel = std::abs(an - fd) / std::max(std::abs(fd), options.denominator_floor);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace vlaverify
