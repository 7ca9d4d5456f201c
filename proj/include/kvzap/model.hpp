#pragma once

#include <json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kvzap/errors.hpp"
#include "kvzap/kvcache.hpp"
#include "kvzap/numerics.hpp"
#include "kvzap/rng.hpp"
#include "kvzap/vocab.hpp"

namespace kvzap {

// Hyper-parameters of the toy pre-norm GQA teacher. Field names in JSON follow
// the usual symbols: L, H_Q, H, D, D_h, D_int, V, T_max.
struct ModelConfig {
  int layers = 2;
  int query_heads = 4;
  int kv_heads = 2;
  int head_dim = 16;
  int hidden_dim = 64;
  int ffn_dim = 128;
  int vocab_size = vocab::kSize;
  int max_seq_len = 512;
  double rope_theta = 10000.0;
  double rms_eps = 1e-6;
  std::uint64_t seed = 0;

  int group_size() const { return query_heads / kv_heads; }

  void validate() const {
    require(layers > 0 && query_heads > 0 && kv_heads > 0 && head_dim > 0 && hidden_dim > 0 &&
                ffn_dim > 0 && vocab_size > 0 && max_seq_len > 0,
            ErrorKind::config, "model dimensions must be positive");
    require(query_heads % kv_heads == 0, ErrorKind::config, "H_Q must be a multiple of H");
    require(head_dim % 2 == 0, ErrorKind::config, "head dimension must be even for rotary embedding");
    require(rope_theta > 0 && rms_eps > 0, ErrorKind::config, "theta_base and rms_eps must be positive");
  }

  nlohmann::json to_json() const {
    return {{"L", layers},           {"H_Q", query_heads}, {"H", kv_heads},
            {"D", head_dim},         {"D_h", hidden_dim},  {"D_int", ffn_dim},
            {"V", vocab_size},       {"T_max", max_seq_len}, {"theta_base", rope_theta},
            {"rms_eps", rms_eps},    {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {"L", "H_Q", "H", "D", "D_h", "D_int",
                                                   "V", "T_max", "theta_base", "rms_eps", "seed"};
    require(j.is_object(), ErrorKind::config, "model config must be a JSON object");
    for (const auto& [key, _] : j.items())
      require(std::find(known.begin(), known.end(), key) != known.end(), ErrorKind::config,
              "unknown model config key '" + key + "'");
    ModelConfig c;
    c.layers = j.value("L", c.layers);
    c.query_heads = j.value("H_Q", c.query_heads);
    c.kv_heads = j.value("H", c.kv_heads);
    c.head_dim = j.value("D", c.head_dim);
    c.hidden_dim = j.value("D_h", c.hidden_dim);
    c.ffn_dim = j.value("D_int", c.ffn_dim);
    c.vocab_size = j.value("V", c.vocab_size);
    c.max_seq_len = j.value("T_max", c.max_seq_len);
    c.rope_theta = j.value("theta_base", c.rope_theta);
    c.rms_eps = j.value("rms_eps", c.rms_eps);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t dh = static_cast<std::size_t>(c.hidden_dim);
  const std::size_t q = static_cast<std::size_t>(c.query_heads * c.head_dim);
  const std::size_t kv = static_cast<std::size_t>(c.kv_heads * c.head_dim);
  const std::size_t per_layer = 2 * dh * q + 2 * dh * kv + 3 * dh * static_cast<std::size_t>(c.ffn_dim) + 2 * dh;
  return 2 * static_cast<std::size_t>(c.vocab_size) * dh + dh + static_cast<std::size_t>(c.layers) * per_layer;
}

template <typename T>
struct LayerWeights {
  Tensor<T> attn_norm;  // D_h
  Tensor<T> wq;         // D_h x H_Q*D
  Tensor<T> wk;         // D_h x H*D
  Tensor<T> wv;         // D_h x H*D
  Tensor<T> wo;         // H_Q*D x D_h; rows [q*D, (q+1)*D) belong to query head q
  Tensor<T> ffn_norm;   // D_h
  Tensor<T> w_gate;     // D_h x D_int
  Tensor<T> w_up;       // D_h x D_int
  Tensor<T> w_down;     // D_int x D_h
};

template <typename T>
struct Weights {
  ModelConfig config;
  Tensor<T> embedding;  // V x D_h
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_norm;  // D_h
  Tensor<T> head;        // D_h x V

  // Visits every tensor in the fixed serialization order.
  template <typename F>
  void for_each(F&& f) {
    f(std::string("embedding"), embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      auto& lw = layers[l];
      f(p + "attn_norm", lw.attn_norm);
      f(p + "wq", lw.wq);
      f(p + "wk", lw.wk);
      f(p + "wv", lw.wv);
      f(p + "wo", lw.wo);
      f(p + "ffn_norm", lw.ffn_norm);
      f(p + "w_gate", lw.w_gate);
      f(p + "w_up", lw.w_up);
      f(p + "w_down", lw.w_down);
    }
    f(std::string("final_norm"), final_norm);
    f(std::string("head"), head);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<Weights*>(this)->for_each([&](const std::string& n, Tensor<T>& t) { f(n, std::as_const(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  template <typename U>
  Weights<U> cast() const {
    Weights<U> out = Weights<U>::empty_like(config);
    auto src = std::vector<const Tensor<T>*>{};
    for_each([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, Tensor<U>& t) { t = src[i++]->template cast<U>(); });
    return out;
  }

  // Zero tensors with the shapes implied by `c` (used for gradients and loading).
  static Weights empty_like(const ModelConfig& c) {
    Weights w;
    w.config = c;
    const auto dh = static_cast<std::size_t>(c.hidden_dim);
    const auto q = static_cast<std::size_t>(c.query_heads * c.head_dim);
    const auto kv = static_cast<std::size_t>(c.kv_heads * c.head_dim);
    const auto di = static_cast<std::size_t>(c.ffn_dim);
    const auto v = static_cast<std::size_t>(c.vocab_size);
    w.embedding = Tensor<T>({v, dh});
    w.layers.resize(static_cast<std::size_t>(c.layers));
    for (auto& lw : w.layers) {
      lw.attn_norm = Tensor<T>({dh});
      lw.wq = Tensor<T>({dh, q});
      lw.wk = Tensor<T>({dh, kv});
      lw.wv = Tensor<T>({dh, kv});
      lw.wo = Tensor<T>({q, dh});
      lw.ffn_norm = Tensor<T>({dh});
      lw.w_gate = Tensor<T>({dh, di});
      lw.w_up = Tensor<T>({dh, di});
      lw.w_down = Tensor<T>({di, dh});
    }
    w.final_norm = Tensor<T>({dh});
    w.head = Tensor<T>({dh, v});
    return w;
  }
};

// Checks shapes against the config and that every value is finite.
template <typename T>
void validate_weights(const Weights<T>& w) {
  w.config.validate();
  const auto reference = Weights<T>::empty_like(w.config);
  std::vector<std::vector<std::size_t>> shapes;
  reference.for_each([&](const std::string&, const Tensor<T>& t) { shapes.push_back(t.shape()); });
  require(w.layers.size() == static_cast<std::size_t>(w.config.layers), ErrorKind::validation,
          "layer count does not match config");
  std::size_t i = 0;
  w.for_each([&](const std::string& name, const Tensor<T>& t) {
    require(t.shape() == shapes[i], ErrorKind::validation,
            name + " has shape " + shape_string(t.shape()) + ", config implies " + shape_string(shapes[i]));
    ++i;
    require(t.all_finite(), ErrorKind::validation, name + " contains non-finite values");
  });
}

inline constexpr double kInitStd = 0.02;

// Normal(0, 0.02) matrices, output projections (wo, w_down) scaled by 1/sqrt(2L),
// unit norm gains. Draw order is the serialization order.
template <typename T>
Weights<T> init_weights(const ModelConfig& config) {
  config.validate();
  Weights<T> w = Weights<T>::empty_like(config);
  Rng rng(config.seed);
  const double out_std = kInitStd / std::sqrt(2.0 * config.layers);
  w.for_each([&](const std::string& name, Tensor<T>& t) {
    if (name.ends_with("norm")) {
      for (auto& v : t.values()) v = T(1);
      return;
    }
    const double std = (name.ends_with(".wo") || name.ends_with(".w_down")) ? out_std : kInitStd;
    for (auto& v : t.values()) v = static_cast<T>(std * rng.normal());
  });
  return w;
}

inline void validate_tokens(std::span<const Token> tokens, const ModelConfig& c) {
  for (Token t : tokens)
    require(t >= 0 && t < c.vocab_size, ErrorKind::vocabulary,
            "token id " + std::to_string(t) + " outside vocabulary of size " + std::to_string(c.vocab_size));
}

struct CaptureFlags {
  bool hidden = false;
  bool attention = false;
  bool values = false;
};

template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> hidden;                   // [L] T x D_h, residual stream entering each layer
  std::vector<std::vector<Tensor<T>>> attention;   // [L][H_Q] T x T
  std::vector<std::vector<Tensor<T>>> values;      // [L][H] T x D
  std::vector<Tensor<T>> attention_output;         // [L] T x D_h, the attention block's residual update
  Tensor<T> logits;                                // T x V
};

// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct RopeTable {
  std::vector<T> cos, sin;  // [position][pair]
  std::size_t half = 0;

  RopeTable(std::size_t head_dim, Position first, std::size_t count, double theta) : half(head_dim / 2) {
    cos.resize(count * half);
    sin.resize(count * half);
    for (std::size_t p = 0; p < count; ++p) {
      for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(first + static_cast<Position>(p)) * freq;
        cos[p * half + i] = static_cast<T>(std::cos(angle));
        sin[p * half + i] = static_cast<T>(std::sin(angle));
      }
    }
  }

  // sign = -1 applies the inverse rotation.
  void apply(T* v, std::size_t row, T sign = T(1)) const {
    const T* c = cos.data() + row * half;
    const T* s = sin.data() + row * half;
    for (std::size_t i = 0; i < half; ++i) {
      const T a = v[2 * i];
      const T b = v[2 * i + 1];
      const T si = sign * s[i];
      v[2 * i] = a * c[i] - b * si;
      v[2 * i + 1] = a * si + b * c[i];
    }
  }

  // Rotates every head-sized chunk of every row of m; row r is position first + r.
  void apply_rows(MatrixR<T>& m, std::size_t head_dim, T sign = T(1)) const {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index off = 0; off < m.cols(); off += static_cast<Eigen::Index>(head_dim))
        apply(m.row(r).data() + off, static_cast<std::size_t>(r), sign);
  }
};

template <typename T>
struct LayerActivations {
  MatrixR<T> x;  // layer input (residual stream)
  MatrixR<T> a;  // attention pre-norm output
  std::vector<T> inv_attn;
  MatrixR<T> q, k, v;  // q and k after rotation
  std::vector<MatrixR<T>> probs;  // [H_Q] T x T
  MatrixR<T> o;   // concatenated head outputs, T x H_Q*D
  MatrixR<T> x2;  // after attention residual
  MatrixR<T> f;
  std::vector<T> inv_ffn;
  MatrixR<T> gate, up, m;
};

template <typename T>
struct Activations {
  std::vector<LayerActivations<T>> layers;
  MatrixR<T> x_final;
  MatrixR<T> z;
  std::vector<T> inv_final;
  MatrixR<T> logits;
};

template <typename T>
Eigen::Map<const MatrixR<T>> mat(const Tensor<T>& t) {
  return as_matrix(t);
}

template <typename T>
void embed(const Weights<T>& w, std::span<const Token> tokens, MatrixR<T>& x) {
  const auto dh = w.config.hidden_dim;
  x.resize(static_cast<Eigen::Index>(tokens.size()), dh);
  for (std::size_t t = 0; t < tokens.size(); ++t)
    x.row(static_cast<Eigen::Index>(t)) = mat(w.embedding).row(tokens[t]);
}

// Dense full-sequence forward keeping every intermediate needed by backprop.
template <typename T>
void dense_forward(const Weights<T>& w, std::span<const Token> tokens, Activations<T>& act) {
  const ModelConfig& c = w.config;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(c.head_dim);
  const T eps = static_cast<T>(c.rms_eps);
  const T scale = T(1) / std::sqrt(static_cast<T>(c.head_dim));
  const RopeTable<T> rope(static_cast<std::size_t>(c.head_dim), 0, tokens.size(), c.rope_theta);

  MatrixR<T> x;
  embed(w, tokens, x);
  act.layers.resize(static_cast<std::size_t>(c.layers));
  for (int l = 0; l < c.layers; ++l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    auto& la = act.layers[static_cast<std::size_t>(l)];
    la.x = x;
    rmsnorm_rows<T>(la.x, lw.attn_norm.data(), eps, la.a, &la.inv_attn);
    la.q.noalias() = la.a * mat(lw.wq);
    la.k.noalias() = la.a * mat(lw.wk);
    la.v.noalias() = la.a * mat(lw.wv);
    rope.apply_rows(la.q, static_cast<std::size_t>(c.head_dim));
    rope.apply_rows(la.k, static_cast<std::size_t>(c.head_dim));
    la.o.resize(n, c.query_heads * d);
    la.probs.resize(static_cast<std::size_t>(c.query_heads));
    for (int qh = 0; qh < c.query_heads; ++qh) {
      const int g = qh / c.group_size();
      auto& p = la.probs[static_cast<std::size_t>(qh)];
      p.noalias() = la.q.middleCols(qh * d, d) * la.k.middleCols(g * d, d).transpose();
      softmax_causal_inplace(p, scale);
      la.o.middleCols(qh * d, d).noalias() = p * la.v.middleCols(g * d, d);
    }
    la.x2 = la.x;
    la.x2.noalias() += la.o * mat(lw.wo);
    rmsnorm_rows<T>(la.x2, lw.ffn_norm.data(), eps, la.f, &la.inv_ffn);
    la.gate.noalias() = la.f * mat(lw.w_gate);
    la.up.noalias() = la.f * mat(lw.w_up);
    la.m = la.gate.unaryExpr([](T v) { return silu(v); }).cwiseProduct(la.up);
    x = la.x2;
    x.noalias() += la.m * mat(lw.w_down);
  }
  act.x_final = std::move(x);
  rmsnorm_rows<T>(act.x_final, w.final_norm.data(), eps, act.z, &act.inv_final);
  act.logits.noalias() = act.z * mat(w.head);
}

}  // namespace detail

// Causal full-sequence forward without a cache.
template <typename T>
ForwardTrace<T> forward_full(const Weights<T>& w, std::span<const Token> tokens, CaptureFlags capture = {}) {
  const ModelConfig& c = w.config;
  require(!tokens.empty(), ErrorKind::dimension, "empty token sequence");
  require(tokens.size() <= static_cast<std::size_t>(c.max_seq_len), ErrorKind::capacity,
          "sequence of " + std::to_string(tokens.size()) + " exceeds T_max");
  validate_tokens(tokens, c);
  detail::Activations<T> act;
  detail::dense_forward(w, tokens, act);

  ForwardTrace<T> trace;
  trace.logits = from_matrix<T>(act.logits);
  ensure_finite(trace.logits, "forward_full");
  const auto d = static_cast<Eigen::Index>(c.head_dim);
  for (int l = 0; l < c.layers; ++l) {
    const auto& la = act.layers[static_cast<std::size_t>(l)];
    if (capture.hidden) trace.hidden.push_back(from_matrix<T>(la.x));
    if (capture.attention) {
      trace.attention.emplace_back();
      for (const auto& p : la.probs) trace.attention.back().push_back(from_matrix<T>(p));
      MatrixR<T> update = la.o * detail::mat(w.layers[static_cast<std::size_t>(l)].wo);
      trace.attention_output.push_back(from_matrix<T>(update));
    }
    if (capture.values) {
      trace.values.emplace_back();
      for (int g = 0; g < c.kv_heads; ++g) trace.values.back().push_back(from_matrix<T>(la.v.middleCols(g * d, d)));
    }
  }
  return trace;
}

// One softmax row produced by the cached attention path, exposed to observers
// (the KVzip scorers reduce these on the fly instead of storing T x T maps).
template <typename T>
struct AttentionRowView {
  int layer = 0;
  int query_head = 0;
  int kv_head = 0;
  Position query_position = 0;
  std::span<const Position> key_positions;
  std::span<const T> weights;            // aligned with key_positions
  const MatrixR<T>* values = nullptr;    // gathered values, rows aligned with key_positions
  std::span<const T> query_hidden;       // residual stream entering the layer at the query
};

template <typename T>
using AttentionObserver = std::function<void(const AttentionRowView<T>&)>;

template <typename T>
struct CachedForward {
  MatrixR<T> logits;               // n x V
  std::vector<MatrixR<T>> hidden;  // [L] n x D_h
};

namespace detail {

// Appends the new tokens to `cache` and attends over whatever the cache holds.
template <typename T>
CachedForward<T> cached_forward(const Weights<T>& w, std::span<const Token> tokens, PagedKvCache<T>& cache,
                                const AttentionObserver<T>* observer) {
  const ModelConfig& c = w.config;
  require(cache.layers() == c.layers && cache.heads() == c.kv_heads && cache.head_dim() == c.head_dim,
          ErrorKind::validation, "cache layout does not match model config");
  require(!tokens.empty(), ErrorKind::dimension, "empty token sequence");
  validate_tokens(tokens, c);
  const Position first = cache.next_position();
  require(first + static_cast<Position>(tokens.size()) <= c.max_seq_len, ErrorKind::capacity,
          "sequence would exceed T_max=" + std::to_string(c.max_seq_len));

  const auto n = static_cast<Eigen::Index>(tokens.size());
  const auto d = static_cast<Eigen::Index>(c.head_dim);
  const auto ud = static_cast<std::size_t>(c.head_dim);
  const T eps = static_cast<T>(c.rms_eps);
  const T scale = T(1) / std::sqrt(static_cast<T>(c.head_dim));
  const RopeTable<T> rope(ud, first, tokens.size(), c.rope_theta);

  CachedForward<T> out;
  MatrixR<T> x;
  embed(w, tokens, x);
  MatrixR<T> a, q, k, v, o, f;
  for (int l = 0; l < c.layers; ++l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    out.hidden.push_back(x);
    rmsnorm_rows<T>(x, lw.attn_norm.data(), eps, a);
    q.noalias() = a * mat(lw.wq);
    k.noalias() = a * mat(lw.wk);
    v.noalias() = a * mat(lw.wv);
    rope.apply_rows(q, ud);
    rope.apply_rows(k, ud);
    for (Eigen::Index r = 0; r < n; ++r)
      for (int g = 0; g < c.kv_heads; ++g)
        cache.append(l, g, first + r, std::span<const T>(k.row(r).data() + g * d, ud),
                     std::span<const T>(v.row(r).data() + g * d, ud));

    o.resize(n, c.query_heads * d);
    std::vector<T> row;
    for (int g = 0; g < c.kv_heads; ++g) {
      const GatheredHead<T> kv = cache.gather(l, g);
      for (int qh = g * c.group_size(); qh < (g + 1) * c.group_size(); ++qh) {
        const MatrixR<T> s = q.middleCols(qh * d, d) * kv.keys.transpose();
        for (Eigen::Index r = 0; r < n; ++r) {
          const Position qpos = first + r;
          const auto visible = static_cast<Eigen::Index>(
              std::upper_bound(kv.positions.begin(), kv.positions.end(), qpos) - kv.positions.begin());
          row.assign(static_cast<std::size_t>(visible), T(0));
          T mx = -std::numeric_limits<T>::infinity();
          for (Eigen::Index i = 0; i < visible; ++i) mx = std::max(mx, scale * s(r, i));
          T sum = 0;
          for (Eigen::Index i = 0; i < visible; ++i) {
            const T e = std::exp(scale * s(r, i) - mx);
            row[static_cast<std::size_t>(i)] = e;
            sum += e;
          }
          const T inv = T(1) / sum;
          for (auto& e : row) e *= inv;
          Eigen::Map<const RowVector<T>> wrow(row.data(), visible);
          o.row(r).segment(qh * d, d).noalias() = wrow * kv.values.topRows(visible);
          if (observer && *observer) {
            AttentionRowView<T> view;
            view.layer = l;
            view.query_head = qh;
            view.kv_head = g;
            view.query_position = qpos;
            view.key_positions = std::span<const Position>(kv.positions.data(), static_cast<std::size_t>(visible));
            view.weights = row;
            view.values = &kv.values;
            view.query_hidden = std::span<const T>(x.row(r).data(), static_cast<std::size_t>(c.hidden_dim));
            (*observer)(view);
          }
        }
      }
    }
    x.noalias() += o * mat(lw.wo);
    rmsnorm_rows<T>(x, lw.ffn_norm.data(), eps, f);
    const MatrixR<T> gate = f * mat(lw.w_gate);
    const MatrixR<T> up = f * mat(lw.w_up);
    const MatrixR<T> m = gate.unaryExpr([](T val) { return silu(val); }).cwiseProduct(up);
    x.noalias() += m * mat(lw.w_down);
  }
  MatrixR<T> z;
  rmsnorm_rows<T>(x, w.final_norm.data(), eps, z);
  out.logits.noalias() = z * mat(w.head);
  require(out.logits.allFinite(), ErrorKind::non_finite, "cached forward produced non-finite logits");
  return out;
}

}  // namespace detail

template <typename T>
struct PrefillResult {
  Tensor<T> logits;       // n x V
  ForwardTrace<T> trace;  // hidden states of the new positions
};

// Runs the prompt through the cache. Every position is stored; pruning is a
// separate step performed by a policy afterwards.
template <typename T>
PrefillResult<T> prefill(const Weights<T>& w, std::span<const Token> tokens, PagedKvCache<T>& cache,
                         CaptureFlags capture = {.hidden = true},
                         const AttentionObserver<T>* observer = nullptr) {
  auto fwd = detail::cached_forward(w, tokens, cache, observer);
  PrefillResult<T> r;
  r.logits = from_matrix<T>(fwd.logits);
  if (capture.hidden)
    for (auto& h : fwd.hidden) r.trace.hidden.push_back(from_matrix<T>(h));
  r.trace.logits = r.logits;
  return r;
}

template <typename T>
struct DecodeResult {
  Tensor<T> logits;               // V
  std::vector<Tensor<T>> hidden;  // [L] D_h
  Position position = 0;
};

template <typename T>
DecodeResult<T> decode_step(const Weights<T>& w, Token token, PagedKvCache<T>& cache) {
  require(!cache.empty(), ErrorKind::validation, "decode_step needs a prefilled cache");
  const Position pos = cache.next_position();
  const Token one[1] = {token};
  auto fwd = detail::cached_forward<T>(w, std::span<const Token>(one, 1), cache, nullptr);
  DecodeResult<T> r;
  r.position = pos;
  r.logits = Tensor<T>(std::vector<std::size_t>{static_cast<std::size_t>(w.config.vocab_size)});
  for (Eigen::Index i = 0; i < fwd.logits.cols(); ++i) r.logits[static_cast<std::size_t>(i)] = fwd.logits(0, i);
  for (auto& h : fwd.hidden) {
    Tensor<T> t(std::vector<std::size_t>{static_cast<std::size_t>(h.cols())});
    for (Eigen::Index i = 0; i < h.cols(); ++i) t[static_cast<std::size_t>(i)] = h(0, i);
    r.hidden.push_back(std::move(t));
  }
  return r;
}

template <typename T>
PagedKvCache<T> make_cache(const ModelConfig& c, int block_size = kDefaultBlockSize) {
  return PagedKvCache<T>(c.layers, c.kv_heads, c.head_dim, block_size);
}

// Index of the largest entry; ties go to the lowest id.
template <typename T>
Token argmax(std::span<const T> logits) {
  return static_cast<Token>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

template <typename T>
Token argmax(std::span<T> logits) {
  return argmax(std::span<const T>(logits));
}

}  // namespace kvzap
