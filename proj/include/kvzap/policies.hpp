#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kvzap/errors.hpp"
#include "kvzap/kvcache.hpp"
#include "kvzap/model.hpp"
#include "kvzap/rng.hpp"
#include "kvzap/scoring.hpp"
#include "kvzap/surrogate.hpp"

namespace kvzap {

enum class PolicyKind { full, random, window_only, topk_per_head, topk_per_layer, kvzip_budget, kvzap };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::full: return "full";
    case PolicyKind::random: return "random";
    case PolicyKind::window_only: return "window_only";
    case PolicyKind::topk_per_head: return "topk_per_head";
    case PolicyKind::topk_per_layer: return "topk_per_layer";
    case PolicyKind::kvzip_budget: return "kvzip_budget";
    case PolicyKind::kvzap: return "kvzap";
  }
  return "?";
}

inline PolicyKind policy_kind_from_string(const std::string& s) {
  for (auto k : {PolicyKind::full, PolicyKind::random, PolicyKind::window_only, PolicyKind::topk_per_head,
                 PolicyKind::topk_per_layer, PolicyKind::kvzip_budget, PolicyKind::kvzap})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::config, "unknown policy '" + s + "'");
}

// Immutable eviction configuration. Which fields matter depends on `kind`:
//   random          ratio, seed, window
//   window_only     window
//   topk_per_*      ratio, window, surrogate (scores come from the surrogate)
//   kvzip_budget    ratio, scorer (oracle scores supplied by the caller)
//   kvzap           tau, window, surrogate
struct Policy {
  PolicyKind kind = PolicyKind::full;
  double ratio = 0.0;
  double tau = 0.0;
  std::size_t window = 0;
  std::uint64_t seed = 0;
  ScoreKind scorer = ScoreKind::kvzip_plus;
  std::shared_ptr<const Surrogate> surrogate;
  std::string surrogate_path;  // echoed into run configs only

  static Policy full() { return {}; }
  static Policy random(double ratio, std::uint64_t seed, std::size_t window = 0) {
    Policy p;
    p.kind = PolicyKind::random;
    p.ratio = ratio;
    p.seed = seed;
    p.window = window;
    return p;
  }
  static Policy window_only(std::size_t window) {
    Policy p;
    p.kind = PolicyKind::window_only;
    p.window = window;
    return p;
  }
  static Policy topk_per_head(double ratio, std::size_t window, std::shared_ptr<const Surrogate> s) {
    Policy p;
    p.kind = PolicyKind::topk_per_head;
    p.ratio = ratio;
    p.window = window;
    p.surrogate = std::move(s);
    return p;
  }
  static Policy topk_per_layer(double ratio, std::size_t window, std::shared_ptr<const Surrogate> s) {
    Policy p = topk_per_head(ratio, window, std::move(s));
    p.kind = PolicyKind::topk_per_layer;
    return p;
  }
  static Policy kvzip_budget(double ratio, ScoreKind scorer = ScoreKind::kvzip_plus) {
    Policy p;
    p.kind = PolicyKind::kvzip_budget;
    p.ratio = ratio;
    p.scorer = scorer;
    return p;
  }
  static Policy kvzap(std::shared_ptr<const Surrogate> s, double tau, std::size_t window) {
    Policy p;
    p.kind = PolicyKind::kvzap;
    p.surrogate = std::move(s);
    p.tau = tau;
    p.window = window;
    return p;
  }

  bool uses_surrogate() const {
    return kind == PolicyKind::kvzap || kind == PolicyKind::topk_per_head || kind == PolicyKind::topk_per_layer;
  }
  bool uses_ratio() const {
    return kind == PolicyKind::random || kind == PolicyKind::topk_per_head || kind == PolicyKind::topk_per_layer ||
           kind == PolicyKind::kvzip_budget;
  }
  // Policies that keep evicting as positions leave the window during decode.
  bool dynamic() const {
    return kind == PolicyKind::kvzap || kind == PolicyKind::window_only || kind == PolicyKind::random;
  }

  void validate() const {
    if (uses_ratio())
      require(ratio >= 0 && ratio < 1, ErrorKind::config, "ratio must be in [0, 1)");
    if (kind == PolicyKind::kvzip_budget)
      require(scorer == ScoreKind::kvzip || scorer == ScoreKind::kvzip_plus, ErrorKind::config,
              "kvzip_budget scorer must be kvzip or kvzip_plus");
    if (uses_surrogate()) {
      require(surrogate != nullptr, ErrorKind::config, to_string(kind) + " policy needs a surrogate");
      surrogate->validate();
    }
    if (kind == PolicyKind::kvzap) require(!std::isnan(tau), ErrorKind::config, "tau must not be NaN");
  }

  void check_against(const ModelConfig& c) const {
    validate();
    if (!uses_surrogate()) return;
    require(surrogate->num_layers() == c.layers && surrogate->heads == c.kv_heads &&
                surrogate->hidden_dim == c.hidden_dim,
            ErrorKind::config, "surrogate dimensions do not match the model (L, H, D_h)");
  }

  // The swept parameter of the family, for CSV rows.
  std::pair<std::string, double> parameter() const {
    switch (kind) {
      case PolicyKind::full: return {"none", 0.0};
      case PolicyKind::window_only: return {"window", static_cast<double>(window)};
      case PolicyKind::kvzap: return {"tau", tau};
      default: return {"ratio", ratio};
    }
  }
};

// Run-config form: {"policy":"kvzap","tau":-4.0,"window":128,"surrogate":"path"}.
inline nlohmann::json policy_to_json(const Policy& p) {
  nlohmann::json j{{"policy", to_string(p.kind)}};
  if (p.uses_ratio()) j["ratio"] = p.ratio;
  if (p.kind == PolicyKind::kvzap) j["tau"] = p.tau;
  if (p.kind != PolicyKind::full && p.kind != PolicyKind::kvzip_budget) j["window"] = p.window;
  if (p.kind == PolicyKind::random) j["seed"] = p.seed;
  if (p.kind == PolicyKind::kvzip_budget) j["scorer"] = to_string(p.scorer);
  if (p.uses_surrogate()) j["surrogate"] = p.surrogate_path;
  return j;
}

// Parses a run config. The surrogate path is returned in `surrogate_path`; the
// caller loads it and attaches the model.
inline Policy policy_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::config, "policy config must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(key == "policy" || key == "tau" || key == "window" || key == "surrogate" || key == "ratio" ||
                key == "seed" || key == "scorer",
            ErrorKind::config, "unknown policy key '" + key + "'");
  require(j.contains("policy"), ErrorKind::config, "policy config lacks \"policy\"");
  Policy p;
  try {
    p.kind = policy_kind_from_string(j.at("policy").get<std::string>());
    if (j.contains("ratio")) p.ratio = j.at("ratio").get<double>();
    if (j.contains("tau")) p.tau = j.at("tau").get<double>();
    if (j.contains("window")) {
      const auto w = j.at("window").get<long long>();
      require(w >= 0, ErrorKind::config, "window must be non-negative");
      p.window = static_cast<std::size_t>(w);
    }
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("scorer")) p.scorer = score_kind_from_string(j.at("scorer").get<std::string>());
    if (j.contains("surrogate")) p.surrogate_path = j.at("surrogate").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, std::string("bad policy config: ") + e.what());
  }
  if (p.kind == PolicyKind::kvzap) require(j.contains("tau"), ErrorKind::config, "kvzap policy needs \"tau\"");
  if (p.uses_surrogate())
    require(!p.surrogate_path.empty(), ErrorKind::config, to_string(p.kind) + " policy needs \"surrogate\"");
  return p;
}

// Evictions per (layer, head), indexed layer * H + head, positions ascending.
using EvictionSets = std::vector<std::vector<Position>>;

template <typename T>
std::size_t apply_evictions(PagedKvCache<T>& cache, const EvictionSets& sets) {
  std::size_t n = 0;
  for (int l = 0; l < cache.layers(); ++l)
    for (int h = 0; h < cache.heads(); ++h)
      n += cache.evict(l, h, std::span<const Position>(sets[static_cast<std::size_t>(l * cache.heads() + h)]));
  return n;
}

namespace detail {

// Deterministic uniform draw for (seed, layer, head, position).
inline double random_draw(std::uint64_t seed, int layer, int head, Position p) {
  return Rng(mix_seed(seed, static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(head),
                      static_cast<std::uint64_t>(p)))
      .uniform();
}

inline std::size_t keep_count(double ratio, std::size_t n) {
  return std::min(n, static_cast<std::size_t>(std::ceil((1.0 - ratio) * static_cast<double>(n) - 1e-9)));
}

struct Candidate {
  double score;
  Position position;
  int head;
  int layer;
};

// Highest score first; among equal scores the later position wins, then the
// lower head / layer index, so the order is total.
inline bool keeps_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.position != b.position) return a.position > b.position;
  if (a.head != b.head) return a.head < b.head;
  return a.layer < b.layer;
}

inline void evict_below_budget(std::vector<Candidate>& pool, double ratio, EvictionSets& out, int heads) {
  const std::size_t keep = keep_count(ratio, pool.size());
  std::sort(pool.begin(), pool.end(), keeps_before);
  for (std::size_t i = keep; i < pool.size(); ++i)
    out[static_cast<std::size_t>(pool[i].layer * heads + pool[i].head)].push_back(pool[i].position);
}

}  // namespace detail

// Per-position surrogate scores over a freshly prefilled sequence: [L][H][n].
template <typename T>
std::vector<std::vector<std::vector<double>>> surrogate_scores(const Surrogate& s, const ForwardTrace<T>& trace) {
  require(static_cast<int>(trace.hidden.size()) == s.num_layers(), ErrorKind::missing_trace,
          "trace lacks layer-input hidden states");
  std::vector<std::vector<std::vector<double>>> out(static_cast<std::size_t>(s.num_layers()));
  for (int l = 0; l < s.num_layers(); ++l) {
    const auto& h = trace.hidden[static_cast<std::size_t>(l)];
    const MatrixR<double> pred = predict_batch(s, as_matrix(h), l);
    auto& layer = out[static_cast<std::size_t>(l)];
    layer.assign(static_cast<std::size_t>(s.heads), std::vector<double>(static_cast<std::size_t>(pred.rows())));
    for (Eigen::Index t = 0; t < pred.rows(); ++t)
      for (int g = 0; g < s.heads; ++g) layer[static_cast<std::size_t>(g)][static_cast<std::size_t>(t)] = pred(t, g);
  }
  return out;
}

// Decides prefill evictions without touching a cache. Positions 0 (BOS) and
// the last `window` positions of the prompt are never candidates.
template <typename T>
EvictionSets prefill_decisions(const Policy& policy, int layers, int heads, const ForwardTrace<T>& trace,
                               std::size_t prompt_len, const ScoreTensor* oracle = nullptr) {
  policy.validate();
  EvictionSets out(static_cast<std::size_t>(layers * heads));
  const std::size_t window = policy.kind == PolicyKind::kvzip_budget ? 0 : policy.window;
  const std::size_t end = prompt_len > window ? prompt_len - window : 0;
  if (end <= 1 || policy.kind == PolicyKind::full) return out;

  switch (policy.kind) {
    case PolicyKind::full: break;
    case PolicyKind::window_only:
      for (auto& set : out)
        for (std::size_t p = 1; p < end; ++p) set.push_back(static_cast<Position>(p));
      break;
    case PolicyKind::random:
      for (int l = 0; l < layers; ++l)
        for (int h = 0; h < heads; ++h)
          for (std::size_t p = 1; p < end; ++p)
            if (detail::random_draw(policy.seed, l, h, static_cast<Position>(p)) < policy.ratio)
              out[static_cast<std::size_t>(l * heads + h)].push_back(static_cast<Position>(p));
      break;
    case PolicyKind::kvzap: {
      const auto scores = surrogate_scores(*policy.surrogate, trace);
      require(scores[0][0].size() >= prompt_len, ErrorKind::missing_trace, "trace shorter than the prompt");
      for (int l = 0; l < layers; ++l)
        for (int h = 0; h < heads; ++h)
          for (std::size_t p = 1; p < end; ++p)
            if (scores[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)][p] < policy.tau)
              out[static_cast<std::size_t>(l * heads + h)].push_back(static_cast<Position>(p));
      break;
    }
    case PolicyKind::topk_per_head:
    case PolicyKind::topk_per_layer: {
      const auto scores = surrogate_scores(*policy.surrogate, trace);
      require(scores[0][0].size() >= prompt_len, ErrorKind::missing_trace, "trace shorter than the prompt");
      for (int l = 0; l < layers; ++l) {
        std::vector<detail::Candidate> pool;
        for (int h = 0; h < heads; ++h) {
          for (std::size_t p = 1; p < end; ++p)
            pool.push_back({scores[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)][p],
                            static_cast<Position>(p), h, l});
          if (policy.kind == PolicyKind::topk_per_head) {
            detail::evict_below_budget(pool, policy.ratio, out, heads);
            pool.clear();
          }
        }
        if (policy.kind == PolicyKind::topk_per_layer) detail::evict_below_budget(pool, policy.ratio, out, heads);
      }
      break;
    }
    case PolicyKind::kvzip_budget: {
      require(oracle != nullptr, ErrorKind::missing_trace, "kvzip_budget needs oracle scores");
      require(oracle->layers == layers && oracle->heads == heads, ErrorKind::dimension,
              "oracle scores do not match the cache layout");
      std::vector<detail::Candidate> pool;
      for (int l = 0; l < layers; ++l)
        for (int h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < oracle->width(); ++i) {
            const Position p = oracle->positions[i];
            if (p >= 1 && static_cast<std::size_t>(p) < end) pool.push_back({oracle->at(l, h, i), p, h, l});
          }
      detail::evict_below_budget(pool, policy.ratio, out, heads);
      break;
    }
  }
  for (auto& set : out) std::sort(set.begin(), set.end());
  return out;
}

// Alg. 1 applied to a freshly prefilled cache: scores are taken from the
// trace, evictions happen after attention has consumed every entry.
template <typename T>
CacheStats prefill_compress(const Policy& policy, PagedKvCache<T>& cache, const ForwardTrace<T>& trace,
                            std::size_t prompt_len, const ScoreTensor* oracle = nullptr) {
  require(cache.stats().evicted_total == 0, ErrorKind::validation, "prefill_compress expects an unpruned cache");
  if (policy.uses_surrogate())
    require(trace.hidden.size() == static_cast<std::size_t>(cache.layers()), ErrorKind::missing_trace,
            to_string(policy.kind) + " needs hidden states in the trace");
  apply_evictions(cache, prefill_decisions(policy, cache.layers(), cache.heads(), trace, prompt_len, oracle));
  return cache.stats();
}

// Ring of (position, score) per (layer, head) covering the last `window`
// positions seen.
class DecodeScoreBuffer {
 public:
  DecodeScoreBuffer(int layers, int heads, std::size_t window)
      : layers_(layers), heads_(heads), window_(window), rings_(static_cast<std::size_t>(layers * heads)) {}

  int layers() const { return layers_; }
  int heads() const { return heads_; }
  std::size_t window() const { return window_; }
  const std::deque<std::pair<Position, double>>& ring(int layer, int head) const {
    return rings_[static_cast<std::size_t>(layer * heads_ + head)];
  }

  // Pushes one position; returns the expelled entry when the ring overflows
  // (immediately when window == 0).
  std::optional<std::pair<Position, double>> push(int layer, int head, Position p, double score) {
    auto& r = rings_[static_cast<std::size_t>(layer * heads_ + head)];
    require(r.empty() || r.back().first + 1 == p, ErrorKind::ordering,
            "score buffer positions must be contiguous");
    r.emplace_back(p, score);
    if (r.size() <= window_) return std::nullopt;
    auto out = r.front();
    r.pop_front();
    return out;
  }

 private:
  int layers_, heads_;
  std::size_t window_;
  std::vector<std::deque<std::pair<Position, double>>> rings_;
};

namespace detail {

// The per-position quantity each dynamic policy compares against its cutoff.
inline double decode_score(const Policy& p, int layer, int head, Position pos, double surrogate_score) {
  switch (p.kind) {
    case PolicyKind::kvzap: return surrogate_score;
    case PolicyKind::random: return random_draw(p.seed, layer, head, pos);
    default: return 0.0;
  }
}

inline bool decode_evicts(const Policy& p, double score) {
  switch (p.kind) {
    case PolicyKind::kvzap: return score < p.tau;
    case PolicyKind::random: return score < p.ratio;
    case PolicyKind::window_only: return true;
    default: return false;
  }
}

}  // namespace detail

// Seeds the buffer with the prompt's trailing window, so decode continues
// exactly where prefill_compress stopped.
template <typename T>
DecodeScoreBuffer init_decode_buffer(const Policy& policy, int layers, int heads, const ForwardTrace<T>& trace,
                                     std::size_t prompt_len) {
  DecodeScoreBuffer buf(layers, heads, policy.window);
  if (!policy.dynamic()) return buf;
  std::vector<std::vector<std::vector<double>>> scores;
  if (policy.kind == PolicyKind::kvzap) scores = surrogate_scores(*policy.surrogate, trace);
  const std::size_t start = prompt_len > policy.window ? prompt_len - policy.window : 0;
  for (int l = 0; l < layers; ++l)
    for (int h = 0; h < heads; ++h)
      for (std::size_t p = start; p < prompt_len; ++p) {
        const double s = scores.empty() ? 0.0 : scores[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)][p];
        buf.push(l, h, static_cast<Position>(p), detail::decode_score(policy, l, h, static_cast<Position>(p), s));
      }
  return buf;
}

// Scores the new position, pushes it into the buffer and returns the
// positions to evict: at most one per (layer, head), the one leaving the
// window, and only if its buffered score fails the policy. Static policies
// return no evictions; oracle policies cannot run here at all.
template <typename T>
EvictionSets decode_update(const Policy& policy, DecodeScoreBuffer& buffer, Position new_position,
                           std::span<const Tensor<T>> hidden) {
  require(policy.kind != PolicyKind::kvzip_budget, ErrorKind::config,
          "kvzip_budget needs the repeat pass over the whole context and cannot run during decoding");
  EvictionSets out(static_cast<std::size_t>(buffer.layers() * buffer.heads()));
  if (!policy.dynamic()) return out;
  if (policy.kind == PolicyKind::kvzap)
    require(hidden.size() == static_cast<std::size_t>(buffer.layers()), ErrorKind::missing_trace,
            "kvzap decode needs one hidden state per layer");
  for (int l = 0; l < buffer.layers(); ++l) {
    std::vector<double> pred;
    if (policy.kind == PolicyKind::kvzap)
      pred = predict<T>(*policy.surrogate, hidden[static_cast<std::size_t>(l)].values(), l);
    for (int h = 0; h < buffer.heads(); ++h) {
      const double s =
          detail::decode_score(policy, l, h, new_position, pred.empty() ? 0.0 : pred[static_cast<std::size_t>(h)]);
      const auto expelled = buffer.push(l, h, new_position, s);
      if (expelled && expelled->first != 0 && detail::decode_evicts(policy, expelled->second))
        out[static_cast<std::size_t>(l * buffer.heads() + h)].push_back(expelled->first);
    }
  }
  return out;
}

// Per-head and aggregate removal; the aggregate is weighted by appends.
template <typename T>
CacheStats compression_report(const PagedKvCache<T>& cache) {
  return cache.stats();
}

}  // namespace kvzap
