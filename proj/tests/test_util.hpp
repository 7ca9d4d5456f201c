#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kvzap/kvzap.hpp"

// Reference models and fixtures shared by the unit tests and the acceptance
// binary. Checks return a failure message (empty on success) or an error
// magnitude so both callers can report them.
namespace kvzap::fixtures {

// Random f64 teacher. `sharpen` scales the query/key projections so attention
// rows are far from uniform.
inline Weights<double> random_weights(std::uint64_t seed, double sharpen = 1.0, ModelConfig c = {}) {
  c.seed = seed;
  auto w = init_weights<float>(c).cast<double>();
  Rng rng(mix_seed(seed, 77));
  for (auto& lw : w.layers) {
    for (auto* t : {&lw.wq, &lw.wk})
      for (auto& v : t->values()) v = v * 50.0 * sharpen + 0.02 * rng.normal();
    for (auto& v : lw.wv.values()) v *= 20.0;
  }
  return w;
}

inline std::vector<Token> random_data(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<Token> out(n);
  for (auto& t : out) t = static_cast<Token>(rng.below(vocab::kDataAlphabet));
  return out;
}

// BOS followed by n - 1 random data tokens.
inline std::vector<Token> sequence(std::uint64_t seed, std::size_t n) {
  std::vector<Token> s{vocab::kBos};
  for (Token t : random_data(seed, n - 1)) s.push_back(t);
  return s;
}

inline std::shared_ptr<const Surrogate> random_linear(std::uint64_t seed, int dh = 64, int heads = 2, int layers = 2) {
  Rng rng(seed);
  auto s = std::make_shared<Surrogate>();
  s->kind = SurrogateKind::linear;
  s->hidden_dim = dh;
  s->heads = heads;
  for (int l = 0; l < layers; ++l) {
    SurrogateLayer sl{MatrixR<double>(dh, heads), RowVector<double>(heads), MatrixR<double>(0, 0), RowVector<double>(0)};
    for (auto& v : sl.w1.reshaped()) v = rng.normal() * 0.3;
    sl.b1.setConstant(-3.0);
    s->layers.push_back(sl);
  }
  return s;
}

inline std::vector<TensorD> kernel_inputs(const std::string& name, Rng& rng) {
  if (name == "matmul") return {TensorD::randn({3, 4}, rng), TensorD::randn({4, 5}, rng)};
  if (name == "softmax_causal") return {TensorD::randn({5, 5}, rng)};
  if (name == "rmsnorm") return {TensorD::randn({3, 6}, rng), TensorD::randn({6}, rng)};
  if (name == "rope") return {TensorD::randn({8}, rng)};
  return {TensorD::randn({4, 6}, rng)};
}

// Synthetic dataset with targets from `f` applied to Gaussian features.
template <typename F>
PairDataset synthetic(std::size_t prompts, std::size_t per_prompt, int dh, int heads, std::uint64_t seed, F f) {
  Rng rng(seed);
  PairDataset d;
  d.layers = 1;
  d.hidden_dim = dh;
  d.heads = heads;
  d.prompt_validation = validation_flags(prompts, 0.2);
  const auto n = static_cast<Eigen::Index>(prompts * per_prompt);
  d.x.emplace_back(n, dh);
  d.y.emplace_back(n, heads);
  for (std::size_t p = 0; p < prompts; ++p) d.prompt_seeds.push_back(p);
  for (Eigen::Index r = 0; r < n; ++r) {
    d.row_prompt.push_back(static_cast<std::uint32_t>(static_cast<std::size_t>(r) / per_prompt));
    d.row_position.push_back(r);
    for (int k = 0; k < dh; ++k) d.x[0](r, k) = rng.normal();
    const RowVector<double> y = f(RowVector<double>(d.x[0].row(r)));
    d.y[0].row(r) = y;
  }
  return d;
}

// Linear target y = x A + b with A ~ N(0, 1), b = 0.5.
inline PairDataset synthetic_linear(std::uint64_t seed, std::size_t prompts = 50, int dh = 16, int heads = 2) {
  Rng rng(mix_seed(seed, 0x11));
  MatrixR<double> a(dh, heads);
  for (auto& v : a.reshaped()) v = rng.normal();
  return synthetic(prompts, 20, dh, heads, seed, [a](const RowVector<double>& x) {
    RowVector<double> y = x * a;
    y.array() += 0.5;
    return y;
  });
}

// Target gelu(x A) B: exactly an MLP of width 2, not linear in x.
inline PairDataset synthetic_gelu(std::uint64_t seed) {
  Rng rng(seed);
  MatrixR<double> a(16, 2), b(2, 2);
  for (auto& v : a.reshaped()) v = rng.normal() * 0.8;
  b << 1.5, -0.7, 0.4, 1.2;
  return synthetic(100, 30, 16, 2, seed + 1, [a, b](const RowVector<double>& x) {
    RowVector<double> z = x * a;
    z = z.unaryExpr([](double v) { return gelu(v); });
    return RowVector<double>(z * b);
  });
}

inline MlpHyper gelu_mlp_hyper() {
  MlpHyper h;
  h.hidden = 4;
  h.adam.lr = 1e-2;
  h.patience = 20;
  h.seed = 5;
  return h;
}

struct BruteScores {
  std::vector<double> kvzip, plus;  // [l][g][i]
};

// Nested loops over the dense forward pass of the extended prompt.
inline BruteScores brute_force(const Weights<double>& w, const std::vector<Token>& prompt) {
  const auto& c = w.config;
  const std::size_t n = prompt.size();
  std::vector<Token> ext{vocab::kBos};
  ext.insert(ext.end(), prompt.begin(), prompt.end());
  ext.push_back(vocab::kRepeat);
  ext.insert(ext.end(), prompt.begin(), prompt.end());
  const auto tr = forward_full(w, std::span<const Token>(ext), CaptureFlags{.hidden = true, .attention = true, .values = true});
  const std::size_t width = n + 1;
  BruteScores b;
  b.kvzip.assign(static_cast<std::size_t>(c.layers * c.kv_heads) * width, 0.0);
  b.plus = b.kvzip;
  const int group = c.query_heads / c.kv_heads;
  for (int l = 0; l < c.layers; ++l)
    for (int g = 0; g < c.kv_heads; ++g)
      for (std::size_t i = 0; i < width; ++i) {
        double best = 0, best_plus = 0;
        for (int q = g * group; q < (g + 1) * group; ++q) {
          double contrib = 0;
          const auto& wo = w.layers[static_cast<std::size_t>(l)].wo;
          for (int col = 0; col < c.hidden_dim; ++col) {
            double acc = 0;
            for (int d = 0; d < c.head_dim; ++d)
              acc += tr.values[static_cast<std::size_t>(l)][static_cast<std::size_t>(g)](i, static_cast<std::size_t>(d)) *
                     wo(static_cast<std::size_t>(q * c.head_dim + d), static_cast<std::size_t>(col));
            contrib += acc * acc;
          }
          contrib = std::sqrt(contrib);
          for (std::size_t j = n + 2; j < 2 * n + 2; ++j) {
            const double a = tr.attention[static_cast<std::size_t>(l)][static_cast<std::size_t>(q)](j, i);
            double hn = 0;
            for (int k = 0; k < c.hidden_dim; ++k) {
              const double h = tr.hidden[static_cast<std::size_t>(l)](j, static_cast<std::size_t>(k));
              hn += h * h;
            }
            best = std::max(best, a);
            best_plus = std::max(best_plus, a * contrib / std::sqrt(hn));
          }
        }
        b.kvzip[static_cast<std::size_t>(l * c.kv_heads + g) * width + i] = best;
        b.plus[static_cast<std::size_t>(l * c.kv_heads + g) * width + i] = best_plus;
      }
  return b;
}

// Largest absolute difference between the oracle and the nested loops.
inline double oracle_error(const Weights<double>& w, const std::vector<Token>& prompt) {
  const auto r = run_kvzip_oracle(w, std::span<const Token>(prompt));
  const auto b = brute_force(w, prompt);
  if (r.kvzip.values.size() != b.kvzip.size() || r.kvzip.positions.front() != 0 || r.kvzip.width() != prompt.size() + 1)
    return INFINITY;
  double err = 0;
  for (std::size_t k = 0; k < b.kvzip.size(); ++k) {
    err = std::max(err, std::abs(r.kvzip.values[k] - b.kvzip[k]));
    err = std::max(err, std::abs(r.kvzip_plus.values[k] - b.plus[k]));
  }
  return err;
}

// The oracle case used for seed `seed`: sharpened random teacher and a prompt of
// 3 to 19 data tokens.
inline double oracle_case_error(std::uint64_t seed) {
  return oracle_error(random_weights(seed, 0.3), random_data(seed + 500, 3 + seed % 17));
}

// Max deviation of prefill + decode from the full forward pass (logits and
// every hidden state) on one random split sequence.
inline double streaming_error(std::uint64_t seed) {
  auto w = random_weights(seed, 0.2);
  Rng rng(seed);
  const std::size_t n = 4 + rng.below(40);
  const std::size_t split = 1 + rng.below(n - 1);
  const auto tokens = sequence(seed + 1000, n);
  const auto full = forward_full(w, std::span<const Token>(tokens), CaptureFlags{.hidden = true});

  auto cache = make_cache<double>(w.config);
  auto pre = prefill(w, std::span<const Token>(tokens).first(split), cache);
  double err = 0;
  for (std::size_t t = 0; t < split; ++t)
    for (std::size_t v = 0; v < full.logits.cols(); ++v) err = std::max(err, std::abs(pre.logits(t, v) - full.logits(t, v)));
  for (std::size_t t = split; t < n; ++t) {
    auto step = decode_step(w, tokens[t], cache);
    if (step.position != static_cast<Position>(t)) return INFINITY;
    for (std::size_t v = 0; v < full.logits.cols(); ++v) err = std::max(err, std::abs(step.logits[v] - full.logits(t, v)));
    for (int l = 0; l < w.config.layers; ++l)
      for (std::size_t k = 0; k < static_cast<std::size_t>(w.config.hidden_dim); ++k)
        err = std::max(err, std::abs(step.hidden[static_cast<std::size_t>(l)][k] - full.hidden[static_cast<std::size_t>(l)](t, k)));
  }
  return err;
}

// Block bookkeeping: blocks are owned by one head, every resident block holds
// a live entry, and the pool is fully accounted for.
inline std::string block_invariant_failure(const PagedKvCache<double>& c) {
  std::set<int> seen;
  std::size_t resident = 0;
  for (int l = 0; l < c.layers(); ++l)
    for (int h = 0; h < c.heads(); ++h) {
      const auto ids = c.block_ids(l, h);
      resident += ids.size();
      for (int id : ids)
        if (!seen.insert(id).second) return "block shared between heads";
      if (ids.size() > c.live(l, h)) return "resident block without a live entry";
      if (ids.size() * static_cast<std::size_t>(c.block_size()) < c.live(l, h)) return "live entries exceed blocks";
      if (c.appended(l, h) != c.live(l, h) + c.evicted(l, h)) return "appended != live + evicted";
    }
  if (resident + c.free_blocks() != c.pool_blocks()) return "pool accounting";
  return "";
}

// Drives a paged cache and a flat list of live (position, key, value) triples
// with the same random operations and compares them after every op.
inline std::string cache_model_failure(std::uint64_t seed, int ops = 1000) {
  struct Entry {
    Position p;
    std::vector<double> k, v;
  };
  Rng rng(seed);
  const int layers = 1 + static_cast<int>(rng.below(2));
  const int heads = 1 + static_cast<int>(rng.below(3));
  const int dim = 2;
  const int block = 1 + static_cast<int>(rng.below(6));
  PagedKvCache<double> cache(layers, heads, dim, block);
  std::map<std::pair<int, int>, std::vector<Entry>> ref;
  std::map<std::pair<int, int>, Position> next;
  std::size_t appended = 0, evicted = 0;
  const std::string where = "seed " + std::to_string(seed) + ": ";
  for (int op = 0; op < ops; ++op) {
    const int l = static_cast<int>(rng.below(static_cast<std::uint64_t>(layers)));
    const int h = static_cast<int>(rng.below(static_cast<std::uint64_t>(heads)));
    const auto key = std::make_pair(l, h);
    const auto kind = rng.below(10);
    if (kind < 5) {
      const Position p = next[key] + static_cast<Position>(rng.below(3));
      next[key] = p + 1;
      std::vector<double> k{rng.normal(), rng.normal()}, v{rng.normal(), rng.normal()};
      cache.append(l, h, p, k, v);
      ref[key].push_back({p, k, v});
      ++appended;
    } else if (kind < 9) {
      std::vector<Position> victims;
      for (int i = 0; i < 1 + static_cast<int>(rng.below(4)); ++i)
        victims.push_back(static_cast<Position>(rng.below(static_cast<std::uint64_t>(next[key] + 2))));
      std::size_t expect = 0;
      for (Position p : victims) {
        auto& list = ref[key];
        auto it = std::find_if(list.begin(), list.end(), [&](const Entry& e) { return e.p == p; });
        if (it != list.end()) {
          list.erase(it);
          ++expect;
        }
      }
      evicted += expect;
      if (cache.evict(l, h, std::span<const Position>(victims)) != expect) return where + "evict count";
    } else if (next[key] > 0) {
      // appending a position that is not strictly increasing must be rejected
      std::vector<double> z{0, 0};
      try {
        cache.append(l, h, next[key] - 1, z, z);
        return where + "non-increasing append accepted";
      } catch (const Error&) {
      }
    }
    const auto g = cache.gather(l, h);
    const auto& list = ref[key];
    if (g.positions.size() != list.size()) return where + "live count";
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if (g.positions[i] != list[i].p) return where + "position order";
      for (int d = 0; d < dim; ++d)
        if (g.keys(r, d) != list[i].k[static_cast<std::size_t>(d)] || g.values(r, d) != list[i].v[static_cast<std::size_t>(d)])
          return where + "key/value payload";
    }
    if (auto m = block_invariant_failure(cache); !m.empty()) return where + m;
  }
  const auto s = cache.stats();
  std::size_t live = 0;
  for (auto& [k, v] : ref) live += v.size();
  if (s.appended_total != appended || s.evicted_total != evicted || s.live_total != live) return where + "stats totals";
  if (s.live_bytes != live * 2 * dim * sizeof(double)) return where + "live bytes";
  if (s.resident_bytes != s.resident_blocks_total * static_cast<std::size_t>(block) * 2 * dim * sizeof(double))
    return where + "resident bytes";
  return "";
}

// Runs kvzap decode decisions over a teacher-forced sequence without applying
// them, so every hidden state equals the unpruned forward pass, and compares
// the accumulated evictions after every step with a replay of the rule on the
// offline scores: position p (BOS excluded) is evicted once it leaves the
// window and its score is below tau.
inline std::string replay_failure(std::uint64_t seed) {
  auto w = random_weights(seed, 0.2);
  const auto s = random_linear(seed + 40);
  Rng rng(seed);
  const std::size_t n = 20 + rng.below(60);
  const std::size_t prompt_len = 2 + rng.below(n / 2);
  const std::size_t window = rng.below(12);
  const double tau = -3.0 + rng.normal();
  const auto tokens = sequence(seed + 99, n);
  const auto policy = Policy::kvzap(s, tau, window);
  const int L = w.config.layers, H = w.config.kv_heads;

  auto cache = make_cache<double>(w.config);
  auto pre = prefill(w, std::span<const Token>(tokens).first(prompt_len), cache);
  auto decided = prefill_decisions(policy, L, H, pre.trace, prompt_len);
  auto buffer = init_decode_buffer(policy, L, H, pre.trace, prompt_len);

  const auto full = forward_full(w, std::span<const Token>(tokens), CaptureFlags{.hidden = true});
  const auto offline = surrogate_scores(*s, full);
  auto matches = [&](std::size_t len) {
    for (int l = 0; l < L; ++l)
      for (int h = 0; h < H; ++h) {
        std::vector<Position> expect;
        for (std::size_t p = 1; p + window < len; ++p)
          if (offline[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)][p] < tau)
            expect.push_back(static_cast<Position>(p));
        if (decided[static_cast<std::size_t>(l * H + h)] != expect) return false;
      }
    return true;
  };
  const std::string where = "seed " + std::to_string(seed) + ": ";
  if (!matches(prompt_len)) return where + "prefill decisions";
  for (std::size_t t = prompt_len; t < n; ++t) {
    auto step = decode_step(w, tokens[t], cache);
    const auto e = decode_update<double>(policy, buffer, step.position, std::span<const Tensor<double>>(step.hidden));
    for (std::size_t k = 0; k < decided.size(); ++k) decided[k].insert(decided[k].end(), e[k].begin(), e[k].end());
    if (!matches(t + 1)) return where + "decode step " + std::to_string(t);
  }
  return "";
}

}  // namespace kvzap::fixtures
