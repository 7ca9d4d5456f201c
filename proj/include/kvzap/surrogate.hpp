#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kvzap/container.hpp"
#include "kvzap/errors.hpp"
#include "kvzap/model.hpp"
#include "kvzap/numerics.hpp"
#include "kvzap/parallel.hpp"
#include "kvzap/rng.hpp"
#include "kvzap/scoring.hpp"
#include "kvzap/tasks.hpp"
#include "kvzap/train.hpp"

namespace kvzap {

// ---------------------------------------------------------------------------
// Dataset

enum class PromptStyle { distinct, repetitive, padded };

// Scoring prompts for dataset generation. The style is drawn from the seed so
// a seed list alone reproduces the corpus: half permutation-style data (what
// copy tasks look like), a quarter short repeated blocks, a quarter data
// followed by a PAD run (content the repeat pass never needs).
inline PromptStyle dataset_prompt_style(std::uint64_t seed) {
  const double u = Rng(mix_seed(seed, 0x57A1E)).uniform();
  return u < 0.5 ? PromptStyle::distinct : u < 0.75 ? PromptStyle::repetitive : PromptStyle::padded;
}

inline std::vector<Token> dataset_prompt(std::uint64_t seed, std::size_t length) {
  require(length >= 1, ErrorKind::config, "prompt length must be positive");
  Rng rng(mix_seed(seed, 0xDA7A));
  switch (dataset_prompt_style(seed)) {
    case PromptStyle::distinct: return distinct_data_tokens(rng, length);
    case PromptStyle::repetitive: return repetitive_data_tokens(rng, length, 2 + rng.below(7));
    case PromptStyle::padded: {
      auto out = distinct_data_tokens(rng, length);
      const std::size_t run = std::min<std::size_t>(length - 1, 1 + rng.below(std::max<std::size_t>(1, length / 4)));
      std::fill(out.end() - static_cast<std::ptrdiff_t>(run), out.end(), vocab::kPad);
      return out;
    }
  }
  return {};
}

struct DatasetSpec {
  std::size_t tokens_per_prompt = 64;
  std::size_t positions_per_prompt = 32;
  double validation_fraction = 0.2;  // trailing share of the seed list held out
  double log_floor = kDefaultLogFloor;
  std::size_t workers = 1;
};

// (h, log s+) pairs. Rows are aligned across layers: row r of every layer comes
// from the same prompt and position.
struct PairDataset {
  int layers = 0;
  int hidden_dim = 0;
  int heads = 0;
  double log_floor = kDefaultLogFloor;
  std::vector<std::uint64_t> prompt_seeds;
  std::vector<std::uint8_t> prompt_validation;  // 1 = held out
  std::vector<std::uint32_t> row_prompt;
  std::vector<Position> row_position;
  std::vector<MatrixR<double>> x;  // [L] N x D_h
  std::vector<MatrixR<double>> y;  // [L] N x H

  std::size_t rows() const { return row_prompt.size(); }
  bool is_validation_row(std::size_t r) const { return prompt_validation[row_prompt[r]] != 0; }

  std::vector<std::size_t> row_indices(bool validation) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < rows(); ++r)
      if (is_validation_row(r) == validation) out.push_back(r);
    return out;
  }

  friend bool operator==(const PairDataset&, const PairDataset&) = default;
};

inline std::vector<std::uint8_t> validation_flags(std::size_t prompts, double fraction) {
  require(fraction >= 0 && fraction < 1, ErrorKind::config, "validation fraction must be in [0, 1)");
  const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(prompts)));
  std::vector<std::uint8_t> flags(prompts, 0);
  for (std::size_t i = prompts - std::min(held, prompts); i < prompts; ++i) flags[i] = 1;
  return flags;
}

template <typename T>
PairDataset generate_dataset(const Weights<T>& w, std::span<const std::uint64_t> seeds, const DatasetSpec& spec) {
  const ModelConfig& c = w.config;
  require(!seeds.empty(), ErrorKind::config, "dataset needs at least one prompt seed");
  require(spec.positions_per_prompt <= spec.tokens_per_prompt, ErrorKind::sampling,
          "cannot sample " + std::to_string(spec.positions_per_prompt) + " positions from a " +
              std::to_string(spec.tokens_per_prompt) + "-token prompt");
  require(spec.positions_per_prompt > 0, ErrorKind::sampling, "positions_per_prompt must be positive");

  struct PromptRows {
    std::vector<Position> positions;
    std::vector<MatrixR<double>> x, y;
  };
  std::vector<PromptRows> per_prompt(seeds.size());
  parallel_for(seeds.size(), spec.workers, [&](std::size_t i) {
    const auto prompt = dataset_prompt(seeds[i], spec.tokens_per_prompt);
    const auto oracle = run_kvzip_oracle(w, std::span<const Token>(prompt));
    // Sample without replacement from the original span (BOS excluded).
    Rng rng(mix_seed(seeds[i], 0x5A3D));
    std::vector<Position> pool(spec.tokens_per_prompt);
    std::iota(pool.begin(), pool.end(), Position{1});
    for (std::size_t k = 0; k < spec.positions_per_prompt; ++k)
      std::swap(pool[k], pool[k + rng.below(pool.size() - k)]);
    pool.resize(spec.positions_per_prompt);
    std::sort(pool.begin(), pool.end());

    PromptRows& pr = per_prompt[i];
    pr.positions = pool;
    const auto m = static_cast<Eigen::Index>(pool.size());
    for (int l = 0; l < c.layers; ++l) {
      MatrixR<double> xl(m, c.hidden_dim), yl(m, c.kv_heads);
      const auto& h = oracle.hidden[static_cast<std::size_t>(l)];
      for (Eigen::Index r = 0; r < m; ++r) {
        const auto p = static_cast<std::size_t>(pool[static_cast<std::size_t>(r)]);
        const auto hrow = h.row(p);
        for (int k = 0; k < c.hidden_dim; ++k) xl(r, k) = static_cast<double>(hrow[static_cast<std::size_t>(k)]);
        for (int g = 0; g < c.kv_heads; ++g) yl(r, g) = log_score(oracle.kvzip_plus.at(l, g, p), spec.log_floor);
      }
      pr.x.push_back(std::move(xl));
      pr.y.push_back(std::move(yl));
    }
  });

  PairDataset d;
  d.layers = c.layers;
  d.hidden_dim = c.hidden_dim;
  d.heads = c.kv_heads;
  d.log_floor = spec.log_floor;
  d.prompt_seeds.assign(seeds.begin(), seeds.end());
  d.prompt_validation = validation_flags(seeds.size(), spec.validation_fraction);
  const auto n = static_cast<Eigen::Index>(seeds.size() * spec.positions_per_prompt);
  for (int l = 0; l < c.layers; ++l) {
    d.x.emplace_back(n, c.hidden_dim);
    d.y.emplace_back(n, c.kv_heads);
  }
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < per_prompt.size(); ++i) {
    const auto m = static_cast<Eigen::Index>(per_prompt[i].positions.size());
    for (int l = 0; l < c.layers; ++l) {
      d.x[static_cast<std::size_t>(l)].middleRows(r, m) = per_prompt[i].x[static_cast<std::size_t>(l)];
      d.y[static_cast<std::size_t>(l)].middleRows(r, m) = per_prompt[i].y[static_cast<std::size_t>(l)];
    }
    for (Position p : per_prompt[i].positions) {
      d.row_prompt.push_back(static_cast<std::uint32_t>(i));
      d.row_position.push_back(p);
    }
    r += m;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Surrogate models

enum class SurrogateKind { linear, mlp };

inline std::string to_string(SurrogateKind k) { return k == SurrogateKind::linear ? "linear" : "mlp"; }

inline SurrogateKind surrogate_kind_from_string(const std::string& s) {
  if (s == "linear") return SurrogateKind::linear;
  if (s == "mlp") return SurrogateKind::mlp;
  throw Error(ErrorKind::config, "unknown surrogate kind '" + s + "'");
}

// Linear: y = x w1 + b1 (w1 is D_h x H).
// MLP:    y = gelu(x w1 + b1) w2 + b2 (w1 is D_h x D_h/8).
struct SurrogateLayer {
  MatrixR<double> w1;
  RowVector<double> b1;
  MatrixR<double> w2;
  RowVector<double> b2;

  friend bool operator==(const SurrogateLayer&, const SurrogateLayer&) = default;
};

struct Surrogate {
  SurrogateKind kind = SurrogateKind::linear;
  int hidden_dim = 0;
  int heads = 0;
  std::vector<SurrogateLayer> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }

  void validate() const {
    require(hidden_dim > 0 && heads > 0, ErrorKind::validation, "surrogate dimensions must be positive");
    for (const auto& l : layers) {
      require(l.w1.rows() == hidden_dim && l.b1.size() == l.w1.cols(), ErrorKind::validation,
              "surrogate first layer has the wrong shape");
      if (kind == SurrogateKind::linear) {
        require(l.w1.cols() == heads, ErrorKind::validation, "linear surrogate must output H scores");
      } else {
        require(l.w2.rows() == l.w1.cols() && l.w2.cols() == heads && l.b2.size() == heads, ErrorKind::validation,
                "mlp surrogate output layer has the wrong shape");
      }
      require(l.w1.allFinite() && l.b1.allFinite() && l.w2.allFinite() && l.b2.allFinite(), ErrorKind::non_finite,
              "surrogate parameters must be finite");
    }
  }

  friend bool operator==(const Surrogate&, const Surrogate&) = default;
};

// Batched: T x D_h -> T x H log-scores.
template <typename Derived>
MatrixR<double> predict_batch(const Surrogate& s, const Eigen::MatrixBase<Derived>& x, int layer) {
  require(layer >= 0 && layer < s.num_layers(), ErrorKind::dimension, "layer " + std::to_string(layer) + " out of range");
  require(x.cols() == s.hidden_dim, ErrorKind::dimension, "surrogate input has the wrong width");
  const auto& l = s.layers[static_cast<std::size_t>(layer)];
  MatrixR<double> z = x.template cast<double>() * l.w1;
  z.rowwise() += l.b1;
  if (s.kind == SurrogateKind::linear) return z;
  z = z.unaryExpr([](double v) { return gelu(v); });
  MatrixR<double> out = z * l.w2;
  out.rowwise() += l.b2;
  return out;
}

template <typename T>
std::vector<double> predict(const Surrogate& s, std::span<const T> h, int layer) {
  require(h.size() == static_cast<std::size_t>(s.hidden_dim), ErrorKind::dimension, "surrogate input has the wrong width");
  RowVector<double> x(s.hidden_dim);
  for (std::size_t i = 0; i < h.size(); ++i) x[static_cast<Eigen::Index>(i)] = static_cast<double>(h[i]);
  const MatrixR<double> y = predict_batch(s, x, layer);
  return std::vector<double>(y.data(), y.data() + y.size());
}

namespace detail {

inline MatrixR<double> gather_rows(const MatrixR<double>& m, std::span<const std::size_t> rows) {
  MatrixR<double> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace detail

inline constexpr double kDefaultRidge = 1e-3;

// Ridge on mean-centred features:
//   W = (Xc^T Xc + lambda I)^-1 Xc^T Yc,  b = mean(Y) - mean(X) W.
inline SurrogateLayer fit_ridge(const MatrixR<double>& x, const MatrixR<double>& y, double lambda) {
  require(lambda >= 0 && std::isfinite(lambda), ErrorKind::config, "ridge lambda must be finite and non-negative");
  require(x.rows() == y.rows() && x.rows() > 0, ErrorKind::dimension, "ridge needs aligned, non-empty X and Y");
  const RowVector<double> mx = x.colwise().mean();
  const RowVector<double> my = y.colwise().mean();
  const MatrixR<double> xc = x.rowwise() - mx;
  const MatrixR<double> yc = y.rowwise() - my;
  MatrixR<double> a = xc.transpose() * xc;
  a.diagonal().array() += lambda;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const double scale = std::max(a.diagonal().maxCoeff(), std::numeric_limits<double>::min());
  require(ldlt.info() == Eigen::Success && ldlt.rcond() > 1e-12 && ldlt.vectorD().minCoeff() > 1e-12 * scale,
          ErrorKind::conditioning, "normal matrix is singular or ill-conditioned; use a positive ridge lambda");
  SurrogateLayer l;
  l.w1 = ldlt.solve(Eigen::MatrixXd(xc.transpose() * yc));
  l.b1 = my - mx * l.w1;
  return l;
}

inline Surrogate train_linear(const PairDataset& d, double lambda = kDefaultRidge) {
  const auto rows = d.row_indices(false);
  require(!rows.empty(), ErrorKind::training, "dataset has no training rows");
  Surrogate s{SurrogateKind::linear, d.hidden_dim, d.heads, {}};
  for (int l = 0; l < d.layers; ++l)
    s.layers.push_back(fit_ridge(detail::gather_rows(d.x[static_cast<std::size_t>(l)], rows),
                                 detail::gather_rows(d.y[static_cast<std::size_t>(l)], rows), lambda));
  return s;
}

struct MlpHyper {
  int hidden = 0;  // 0 = D_h / 8
  AdamHyper adam{};
  std::size_t batch = 256;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
};

// Mean squared error over all outputs; gradients are written (not accumulated)
// when `grad` is non-null.
inline double mlp_loss(const SurrogateLayer& p, const MatrixR<double>& x, const MatrixR<double>& y,
                       SurrogateLayer* grad = nullptr) {
  MatrixR<double> pre = x * p.w1;
  pre.rowwise() += p.b1;
  const MatrixR<double> hid = pre.unaryExpr([](double v) { return gelu(v); });
  MatrixR<double> out = hid * p.w2;
  out.rowwise() += p.b2;
  const MatrixR<double> diff = out - y;
  const double count = static_cast<double>(diff.size());
  if (grad) {
    const MatrixR<double> dout = diff * (2.0 / count);
    grad->w2 = hid.transpose() * dout;
    grad->b2 = dout.colwise().sum();
    const MatrixR<double> dpre =
        (dout * p.w2.transpose()).cwiseProduct(pre.unaryExpr([](double v) { return gelu_grad(v); }));
    grad->w1 = x.transpose() * dpre;
    grad->b1 = dpre.colwise().sum();
  }
  return diff.squaredNorm() / count;
}

inline std::vector<std::span<double>> mlp_buffers(SurrogateLayer& l) {
  return {{l.w1.data(), static_cast<std::size_t>(l.w1.size())},
          {l.b1.data(), static_cast<std::size_t>(l.b1.size())},
          {l.w2.data(), static_cast<std::size_t>(l.w2.size())},
          {l.b2.data(), static_cast<std::size_t>(l.b2.size())}};
}

// One layer: Adam on minibatches, early stopping on validation MSE, best
// parameters restored.
inline SurrogateLayer fit_mlp(const MatrixR<double>& x, const MatrixR<double>& y, const MatrixR<double>& xv,
                              const MatrixR<double>& yv, const MlpHyper& hyper, std::uint64_t seed) {
  const auto dh = x.cols();
  const auto hidden = static_cast<Eigen::Index>(hyper.hidden > 0 ? hyper.hidden : std::max<Eigen::Index>(1, dh / 8));
  const auto out = y.cols();
  require(x.rows() > 0, ErrorKind::training, "mlp needs training rows");
  Rng rng(seed);
  SurrogateLayer p;
  p.w1.resize(dh, hidden);
  p.b1 = RowVector<double>::Zero(hidden);
  p.w2.resize(hidden, out);
  // Fan-in scaled normal init; the output bias starts at the target mean.
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = rng.normal() / std::sqrt(static_cast<double>(dh));
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = rng.normal() / std::sqrt(static_cast<double>(hidden));
  p.b2 = y.colwise().mean();

  SurrogateLayer g = p;
  auto params = mlp_buffers(p);
  auto grads = mlp_buffers(g);
  std::vector<std::size_t> sizes;
  std::vector<std::span<const double>> cgrads;
  for (auto& s : grads) {
    sizes.push_back(s.size());
    cgrads.emplace_back(s.data(), s.size());
  }
  Adam<double> adam(sizes, hyper.adam);

  const bool has_val = xv.rows() > 0;
  SurrogateLayer best = p;
  double best_val = has_val ? mlp_loss(p, xv, yv) : std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<std::size_t> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const double loss = mlp_loss(p, detail::gather_rows(x, idx), detail::gather_rows(y, idx), &g);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::training, "mlp loss is not finite at epoch " + std::to_string(epoch));
      // mlp_loss overwrites g's matrices, which may move their storage.
      grads = mlp_buffers(g);
      for (std::size_t b = 0; b < grads.size(); ++b) cgrads[b] = grads[b];
      adam.step(params, cgrads);
    }
    if (!has_val) {
      best = p;
      continue;
    }
    const double val = mlp_loss(p, xv, yv);
    if (val < best_val) {
      best_val = val;
      best = p;
      stale = 0;
    } else if (++stale >= hyper.patience) {
      break;
    }
  }
  return best;
}

inline Surrogate train_mlp(const PairDataset& d, const MlpHyper& hyper = {}) {
  const auto train_rows = d.row_indices(false);
  const auto val_rows = d.row_indices(true);
  require(!train_rows.empty(), ErrorKind::training, "dataset has no training rows");
  Surrogate s{SurrogateKind::mlp, d.hidden_dim, d.heads, {}};
  for (int l = 0; l < d.layers; ++l) {
    const auto& x = d.x[static_cast<std::size_t>(l)];
    const auto& y = d.y[static_cast<std::size_t>(l)];
    s.layers.push_back(fit_mlp(detail::gather_rows(x, train_rows), detail::gather_rows(y, train_rows),
                               detail::gather_rows(x, val_rows), detail::gather_rows(y, val_rows), hyper,
                               mix_seed(hyper.seed, static_cast<std::uint64_t>(l))));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

// Squared Pearson correlation. A constant prediction carries no signal and
// scores 0; constant targets leave the statistic undefined.
inline double pearson_r2(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size() && pred.size() >= 2, ErrorKind::dimension,
          "R^2 needs two aligned series of length >= 2");
  const double n = static_cast<double>(pred.size());
  const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double mt = std::accumulate(target.begin(), target.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp, b = target[i] - mt;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  require(syy > 0, ErrorKind::undefined, "targets are constant; R^2 is undefined");
  if (sxx <= 0) return 0.0;
  return (sxy * sxy) / (sxx * syy);
}

struct R2Report {
  std::vector<std::vector<double>> per_head;  // [L][H]
  double mean = 0.0;

  double layer_mean(int l) const {
    const auto& v = per_head[static_cast<std::size_t>(l)];
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
};

// Pooled over all validation rows, per (layer, head), then averaged over H*L.
inline R2Report evaluate_r2(const Surrogate& s, const PairDataset& d, bool validation = true) {
  require(s.num_layers() == d.layers && s.heads == d.heads && s.hidden_dim == d.hidden_dim, ErrorKind::dimension,
          "surrogate does not match dataset dimensions");
  const auto rows = d.row_indices(validation);
  require(rows.size() >= 2, ErrorKind::validation, "dataset has fewer than two evaluation rows");
  R2Report rep;
  double total = 0;
  for (int l = 0; l < d.layers; ++l) {
    const MatrixR<double> pred = predict_batch(s, detail::gather_rows(d.x[static_cast<std::size_t>(l)], rows), l);
    const MatrixR<double> tgt = detail::gather_rows(d.y[static_cast<std::size_t>(l)], rows);
    rep.per_head.emplace_back();
    for (int h = 0; h < d.heads; ++h) {
      const Eigen::VectorXd pc = pred.col(h), tc = tgt.col(h);
      const double r2 = pearson_r2({pc.data(), static_cast<std::size_t>(pc.size())},
                                   {tc.data(), static_cast<std::size_t>(tc.size())});
      rep.per_head.back().push_back(r2);
      total += r2;
    }
  }
  rep.mean = total / static_cast<double>(d.layers * d.heads);
  return rep;
}

inline void write_r2_csv(std::ostream& out, const R2Report& r) {
  out << "layer,head,r2\n";
  out.precision(17);
  for (std::size_t l = 0; l < r.per_head.size(); ++l)
    for (std::size_t h = 0; h < r.per_head[l].size(); ++h) out << l << ',' << h << ',' << r.per_head[l][h] << '\n';
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline Tensor<float> to_f32(const MatrixR<double>& m) {
  std::vector<float> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return Tensor<float>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(v));
}

inline MatrixR<double> from_f32(const Tensor<float>& t, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  require(t.rank() == 2 && t.rows() == static_cast<std::size_t>(rows) && t.cols() == static_cast<std::size_t>(cols),
          ErrorKind::validation, what + ": stored shape " + shape_string(t.shape()) + " does not match header");
  MatrixR<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(t.values()[static_cast<std::size_t>(i)]);
  return m;
}

}  // namespace detail

// Surrogate parameters are stored as f64 split into two f32 words each
// (hi + lo) so that a round trip through a file is exact.
inline Container surrogate_container(const Surrogate& s) {
  s.validate();
  Container c;
  c.magic = std::string(magic::kSurrogate);
  c.header = {{"kind", to_string(s.kind)}, {"L", s.num_layers()}, {"D_h", s.hidden_dim}, {"H", s.heads},
              {"hidden", s.kind == SurrogateKind::mlp && !s.layers.empty() ? s.layers[0].w1.cols() : 0},
              {"encoding", "f64-as-f32-pair"}};
  auto push = [&](const MatrixR<double>& m) {
    MatrixR<double> hi = m.cast<float>().cast<double>();
    c.tensors.push_back(detail::to_f32(hi));
    c.tensors.push_back(detail::to_f32(m - hi));
  };
  for (const auto& l : s.layers) {
    push(l.w1);
    push(l.b1);
    if (s.kind == SurrogateKind::mlp) {
      push(l.w2);
      push(l.b2);
    }
  }
  return c;
}

inline Surrogate surrogate_from_container(const Container& c) {
  Surrogate s;
  try {
    s.kind = surrogate_kind_from_string(c.header.at("kind").get<std::string>());
    s.hidden_dim = c.header.at("D_h").get<int>();
    s.heads = c.header.at("H").get<int>();
    const int layers = c.header.at("L").get<int>();
    const auto hidden = c.header.at("hidden").get<Eigen::Index>();
    const std::size_t per_layer = s.kind == SurrogateKind::mlp ? 8 : 4;
    require(layers >= 0 && c.tensors.size() == per_layer * static_cast<std::size_t>(layers), ErrorKind::validation,
            "surrogate container holds the wrong number of tensors");
    std::size_t i = 0;
    auto pull = [&](Eigen::Index r, Eigen::Index k, const std::string& what) {
      MatrixR<double> hi = detail::from_f32(c.tensors[i], r, k, what);
      MatrixR<double> lo = detail::from_f32(c.tensors[i + 1], r, k, what);
      i += 2;
      return MatrixR<double>(hi + lo);
    };
    const Eigen::Index first = s.kind == SurrogateKind::mlp ? hidden : s.heads;
    for (int l = 0; l < layers; ++l) {
      SurrogateLayer sl;
      sl.w1 = pull(s.hidden_dim, first, "w1");
      sl.b1 = pull(1, first, "b1");
      if (s.kind == SurrogateKind::mlp) {
        sl.w2 = pull(hidden, s.heads, "w2");
        sl.b2 = pull(1, s.heads, "b2");
      }
      s.layers.push_back(std::move(sl));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, std::string("malformed surrogate header: ") + e.what());
  }
  s.validate();
  return s;
}

inline void save_surrogate(const Surrogate& s, const std::filesystem::path& path) {
  save_container(path, surrogate_container(s));
}

inline Surrogate load_surrogate(const std::filesystem::path& path) {
  return surrogate_from_container(load_container(path, magic::kSurrogate));
}

inline Container dataset_container(const PairDataset& d) {
  Container c;
  c.magic = std::string(magic::kDataset);
  c.header = {{"L", d.layers},
              {"D_h", d.hidden_dim},
              {"H", d.heads},
              {"log_floor", d.log_floor},
              {"prompt_seeds", d.prompt_seeds},
              {"prompt_validation", d.prompt_validation},
              {"row_prompt", d.row_prompt},
              {"row_position", d.row_position}};
  for (int l = 0; l < d.layers; ++l) {
    c.tensors.push_back(detail::to_f32(d.x[static_cast<std::size_t>(l)]));
    c.tensors.push_back(detail::to_f32(d.y[static_cast<std::size_t>(l)]));
  }
  return c;
}

inline PairDataset dataset_from_container(const Container& c) {
  PairDataset d;
  try {
    d.layers = c.header.at("L").get<int>();
    d.hidden_dim = c.header.at("D_h").get<int>();
    d.heads = c.header.at("H").get<int>();
    d.log_floor = c.header.at("log_floor").get<double>();
    d.prompt_seeds = c.header.at("prompt_seeds").get<std::vector<std::uint64_t>>();
    d.prompt_validation = c.header.at("prompt_validation").get<std::vector<std::uint8_t>>();
    d.row_prompt = c.header.at("row_prompt").get<std::vector<std::uint32_t>>();
    d.row_position = c.header.at("row_position").get<std::vector<Position>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, std::string("malformed dataset header: ") + e.what());
  }
  require(d.prompt_validation.size() == d.prompt_seeds.size() && d.row_position.size() == d.row_prompt.size(),
          ErrorKind::validation, "dataset provenance arrays disagree in length");
  for (auto p : d.row_prompt)
    require(p < d.prompt_seeds.size(), ErrorKind::validation, "dataset row refers to an unknown prompt");
  require(c.tensors.size() == 2 * static_cast<std::size_t>(d.layers), ErrorKind::validation,
          "dataset container holds the wrong number of tensors");
  const auto n = static_cast<Eigen::Index>(d.rows());
  for (int l = 0; l < d.layers; ++l) {
    d.x.push_back(detail::from_f32(c.tensors[2 * static_cast<std::size_t>(l)], n, d.hidden_dim, "X"));
    d.y.push_back(detail::from_f32(c.tensors[2 * static_cast<std::size_t>(l) + 1], n, d.heads, "Y"));
  }
  return d;
}

inline void save_dataset(const PairDataset& d, const std::filesystem::path& path) {
  save_container(path, dataset_container(d));
}

inline PairDataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_container(load_container(path, magic::kDataset));
}

}  // namespace kvzap
