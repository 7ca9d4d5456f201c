#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "kvzap/errors.hpp"
#include "kvzap/model.hpp"
#include "kvzap/numerics.hpp"
#include "kvzap/tasks.hpp"

namespace kvzap {

// Mean cross-entropy over every labelled position of the batch. When `grad` is
// non-null it receives d(loss)/d(weights), accumulated on top of its contents.
template <typename T>
double teacher_loss(const Weights<T>& w, std::span<const TrainingExample> batch, Weights<T>* grad = nullptr) {
  const ModelConfig& c = w.config;
  std::size_t labelled = 0;
  for (const auto& ex : batch)
    for (Token y : ex.labels) labelled += (y >= 0);
  require(labelled > 0, ErrorKind::training, "batch has no labelled positions");
  const T inv_count = T(1) / static_cast<T>(labelled);
  const T scale = T(1) / std::sqrt(static_cast<T>(c.head_dim));
  const auto d = static_cast<Eigen::Index>(c.head_dim);
  const auto ud = static_cast<std::size_t>(c.head_dim);

  double total = 0.0;
  detail::Activations<T> act;
  for (const auto& ex : batch) {
    require(ex.tokens.size() == ex.labels.size(), ErrorKind::dimension, "labels must align with tokens");
    require(ex.tokens.size() <= static_cast<std::size_t>(c.max_seq_len), ErrorKind::capacity,
            "training sequence exceeds T_max");
    validate_tokens(ex.tokens, c);
    detail::dense_forward(w, std::span<const Token>(ex.tokens), act);
    const auto n = static_cast<Eigen::Index>(ex.tokens.size());

    MatrixR<T> dlogits = MatrixR<T>::Zero(n, c.vocab_size);
    for (Eigen::Index t = 0; t < n; ++t) {
      const Token y = ex.labels[static_cast<std::size_t>(t)];
      if (y < 0) continue;
      const auto row = act.logits.row(t);
      const T mx = row.maxCoeff();
      const RowVector<T> e = (row.array() - mx).exp().matrix();
      const T sum = e.sum();
      total += static_cast<double>(std::log(sum) + mx - row(y));
      if (grad) {
        dlogits.row(t) = e / sum;
        dlogits(t, y) -= T(1);
        dlogits.row(t) *= inv_count;
      }
    }
    if (!grad) continue;

    Weights<T>& g = *grad;
    as_matrix(g.head).noalias() += act.z.transpose() * dlogits;
    const MatrixR<T> dz = dlogits * detail::mat(w.head).transpose();
    MatrixR<T> dx = MatrixR<T>::Zero(n, c.hidden_dim);
    detail::rmsnorm_rows_backward<T>(act.x_final, w.final_norm.data(), act.inv_final, dz, dx, g.final_norm.data());

    for (int l = c.layers - 1; l >= 0; --l) {
      const auto& la = act.layers[static_cast<std::size_t>(l)];
      const auto& lw = w.layers[static_cast<std::size_t>(l)];
      auto& lg = g.layers[static_cast<std::size_t>(l)];
      const detail::RopeTable<T> rope(ud, 0, ex.tokens.size(), c.rope_theta);

      // Feed-forward block: x_out = x2 + (silu(gate) * up) w_down.
      as_matrix(lg.w_down).noalias() += la.m.transpose() * dx;
      const MatrixR<T> dm = dx * detail::mat(lw.w_down).transpose();
      const MatrixR<T> act_gate = la.gate.unaryExpr([](T v) { return silu(v); });
      const MatrixR<T> dgate =
          dm.cwiseProduct(la.up).cwiseProduct(la.gate.unaryExpr([](T v) { return silu_grad(v); }));
      const MatrixR<T> dup = dm.cwiseProduct(act_gate);
      as_matrix(lg.w_gate).noalias() += la.f.transpose() * dgate;
      as_matrix(lg.w_up).noalias() += la.f.transpose() * dup;
      MatrixR<T> df = dgate * detail::mat(lw.w_gate).transpose();
      df.noalias() += dup * detail::mat(lw.w_up).transpose();
      MatrixR<T> dx2 = dx;
      detail::rmsnorm_rows_backward<T>(la.x2, lw.ffn_norm.data(), la.inv_ffn, df, dx2, lg.ffn_norm.data());

      // Attention block: x2 = x + o w_o.
      as_matrix(lg.wo).noalias() += la.o.transpose() * dx2;
      const MatrixR<T> dout = dx2 * detail::mat(lw.wo).transpose();
      MatrixR<T> dq = MatrixR<T>::Zero(n, c.query_heads * d);
      MatrixR<T> dk = MatrixR<T>::Zero(n, c.kv_heads * d);
      MatrixR<T> dv = MatrixR<T>::Zero(n, c.kv_heads * d);
      for (int qh = 0; qh < c.query_heads; ++qh) {
        const int kvh = qh / c.group_size();
        const auto& p = la.probs[static_cast<std::size_t>(qh)];
        const auto dout_h = dout.middleCols(qh * d, d);
        dv.middleCols(kvh * d, d).noalias() += p.transpose() * dout_h;
        const MatrixR<T> dp = dout_h * la.v.middleCols(kvh * d, d).transpose();
        const MatrixR<T> ds = detail::softmax_causal_backward<T>(p, dp, scale);
        dq.middleCols(qh * d, d).noalias() += ds * la.k.middleCols(kvh * d, d);
        dk.middleCols(kvh * d, d).noalias() += ds.transpose() * la.q.middleCols(qh * d, d);
      }
      rope.apply_rows(dq, ud, T(-1));
      rope.apply_rows(dk, ud, T(-1));
      as_matrix(lg.wq).noalias() += la.a.transpose() * dq;
      as_matrix(lg.wk).noalias() += la.a.transpose() * dk;
      as_matrix(lg.wv).noalias() += la.a.transpose() * dv;
      MatrixR<T> da = dq * detail::mat(lw.wq).transpose();
      da.noalias() += dk * detail::mat(lw.wk).transpose();
      da.noalias() += dv * detail::mat(lw.wv).transpose();
      MatrixR<T> dx_in = dx2;
      detail::rmsnorm_rows_backward<T>(la.x, lw.attn_norm.data(), la.inv_attn, da, dx_in, lg.attn_norm.data());
      dx = std::move(dx_in);
    }
    auto emb = as_matrix(g.embedding);
    for (Eigen::Index t = 0; t < n; ++t) emb.row(ex.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
  }
  return total / static_cast<double>(labelled);
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a flat list of parameter buffers.
template <typename T>
class Adam {
 public:
  Adam(std::vector<std::size_t> sizes, AdamHyper hyper) : hyper_(hyper) {
    for (auto s : sizes) {
      m_.emplace_back(s, T(0));
      v_.emplace_back(s, T(0));
    }
  }

  void step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(hyper_.beta1);
    const T b2 = static_cast<T>(hyper_.beta2);
    const T step_size = static_cast<T>(hyper_.lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(hyper_.eps);
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& m = m_[b];
      auto& v = v_[b];
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        const T gi = grads[b][i];
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        params[b][i] -= step_size * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  void set_lr(double lr) { hyper_.lr = lr; }

 private:
  AdamHyper hyper_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t t_ = 0;
};

template <typename T>
std::vector<std::span<T>> parameter_buffers(Weights<T>& w) {
  std::vector<std::span<T>> out;
  w.for_each([&](const std::string&, Tensor<T>& t) { out.push_back(t.values()); });
  return out;
}

struct TeacherHyper {
  std::size_t steps = 6000;
  std::size_t batch = 32;
  AdamHyper adam{};
  double clip_norm = 1.0;  // global gradient-norm clip; 0 disables
  std::size_t warmup = 200;  // linear warmup steps, then cosine decay
  double final_lr_fraction = 0.05;
  std::uint64_t data_seed = 1;
  std::size_t log_every = 0;  // 0 = silent
};

inline double learning_rate(const TeacherHyper& h, std::size_t step) {
  const double peak = h.adam.lr;
  if (step < h.warmup) return peak * static_cast<double>(step + 1) / static_cast<double>(h.warmup);
  const double span = static_cast<double>(std::max<std::size_t>(1, h.steps - std::min(h.steps, h.warmup)));
  const double t = std::min(1.0, static_cast<double>(step - h.warmup) / span);
  const double floor = peak * h.final_lr_fraction;
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct TeacherTrainResult {
  Weights<float> weights;
  std::vector<double> loss_curve;  // one entry per step
};

// Trains the teacher in f32 on batches drawn from `mix`.
inline TeacherTrainResult train_teacher(const ModelConfig& config, const TaskMix& mix, const TeacherHyper& hyper,
                                        const std::function<void(std::size_t, double)>& on_log = {}) {
  TeacherTrainResult result{init_weights<float>(config), {}};
  Weights<float>& w = result.weights;
  Weights<float> grad = Weights<float>::empty_like(config);
  auto params = parameter_buffers(w);
  auto grads = parameter_buffers(grad);
  std::vector<std::size_t> sizes;
  std::vector<std::span<const float>> const_grads;
  for (auto& g : grads) {
    sizes.push_back(g.size());
    const_grads.emplace_back(g.data(), g.size());
  }
  Adam<float> adam(sizes, hyper.adam);
  Rng rng(hyper.data_seed);
  std::vector<TrainingExample> batch(hyper.batch);

  for (std::size_t step = 0; step < hyper.steps; ++step) {
    for (auto& ex : batch) ex = mix.sample(rng);
    for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0f);
    const double loss = teacher_loss<float>(w, batch, &grad);
    if (!std::isfinite(loss))
      throw Error(ErrorKind::training, "teacher loss diverged at step " + std::to_string(step));
    if (hyper.clip_norm > 0) {
      double sq = 0;
      for (auto& g : grads)
        for (float v : g) sq += static_cast<double>(v) * v;
      const double norm = std::sqrt(sq);
      if (norm > hyper.clip_norm) {
        const auto s = static_cast<float>(hyper.clip_norm / norm);
        for (auto& g : grads)
          for (float& v : g) v *= s;
      }
    }
    adam.set_lr(learning_rate(hyper, step));
    adam.step(params, const_grads);
    result.loss_curve.push_back(loss);
    if (on_log && hyper.log_every && (step + 1) % hyper.log_every == 0) on_log(step + 1, loss);
  }
  return result;
}

// Fraction of labelled positions whose argmax matches, under teacher forcing.
template <typename T>
double teacher_forced_accuracy(const Weights<T>& w, std::span<const TrainingExample> examples) {
  std::size_t hit = 0, total = 0;
  for (const auto& ex : examples) {
    const auto trace = forward_full(w, std::span<const Token>(ex.tokens));
    for (std::size_t t = 0; t < ex.labels.size(); ++t) {
      if (ex.labels[t] < 0) continue;
      ++total;
      hit += argmax(trace.logits.row(t)) == ex.labels[t];
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

}  // namespace kvzap
