#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvzap/container.hpp"
#include "kvzap/errors.hpp"
#include "kvzap/kvcache.hpp"
#include "kvzap/model.hpp"
#include "kvzap/vocab.hpp"

namespace kvzap {

// [BOS] <prompt> [REPEAT] <prompt>. At toy scale the "repeat the previous
// context" instruction is the single REPEAT token.
struct ExtendedPrompt {
  std::vector<Token> tokens;
  std::size_t original_begin = 0, original_end = 0;  // [begin, end)
  std::size_t repeat_begin = 0, repeat_end = 0;

  std::size_t prompt_length() const { return original_end - original_begin; }
};

// BOS and REPEAT delimit the extended prompt, so they may not occur inside it.
inline bool is_scoring_marker(Token t) { return t == vocab::kBos || t == vocab::kRepeat; }

inline ExtendedPrompt build_extended_prompt(std::span<const Token> prompt) {
  require(!prompt.empty(), ErrorKind::dimension, "cannot score an empty prompt");
  for (Token t : prompt) {
    require(t >= 0 && t < vocab::kSize, ErrorKind::vocabulary, "token " + std::to_string(t) + " outside vocabulary");
    require(!is_scoring_marker(t), ErrorKind::vocabulary,
            "prompt contains reserved marker token " + std::to_string(t));
  }
  ExtendedPrompt e;
  const std::size_t n = prompt.size();
  e.tokens.reserve(2 * n + 2);
  e.tokens.push_back(vocab::kBos);
  e.tokens.insert(e.tokens.end(), prompt.begin(), prompt.end());
  e.tokens.push_back(vocab::kRepeat);
  e.tokens.insert(e.tokens.end(), prompt.begin(), prompt.end());
  e.original_begin = 1;
  e.original_end = 1 + n;
  e.repeat_begin = n + 2;
  e.repeat_end = 2 * n + 2;
  return e;
}

enum class ScoreKind { kvzip, kvzip_plus, surrogate_log };

inline std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::kvzip: return "kvzip";
    case ScoreKind::kvzip_plus: return "kvzip_plus";
    case ScoreKind::surrogate_log: return "surrogate_log";
  }
  return "?";
}

inline ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "kvzip") return ScoreKind::kvzip;
  if (s == "kvzip_plus") return ScoreKind::kvzip_plus;
  if (s == "surrogate_log") return ScoreKind::surrogate_log;
  throw Error(ErrorKind::config, "unknown score kind '" + s + "'");
}

// Importance score per (layer, kv-head, position). positions[p] is the absolute
// cache position of column p (BOS is position 0).
struct ScoreTensor {
  ScoreKind kind = ScoreKind::kvzip;
  int layers = 0;
  int heads = 0;
  std::vector<Position> positions;
  std::vector<double> values;  // layers x heads x positions

  ScoreTensor() = default;
  ScoreTensor(ScoreKind k, int l, int h, std::vector<Position> pos, double init = 0.0)
      : kind(k), layers(l), heads(h), positions(std::move(pos)),
        values(static_cast<std::size_t>(l * h) * positions.size(), init) {}

  std::size_t width() const { return positions.size(); }
  double& at(int layer, int head, std::size_t p) {
    return values[(static_cast<std::size_t>(layer * heads + head)) * width() + p];
  }
  double at(int layer, int head, std::size_t p) const {
    return values[(static_cast<std::size_t>(layer * heads + head)) * width() + p];
  }
  std::span<const double> head_scores(int layer, int head) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(layer * heads + head) * width(), width());
  }
};

template <typename T>
struct OracleResult {
  ExtendedPrompt prompt;
  ScoreTensor kvzip;
  ScoreTensor kvzip_plus;
  std::vector<Tensor<T>> hidden;  // [L] layer-input hidden states over the extended prompt
};

// One pass over the extended prompt through a fresh cache. Each attention row
// issued from the repeat span is folded into running maxima for both scores,
// so the T x T maps are never stored. The max runs over query heads of the
// kv-head's group, and for KVzip+ over the full normalized term
// a_ji * ||v_i W_O^(q)|| / ||h_j||.
template <typename T>
OracleResult<T> run_kvzip_oracle(const Weights<T>& w, std::span<const Token> prompt) {
  const ModelConfig& c = w.config;
  OracleResult<T> r;
  r.prompt = build_extended_prompt(prompt);
  require(r.prompt.tokens.size() <= static_cast<std::size_t>(c.max_seq_len), ErrorKind::capacity,
          "extended prompt of " + std::to_string(r.prompt.tokens.size()) + " tokens exceeds T_max");

  std::vector<Position> scored(r.prompt.original_end);
  for (std::size_t p = 0; p < scored.size(); ++p) scored[p] = static_cast<Position>(p);
  r.kvzip = ScoreTensor(ScoreKind::kvzip, c.layers, c.kv_heads, scored, 0.0);
  r.kvzip_plus = ScoreTensor(ScoreKind::kvzip_plus, c.layers, c.kv_heads, scored, 0.0);

  const auto d = static_cast<Eigen::Index>(c.head_dim);
  const auto width = static_cast<std::size_t>(r.prompt.original_end);
  // ||v_i W_O^(q)|| per (layer, query head, position), filled on first use.
  std::vector<double> contribution(static_cast<std::size_t>(c.layers * c.query_heads) * width, -1.0);

  const auto repeat_begin = static_cast<Position>(r.prompt.repeat_begin);
  const auto repeat_end = static_cast<Position>(r.prompt.repeat_end);
  AttentionObserver<T> observer = [&](const AttentionRowView<T>& row) {
    if (row.query_position < repeat_begin || row.query_position >= repeat_end) return;
    double hnorm = 0;
    for (T v : row.query_hidden) hnorm += static_cast<double>(v) * static_cast<double>(v);
    hnorm = std::sqrt(hnorm);
    const auto wo = as_matrix(w.layers[static_cast<std::size_t>(row.layer)].wo).middleRows(row.query_head * d, d);
    for (std::size_t i = 0; i < row.key_positions.size(); ++i) {
      const Position p = row.key_positions[i];
      if (p >= static_cast<Position>(width)) break;
      const auto up = static_cast<std::size_t>(p);
      const double a = static_cast<double>(row.weights[i]);
      double& s = r.kvzip.at(row.layer, row.kv_head, up);
      s = std::max(s, a);
      double& norm = contribution[static_cast<std::size_t>(row.layer * c.query_heads + row.query_head) * width + up];
      if (norm < 0) {
        const RowVector<T> out = row.values->row(static_cast<Eigen::Index>(i)) * wo;
        norm = std::sqrt(static_cast<double>(out.squaredNorm()));
      }
      double& sp = r.kvzip_plus.at(row.layer, row.kv_head, up);
      sp = std::max(sp, a * norm / hnorm);
    }
  };

  auto cache = make_cache<T>(c);
  auto pre = prefill(w, std::span<const Token>(r.prompt.tokens), cache, CaptureFlags{.hidden = true}, &observer);
  r.hidden = std::move(pre.trace.hidden);
  return r;
}

template <typename T>
ScoreTensor kvzip_scores(const Weights<T>& w, std::span<const Token> prompt) {
  return run_kvzip_oracle(w, prompt).kvzip;
}

template <typename T>
ScoreTensor kvzip_plus_scores(const Weights<T>& w, std::span<const Token> prompt) {
  return run_kvzip_oracle(w, prompt).kvzip_plus;
}

inline constexpr double kDefaultLogFloor = -20.0;

inline double log_score(double s, double floor = kDefaultLogFloor) {
  return s > 0 ? std::max(std::log(s), floor) : floor;
}

inline ScoreTensor score_to_log(const ScoreTensor& scores, double floor = kDefaultLogFloor) {
  require(std::isfinite(floor) && floor < 0, ErrorKind::config, "log floor must be finite and negative");
  ScoreTensor out = scores;
  out.kind = ScoreKind::surrogate_log;
  for (auto& v : out.values) v = log_score(v, floor);
  return out;
}

// KVZS container: header {"kind", "L", "H", "positions"}, one L x H x P tensor.
inline Container scores_container(const ScoreTensor& s, const nlohmann::json& extra = {}) {
  Container c;
  c.magic = std::string(magic::kScores);
  c.header = extra.is_object() ? extra : nlohmann::json::object();
  c.header["kind"] = to_string(s.kind);
  c.header["L"] = s.layers;
  c.header["H"] = s.heads;
  c.header["positions"] = s.positions;
  std::vector<float> data(s.values.begin(), s.values.end());
  c.tensors.emplace_back(std::vector<std::size_t>{static_cast<std::size_t>(s.layers),
                                                  static_cast<std::size_t>(s.heads), s.width()},
                         std::move(data));
  return c;
}

inline ScoreTensor scores_from_container(const Container& c) {
  require(c.tensors.size() == 1, ErrorKind::validation, "score container must hold one tensor");
  ScoreTensor s(score_kind_from_string(c.header.at("kind").get<std::string>()), c.header.at("L").get<int>(),
                c.header.at("H").get<int>(), c.header.at("positions").get<std::vector<Position>>());
  const auto& t = c.tensors[0];
  require(t.size() == s.values.size(), ErrorKind::validation, "score tensor size does not match header");
  for (std::size_t i = 0; i < t.size(); ++i) s.values[i] = t[i];
  return s;
}

inline void write_scores_csv(std::ostream& out, const ScoreTensor& s) {
  out << "layer,head,position,score\n";
  out.precision(17);
  for (int l = 0; l < s.layers; ++l)
    for (int h = 0; h < s.heads; ++h)
      for (std::size_t p = 0; p < s.width(); ++p)
        out << l << ',' << h << ',' << s.positions[p] << ',' << s.at(l, h, p) << '\n';
}

}  // namespace kvzap
