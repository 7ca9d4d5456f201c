#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kvzap/errors.hpp"
#include "kvzap/kvcache.hpp"
#include "kvzap/model.hpp"
#include "kvzap/parallel.hpp"
#include "kvzap/policies.hpp"
#include "kvzap/rng.hpp"
#include "kvzap/scoring.hpp"
#include "kvzap/tasks.hpp"

namespace kvzap {

struct TaskSetSpec {
  TaskKind kind = TaskKind::copy;
  std::uint64_t seed = 0;
  std::size_t count = 20;
  std::size_t size = 48;  // data length for copy, number of pairs for kv_lookup
  std::size_t repeat_block = 0;  // copy only: > 0 makes the data a repeated block
};

inline std::vector<Task> make_tasks(const TaskSetSpec& spec, std::size_t max_seq_len = kDefaultMaxSeqLen) {
  std::vector<Task> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::uint64_t s = mix_seed(spec.seed, i);
    if (spec.kind == TaskKind::kv_lookup)
      out.push_back(gen_kv_lookup_task(s, spec.size));
    else if (spec.repeat_block > 0)
      out.push_back(gen_repetitive_copy_task(s, spec.size, spec.repeat_block, max_seq_len));
    else
      out.push_back(gen_copy_task(s, spec.size, max_seq_len));
  }
  return out;
}

struct TaskRecord {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double removed_fraction = 0.0;
  double compression_factor = 1.0;
  std::size_t live_bytes = 0;
  std::size_t resident_bytes = 0;
  bool truncated = false;
  std::vector<Token> produced;
  std::vector<double> head_removed_fraction;  // layer * H + head
};

struct EvalResult {
  nlohmann::json policy;
  TaskKind task_kind = TaskKind::copy;
  std::size_t n_tasks = 0;
  double accuracy = 0.0;
  double removed_fraction_mean = 0.0;
  double removed_fraction_std = 0.0;
  double live_bytes_mean = 0.0;
  double resident_bytes_mean = 0.0;
  std::vector<TaskRecord> records;

  double compression_factor() const { return compression_factor_of(removed_fraction_mean); }
};

struct EvalOptions {
  std::size_t workers = 1;
};

namespace detail {

inline double score_task(const Task& t, std::span<const Token> produced) {
  if (t.metric == Metric::exact_match)
    return produced.size() == t.target.size() && std::equal(produced.begin(), produced.end(), t.target.begin()) ? 1.0
                                                                                                               : 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < std::min(produced.size(), t.target.size()); ++i) hit += produced[i] == t.target[i];
  return static_cast<double>(hit) / static_cast<double>(t.target.size());
}

// Context scored by the oracle: the tokens after BOS up to the first scoring
// marker (the trailing REPEAT of a copy prompt). Later positions get no score
// and are therefore kept.
inline std::span<const Token> oracle_context(std::span<const Token> prompt) {
  std::size_t end = 1;
  while (end < prompt.size() && !is_scoring_marker(prompt[end])) ++end;
  return prompt.subspan(1, end - 1);
}

}  // namespace detail

// One task end to end: prefill, prefill_compress, greedy decode with
// decode_update after every step, score against the target.
template <typename T>
TaskRecord run_task(const Weights<T>& w, const Policy& policy, const Task& task) {
  const ModelConfig& c = w.config;
  require(!task.prompt.empty() && task.prompt.front() == vocab::kBos, ErrorKind::validation,
          "task prompts start with BOS");
  auto cache = make_cache<T>(c);
  const std::span<const Token> prompt(task.prompt);
  auto pre = prefill(w, prompt, cache, CaptureFlags{.hidden = true});

  std::optional<ScoreTensor> oracle;
  if (policy.kind == PolicyKind::kvzip_budget) {
    const auto ctx = detail::oracle_context(prompt);
    if (!ctx.empty()) {
      auto r = run_kvzip_oracle(w, ctx);
      oracle = policy.scorer == ScoreKind::kvzip ? std::move(r.kvzip) : std::move(r.kvzip_plus);
    }
  }
  if (policy.kind != PolicyKind::kvzip_budget || oracle)
    prefill_compress(policy, cache, pre.trace, prompt.size(), oracle ? &*oracle : nullptr);
  auto buffer = init_decode_buffer(policy, c.layers, c.kv_heads, pre.trace, prompt.size());

  TaskRecord rec;
  rec.seed = task.seed;
  Token tok = argmax(pre.logits.row(pre.logits.rows() - 1));
  rec.produced.push_back(tok);
  while (rec.produced.size() < task.target.size()) {
    if (cache.next_position() >= c.max_seq_len) {
      rec.truncated = true;
      break;
    }
    auto step = decode_step(w, tok, cache);
    if (policy.dynamic())
      apply_evictions(cache, decode_update<T>(policy, buffer, step.position, std::span<const Tensor<T>>(step.hidden)));
    tok = argmax(step.logits.values());
    rec.produced.push_back(tok);
  }
  rec.accuracy = detail::score_task(task, rec.produced);
  const CacheStats stats = compression_report(cache);
  rec.removed_fraction = stats.removed_fraction();
  rec.compression_factor = stats.compression_factor();
  rec.live_bytes = stats.live_bytes;
  rec.resident_bytes = stats.resident_bytes;
  for (const auto& h : stats.heads)
    rec.head_removed_fraction.push_back(static_cast<double>(h.evicted) / static_cast<double>(h.appended));
  return rec;
}

// Tasks run on a worker pool; the fold over records is in task order.
template <typename T>
EvalResult evaluate(const Weights<T>& w, const Policy& policy, std::span<const Task> tasks, const EvalOptions& opt = {}) {
  require(!tasks.empty(), ErrorKind::config, "evaluate needs at least one task");
  policy.check_against(w.config);
  EvalResult r;
  r.policy = policy_to_json(policy);
  r.task_kind = tasks.front().kind;
  r.n_tasks = tasks.size();
  r.records.resize(tasks.size());
  parallel_for(tasks.size(), opt.workers, [&](std::size_t i) { r.records[i] = run_task(w, policy, tasks[i]); });

  const double n = static_cast<double>(tasks.size());
  for (const auto& rec : r.records) {
    r.accuracy += rec.accuracy / n;
    r.removed_fraction_mean += rec.removed_fraction / n;
    r.live_bytes_mean += static_cast<double>(rec.live_bytes) / n;
    r.resident_bytes_mean += static_cast<double>(rec.resident_bytes) / n;
  }
  double var = 0;
  for (const auto& rec : r.records) var += std::pow(rec.removed_fraction - r.removed_fraction_mean, 2) / n;
  r.removed_fraction_std = std::sqrt(var);
  return r;
}

struct SweepRow {
  std::string policy;
  std::string param_name;
  double param_value = 0.0;
  std::uint64_t seed = 0;
  EvalResult result;
};

// One evaluation per grid point, sorted by removed fraction (stable, so equal
// fractions keep grid order).
template <typename T>
std::vector<SweepRow> sweep(const Weights<T>& w, std::span<const Policy> grid, std::span<const Task> tasks,
                            std::uint64_t task_seed = 0, const EvalOptions& opt = {}) {
  require(!grid.empty(), ErrorKind::config, "sweep grid is empty");
  std::vector<SweepRow> rows;
  for (const auto& p : grid) {
    const auto [name, value] = p.parameter();
    rows.push_back({to_string(p.kind), name, value, task_seed, evaluate(w, p, tasks, opt)});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.result.removed_fraction_mean < b.result.removed_fraction_mean;
  });
  return rows;
}

inline void write_curve_header(std::ostream& out) {
  out << "task_kind,policy,param_name,param_value,seed,accuracy,removed_fraction,compression_factor,live_bytes,"
         "resident_bytes\n";
}

inline void write_curve_row(std::ostream& out, const SweepRow& r) {
  const auto old = out.precision(10);
  const double f = r.result.compression_factor();
  out << to_string(r.result.task_kind) << ',' << r.policy << ',' << r.param_name << ',' << r.param_value << ','
      << r.seed << ',' << r.result.accuracy << ',' << r.result.removed_fraction_mean << ',';
  if (std::isfinite(f))
    out << f;
  else
    out << "inf";
  out << ',' << r.result.live_bytes_mean << ',' << r.result.resident_bytes_mean << '\n';
  out.precision(old);
}

inline void write_curve_csv(std::ostream& out, std::span<const SweepRow> rows) {
  write_curve_header(out);
  for (const auto& r : rows) write_curve_row(out, r);
}

inline nlohmann::json eval_result_json(const EvalResult& r) {
  nlohmann::json j{{"policy", r.policy},
                   {"task_kind", to_string(r.task_kind)},
                   {"n_tasks", r.n_tasks},
                   {"accuracy", r.accuracy},
                   {"removed_fraction_mean", r.removed_fraction_mean},
                   {"removed_fraction_std", r.removed_fraction_std},
                   {"live_bytes_mean", r.live_bytes_mean},
                   {"resident_bytes_mean", r.resident_bytes_mean}};
  const double f = r.compression_factor();
  j["compression_factor"] = std::isfinite(f) ? nlohmann::json(f) : nlohmann::json(nullptr);
  j["records"] = nlohmann::json::array();
  for (const auto& rec : r.records)
    j["records"].push_back({{"seed", rec.seed},
                            {"accuracy", rec.accuracy},
                            {"removed_fraction", rec.removed_fraction},
                            {"live_bytes", rec.live_bytes},
                            {"resident_bytes", rec.resident_bytes},
                            {"truncated", rec.truncated}});
  return j;
}

// A curve as (removed fraction, accuracy) points, read off a sweep.
struct CurvePoint {
  double removed_fraction;
  double accuracy;
};

inline std::vector<CurvePoint> curve_of(std::span<const SweepRow> rows) {
  std::vector<CurvePoint> out;
  for (const auto& r : rows) out.push_back({r.result.removed_fraction_mean, r.result.accuracy});
  std::stable_sort(out.begin(), out.end(),
                   [](const CurvePoint& a, const CurvePoint& b) { return a.removed_fraction < b.removed_fraction; });
  return out;
}

// Linear interpolation of accuracy at a removed fraction; nullopt outside the
// covered range.
inline std::optional<double> accuracy_at(std::span<const CurvePoint> curve, double fraction) {
  if (curve.empty() || fraction < curve.front().removed_fraction || fraction > curve.back().removed_fraction)
    return std::nullopt;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (fraction > b.removed_fraction) continue;
    if (b.removed_fraction == a.removed_fraction) return std::max(a.accuracy, b.accuracy);
    const double t = (fraction - a.removed_fraction) / (b.removed_fraction - a.removed_fraction);
    return a.accuracy + t * (b.accuracy - a.accuracy);
  }
  return curve.back().accuracy;
}

}  // namespace kvzap
