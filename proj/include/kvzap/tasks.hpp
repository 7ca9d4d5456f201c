#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "kvzap/errors.hpp"
#include "kvzap/rng.hpp"
#include "kvzap/vocab.hpp"

namespace kvzap {

enum class TaskKind { copy, kv_lookup };
enum class Metric { token_accuracy, exact_match };

inline std::string to_string(TaskKind k) { return k == TaskKind::copy ? "copy" : "kv_lookup"; }

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy") return TaskKind::copy;
  if (s == "kv_lookup") return TaskKind::kv_lookup;
  throw Error(ErrorKind::config, "unknown task kind '" + s + "'");
}

struct Task {
  TaskKind kind = TaskKind::copy;
  std::vector<Token> prompt;
  std::vector<Token> target;
  Metric metric = Metric::token_accuracy;
  std::uint64_t seed = 0;
};

// Data tokens without repetition while the alphabet lasts; longer prompts
// continue with fresh permutations.
inline std::vector<Token> distinct_data_tokens(Rng& rng, std::size_t n) {
  std::vector<Token> out;
  out.reserve(n);
  std::vector<Token> perm(vocab::kDataAlphabet);
  while (out.size() < n) {
    std::iota(perm.begin(), perm.end(), Token{0});
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t i = 0; i < perm.size() && out.size() < n; ++i) out.push_back(perm[i]);
  }
  return out;
}

// A short block of distinct data tokens repeated until n tokens are filled.
inline std::vector<Token> repetitive_data_tokens(Rng& rng, std::size_t n, std::size_t block) {
  require(block > 0, ErrorKind::config, "block length must be positive");
  const auto unit = distinct_data_tokens(rng, block);
  std::vector<Token> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = unit[i % block];
  return out;
}

inline constexpr std::size_t kDefaultMaxSeqLen = 512;

// [BOS] d1..dn [REPEAT], target d1..dn.
inline Task gen_copy_task(std::uint64_t seed, std::size_t data_len, std::size_t max_seq_len = kDefaultMaxSeqLen) {
  require(data_len >= 1, ErrorKind::config, "copy task needs at least one data token");
  require(data_len <= (max_seq_len - 2) / 2, ErrorKind::capacity,
          "copy task of " + std::to_string(data_len) + " tokens does not fit T_max");
  Rng rng(mix_seed(seed, 0xC0B1));
  Task t;
  t.kind = TaskKind::copy;
  t.metric = Metric::token_accuracy;
  t.seed = seed;
  t.target = distinct_data_tokens(rng, data_len);
  t.prompt.push_back(vocab::kBos);
  t.prompt.insert(t.prompt.end(), t.target.begin(), t.target.end());
  t.prompt.push_back(vocab::kRepeat);
  return t;
}

// Copy task whose data is a repeated block (the compressible counterpart).
inline Task gen_repetitive_copy_task(std::uint64_t seed, std::size_t data_len, std::size_t block,
                                     std::size_t max_seq_len = kDefaultMaxSeqLen) {
  Task t = gen_copy_task(seed, data_len, max_seq_len);
  Rng rng(mix_seed(seed, 0x2E9E));
  t.target = repetitive_data_tokens(rng, data_len, block);
  std::copy(t.target.begin(), t.target.end(), t.prompt.begin() + 1);
  return t;
}

// [BOS] k1 v1 .. kn vn [Q] kj [A], target vj. Keys are distinct.
inline Task gen_kv_lookup_task(std::uint64_t seed, std::size_t n_pairs,
                               std::size_t max_seq_len = kDefaultMaxSeqLen) {
  require(n_pairs >= 1 && n_pairs <= static_cast<std::size_t>(vocab::kDataAlphabet), ErrorKind::config,
          "kv_lookup needs between 1 and 58 pairs");
  require(4 * n_pairs + 4 <= max_seq_len, ErrorKind::capacity, "kv_lookup task does not fit T_max");
  Rng rng(mix_seed(seed, 0x4B56));
  const auto keys = distinct_data_tokens(rng, n_pairs);
  Task t;
  t.kind = TaskKind::kv_lookup;
  t.metric = Metric::exact_match;
  t.seed = seed;
  t.prompt.push_back(vocab::kBos);
  std::vector<Token> values(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    values[i] = static_cast<Token>(rng.below(vocab::kDataAlphabet));
    t.prompt.push_back(keys[i]);
    t.prompt.push_back(values[i]);
  }
  const std::size_t j = rng.below(n_pairs);
  t.prompt.push_back(vocab::kQuery);
  t.prompt.push_back(keys[j]);
  t.prompt.push_back(vocab::kAnswer);
  t.target = {values[j]};
  return t;
}

// A teacher-forcing example: labels[t] is the token to predict at position t,
// or -1 where no loss is taken.
struct TrainingExample {
  std::vector<Token> tokens;
  std::vector<Token> labels;
};

inline TrainingExample to_training_example(const Task& task) {
  TrainingExample ex;
  ex.tokens = task.prompt;
  ex.tokens.insert(ex.tokens.end(), task.target.begin(), task.target.end());
  ex.labels.assign(ex.tokens.size(), -1);
  for (std::size_t t = task.prompt.size() - 1; t + 1 < ex.tokens.size(); ++t) ex.labels[t] = ex.tokens[t + 1];
  return ex;
}

// Mixture of synthetic tasks the teacher is trained on.
struct TaskMix {
  double copy_weight = 0.6;
  double kv_lookup_weight = 0.3;
  double padded_copy_weight = 0.1;  // copy whose data ends in a run of PAD tokens
  std::size_t copy_min_len = 4;
  std::size_t copy_max_len = 64;
  std::size_t kv_min_pairs = 2;
  std::size_t kv_max_pairs = 24;
  std::size_t pad_max_run = 8;

  TrainingExample sample(Rng& rng) const {
    const double total = copy_weight + kv_lookup_weight + padded_copy_weight;
    const double u = rng.uniform() * total;
    const std::uint64_t seed = rng.next_u64();
    if (u < copy_weight) {
      const std::size_t n = copy_min_len + rng.below(copy_max_len - copy_min_len + 1);
      return to_training_example(gen_copy_task(seed, n));
    }
    if (u < copy_weight + kv_lookup_weight) {
      const std::size_t n = kv_min_pairs + rng.below(kv_max_pairs - kv_min_pairs + 1);
      return to_training_example(gen_kv_lookup_task(seed, n));
    }
    const std::size_t run = 1 + rng.below(pad_max_run);
    const std::size_t n = copy_min_len + rng.below(copy_max_len - copy_min_len + 1);
    return padded_copy_example(seed, n, run);
  }

  // Training-only variant: PAD is reserved, so this never becomes an eval Task.
  static TrainingExample padded_copy_example(std::uint64_t seed, std::size_t data_len, std::size_t pad_run) {
    Task t = gen_copy_task(seed, data_len + pad_run);
    for (std::size_t i = data_len; i < data_len + pad_run; ++i) {
      t.target[i] = vocab::kPad;
      t.prompt[i + 1] = vocab::kPad;
    }
    return to_training_example(t);
  }
};

}  // namespace kvzap
