#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace kvzap;

TEST(Tasks, CopyLayoutAndDeterminism) {
  const auto t = gen_copy_task(4, 10);
  EXPECT_EQ(t.prompt.size(), 12u);
  EXPECT_EQ(t.prompt.front(), vocab::kBos);
  EXPECT_EQ(t.prompt.back(), vocab::kRepeat);
  EXPECT_TRUE(std::equal(t.target.begin(), t.target.end(), t.prompt.begin() + 1));
  for (Token x : t.target) EXPECT_TRUE(vocab::is_data(x));
  EXPECT_EQ(gen_copy_task(4, 10).prompt, t.prompt);
  EXPECT_NE(gen_copy_task(5, 10).prompt, t.prompt);
  EXPECT_THROW(gen_copy_task(1, 256), Error);
  EXPECT_NO_THROW(gen_copy_task(1, 255));
}

TEST(Tasks, RepetitiveCopyRepeatsABlock) {
  const auto t = gen_repetitive_copy_task(3, 20, 4);
  for (std::size_t i = 4; i < 20; ++i) EXPECT_EQ(t.target[i], t.target[i - 4]);
  EXPECT_TRUE(std::equal(t.target.begin(), t.target.end(), t.prompt.begin() + 1));
}

TEST(Tasks, KvLookupLayout) {
  const auto one = gen_kv_lookup_task(1, 1);
  EXPECT_EQ(one.prompt.size(), 6u);
  EXPECT_EQ(one.target[0], one.prompt[2]);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto t = gen_kv_lookup_task(s, 10);
    EXPECT_EQ(t.prompt.size(), 2u * 10 + 4);
    EXPECT_EQ(t.prompt[t.prompt.size() - 3], vocab::kQuery);
    EXPECT_EQ(t.prompt.back(), vocab::kAnswer);
    const Token key = t.prompt[t.prompt.size() - 2];
    int seen = 0;
    for (std::size_t i = 1; i + 3 < t.prompt.size(); i += 2)
      if (t.prompt[i] == key) {
        ++seen;
        EXPECT_EQ(t.prompt[i + 1], t.target[0]);
      }
    EXPECT_EQ(seen, 1);
    EXPECT_EQ(t.metric, Metric::exact_match);
  }
  EXPECT_THROW(gen_kv_lookup_task(1, 59), Error);
}

TEST(Evaluate, UntrainedTeacherIsNearChance) {
  ModelConfig c;
  c.seed = 11;
  const auto w = init_weights<float>(c);
  std::vector<Task> tasks;
  for (std::uint64_t s = 0; s < 100; ++s) tasks.push_back(gen_copy_task(s, 16));
  const auto r = evaluate(w, Policy::full(), std::span<const Task>(tasks));
  EXPECT_NEAR(r.accuracy, 1.0 / 58.0, 0.02);
  EXPECT_EQ(r.removed_fraction_mean, 0.0);
}

TEST(Evaluate, FullPolicyEqualsPlainGreedyDecode) {
  const auto w = fixtures::random_weights(3, 0.3).cast<float>();
  const auto tasks = make_tasks({TaskKind::copy, 1, 4, 12});
  const auto r = evaluate(w, Policy::full(), std::span<const Task>(tasks));
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto cache = make_cache<float>(w.config);
    auto pre = prefill(w, std::span<const Token>(tasks[i].prompt), cache);
    std::vector<Token> out{argmax(pre.logits.row(pre.logits.rows() - 1))};
    while (out.size() < tasks[i].target.size()) out.push_back(argmax(decode_step(w, out.back(), cache).logits.values()));
    EXPECT_EQ(r.records[i].produced, out);
  }
}

TEST(Evaluate, DeterministicAcrossWorkerCounts) {
  const auto w = fixtures::random_weights(3, 0.3).cast<float>();
  const auto tasks = make_tasks({TaskKind::copy, 2, 6, 20});
  const auto a = evaluate(w, Policy::random(0.5, 3, 4), std::span<const Task>(tasks), {1});
  const auto b = evaluate(w, Policy::random(0.5, 3, 4), std::span<const Task>(tasks), {3});
  EXPECT_EQ(eval_result_json(a), eval_result_json(b));
  EXPECT_GT(a.removed_fraction_mean, 0.2);
}

TEST(Evaluate, KvzipBudgetAndKvLookupRun) {
  const auto w = fixtures::random_weights(5, 0.3).cast<float>();
  const auto tasks = make_tasks({TaskKind::kv_lookup, 3, 3, 6});
  const auto r = evaluate(w, Policy::kvzip_budget(0.5), std::span<const Task>(tasks));
  EXPECT_GT(r.removed_fraction_mean, 0.0);
  EXPECT_EQ(r.task_kind, TaskKind::kv_lookup);
  for (const auto& rec : r.records) EXPECT_EQ(rec.produced.size(), 1u);
}

TEST(Evaluate, TruncationAtMaxLength) {
  ModelConfig c;
  c.max_seq_len = 20;
  c.seed = 1;
  const auto w = init_weights<float>(c);
  const std::vector<Task> tasks{gen_copy_task(1, 9, 20)};
  auto t = tasks;
  t[0].target.resize(15, 0);
  const auto r = evaluate(w, Policy::full(), std::span<const Task>(t));
  EXPECT_TRUE(r.records[0].truncated);
  EXPECT_EQ(r.records[0].produced.size(), 10u);
}

TEST(Sweep, SortedByRemovedFractionAndSingletonMatchesEvaluate) {
  const auto w = fixtures::random_weights(6, 0.3).cast<float>();
  const auto tasks = make_tasks({TaskKind::copy, 4, 3, 16});
  std::vector<Policy> grid{Policy::window_only(12), Policy::window_only(2), Policy::window_only(6)};
  const auto rows = sweep(w, std::span<const Policy>(grid), std::span<const Task>(tasks));
  for (std::size_t i = 1; i < rows.size(); ++i)
    EXPECT_LE(rows[i - 1].result.removed_fraction_mean, rows[i].result.removed_fraction_mean);
  EXPECT_EQ(rows.front().param_value, 12.0);
  const std::vector<Policy> one{Policy::window_only(6)};
  const auto single = sweep(w, std::span<const Policy>(one), std::span<const Task>(tasks));
  EXPECT_EQ(eval_result_json(single[0].result),
            eval_result_json(evaluate(w, Policy::window_only(6), std::span<const Task>(tasks))));
  EXPECT_THROW(sweep(w, std::span<const Policy>(), std::span<const Task>(tasks)), Error);

  std::ostringstream csv;
  write_curve_csv(csv, rows);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')),
            "task_kind,policy,param_name,param_value,seed,accuracy,removed_fraction,compression_factor,live_bytes,"
            "resident_bytes");
  EXPECT_EQ(std::ranges::count(csv.str(), '\n'), 4);
}

TEST(Curve, Interpolation) {
  const std::vector<CurvePoint> c{{0.1, 1.0}, {0.3, 0.5}, {0.5, 0.0}};
  EXPECT_DOUBLE_EQ(*accuracy_at(c, 0.2), 0.75);
  EXPECT_DOUBLE_EQ(*accuracy_at(c, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(*accuracy_at(c, 0.1), 1.0);
  EXPECT_FALSE(accuracy_at(c, 0.6));
  EXPECT_FALSE(accuracy_at(c, 0.05));
}

TEST(Parallel, LowestIndexExceptionIsRethrown) {
  std::vector<int> hit(20, 0);
  parallel_for(20, 4, [&](std::size_t i) { hit[i] = 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 20);
  try {
    parallel_for(20, 4, [&](std::size_t i) {
      if (i == 7 || i == 13) throw Error(ErrorKind::io, std::to_string(i));
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}
