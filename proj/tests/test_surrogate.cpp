#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace kvzap;

using fixtures::synthetic;

TEST(Pearson, FourPointExample) {
  const std::vector<double> p{1, 2, 3, 4}, t{1, 3, 2, 4};
  // r = 0.8
  EXPECT_NEAR(pearson_r2(p, t), 0.64, 1e-12);
  EXPECT_NEAR(pearson_r2(t, t), 1.0, 1e-12);
  const std::vector<double> neg{4, 3, 2, 1};
  EXPECT_NEAR(pearson_r2(neg, p), 1.0, 1e-12);
}

TEST(Pearson, NearlyRightPrediction) {
  const std::vector<double> t{0, 1, 2, 3}, p{0, 1, 1, 3};
  // centered sums: cov 4.5, var_p 4.75, var_t 5, so r^2 = 20.25 / 23.75
  EXPECT_NEAR(pearson_r2(p, t), 81.0 / 95.0, 1e-12);
}

TEST(Pearson, AffineInvariant) {
  const std::vector<double> t{0.3, -1.2, 2.0, 0.7, 5.5};
  std::vector<double> p;
  for (double v : t) p.push_back(2 * v + 3);
  EXPECT_NEAR(pearson_r2(p, t), 1.0, 1e-12);
}

TEST(Pearson, DegenerateSeries) {
  const std::vector<double> c{2, 2, 2, 2}, t{1, 3, 2, 4};
  EXPECT_EQ(pearson_r2(c, t), 0.0);
  try {
    pearson_r2(t, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::undefined);
  }
  EXPECT_THROW(pearson_r2(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST(Surrogate, LinearRecoversAKnownLinearMap) {
  Rng rng(1);
  MatrixR<double> a(16, 2);
  for (auto& v : a.reshaped()) v = rng.normal();
  const auto d = synthetic(50, 20, 16, 2, 2, [&](const RowVector<double>& x) {
    RowVector<double> y = x * a;
    y.array() += 0.5;
    return y;
  });
  const auto s = train_linear(d);
  const auto r = evaluate_r2(s, d);
  EXPECT_GE(r.mean, 0.999);
  EXPECT_NEAR(s.layers[0].b1[0], 0.5, 1e-2);
  EXPECT_TRUE((s.layers[0].w1 - a).cwiseAbs().maxCoeff() < 1e-2);
}

TEST(Surrogate, MlpBeatsLinearOnGeluTarget) {
  const auto d = fixtures::synthetic_gelu(3);
  const double rm = evaluate_r2(train_mlp(d, fixtures::gelu_mlp_hyper()), d).mean;
  const double rl = evaluate_r2(train_linear(d), d).mean;
  EXPECT_GE(rm, 0.9);
  EXPECT_GT(rm, rl);
}

TEST(Surrogate, RidgeOnDuplicateColumnsStillSolves) {
  const auto d = synthetic(10, 10, 4, 1, 6, [](const RowVector<double>& x) {
    RowVector<double> y(1);
    y[0] = x[0];
    return y;
  });
  auto dd = d;
  dd.x[0].col(1) = dd.x[0].col(0);
  EXPECT_NO_THROW(train_linear(dd, 1e-3));
  dd.x[0].setZero();
  EXPECT_THROW(fit_ridge(dd.x[0], dd.y[0], 0.0), Error);
}

TEST(Surrogate, ValidationSplitIsTrailingPrompts) {
  EXPECT_EQ(validation_flags(5, 0.2), (std::vector<std::uint8_t>{0, 0, 0, 0, 1}));
  EXPECT_EQ(validation_flags(3, 0.0), (std::vector<std::uint8_t>{0, 0, 0}));
  EXPECT_THROW(validation_flags(3, 1.0), Error);
}

TEST(Surrogate, PredictMatchesBatchAndValidates) {
  const auto d = synthetic(10, 10, 8, 2, 7, [](const RowVector<double>& x) {
    RowVector<double> y(2);
    y << x[0] - 1, x[1] * 2;
    return y;
  });
  const auto s = train_linear(d);
  std::vector<float> h(8, 0.25f);
  const auto one = predict<float>(s, h, 0);
  RowVector<double> x = RowVector<double>::Constant(8, 0.25);
  const auto batch = predict_batch(s, x, 0);
  EXPECT_NEAR(one[1], batch(0, 1), 1e-12);
  EXPECT_THROW(predict<float>(s, std::vector<float>(7), 0), Error);
  EXPECT_THROW(predict<float>(s, h, 1), Error);
  auto bad = s;
  bad.layers[0].w1(0, 0) = std::nan("");
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Surrogate, PredictMatchesNaiveMatmul) {
  const auto s = fixtures::random_linear(4, 16, 2, 2);
  Rng rng(8);
  std::vector<double> h(16);
  for (auto& v : h) v = rng.normal();
  for (int l = 0; l < 2; ++l) {
    const auto& p = s->layers[static_cast<std::size_t>(l)];
    const auto y = predict<double>(*s, h, l);
    for (Eigen::Index j = 0; j < p.w1.cols(); ++j) {
      double ref = p.b1[j];
      for (Eigen::Index k = 0; k < 16; ++k) ref += h[static_cast<std::size_t>(k)] * p.w1(k, j);
      EXPECT_NEAR(y[static_cast<std::size_t>(j)], ref, 1e-12);
    }
  }
}

TEST(Surrogate, PureNoiseTargetsGiveNoSignal) {
  const auto d = synthetic(100, 100, 64, 1, 21, [](const RowVector<double>&) {
    static Rng noise(99);
    RowVector<double> y(1);
    y << noise.normal();
    return y;
  });
  const auto r = evaluate_r2(train_linear(d), d);
  EXPECT_LT(std::abs(r.mean), 0.05);
}

TEST(Surrogate, ContainerRoundTripKeepsPairPrecision) {
  Rng rng(8);
  const auto d = synthetic(10, 10, 8, 2, 9, [&](const RowVector<double>& x) {
    RowVector<double> y(2);
    y << std::sin(x[0]), x[1] * x[2];
    return y;
  });
  MlpHyper h;
  h.max_epochs = 3;
  for (const auto& s : {train_linear(d), train_mlp(d, h)}) {
    auto trip = [](const Surrogate& x) {
      return surrogate_from_container(decode_container(encode_container(surrogate_container(x)), magic::kSurrogate));
    };
    const auto back = trip(s);
    for (int l = 0; l < s.num_layers(); ++l) {
      const auto& a = s.layers[static_cast<std::size_t>(l)];
      const auto& b = back.layers[static_cast<std::size_t>(l)];
      EXPECT_LE((a.w1 - b.w1).cwiseAbs().maxCoeff(), 1e-13 * (1 + a.w1.cwiseAbs().maxCoeff()));
      EXPECT_LE((a.b1 - b.b1).cwiseAbs().maxCoeff(), 1e-13 * (1 + a.b1.cwiseAbs().maxCoeff()));
      const auto pa = predict_batch(s, d.x[static_cast<std::size_t>(l)], l);
      const auto pb = predict_batch(back, d.x[static_cast<std::size_t>(l)], l);
      EXPECT_LT((pa - pb).cwiseAbs().maxCoeff(), 1e-12);
    }
    // Values already on the hi/lo grid survive unchanged.
    EXPECT_TRUE(trip(back) == back);
  }
  const auto dback = dataset_from_container(decode_container(encode_container(dataset_container(d)), magic::kDataset));
  EXPECT_EQ(dback.rows(), d.rows());
  EXPECT_EQ(dback.prompt_validation, d.prompt_validation);
  EXPECT_LT((dback.x[0] - d.x[0]).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Dataset, GeneratedFromTeacher) {
  auto w = fixtures::random_weights(2, 0.3);
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  DatasetSpec spec;
  spec.tokens_per_prompt = 12;
  spec.positions_per_prompt = 5;
  const auto d = generate_dataset(w, std::span<const std::uint64_t>(seeds), spec);
  EXPECT_EQ(d.rows(), 25u);
  EXPECT_EQ(d.row_indices(true).size(), 5u);
  for (std::size_t r = 0; r < d.rows(); ++r) {
    EXPECT_GE(d.row_position[r], 1);
    EXPECT_LE(d.row_position[r], 12);
  }
  // Targets equal the log KVzip+ score of the sampled position.
  const auto prompt = dataset_prompt(seeds[0], 12);
  const auto oracle = run_kvzip_oracle(w, std::span<const Token>(prompt));
  for (std::size_t r = 0; r < 5; ++r) {
    const auto p = static_cast<std::size_t>(d.row_position[r]);
    for (int l = 0; l < 2; ++l)
      for (int g = 0; g < 2; ++g)
        EXPECT_NEAR(d.y[static_cast<std::size_t>(l)](static_cast<Eigen::Index>(r), g),
                    log_score(oracle.kvzip_plus.at(l, g, p)), 1e-12);
    EXPECT_NEAR(d.x[1](static_cast<Eigen::Index>(r), 3), oracle.hidden[1](p, 3), 1e-12);
  }
  spec.positions_per_prompt = 13;
  try {
    generate_dataset(w, std::span<const std::uint64_t>(seeds), spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::sampling);
  }
  spec.positions_per_prompt = 5;
  spec.workers = 3;
  EXPECT_TRUE(generate_dataset(w, std::span<const std::uint64_t>(seeds), spec) == d);
}

TEST(Dataset, PromptStylesAreMixed) {
  int counts[3] = {0, 0, 0};
  for (std::uint64_t s = 0; s < 400; ++s) ++counts[static_cast<int>(dataset_prompt_style(s))];
  EXPECT_NEAR(counts[0] / 400.0, 0.5, 0.08);
  EXPECT_NEAR(counts[1] / 400.0, 0.25, 0.08);
  EXPECT_NEAR(counts[2] / 400.0, 0.25, 0.08);
  for (std::uint64_t s = 0; s < 50; ++s)
    for (Token t : dataset_prompt(s, 30)) EXPECT_TRUE(vocab::is_data(t) || t == vocab::kPad);
}

TEST(R2Report, CsvHasOneRowPerHead) {
  const auto d = synthetic(10, 10, 4, 2, 11, [](const RowVector<double>& x) {
    RowVector<double> y(2);
    y << x[0], x[1];
    return y;
  });
  std::ostringstream out;
  write_r2_csv(out, evaluate_r2(train_linear(d), d));
  EXPECT_NE(out.str().find("layer,head"), std::string::npos);
}
