#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "kvzap/overhead.hpp"
#include "kvzap/rng.hpp"

using namespace kvzap;

TEST(Overhead, PublishedRows) {
  for (const auto& row : paper_rows()) {
    const auto r = overhead_report(row.spec);
    EXPECT_EQ(percent_2dp(r.ratio_mlp), row.mlp_percent) << row.spec.name;
    EXPECT_EQ(percent_2dp(r.ratio_linear), row.linear_percent) << row.spec.name;
  }
  EXPECT_TRUE(overhead_self_test().empty());
}

TEST(Overhead, HandComputedQwen3_8B) {
  const ArchSpec s{"q", 32, 8, 128, 4096, 12288};
  // 4*4096*(4096 + 1024) + 6*4096*12288
  EXPECT_EQ(to_string(projection_flops(s)), "385875968");
  EXPECT_EQ(to_string(surrogate_flops(s, SurrogateCost::mlp)), "4202496");
  EXPECT_EQ(to_string(surrogate_flops(s, SurrogateCost::linear)), "65536");
}

TEST(Overhead, RatioEqualsParameterRatio) {
  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t h = 1 + rng.below(16);
    ArchSpec s{"r", h * (1 + rng.below(8)), h, 2 * (1 + rng.below(128)), 8 * (1 + rng.below(2048)),
               1 + rng.below(60000)};
    for (auto kind : {SurrogateCost::mlp, SurrogateCost::linear}) {
      const Rational flops = surrogate_flops_exact(s, kind);
      const Rational params = surrogate_params_exact(s, kind);
      // ratio of FLOPs to projection FLOPs == ratio of params to layer params
      const Rational a = make_rational(flops.num, flops.den * projection_flops(s));
      const Rational b = make_rational(params.num, params.den * layer_params(s));
      EXPECT_EQ(to_string(a.num), to_string(b.num));
      EXPECT_EQ(to_string(a.den), to_string(b.den));
    }
  }
}

TEST(Overhead, RoundingIsHalfUpOnExactRatio) {
  EXPECT_EQ(percent_2dp(make_rational(1, 8)), "12.50%");
  EXPECT_EQ(percent_2dp(make_rational(1, 80000)), "0.00%");   // 0.00125% rounds down
  EXPECT_EQ(percent_2dp(make_rational(1, 20000)), "0.01%");   // 0.005% rounds up
  EXPECT_EQ(percent_2dp(make_rational(2, 3)), "66.67%");
  EXPECT_EQ(percent_2dp(make_rational(0, 3)), "0.00%");
}

TEST(Overhead, FractionalMlpWidthAndValidation) {
  const ArchSpec odd{"odd", 2, 1, 4, 6, 10};
  EXPECT_FALSE(odd.mlp_width_integral());
  const auto r = surrogate_flops_exact(odd, SurrogateCost::mlp);
  EXPECT_EQ(to_string(r.num), "21");
  EXPECT_EQ(to_string(r.den), "2");
  EXPECT_THROW(surrogate_flops(odd, SurrogateCost::mlp), Error);
  EXPECT_THROW(projection_flops(ArchSpec{"z", 0, 1, 1, 1, 1}), Error);
  const ArchSpec no_heads{"h0", 4, 0, 16, 64, 128};
  EXPECT_EQ(to_string(surrogate_flops(no_heads, SurrogateCost::linear)), "0");
  EXPECT_THROW(make_rational(1, 0), Error);
}

TEST(Overhead, TableAndCsvOutput) {
  std::ostringstream t, c;
  write_overhead_table(t, spec_registry());
  write_overhead_csv(c, spec_registry());
  EXPECT_NE(t.str().find("Qwen3-8B"), std::string::npos);
  EXPECT_NE(t.str().find("1.09%"), std::string::npos);
  EXPECT_EQ(std::ranges::count(c.str(), '\n'), 5);
}
