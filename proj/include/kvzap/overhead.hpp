#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "kvzap/errors.hpp"

namespace kvzap {

using Flops = unsigned __int128;

inline std::string to_string(Flops v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  return s;
}

struct ArchSpec {
  std::string name;
  std::uint64_t query_heads = 0;  // H_Q
  std::uint64_t kv_heads = 0;     // H
  std::uint64_t head_dim = 0;     // D
  std::uint64_t hidden_dim = 0;   // D_h
  std::uint64_t ffn_dim = 0;      // D_int

  // H = 0 is accepted: it is the degenerate no-output surrogate.
  void validate() const {
    require(query_heads > 0 && head_dim > 0 && hidden_dim > 0 && ffn_dim > 0, ErrorKind::config,
            name + ": H_Q, D, D_h and D_int must be positive");
  }
  bool mlp_width_integral() const { return hidden_dim % 8 == 0; }
};

enum class SurrogateCost { mlp, linear };

// Exact rational p / q (q > 0), reduced.
struct Rational {
  Flops num = 0;
  Flops den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline Flops gcd(Flops a, Flops b) {
  while (b != 0) {
    const Flops t = a % b;
    a = b;
    b = t;
  }
  return a;
}

inline Rational make_rational(Flops num, Flops den) {
  require(den != 0, ErrorKind::undefined, "zero denominator");
  const Flops g = gcd(num, den);
  return g ? Rational{num / g, den / g} : Rational{0, 1};
}

// Projection FLOPs of one transformer layer for a single token:
// queries, keys, values and output (2 FLOPs per multiply-add) plus the three
// gated-FFN matrices. The quadratic attention product is ignored.
inline Flops attention_flops(const ArchSpec& s) {
  return Flops{4} * s.hidden_dim * (Flops{s.query_heads} * s.head_dim + Flops{s.kv_heads} * s.head_dim);
}
inline Flops ffn_flops(const ArchSpec& s) { return Flops{6} * s.hidden_dim * s.ffn_dim; }
inline Flops projection_flops(const ArchSpec& s) {
  s.validate();
  return attention_flops(s) + ffn_flops(s);
}

// Surrogate FLOPs as an exact rational. The MLP is (D_h/4)(D_h + H), which is
// fractional when D_h is not a multiple of 4.
inline Rational surrogate_flops_exact(const ArchSpec& s, SurrogateCost kind) {
  s.validate();
  if (kind == SurrogateCost::linear) return {Flops{2} * s.hidden_dim * s.kv_heads, 1};
  return make_rational(Flops{s.hidden_dim} * (Flops{s.hidden_dim} + s.kv_heads), 4);
}

inline Flops surrogate_flops(const ArchSpec& s, SurrogateCost kind) {
  const Rational r = surrogate_flops_exact(s, kind);
  require(r.den == 1, ErrorKind::undefined, s.name + ": surrogate FLOPs are not an integer");
  return r.num;
}

// Parameter counts of the surrogates (biases excluded, as in the FLOP count):
// linear D_h * H, MLP D_h * D_h/8 + D_h/8 * H.
inline Rational surrogate_params_exact(const ArchSpec& s, SurrogateCost kind) {
  if (kind == SurrogateCost::linear) return {Flops{s.hidden_dim} * s.kv_heads, 1};
  return make_rational(Flops{s.hidden_dim} * (Flops{s.hidden_dim} + s.kv_heads), 8);
}

// Projection parameters of one layer; each contributes 2 FLOPs per token.
inline Flops layer_params(const ArchSpec& s) {
  return Flops{2} * s.hidden_dim * (Flops{s.query_heads} * s.head_dim + Flops{s.kv_heads} * s.head_dim) +
         Flops{3} * s.hidden_dim * s.ffn_dim;
}

struct OverheadReport {
  ArchSpec spec;
  Flops c_attn = 0;
  Flops c_ffn = 0;
  Flops c = 0;
  Rational c_mlp;
  Rational c_linear;
  Rational ratio_mlp;     // C_mlp / C
  Rational ratio_linear;  // C_linear / C

  double percent_mlp() const { return 100.0 * ratio_mlp.value(); }
  double percent_linear() const { return 100.0 * ratio_linear.value(); }
};

inline OverheadReport overhead_report(const ArchSpec& s) {
  OverheadReport r;
  r.spec = s;
  r.c_attn = attention_flops(s);
  r.c_ffn = ffn_flops(s);
  r.c = projection_flops(s);
  r.c_mlp = surrogate_flops_exact(s, SurrogateCost::mlp);
  r.c_linear = surrogate_flops_exact(s, SurrogateCost::linear);
  r.ratio_mlp = make_rational(r.c_mlp.num, r.c_mlp.den * r.c);
  r.ratio_linear = make_rational(r.c_linear.num, r.c_linear.den * r.c);
  return r;
}

// Percentage rounded half-up to two decimals, computed from the exact ratio.
inline std::string percent_2dp(const Rational& ratio) {
  const Flops scaled = ratio.num * 10000;  // percent * 100
  Flops q = scaled / ratio.den;
  if ((scaled % ratio.den) * 2 >= ratio.den) ++q;
  const auto cents = static_cast<unsigned long long>(q);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%llu.%02llu%%", cents / 100, cents % 100);
  return buf;
}

struct PaperRow {
  ArchSpec spec;
  std::string mlp_percent;
  std::string linear_percent;
};

// The three published rows, and the repo's toy configuration (no published
// percentages).
inline std::vector<PaperRow> paper_rows() {
  return {
      {{"Qwen3-8B", 32, 8, 128, 4096, 12288}, "1.09%", "0.02%"},
      {{"Llama-3.1-8B", 32, 8, 128, 4096, 14336}, "0.96%", "0.02%"},
      {{"Qwen3-32B", 64, 8, 128, 5120, 25600}, "0.67%", "0.01%"},
  };
}

inline ArchSpec toy_spec() { return {"toy", 4, 2, 16, 64, 128}; }

inline std::vector<ArchSpec> spec_registry() {
  std::vector<ArchSpec> out;
  for (const auto& r : paper_rows()) out.push_back(r.spec);
  out.push_back(toy_spec());
  return out;
}

inline void write_overhead_table(std::ostream& out, const std::vector<ArchSpec>& specs) {
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %4s %3s %4s %6s %6s %14s %11s %8s %8s\n", "model", "H_Q", "H", "D", "D_h",
                "D_int", "C", "C_mlp", "mlp", "linear");
  out << line;
  for (const auto& s : specs) {
    const auto r = overhead_report(s);
    const std::string c_mlp =
        r.c_mlp.den == 1 ? to_string(r.c_mlp.num) : to_string(r.c_mlp.num) + "/" + to_string(r.c_mlp.den);
    std::snprintf(line, sizeof line, "%-14s %4llu %3llu %4llu %6llu %6llu %14s %11s %8s %8s\n", s.name.c_str(),
                  static_cast<unsigned long long>(s.query_heads), static_cast<unsigned long long>(s.kv_heads),
                  static_cast<unsigned long long>(s.head_dim), static_cast<unsigned long long>(s.hidden_dim),
                  static_cast<unsigned long long>(s.ffn_dim), to_string(r.c).c_str(), c_mlp.c_str(),
                  percent_2dp(r.ratio_mlp).c_str(), percent_2dp(r.ratio_linear).c_str());
    out << line;
  }
}

inline void write_overhead_csv(std::ostream& out, const std::vector<ArchSpec>& specs) {
  out << "model,H_Q,H,D,D_h,D_int,C_attn,C_ffn,C,C_mlp,C_linear,ratio_mlp,ratio_linear\n";
  out.precision(17);
  for (const auto& s : specs) {
    const auto r = overhead_report(s);
    out << s.name << ',' << s.query_heads << ',' << s.kv_heads << ',' << s.head_dim << ',' << s.hidden_dim << ','
        << s.ffn_dim << ',' << to_string(r.c_attn) << ',' << to_string(r.c_ffn) << ',' << to_string(r.c) << ','
        << r.c_mlp.value() << ',' << to_string(r.c_linear.num) << ',' << r.ratio_mlp.value() << ','
        << r.ratio_linear.value() << '\n';
  }
}

// Names of registry rows whose rounded percentages differ from the published
// ones; empty means the table reproduces.
inline std::vector<std::string> overhead_self_test() {
  std::vector<std::string> bad;
  for (const auto& row : paper_rows()) {
    const auto r = overhead_report(row.spec);
    if (percent_2dp(r.ratio_mlp) != row.mlp_percent || percent_2dp(r.ratio_linear) != row.linear_percent)
      bad.push_back(row.spec.name);
  }
  return bad;
}

}  // namespace kvzap
