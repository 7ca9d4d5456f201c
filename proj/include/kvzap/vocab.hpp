#pragma once

#include <cstdint>

namespace kvzap {

using Token = std::int32_t;

// Token ids of the toy vocabulary: ids below kDataAlphabet are data, the rest
// are reserved markers.
namespace vocab {

inline constexpr Token kDataAlphabet = 58;
inline constexpr Token kPad = 58;
inline constexpr Token kBos = 59;
inline constexpr Token kRepeat = 60;
inline constexpr Token kQuery = 61;
inline constexpr Token kAnswer = 62;
inline constexpr Token kEos = 63;
inline constexpr int kSize = 64;

inline constexpr bool is_data(Token t) { return t >= 0 && t < kDataAlphabet; }
inline constexpr bool is_reserved(Token t) { return t >= kDataAlphabet && t < kSize; }

}  // namespace vocab
}  // namespace kvzap
