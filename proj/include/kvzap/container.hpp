#pragma once

#include <json.hpp>
#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kvzap/errors.hpp"
#include "kvzap/numerics.hpp"

namespace kvzap {

// Versioned binary container shared by every artifact file:
//
//   magic        4 bytes ("KVZL" teacher, "KVZP" surrogate, "KVZD" dataset, "KVZS" scores)
//   version      u32
//   header_len   u32, followed by header_len bytes of canonical JSON (sorted keys)
//   n_tensors    u32
//   per tensor:  rank u32, rank x u64 dims, then prod(dims) f32 values
//
// All integers and floats are little-endian.
inline constexpr std::uint32_t kContainerVersion = 1;

namespace magic {
inline constexpr std::string_view kTeacher = "KVZL";
inline constexpr std::string_view kSurrogate = "KVZP";
inline constexpr std::string_view kDataset = "KVZD";
inline constexpr std::string_view kScores = "KVZS";
}  // namespace magic

struct Container {
  std::string magic;
  nlohmann::json header;
  std::vector<Tensor<float>> tensors;
};

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorKind::format, "container truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_container(const Container& c) {
  require(c.magic.size() == 4, ErrorKind::format, "magic must be 4 bytes");
  std::string out = c.magic;
  detail::put_le<std::uint32_t>(out, kContainerVersion);
  const std::string header = c.header.dump();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto dim : t.shape()) detail::put_le<std::uint64_t>(out, dim);
    for (float v : t.values()) detail::put_f32(out, v);
  }
  return out;
}

inline Container decode_container(std::string_view bytes, std::string_view expected_magic) {
  detail::Reader r(bytes);
  Container c;
  c.magic = std::string(r.take(4));
  require(c.magic == expected_magic, ErrorKind::format,
          "bad magic '" + c.magic + "', expected '" + std::string(expected_magic) + "'");
  const auto version = r.get<std::uint32_t>();
  require(version == kContainerVersion, ErrorKind::format, "unsupported container version " + std::to_string(version));
  const auto header_len = r.get<std::uint32_t>();
  const auto header = r.take(header_len);
  try {
    c.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("container header is not JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = r.get<std::uint32_t>();
    require(rank <= 8, ErrorKind::format, "implausible tensor rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      n *= d;
    }
    require(n <= bytes.size(), ErrorKind::format, "tensor larger than file");
    std::vector<float> data(n);
    for (auto& v : data) v = r.get_f32();
    c.tensors.emplace_back(std::move(shape), std::move(data));
  }
  require(r.done(), ErrorKind::format, "trailing bytes after last tensor");
  return c;
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorKind::io, "write failed for " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
  write_file(path, encode_container(c));
}

inline Container load_container(const std::filesystem::path& path, std::string_view expected_magic) {
  return decode_container(read_file(path), expected_magic);
}

// Git-style content hash: SHA-1 over "blob <size>\0" followed by the bytes.
inline std::string content_hash(std::string_view bytes) {
  const std::string prefix = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, prefix.data(), prefix.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace kvzap
