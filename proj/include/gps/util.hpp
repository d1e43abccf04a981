#pragma once

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "gps/error.hpp"

namespace gps {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::string_view bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("sha256 failed");
  }
  return out;
}

inline std::string to_hex(const Digest& d) {
  std::ostringstream os;
  for (auto b : d) os << std::hex << std::setw(2) << std::setfill('0') << int(b);
  return os.str();
}

inline std::uint64_t digest_prefix(const Digest& d) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
  return v;
}

/// Engine for the named random stream `name` derived from a master seed.
/// Streams are independent of each other, so adding a consumer never shifts
/// the draws seen by another one.
inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name) {
  auto d = sha256(name);
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(digest_prefix(d)),
                    std::uint32_t(digest_prefix(d) >> 32)};
  return std::mt19937_64(seq);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

namespace binio {

template <typename T>
void put(std::string& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  buf.append(raw, sizeof(T));
}

inline void put_magic(std::string& buf, std::string_view magic) { buf.append(magic); }

/// Cursor over an in-memory byte buffer; every read is bounds checked.
class Reader {
 public:
  Reader(std::string_view bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() || take(magic.size()) != magic)
      throw IoError(source_ + ": bad magic, expected \"" + std::string(magic) + "\"");
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  void expect_end() const {
    if (!at_end()) throw IoError(source_ + ": trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(source_ + ": truncated");
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace binio

/// Decimal form that round-trips a double exactly.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace gps
