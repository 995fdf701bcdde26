#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "homegate/error.hpp"

namespace homegate {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

template <std::size_t N>
using FixedBytes = std::array<std::uint8_t, N>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

std::string to_hex(ByteView data);
/// Throws Errc::InvalidValue on odd length or non-hex characters.
Bytes from_hex(std::string_view hex);

std::string to_base64(ByteView data);
Bytes from_base64(std::string_view text);

template <std::size_t N>
FixedBytes<N> to_fixed(ByteView data) {
  if (data.size() != N)
    throw Error(Errc::InvalidValue,
                "expected " + std::to_string(N) + " bytes, got " +
                    std::to_string(data.size()));
  FixedBytes<N> out{};
  std::copy(data.begin(), data.end(), out.begin());
  return out;
}

/// Returns true if `needle` occurs anywhere inside `haystack`.
bool contains_subsequence(ByteView haystack, ByteView needle);

/// Big-endian writer for the canonical encodings. Variable-length fields
/// carry a u16 length prefix; fixed-size fields are written raw.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void raw(ByteView data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  /// u16 length prefix; throws InvalidValue if longer than 65535.
  void var(ByteView data);
  void str(std::string_view s) { var(as_bytes(s)); }

  const Bytes& bytes() const& { return buf_; }
  Bytes take() && { return std::move(buf_); }

 private:
  Bytes buf_;
};

/// Bounds-checked reader; any overrun throws Errc::Malformed.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  ByteView raw(std::size_t n);
  template <std::size_t N>
  FixedBytes<N> fixed() {
    return to_fixed<N>(raw(N));
  }
  ByteView var();
  std::string str(std::size_t max_len);

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  void expect_end() const;

 private:
  ByteView data_;
  std::size_t pos_ = 0;
};

void put_u32_be(std::uint8_t* out, std::uint32_t v);
void put_u64_be(std::uint8_t* out, std::uint64_t v);
std::uint64_t get_u64_be(const std::uint8_t* in);

}  // namespace homegate
