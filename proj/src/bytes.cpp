#include "homegate/bytes.hpp"

#include <sodium.h>

#include <algorithm>
#include <bit>
#include <cstring>

namespace homegate {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::VaultFailure: return "vault_failure";
    case Errc::UnknownHandle: return "unknown_handle";
    case Errc::InvalidProof: return "invalid_proof";
    case Errc::RoleForbidden: return "role_forbidden";
    case Errc::DuplicatePending: return "duplicate_pending";
    case Errc::RegistryFull: return "registry_full";
    case Errc::NotPending: return "not_pending";
    case Errc::UnknownRequest: return "unknown_request";
    case Errc::UnknownZone: return "unknown_zone";
    case Errc::Unauthorized: return "unauthorized";
    case Errc::UnknownDevice: return "unknown_device";
    case Errc::PayloadTooLarge: return "payload_too_large";
    case Errc::InvalidReading: return "invalid_reading";
    case Errc::DuplicateName: return "duplicate_name";
    case Errc::OverlappingRange: return "overlapping_range";
    case Errc::ZoneExhausted: return "zone_exhausted";
    case Errc::InvalidAddress: return "invalid_address";
    case Errc::AlreadyQuarantined: return "already_quarantined";
    case Errc::NotQuarantined: return "not_quarantined";
    case Errc::NotActive: return "not_active";
    case Errc::EmptyDictionary: return "empty_dictionary";
    case Errc::UnknownAlert: return "unknown_alert";
    case Errc::TargetUnreachable: return "target_unreachable";
    case Errc::StorageFailure: return "storage_failure";
    case Errc::BadRange: return "bad_range";
    case Errc::Malformed: return "malformed";
    case Errc::ParseError: return "parse_error";
    case Errc::UnknownKey: return "unknown_key";
    case Errc::InvalidValue: return "invalid_value";
    case Errc::PortInUse: return "port_in_use";
    case Errc::UninitializedDataDir: return "uninitialized_data_dir";
    case Errc::UnknownScenario: return "unknown_scenario";
    case Errc::InvalidSpec: return "invalid_spec";
  }
  return "unknown";
}

std::string to_hex(ByteView data) {
  std::string out(data.size() * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), data.data(), data.size());
  out.pop_back();
  return out;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(Errc::InvalidValue, "odd-length hex string");
  Bytes out(hex.size() / 2);
  std::size_t len = 0;
  const char* end = nullptr;
  if (sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr, &len,
                     &end) != 0 ||
      len != out.size() || end != hex.data() + hex.size())
    throw Error(Errc::InvalidValue, "invalid hex string");
  return out;
}

std::string to_base64(ByteView data) {
  const auto variant = sodium_base64_VARIANT_ORIGINAL;
  std::string out(sodium_base64_encoded_len(data.size(), variant), '\0');
  sodium_bin2base64(out.data(), out.size(), data.data(), data.size(), variant);
  out.resize(std::strlen(out.c_str()));
  return out;
}

Bytes from_base64(std::string_view text) {
  Bytes out(text.size());
  std::size_t len = 0;
  const char* end = nullptr;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr, &len,
                        &end, sodium_base64_VARIANT_ORIGINAL) != 0 ||
      end != text.data() + text.size())
    throw Error(Errc::InvalidValue, "invalid base64 string");
  out.resize(len);
  return out;
}

bool contains_subsequence(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

void put_u32_be(std::uint8_t* out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i, v >>= 8) out[i] = static_cast<std::uint8_t>(v);
}

void put_u64_be(std::uint8_t* out, std::uint64_t v) {
  for (int i = 7; i >= 0; --i, v >>= 8) out[i] = static_cast<std::uint8_t>(v);
}

std::uint64_t get_u64_be(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | in[i];
  return v;
}

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  buf_.push_back(static_cast<std::uint8_t>(v));
}

void ByteWriter::u32(std::uint32_t v) {
  std::uint8_t tmp[4];
  put_u32_be(tmp, v);
  buf_.insert(buf_.end(), tmp, tmp + 4);
}

void ByteWriter::u64(std::uint64_t v) {
  std::uint8_t tmp[8];
  put_u64_be(tmp, v);
  buf_.insert(buf_.end(), tmp, tmp + 8);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::var(ByteView data) {
  if (data.size() > 0xFFFF)
    throw Error(Errc::InvalidValue, "variable-length field exceeds 65535 bytes");
  u16(static_cast<std::uint16_t>(data.size()));
  raw(data);
}

ByteView ByteReader::raw(std::size_t n) {
  if (remaining() < n)
    throw Error(Errc::Malformed, "truncated input at offset " + std::to_string(pos_));
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return raw(1)[0]; }

std::uint16_t ByteReader::u16() {
  auto b = raw(2);
  return static_cast<std::uint16_t>((b[0] << 8) | b[1]);
}

std::uint32_t ByteReader::u32() {
  auto b = raw(4);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | b[3];
}

std::uint64_t ByteReader::u64() { return get_u64_be(raw(8).data()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

ByteView ByteReader::var() { return raw(u16()); }

std::string ByteReader::str(std::size_t max_len) {
  auto b = var();
  if (b.size() > max_len)
    throw Error(Errc::Malformed, "string field exceeds " + std::to_string(max_len) + " bytes");
  return {b.begin(), b.end()};
}

void ByteReader::expect_end() const {
  if (remaining() != 0)
    throw Error(Errc::Malformed, std::to_string(remaining()) + " trailing bytes");
}

}  // namespace homegate
