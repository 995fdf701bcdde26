#pragma once

#include <cstdint>
#include <functional>
#include <list>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>

#include "homegate/bytes.hpp"
#include "homegate/clock.hpp"
#include "homegate/crypto.hpp"

// HGT1 telemetry envelope (big-endian on the wire):
//
//   0..3   magic "HGT1"
//   4      version 0x01
//   5      hop_count (repeater-mutable, zeroed in the associated data)
//   6..13  device_id
//   14..21 seq (u64, >= 1)
//   22..33 nonce = epoch (u32) || seq (u64)
//   34..   ciphertext || 16-byte tag
namespace homegate::relay {

using DeviceId = FixedBytes<8>;
using crypto::Key32;

inline constexpr std::string_view kTelemetryMagic = "HGT1";
inline constexpr std::string_view kEnrollmentMagic = "HGE1";
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHopOffset = 5;
inline constexpr std::size_t kHeaderSize = 22;
inline constexpr std::size_t kBodyOffset = 34;
inline constexpr std::size_t kMaxPlaintext = 1024;
inline constexpr std::size_t kMaxDatagram = kBodyOffset + kMaxPlaintext + crypto::kTagSize;
inline constexpr std::size_t kMaxMetricBytes = 64;

/// Plaintext body: u8-length metric | f64 value | u64 timestamp (unix ms).
struct Reading {
  std::string metric;
  double value = 0.0;
  UnixMs timestamp = 0;

  Bytes encode() const;
  /// Throws Errc::InvalidReading for empty/oversized metrics or non-finite
  /// values, Errc::Malformed for framing errors.
  static Reading decode(ByteView bytes);

  friend bool operator==(const Reading&, const Reading&) = default;
};

struct EnvelopeHeader {
  std::uint8_t hop_count = 0;
  DeviceId device_id{};
  std::uint64_t seq = 0;
};

enum class DecodeError { BadMagic, BadVersion, UnknownDevice, AuthFailure, MalformedBody };
std::string_view decode_error_name(DecodeError e);

/// Parses and length-checks the cleartext header only; no key needed.
std::variant<EnvelopeHeader, DecodeError> parse_header(ByteView datagram);

crypto::Nonce envelope_nonce(std::uint32_t epoch, std::uint64_t seq);

/// Envelope around an arbitrary plaintext; throws PayloadTooLarge above
/// 1024 bytes and InvalidValue for seq 0.
Bytes seal_envelope(ByteView plaintext, const Key32& key, const DeviceId& device_id,
                    std::uint64_t seq, std::uint32_t epoch);

Bytes encode_envelope(const Reading& reading, const Key32& key, const DeviceId& device_id,
                      std::uint64_t seq, std::uint32_t epoch);

struct DeviceKey {
  Key32 key{};
  std::uint32_t epoch = 0;
};
using KeyLookup = std::function<std::optional<DeviceKey>(const DeviceId&)>;

struct DecodedEnvelope {
  DeviceId device_id{};
  std::uint64_t seq = 0;
  std::uint8_t hop_count = 0;
  Reading reading;
};

/// Hostile-input safe. Wrong key, wrong epoch and tampered bytes all
/// surface as the same AuthFailure.
std::variant<DecodedEnvelope, DecodeError> decode_envelope(ByteView datagram,
                                                           const KeyLookup& key_lookup);

// --- repeater --------------------------------------------------------------

struct ForwardDecision {
  enum class Kind { Forward, DropDuplicate, DropHops, DropMalformed };
  Kind kind = Kind::DropMalformed;
  Bytes datagram;  // populated for Forward only
};
std::string_view forward_kind_name(ForwardDecision::Kind k);

/// Keyless relay: bumps hop_count on HGT1 envelopes, suppresses repeats
/// of (device_id, seq) through a bounded LRU cache, and passes HGE1
/// enrollment frames through untouched. Single owner, not thread-safe.
class Repeater {
 public:
  explicit Repeater(std::uint8_t max_hops = 2, std::size_t cache_capacity = 1024);

  ForwardDecision forward(ByteView datagram, UnixMs now);

  std::uint64_t forwarded_count() const { return forwarded_; }
  std::uint64_t dropped_dup_count() const { return dropped_dup_; }
  std::uint64_t dropped_hops_count() const { return dropped_hops_; }
  std::uint64_t dropped_malformed_count() const { return dropped_malformed_; }
  std::size_t cache_size() const { return lru_.size(); }
  std::uint8_t max_hops() const { return max_hops_; }

 private:
  struct Key {
    DeviceId device_id;
    std::uint64_t seq;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };

  bool seen(const Key& k);
  void remember(const Key& k);

  std::uint8_t max_hops_;
  std::size_t capacity_;
  std::list<Key> lru_;  // front = most recent
  std::unordered_map<Key, std::list<Key>::iterator, KeyHash> index_;
  std::uint64_t forwarded_ = 0;
  std::uint64_t dropped_dup_ = 0;
  std::uint64_t dropped_hops_ = 0;
  std::uint64_t dropped_malformed_ = 0;
};

}  // namespace homegate::relay
