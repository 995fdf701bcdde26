#include "homegate/telemetry.hpp"

#include <algorithm>
#include <cmath>

namespace homegate::relay {

namespace {

bool has_magic(ByteView d, std::string_view magic) {
  return d.size() >= 4 && std::equal(magic.begin(), magic.end(), d.begin());
}

Bytes associated_data(ByteView datagram) {
  Bytes ad(datagram.begin(), datagram.begin() + kHeaderSize);
  ad[kHopOffset] = 0x00;
  return ad;
}

}  // namespace

Bytes Reading::encode() const {
  if (metric.empty() || metric.size() > kMaxMetricBytes)
    throw Error(Errc::InvalidReading, "metric name must be 1..64 bytes");
  if (!std::isfinite(value)) throw Error(Errc::InvalidReading, "reading value must be finite");
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(metric.size()));
  w.raw(as_bytes(metric));
  w.f64(value);
  w.u64(timestamp);
  return std::move(w).take();
}

Reading Reading::decode(ByteView bytes) {
  ByteReader r(bytes);
  Reading out;
  const std::size_t len = r.u8();
  if (len == 0 || len > kMaxMetricBytes)
    throw Error(Errc::InvalidReading, "metric name must be 1..64 bytes");
  const auto name = r.raw(len);
  out.metric.assign(name.begin(), name.end());
  out.value = r.f64();
  if (!std::isfinite(out.value)) throw Error(Errc::InvalidReading, "non-finite reading value");
  out.timestamp = r.u64();
  r.expect_end();
  return out;
}

std::string_view decode_error_name(DecodeError e) {
  switch (e) {
    case DecodeError::BadMagic: return "BadMagic";
    case DecodeError::BadVersion: return "BadVersion";
    case DecodeError::UnknownDevice: return "UnknownDevice";
    case DecodeError::AuthFailure: return "AuthFailure";
    case DecodeError::MalformedBody: return "MalformedBody";
  }
  return "?";
}

std::variant<EnvelopeHeader, DecodeError> parse_header(ByteView d) {
  if (!has_magic(d, kTelemetryMagic)) return DecodeError::BadMagic;
  if (d.size() < 5) return DecodeError::MalformedBody;
  if (d[4] != kVersion) return DecodeError::BadVersion;
  if (d.size() < kBodyOffset + crypto::kTagSize || d.size() > kMaxDatagram)
    return DecodeError::MalformedBody;
  EnvelopeHeader h;
  h.hop_count = d[kHopOffset];
  std::copy_n(d.begin() + 6, 8, h.device_id.begin());
  h.seq = get_u64_be(d.data() + 14);
  return h;
}

crypto::Nonce envelope_nonce(std::uint32_t epoch, std::uint64_t seq) {
  crypto::Nonce n{};
  put_u32_be(n.data(), epoch);
  put_u64_be(n.data() + 4, seq);
  return n;
}

Bytes seal_envelope(ByteView plaintext, const Key32& key, const DeviceId& device_id,
                    std::uint64_t seq, std::uint32_t epoch) {
  if (plaintext.size() > kMaxPlaintext)
    throw Error(Errc::PayloadTooLarge, "plaintext of " + std::to_string(plaintext.size()) +
                                           " bytes exceeds 1024");
  if (seq == 0) throw Error(Errc::InvalidValue, "sequence numbers start at 1");
  ByteWriter w;
  w.raw(as_bytes(kTelemetryMagic));
  w.u8(kVersion);
  w.u8(0);
  w.raw(device_id);
  w.u64(seq);
  const auto nonce = envelope_nonce(epoch, seq);
  w.raw(nonce);
  Bytes out = std::move(w).take();
  const Bytes ct = crypto::aead_seal(key, nonce, associated_data(out), plaintext);
  out.insert(out.end(), ct.begin(), ct.end());
  return out;
}

Bytes encode_envelope(const Reading& reading, const Key32& key, const DeviceId& device_id,
                      std::uint64_t seq, std::uint32_t epoch) {
  return seal_envelope(reading.encode(), key, device_id, seq, epoch);
}

std::variant<DecodedEnvelope, DecodeError> decode_envelope(ByteView d,
                                                           const KeyLookup& key_lookup) {
  auto parsed = parse_header(d);
  if (auto* err = std::get_if<DecodeError>(&parsed)) {
    // Magic and version are part of the associated data, so a frame that
    // names a known key is authenticated before they are interpreted.
    const bool sized = d.size() >= kBodyOffset + crypto::kTagSize && d.size() <= kMaxDatagram;
    if ((*err == DecodeError::BadMagic || *err == DecodeError::BadVersion) && sized) {
      DeviceId id{};
      std::copy_n(d.begin() + 6, 8, id.begin());
      if (const auto key = key_lookup(id)) {
        const auto nonce = to_fixed<crypto::kNonceSize>(d.subspan(kHeaderSize, crypto::kNonceSize));
        if (!crypto::aead_open(key->key, nonce, associated_data(d), d.subspan(kBodyOffset)))
          return DecodeError::AuthFailure;
      }
    }
    return *err;
  }
  const auto& h = std::get<EnvelopeHeader>(parsed);
  const auto key = key_lookup(h.device_id);
  if (!key) return DecodeError::UnknownDevice;
  const auto nonce = envelope_nonce(key->epoch, h.seq);
  // The wire nonce is redundant with (epoch, seq); a mismatch is tampering
  // or a stale epoch and is reported exactly like a bad tag.
  if (!std::equal(nonce.begin(), nonce.end(), d.begin() + kHeaderSize))
    return DecodeError::AuthFailure;
  auto plain = crypto::aead_open(key->key, nonce, associated_data(d), d.subspan(kBodyOffset));
  if (!plain) return DecodeError::AuthFailure;
  DecodedEnvelope out;
  out.device_id = h.device_id;
  out.seq = h.seq;
  out.hop_count = h.hop_count;
  try {
    out.reading = Reading::decode(*plain);
  } catch (const Error&) {
    return DecodeError::MalformedBody;
  }
  return out;
}

// --- repeater --------------------------------------------------------------

std::string_view forward_kind_name(ForwardDecision::Kind k) {
  switch (k) {
    case ForwardDecision::Kind::Forward: return "Forward";
    case ForwardDecision::Kind::DropDuplicate: return "DropDuplicate";
    case ForwardDecision::Kind::DropHops: return "DropHops";
    case ForwardDecision::Kind::DropMalformed: return "DropMalformed";
  }
  return "?";
}

std::size_t Repeater::KeyHash::operator()(const Key& k) const noexcept {
  std::size_t h = std::hash<std::uint64_t>{}(k.seq);
  for (auto b : k.device_id) h = h * 131 + b;
  return h;
}

Repeater::Repeater(std::uint8_t max_hops, std::size_t cache_capacity)
    : max_hops_(max_hops), capacity_(cache_capacity) {
  if (capacity_ == 0) throw Error(Errc::InvalidValue, "repeater cache capacity must be > 0");
}

bool Repeater::seen(const Key& k) {
  auto it = index_.find(k);
  if (it == index_.end()) return false;
  lru_.splice(lru_.begin(), lru_, it->second);
  return true;
}

void Repeater::remember(const Key& k) {
  lru_.push_front(k);
  index_[k] = lru_.begin();
  if (lru_.size() > capacity_) {
    index_.erase(lru_.back());
    lru_.pop_back();
  }
}

ForwardDecision Repeater::forward(ByteView datagram, UnixMs /*now*/) {
  using Kind = ForwardDecision::Kind;
  if (has_magic(datagram, kEnrollmentMagic)) {
    ++forwarded_;
    return {Kind::Forward, Bytes(datagram.begin(), datagram.end())};
  }
  auto parsed = parse_header(datagram);
  if (std::holds_alternative<DecodeError>(parsed)) {
    ++dropped_malformed_;
    return {Kind::DropMalformed, {}};
  }
  const auto& h = std::get<EnvelopeHeader>(parsed);
  if (h.hop_count >= max_hops_) {
    ++dropped_hops_;
    return {Kind::DropHops, {}};
  }
  const Key key{h.device_id, h.seq};
  if (seen(key)) {
    ++dropped_dup_;
    return {Kind::DropDuplicate, {}};
  }
  remember(key);
  ++forwarded_;
  ForwardDecision out{Kind::Forward, Bytes(datagram.begin(), datagram.end())};
  out.datagram[kHopOffset] = static_cast<std::uint8_t>(h.hop_count + 1);
  return out;
}

}  // namespace homegate::relay
