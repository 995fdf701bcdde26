#include "homegate/enrollment.hpp"

#include <algorithm>
#include <mutex>

#include "homegate/telemetry.hpp"

namespace homegate::enroll {

Key32 derive_device_key(const Key32& master_secret, const DeviceId& device_id,
                        std::uint32_t epoch) {
  ByteWriter info;
  info.raw(device_id);
  info.u32(epoch);
  return to_fixed<32>(
      crypto::hkdf_sha256(master_secret, as_bytes(kKeyDerivationSalt), info.bytes(), 32));
}

std::string_view request_state_name(RequestState s) {
  switch (s) {
    case RequestState::Pending: return "PENDING";
    case RequestState::Approved: return "APPROVED";
    case RequestState::Denied: return "DENIED";
    case RequestState::Expired: return "EXPIRED";
  }
  return "?";
}

RequestState parse_request_state(std::string_view s) {
  if (s == "PENDING" || s == "pending") return RequestState::Pending;
  if (s == "APPROVED" || s == "approved") return RequestState::Approved;
  if (s == "DENIED" || s == "denied") return RequestState::Denied;
  if (s == "EXPIRED" || s == "expired") return RequestState::Expired;
  throw Error(Errc::InvalidValue, "unknown enrollment state '" + std::string(s) + "'");
}

std::string_view device_status_name(DeviceStatus s) {
  switch (s) {
    case DeviceStatus::Active: return "ACTIVE";
    case DeviceStatus::Quarantined: return "QUARANTINED";
    case DeviceStatus::Revoked: return "REVOKED";
  }
  return "?";
}

DeviceStatus parse_device_status(std::string_view s) {
  if (s == "ACTIVE") return DeviceStatus::Active;
  if (s == "QUARANTINED") return DeviceStatus::Quarantined;
  if (s == "REVOKED") return DeviceStatus::Revoked;
  throw Error(Errc::InvalidValue, "unknown device status '" + std::string(s) + "'");
}

// --- EnrollmentTable -------------------------------------------------------------

void EnrollmentTable::check_submit(const pki::CertSigningRequest& csr) const {
  std::shared_lock lock(mu_);
  std::size_t pending = 0;
  for (const auto& [id, r] : requests_) {
    if (r.state != RequestState::Pending) continue;
    ++pending;
    if (r.csr.public_key == csr.public_key)
      throw Error(Errc::DuplicatePending, "a request for this public key is already pending");
  }
  if (pending >= max_pending_)
    throw Error(Errc::RegistryFull,
                "pending enrollment table is full (" + std::to_string(max_pending_) + ")");
}

void EnrollmentTable::insert(EnrollmentRequest req) {
  std::unique_lock lock(mu_);
  const RequestId id = req.request_id;
  if (!requests_.emplace(id, std::move(req)).second)
    throw Error(Errc::InvalidValue, "request id collision");
  order_.push_back(id);
}

EnrollmentRequest EnrollmentTable::transition(
    const RequestId& id, RequestState to,
    const std::function<void(EnrollmentRequest&)>& mutate) {
  std::unique_lock lock(mu_);
  auto it = requests_.find(id);
  if (it == requests_.end()) throw Error(Errc::UnknownRequest, "unknown enrollment request");
  if (it->second.state != RequestState::Pending)
    throw Error(Errc::NotPending, "request is " +
                                      std::string(request_state_name(it->second.state)));
  if (to == RequestState::Pending) throw Error(Errc::InvalidValue, "PENDING is not a target state");
  EnrollmentRequest next = it->second;
  if (mutate) mutate(next);
  next.state = to;
  it->second = next;
  return next;
}

std::optional<EnrollmentRequest> EnrollmentTable::find(const RequestId& id) const {
  std::shared_lock lock(mu_);
  auto it = requests_.find(id);
  if (it == requests_.end()) return std::nullopt;
  return it->second;
}

std::optional<EnrollmentRequest> EnrollmentTable::find_by_public_key(const Key32& pk) const {
  std::shared_lock lock(mu_);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto& r = requests_.at(*it);
    if (r.csr.public_key == pk) return r;
  }
  return std::nullopt;
}

std::vector<EnrollmentRequest> EnrollmentTable::list(std::optional<RequestState> state) const {
  std::shared_lock lock(mu_);
  std::vector<EnrollmentRequest> out;
  for (const auto& id : order_) {
    const auto& r = requests_.at(id);
    if (!state || r.state == *state) out.push_back(r);
  }
  return out;
}

std::vector<RequestId> EnrollmentTable::expired_candidates(UnixMs now, UnixMs ttl_ms) const {
  std::shared_lock lock(mu_);
  std::vector<RequestId> out;
  for (const auto& id : order_) {
    const auto& r = requests_.at(id);
    if (r.state == RequestState::Pending && r.received_at + ttl_ms <= now) out.push_back(id);
  }
  return out;
}

std::size_t EnrollmentTable::pending_count() const {
  std::shared_lock lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(requests_.begin(), requests_.end(),
                    [](const auto& kv) { return kv.second.state == RequestState::Pending; }));
}

// --- DeviceRegistry ----------------------------------------------------------------

void DeviceRegistry::insert(DeviceRecord rec) {
  std::unique_lock lock(mu_);
  const DeviceId id = rec.device_id;
  if (!devices_.emplace(id, std::move(rec)).second)
    throw Error(Errc::InvalidValue, "device id already registered");
}

std::optional<DeviceRecord> DeviceRegistry::find(const DeviceId& id) const {
  std::shared_lock lock(mu_);
  auto it = devices_.find(id);
  if (it == devices_.end()) return std::nullopt;
  return it->second;
}

DeviceRecord DeviceRegistry::update(const DeviceId& id,
                                    const std::function<void(DeviceRecord&)>& mutate) {
  std::unique_lock lock(mu_);
  auto it = devices_.find(id);
  if (it == devices_.end()) throw Error(Errc::UnknownDevice, "unknown device " + to_hex(id));
  DeviceRecord next = it->second;
  mutate(next);
  // last_seq never moves backwards.
  next.last_seq = std::max(next.last_seq, it->second.last_seq);
  it->second = next;
  return next;
}

std::vector<DeviceRecord> DeviceRegistry::list() const {
  std::shared_lock lock(mu_);
  std::vector<DeviceRecord> out;
  out.reserve(devices_.size());
  for (const auto& [id, d] : devices_) out.push_back(d);
  return out;
}

bool DeviceRegistry::contains(const DeviceId& id) const {
  std::shared_lock lock(mu_);
  return devices_.count(id) != 0;
}

std::size_t DeviceRegistry::size() const {
  std::shared_lock lock(mu_);
  return devices_.size();
}

// --- approval payload ----------------------------------------------------------------

Bytes ApprovalPayload::encode() const {
  ByteWriter w;
  w.raw(request_id);
  w.raw(device_id);
  w.u32(address.value);
  w.u32(epoch);
  w.var(certificate.encode());
  w.var(key_wrap);
  return std::move(w).take();
}

ApprovalPayload ApprovalPayload::decode(ByteView bytes) {
  ByteReader r(bytes);
  ApprovalPayload p;
  p.request_id = r.fixed<16>();
  p.device_id = r.fixed<8>();
  p.address = seg::Ipv4{r.u32()};
  p.epoch = r.u32();
  p.certificate = pki::Certificate::decode(r.var());
  const auto wrap = r.var();
  p.key_wrap.assign(wrap.begin(), wrap.end());
  r.expect_end();
  return p;
}

Bytes key_wrap_ad(const DeviceId& device_id, std::uint32_t epoch) {
  ByteWriter w;
  w.raw(device_id);
  w.u32(epoch);
  return std::move(w).take();
}

Bytes wrap_telemetry_key(const Key32& telemetry_key, const Key32& device_public_key,
                         const DeviceId& device_id, std::uint32_t epoch, crypto::Rng& rng) {
  return crypto::seal_to(crypto::ed25519_pk_to_x25519(device_public_key), telemetry_key,
                         key_wrap_ad(device_id, epoch), kKeyWrapLabel, rng);
}

std::optional<Key32> unwrap_telemetry_key(ByteView wrap, const Key32& device_signing_seed,
                                          const DeviceId& device_id, std::uint32_t epoch) {
  Key32 secret = crypto::ed25519_seed_to_x25519(device_signing_seed);
  auto plain = crypto::open_sealed(secret, wrap, key_wrap_ad(device_id, epoch), kKeyWrapLabel);
  crypto::wipe(secret);
  if (!plain || plain->size() != 32) return std::nullopt;
  return to_fixed<32>(*plain);
}

// --- HGE1 framing ----------------------------------------------------------------------

Bytes EnrollmentMessage::encode() const {
  ByteWriter w;
  w.raw(as_bytes(relay::kEnrollmentMagic));
  w.u8(relay::kVersion);
  w.u8(static_cast<std::uint8_t>(type));
  w.raw(body);
  return std::move(w).take();
}

EnrollmentMessage EnrollmentMessage::decode(ByteView d) {
  if (d.size() < 6 || !std::equal(relay::kEnrollmentMagic.begin(),
                                  relay::kEnrollmentMagic.end(), d.begin()))
    throw Error(Errc::Malformed, "not an HGE1 datagram");
  if (d[4] != relay::kVersion) throw Error(Errc::Malformed, "unsupported HGE1 version");
  if (d[5] < 0x01 || d[5] > 0x05) throw Error(Errc::Malformed, "unknown HGE1 message type");
  if (d.size() > relay::kMaxDatagram) throw Error(Errc::Malformed, "oversized HGE1 datagram");
  EnrollmentMessage m;
  m.type = static_cast<MessageType>(d[5]);
  m.body.assign(d.begin() + 6, d.end());
  return m;
}

Bytes make_request_datagram(const std::string& requested_name,
                            const pki::CertSigningRequest& csr) {
  ByteWriter w;
  w.str(requested_name);
  w.var(csr.encode());
  return EnrollmentMessage{MessageType::Request, std::move(w).take()}.encode();
}

std::pair<std::string, pki::CertSigningRequest> parse_request_body(ByteView body) {
  ByteReader r(body);
  std::string name = r.str(kMaxRequestedName);
  auto csr = pki::CertSigningRequest::decode(r.var());
  r.expect_end();
  return {std::move(name), std::move(csr)};
}

}  // namespace homegate::enroll
