#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "homegate/bytes.hpp"
#include "homegate/clock.hpp"
#include "homegate/crypto.hpp"
#include "homegate/pki.hpp"
#include "homegate/segmentation.hpp"

namespace homegate::enroll {

using DeviceId = FixedBytes<8>;
using RequestId = FixedBytes<16>;
using crypto::Key32;

inline constexpr std::size_t kMaxRequestedName = 64;
inline constexpr int kDefaultValidityDays = 365;
inline constexpr std::string_view kKeyDerivationSalt = "HGT1-telemetry";

/// HKDF-SHA256(ikm = master, salt = "HGT1-telemetry",
///             info = device_id || epoch as u32 big-endian), 32 bytes.
Key32 derive_device_key(const Key32& master_secret, const DeviceId& device_id,
                        std::uint32_t epoch);

enum class RequestState : std::uint8_t { Pending, Approved, Denied, Expired };
std::string_view request_state_name(RequestState s);
RequestState parse_request_state(std::string_view s);

struct EnrollmentRequest {
  RequestId request_id{};
  pki::CertSigningRequest csr;
  std::string requested_name;
  UnixMs received_at = 0;
  std::string source_address;
  RequestState state = RequestState::Pending;
  std::optional<DeviceId> device_id;  // set on approval
  std::string reason;                 // deny/expiry reason
  UnixMs decided_at = 0;
};

/// Request table. Every state change goes through transition(), a
/// compare-and-set on PENDING under the table's write lock.
class EnrollmentTable {
 public:
  explicit EnrollmentTable(std::size_t max_pending = 1024) : max_pending_(max_pending) {}

  /// Throws DuplicatePending or RegistryFull. Does not check the proof.
  void check_submit(const pki::CertSigningRequest& csr) const;
  void insert(EnrollmentRequest req);

  /// Applies `mutate` and moves PENDING -> `to` atomically. Throws
  /// UnknownRequest, NotPending. If `mutate` throws, nothing changes.
  EnrollmentRequest transition(const RequestId& id, RequestState to,
                               const std::function<void(EnrollmentRequest&)>& mutate = {});

  std::optional<EnrollmentRequest> find(const RequestId& id) const;
  /// Most recent request carrying this public key.
  std::optional<EnrollmentRequest> find_by_public_key(const Key32& pk) const;
  std::vector<EnrollmentRequest> list(std::optional<RequestState> state = std::nullopt) const;
  /// PENDING requests with received_at + ttl <= now.
  std::vector<RequestId> expired_candidates(UnixMs now, UnixMs ttl_ms) const;
  std::size_t pending_count() const;

 private:
  std::size_t max_pending_;
  mutable std::shared_mutex mu_;
  std::map<RequestId, EnrollmentRequest> requests_;
  std::vector<RequestId> order_;
};

enum class DeviceStatus : std::uint8_t { Active, Quarantined, Revoked };
std::string_view device_status_name(DeviceStatus s);
DeviceStatus parse_device_status(std::string_view s);

struct DeviceRecord {
  DeviceId device_id{};
  std::string name;
  pki::Certificate certificate;
  std::string zone;
  std::uint32_t telemetry_key_epoch = 0;
  DeviceStatus status = DeviceStatus::Active;
  std::uint64_t last_seq = 0;
  seg::Ipv4 address;
  RequestId request_id{};
  UnixMs enrolled_at = 0;
  UnixMs last_seen = 0;
};

class DeviceRegistry {
 public:
  void insert(DeviceRecord rec);  // throws InvalidValue on duplicate id
  std::optional<DeviceRecord> find(const DeviceId& id) const;
  /// Throws UnknownDevice.
  DeviceRecord update(const DeviceId& id, const std::function<void(DeviceRecord&)>& mutate);
  std::vector<DeviceRecord> list() const;
  bool contains(const DeviceId& id) const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::map<DeviceId, DeviceRecord> devices_;
};

// --- approval payload and key wrap -------------------------------------------

inline constexpr std::string_view kKeyWrapLabel = "HGW1-keywrap";

/// request_id[16] | device_id[8] | address u32 | epoch u32 | u16 len cert |
/// u16 len key_wrap
struct ApprovalPayload {
  RequestId request_id{};
  DeviceId device_id{};
  seg::Ipv4 address;
  std::uint32_t epoch = 0;
  pki::Certificate certificate;
  Bytes key_wrap;

  Bytes encode() const;
  static ApprovalPayload decode(ByteView bytes);
};

Bytes key_wrap_ad(const DeviceId& device_id, std::uint32_t epoch);
/// Seals the telemetry key to the device's enrollment (Ed25519) key.
Bytes wrap_telemetry_key(const Key32& telemetry_key, const Key32& device_public_key,
                         const DeviceId& device_id, std::uint32_t epoch, crypto::Rng& rng);
/// Device side; nullopt if the blob was not sealed to this device.
std::optional<Key32> unwrap_telemetry_key(ByteView wrap, const Key32& device_signing_seed,
                                          const DeviceId& device_id, std::uint32_t epoch);

// --- HGE1 framing ----------------------------------------------------------------

enum class MessageType : std::uint8_t {
  Request = 0x01,   // u16 len requested_name | u16 len CSR
  Pending = 0x02,   // request_id[16]
  Approved = 0x03,  // ApprovalPayload
  Denied = 0x04,    // request_id[16] | u16 len reason
  Rejected = 0x05,  // u16 len error code
};

struct EnrollmentMessage {
  MessageType type = MessageType::Request;
  Bytes body;

  /// "HGE1" | version 0x01 | type u8 | body
  Bytes encode() const;
  static EnrollmentMessage decode(ByteView datagram);
};

Bytes make_request_datagram(const std::string& requested_name, const pki::CertSigningRequest& csr);
std::pair<std::string, pki::CertSigningRequest> parse_request_body(ByteView body);

}  // namespace homegate::enroll
