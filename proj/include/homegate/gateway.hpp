#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "homegate/audit.hpp"
#include "homegate/clock.hpp"
#include "homegate/config.hpp"
#include "homegate/crypto.hpp"
#include "homegate/enrollment.hpp"
#include "homegate/ids.hpp"
#include "homegate/pki.hpp"
#include "homegate/segmentation.hpp"
#include "homegate/store.hpp"
#include "homegate/telemetry.hpp"

// The composition root: one Gateway owns the vault, root identity,
// registries, IDS, audit chain and reading store, and exposes every
// operator and device-facing operation. All mutations are serialized on a
// single mutex, which also makes ingest a per-device critical section.
namespace homegate::core {

using DeviceId = FixedBytes<8>;
using enroll::RequestId;

enum class IngestOutcome {
  Stored,
  RejectedReplay,
  RejectedUnknown,
  RejectedAuth,
  RejectedQuarantined,
  RejectedRevoked,
  RejectedMalformed,
};
std::string_view ingest_outcome_name(IngestOutcome o);

struct Approve {
  std::string zone;
};
struct Deny {
  std::string reason;
};
using Decision = std::variant<Approve, Deny>;

struct EnrollmentOutcome {
  enroll::EnrollmentRequest request;
  std::optional<enroll::DeviceRecord> device;
  /// HGE1 frame to send back to request.source_address.
  Bytes response_datagram;
};

struct PolicyDelta {
  std::vector<std::string> added;    // rendered rules
  std::vector<std::string> removed;
};

struct RevocationRecord {
  DeviceId device_id{};
  pki::Serial serial{};
  UnixSeconds revoked_at = 0;
  std::string reason;
  bool newly_revoked = true;
};

struct GatewayEvent {
  std::string type;  // "alert" | "enrollment" | "device"
  nlohmann::json data;
};

inline constexpr const char* kMasterKeyFile = "master.key";
inline constexpr const char* kVaultFile = "vault.hgv";
inline constexpr const char* kRootCertFile = "root.hgc";
inline constexpr const char* kStateFile = "state.json";
inline constexpr const char* kReadingsFile = "readings.hgr";
inline constexpr const char* kWwwDir = "www";

inline constexpr std::string_view kGatewayZoneName = "gateway";
inline constexpr std::string_view kGatewayZoneRange = "10.10.0.1/32";

struct InitResult {
  pki::Certificate root_cert;
  std::filesystem::path data_dir;
};

/// Creates master secret, sealed vault, self-signed root and the GATEWAY
/// zone. With a seed every generated byte is reproducible.
InitResult init_data_dir(const std::filesystem::path& dir, std::optional<crypto::Key32> seed,
                         const Clock& clock);

class Gateway {
 public:
  /// Opens an initialized data directory; throws UninitializedDataDir.
  static std::unique_ptr<Gateway> open(const Config& config, const Clock& clock);
  /// Fully in-memory instance with a seeded RNG (simulation, tests).
  static std::unique_ptr<Gateway> in_memory(const Config& config, const Clock& clock,
                                            const crypto::Key32& seed);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // --- enrollment ------------------------------------------------------------
  enroll::EnrollmentRequest submit_enrollment(const pki::CertSigningRequest& csr,
                                              const std::string& requested_name,
                                              const std::string& source_address);
  EnrollmentOutcome decide_enrollment(const RequestId& id, const Decision& decision,
                                      const std::string& operator_token);
  /// Moves stale PENDING requests to EXPIRED; returns how many.
  std::size_t sweep_expired_enrollments();
  RevocationRecord revoke_device(const DeviceId& id, const std::string& reason,
                                 const std::string& operator_token);
  std::vector<enroll::EnrollmentRequest> enrollments(
      std::optional<enroll::RequestState> state = std::nullopt) const;

  // --- devices and IDS actions -------------------------------------------------
  std::vector<enroll::DeviceRecord> devices() const;
  std::optional<enroll::DeviceRecord> device(const DeviceId& id) const;
  /// Throws UnknownDevice, AlreadyQuarantined (state unchanged), NotActive.
  PolicyDelta quarantine(const DeviceId& id, const std::string& cause);
  /// Throws NotQuarantined, Unauthorized.
  PolicyDelta release(const DeviceId& id, const std::string& operator_token);
  std::vector<ids::Alert> alerts(std::optional<UnixMs> since = std::nullopt,
                                 std::optional<bool> acknowledged = std::nullopt) const;
  ids::Alert acknowledge_alert(std::uint64_t alert_id);
  std::map<ids::RuleId, std::uint64_t> alert_counts() const;

  // --- telemetry ---------------------------------------------------------------
  IngestOutcome ingest(ByteView datagram, const std::string& source_address);
  /// Single UDP entry point: HGT1 goes to ingest, HGE1 to enrollment.
  /// Returns the reply datagram, if any.
  std::optional<Bytes> handle_datagram(ByteView datagram, const std::string& source_address);

  // --- segmentation ------------------------------------------------------------
  seg::Zone define_zone(const std::string& name, const seg::Block& range, seg::ZoneRole role,
                        std::vector<seg::Grant> allow_to = {});
  std::vector<seg::Zone> zones() const;
  seg::RuleSet policy() const;
  seg::Action check_reachability(seg::Ipv4 src, seg::Ipv4 dst, std::uint16_t port,
                                 seg::Proto proto) const;
  seg::Ipv4 gateway_address() const;

  // --- store, export, audit ----------------------------------------------------
  std::vector<store::SeriesPoint> query_readings(const DeviceId& id, UnixMs from, UnixMs to,
                                                 std::uint64_t bucket_s,
                                                 store::Aggregate agg) const;
  store::EncryptedBundle export_batch(UnixMs from, UnixMs to,
                                      const crypto::Key32& recipient_public);
  std::uint64_t stored_count() const { return store_->size(); }
  audit::IntegrityResult verify_audit() const { return audit_->verify(); }
  std::vector<audit::ChainedAuditRecord> audit_records() const { return audit_->records(); }
  audit::AuditLog& audit_log() { return *audit_; }

  // --- misc --------------------------------------------------------------------
  bool authorize(const std::string& operator_token) const;
  /// Periodic housekeeping: enrollment expiry and the R5 silence sweep.
  void tick();
  const pki::Certificate& root_certificate() const { return identity_.root_cert; }
  pki::VerifyOutcome verify_certificate(const pki::Certificate& cert) const;
  const pki::RevocationList& revocations() const { return revocations_; }
  const Config& config() const { return config_; }
  const Clock& clock() const { return clock_; }

  /// Where unsolicited replies (approval after an operator decision) go.
  using Outbound = std::function<void(const std::string& address, const Bytes& datagram)>;
  void set_outbound(Outbound out);

  using Subscriber = std::function<void(const GatewayEvent&)>;
  std::uint64_t subscribe(Subscriber s);
  void unsubscribe(std::uint64_t id);

  /// Writes state.json (no-op in memory). Called after every mutation.
  void persist();

 private:
  Gateway(const Config& config, const Clock& clock, std::unique_ptr<crypto::Rng> rng);
  static std::unique_ptr<Gateway> make(const Config& config, const Clock& clock,
                                       std::unique_ptr<crypto::Rng> rng);

  void require_operator(const std::string& token) const;
  void emit(const std::string& type, nlohmann::json data);
  void audit_locked(audit::Category category, const Bytes& body);
  std::set<DeviceId> denied_locked() const;
  seg::RuleSet project_policy(const std::vector<seg::Zone>& zones,
                              const std::map<DeviceId, seg::Assignment>& assignments,
                              const std::set<DeviceId>& denied) const;
  PolicyDelta swap_policy_locked(seg::RuleSet next);
  crypto::Key32 device_key(const DeviceId& id, std::uint32_t epoch);
  EnrollmentOutcome approve_locked(const enroll::EnrollmentRequest& req, const std::string& zone);
  EnrollmentOutcome deny_locked(const enroll::EnrollmentRequest& req, const std::string& reason);
  PolicyDelta quarantine_locked(const DeviceId& id, const std::string& cause);
  Bytes approval_datagram(const enroll::DeviceRecord& dev);
  std::optional<Bytes> handle_enrollment_datagram(ByteView datagram,
                                                  const std::string& source_address);
  void handle_alerts(const std::vector<ids::Alert>& alerts);
  IngestOutcome ingest_locked(ByteView datagram, const std::string& source_address);
  void persist_locked();
  void load_state();

  Config config_;
  const Clock& clock_;
  std::unique_ptr<crypto::Rng> rng_;
  std::optional<std::filesystem::path> dir_;

  mutable std::recursive_mutex mu_;
  std::unique_ptr<pki::KeyVault> vault_;
  pki::GatewayIdentity identity_;
  std::unique_ptr<pki::SerialSource> serials_;
  pki::RevocationList revocations_;
  enroll::EnrollmentTable enrollments_;
  enroll::DeviceRegistry registry_;
  seg::ZoneRegistry zones_;
  seg::RuleSet policy_;
  ids::Sentinel sentinel_;
  std::unique_ptr<audit::AuditLog> audit_;
  std::unique_ptr<store::ReadingStore> store_;
  std::map<std::pair<DeviceId, std::uint32_t>, crypto::Key32> key_cache_;
  Outbound outbound_;

  std::mutex sub_mu_;
  std::map<std::uint64_t, Subscriber> subscribers_;
  std::uint64_t next_sub_ = 1;
};

}  // namespace homegate::core
