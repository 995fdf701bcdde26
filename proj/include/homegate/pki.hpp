#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "homegate/bytes.hpp"
#include "homegate/clock.hpp"
#include "homegate/crypto.hpp"

// Private single-level certificate hierarchy and the sealed key vault.
namespace homegate::pki {

using crypto::Key32;
using crypto::Signature;
using Serial = FixedBytes<16>;

inline constexpr std::size_t kMaxNameBytes = 128;
inline constexpr UnixSeconds kRootValiditySeconds = 10LL * 365 * 86400;

enum class Role : std::uint8_t { Root = 0, Device = 1, Operator = 2, Repeater = 3 };

std::string_view role_name(Role r);
Role parse_role(std::uint8_t raw);

/// Canonical layout (big-endian): serial[16] | u16 len subject | u16 len
/// issuer | role u8 | not_before i64 | not_after i64 | public_key[32] |
/// signature[64]. The signature covers every byte before it.
struct Certificate {
  Serial serial{};
  std::string subject;
  std::string issuer;
  Role role = Role::Device;
  UnixSeconds not_before = 0;
  UnixSeconds not_after = 0;
  Key32 public_key{};
  Signature signature{};

  Bytes signed_region() const;
  Bytes encode() const;
  static Certificate decode(ByteView bytes);

  friend bool operator==(const Certificate&, const Certificate&) = default;
};

/// subject (u16 len) | role u8 | public_key[32] | proof[64]; the proof is
/// a signature by the requested key over the preceding bytes.
struct CertSigningRequest {
  std::string subject;
  Role role = Role::Device;
  Key32 public_key{};
  Signature proof{};

  Bytes signed_region() const;
  Bytes encode() const;
  static CertSigningRequest decode(ByteView bytes);
  bool proof_valid() const;

  /// Device-side constructor: builds and self-signs a request.
  static CertSigningRequest make(std::string subject, Role role, const Key32& signing_seed);

  friend bool operator==(const CertSigningRequest&, const CertSigningRequest&) = default;
};

enum class VerifyOutcome { Valid, Expired, NotYetValid, BadSignature, Revoked, UnknownIssuer };
std::string_view outcome_name(VerifyOutcome v);

struct Revocation {
  Serial serial{};
  UnixSeconds revoked_at = 0;
  std::string reason;
};

/// Append-only; readers run concurrently with a single serialized writer.
class RevocationList {
 public:
  /// Returns false when the serial is already present (entry unchanged).
  bool add(const Serial& serial, UnixSeconds at, std::string reason);
  bool contains(const Serial& serial) const;
  std::vector<Revocation> entries() const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::vector<Revocation> entries_;
};

/// Opaque reference to a sealed vault entry. Only the vault that minted the
/// token can resolve it.
class VaultHandle {
 public:
  VaultHandle() = default;
  const FixedBytes<16>& token() const { return token_; }
  static VaultHandle from_token(const FixedBytes<16>& t) { return VaultHandle(t); }
  friend bool operator==(const VaultHandle&, const VaultHandle&) = default;
  friend auto operator<=>(const VaultHandle&, const VaultHandle&) = default;

 private:
  explicit VaultHandle(const FixedBytes<16>& t) : token_(t) {}
  FixedBytes<16> token_{};
};

/// Software stand-in for a TPM: private keys are generated inside, used
/// inside and persisted only as ciphertext under a 32-byte master secret.
/// No member function returns private key material.
class KeyVault {
 public:
  explicit KeyVault(const Key32& master_secret);
  KeyVault(const KeyVault&) = delete;
  KeyVault& operator=(const KeyVault&) = delete;
  ~KeyVault();

  VaultHandle create_entry(crypto::Rng& rng);

  Key32 public_key(const VaultHandle& h) const;
  Key32 agreement_public_key(const VaultHandle& h) const;
  Signature sign(const VaultHandle& h, ByteView message) const;
  /// Per-device telemetry key from the entry's secret material.
  Key32 derive_device_key(const VaultHandle& h, const FixedBytes<8>& device_id,
                          std::uint32_t epoch) const;
  std::size_t size() const;

  /// vault.hgv layout: "HGV1" | version u8 | nonce[12] | AEAD(master,
  /// entries) with the 5-byte prefix as associated data.
  Bytes seal(crypto::Rng& rng) const;
  static std::unique_ptr<KeyVault> unseal(const Key32& master_secret, ByteView sealed);

  void save(const std::filesystem::path& path, crypto::Rng& rng) const;
  static std::unique_ptr<KeyVault> load(const Key32& master_secret,
                                        const std::filesystem::path& path);

 private:
  struct Entry {
    Key32 signing_seed{};
    Key32 secret{};
  };
  const Entry& entry(const VaultHandle& h) const;

  Key32 master_;
  mutable std::shared_mutex mu_;
  std::map<VaultHandle, Entry> entries_;
};

struct GatewayIdentity {
  Certificate root_cert;
  VaultHandle vault_handle;
};

/// Serial numbers: 16 random bytes, or a big-endian counter in seeded mode.
class SerialSource {
 public:
  explicit SerialSource(crypto::Rng& rng, bool counter_mode, std::uint64_t next = 1)
      : rng_(&rng), counter_mode_(counter_mode), next_(next) {}
  Serial next();
  bool counter_mode() const { return counter_mode_; }
  std::uint64_t next_counter() const { return next_; }

 private:
  crypto::Rng* rng_;
  bool counter_mode_;
  std::uint64_t next_;
};

inline constexpr std::string_view kRootSubject = "homegate-root";

/// Draws the root entry from `rng` (which is the seeded stream when the
/// caller wants reproducibility) and self-signs a ten-year ROOT certificate.
GatewayIdentity generate_root_identity(KeyVault& vault, crypto::Rng& rng,
                                       SerialSource& serials, const Clock& clock,
                                       std::string subject = std::string(kRootSubject));

Certificate issue_certificate(const CertSigningRequest& csr, const GatewayIdentity& issuer,
                              int validity_days, const KeyVault& vault, SerialSource& serials,
                              const Clock& clock);

/// Checks run in order UnknownIssuer, BadSignature, NotYetValid/Expired,
/// Revoked; first failure wins.
VerifyOutcome verify_chain(const Certificate& cert, const Certificate& root,
                           const RevocationList& revocations, UnixSeconds now);

void write_certificate(const std::filesystem::path& path, const Certificate& cert);
Certificate read_certificate(const std::filesystem::path& path);

}  // namespace homegate::pki
