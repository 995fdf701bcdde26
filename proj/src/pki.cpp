#include "homegate/pki.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <mutex>

#include "homegate/fsutil.hpp"

namespace homegate::pki {

namespace {

constexpr std::string_view kVaultMagic = "HGV1";
constexpr std::uint8_t kVaultVersion = 1;
constexpr std::string_view kTelemetrySalt = "HGT1-telemetry";

void check_name(const std::string& s, std::string_view what) {
  if (s.size() > kMaxNameBytes)
    throw Error(Errc::InvalidValue, std::string(what) + " exceeds 128 bytes");
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::Root: return "ROOT";
    case Role::Device: return "DEVICE";
    case Role::Operator: return "OPERATOR";
    case Role::Repeater: return "REPEATER";
  }
  return "?";
}

Role parse_role(std::uint8_t raw) {
  if (raw > 3) throw Error(Errc::Malformed, "unknown certificate role " + std::to_string(raw));
  return static_cast<Role>(raw);
}

std::string_view outcome_name(VerifyOutcome v) {
  switch (v) {
    case VerifyOutcome::Valid: return "Valid";
    case VerifyOutcome::Expired: return "Expired";
    case VerifyOutcome::NotYetValid: return "NotYetValid";
    case VerifyOutcome::BadSignature: return "BadSignature";
    case VerifyOutcome::Revoked: return "Revoked";
    case VerifyOutcome::UnknownIssuer: return "UnknownIssuer";
  }
  return "?";
}

// --- Certificate -----------------------------------------------------------

Bytes Certificate::signed_region() const {
  check_name(subject, "subject");
  check_name(issuer, "issuer");
  ByteWriter w;
  w.raw(serial);
  w.str(subject);
  w.str(issuer);
  w.u8(static_cast<std::uint8_t>(role));
  w.u64(static_cast<std::uint64_t>(not_before));
  w.u64(static_cast<std::uint64_t>(not_after));
  w.raw(public_key);
  return std::move(w).take();
}

Bytes Certificate::encode() const {
  Bytes out = signed_region();
  out.insert(out.end(), signature.begin(), signature.end());
  return out;
}

Certificate Certificate::decode(ByteView bytes) {
  ByteReader r(bytes);
  Certificate c;
  c.serial = r.fixed<16>();
  c.subject = r.str(kMaxNameBytes);
  c.issuer = r.str(kMaxNameBytes);
  c.role = parse_role(r.u8());
  c.not_before = static_cast<UnixSeconds>(r.u64());
  c.not_after = static_cast<UnixSeconds>(r.u64());
  c.public_key = r.fixed<32>();
  c.signature = r.fixed<64>();
  r.expect_end();
  return c;
}

// --- CSR ---------------------------------------------------------------------

Bytes CertSigningRequest::signed_region() const {
  check_name(subject, "subject");
  ByteWriter w;
  w.str(subject);
  w.u8(static_cast<std::uint8_t>(role));
  w.raw(public_key);
  return std::move(w).take();
}

Bytes CertSigningRequest::encode() const {
  Bytes out = signed_region();
  out.insert(out.end(), proof.begin(), proof.end());
  return out;
}

CertSigningRequest CertSigningRequest::decode(ByteView bytes) {
  ByteReader r(bytes);
  CertSigningRequest csr;
  csr.subject = r.str(kMaxNameBytes);
  csr.role = parse_role(r.u8());
  csr.public_key = r.fixed<32>();
  csr.proof = r.fixed<64>();
  r.expect_end();
  return csr;
}

bool CertSigningRequest::proof_valid() const {
  return crypto::verify(proof, signed_region(), public_key);
}

CertSigningRequest CertSigningRequest::make(std::string subject, Role role,
                                            const Key32& signing_seed) {
  CertSigningRequest csr;
  csr.subject = std::move(subject);
  csr.role = role;
  csr.public_key = crypto::signing_keypair_from_seed(signing_seed).public_key;
  csr.proof = crypto::sign(signing_seed, csr.signed_region());
  return csr;
}

// --- RevocationList ----------------------------------------------------------

bool RevocationList::add(const Serial& serial, UnixSeconds at, std::string reason) {
  std::unique_lock lock(mu_);
  for (const auto& e : entries_)
    if (e.serial == serial) return false;
  entries_.push_back({serial, at, std::move(reason)});
  return true;
}

bool RevocationList::contains(const Serial& serial) const {
  std::shared_lock lock(mu_);
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Revocation& e) { return e.serial == serial; });
}

std::vector<Revocation> RevocationList::entries() const {
  std::shared_lock lock(mu_);
  return entries_;
}

std::size_t RevocationList::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

// --- KeyVault ----------------------------------------------------------------

KeyVault::KeyVault(const Key32& master_secret) : master_(master_secret) {
  crypto::ensure_init();
}

KeyVault::~KeyVault() {
  crypto::wipe(master_);
  for (auto& [h, e] : entries_) {
    crypto::wipe(e.signing_seed);
    crypto::wipe(e.secret);
  }
}

VaultHandle KeyVault::create_entry(crypto::Rng& rng) {
  Entry e;
  e.signing_seed = rng.bytes<32>();
  e.secret = rng.bytes<32>();
  const auto handle = VaultHandle::from_token(rng.bytes<16>());
  std::unique_lock lock(mu_);
  if (entries_.count(handle)) throw Error(Errc::VaultFailure, "vault handle collision");
  entries_.emplace(handle, e);
  return handle;
}

const KeyVault::Entry& KeyVault::entry(const VaultHandle& h) const {
  auto it = entries_.find(h);
  if (it == entries_.end()) throw Error(Errc::UnknownHandle, "unknown vault handle");
  return it->second;
}

Key32 KeyVault::public_key(const VaultHandle& h) const {
  std::shared_lock lock(mu_);
  return crypto::signing_keypair_from_seed(entry(h).signing_seed).public_key;
}

Key32 KeyVault::agreement_public_key(const VaultHandle& h) const {
  std::shared_lock lock(mu_);
  return crypto::x25519_public(entry(h).secret);
}

Signature KeyVault::sign(const VaultHandle& h, ByteView message) const {
  std::shared_lock lock(mu_);
  return crypto::sign(entry(h).signing_seed, message);
}

Key32 KeyVault::derive_device_key(const VaultHandle& h, const FixedBytes<8>& device_id,
                                  std::uint32_t epoch) const {
  std::shared_lock lock(mu_);
  ByteWriter info;
  info.raw(device_id);
  info.u32(epoch);
  return to_fixed<32>(
      crypto::hkdf_sha256(entry(h).secret, as_bytes(kTelemetrySalt), info.bytes(), 32));
}

std::size_t KeyVault::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

Bytes KeyVault::seal(crypto::Rng& rng) const {
  ByteWriter plain;
  {
    std::shared_lock lock(mu_);
    plain.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [h, e] : entries_) {
      plain.raw(h.token());
      plain.raw(e.signing_seed);
      plain.raw(e.secret);
    }
  }
  ByteWriter out;
  out.raw(as_bytes(kVaultMagic));
  out.u8(kVaultVersion);
  const Bytes header = out.bytes();
  const auto nonce = rng.bytes<12>();
  out.raw(nonce);
  Bytes plaintext = std::move(plain).take();
  out.raw(crypto::aead_seal(master_, nonce, header, plaintext));
  crypto::wipe(plaintext);
  return std::move(out).take();
}

std::unique_ptr<KeyVault> KeyVault::unseal(const Key32& master_secret, ByteView sealed) {
  ByteReader r(sealed);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kVaultMagic.begin()))
    throw Error(Errc::VaultFailure, "not a vault file");
  if (r.u8() != kVaultVersion) throw Error(Errc::VaultFailure, "unsupported vault version");
  const auto nonce = r.fixed<12>();
  auto plain = crypto::aead_open(master_secret, nonce, sealed.first(5), r.raw(r.remaining()));
  if (!plain) throw Error(Errc::VaultFailure, "vault authentication failed (wrong master?)");
  auto vault = std::make_unique<KeyVault>(master_secret);
  ByteReader pr(*plain);
  const std::uint32_t count = pr.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto token = pr.fixed<16>();
    Entry e;
    e.signing_seed = pr.fixed<32>();
    e.secret = pr.fixed<32>();
    vault->entries_.emplace(VaultHandle::from_token(token), e);
  }
  pr.expect_end();
  crypto::wipe(*plain);
  return vault;
}

void KeyVault::save(const std::filesystem::path& path, crypto::Rng& rng) const {
  try {
    fsutil::write_atomic(path, seal(rng));
  } catch (const Error& e) {
    throw Error(Errc::VaultFailure, std::string("vault storage failure: ") + e.what());
  }
}

std::unique_ptr<KeyVault> KeyVault::load(const Key32& master_secret,
                                         const std::filesystem::path& path) {
  return unseal(master_secret, fsutil::read_file(path));
}

// --- issuance / verification -------------------------------------------------

Serial SerialSource::next() {
  Serial s{};
  if (counter_mode_) {
    put_u64_be(s.data() + 8, next_++);
  } else {
    rng_->fill(s);
  }
  return s;
}

GatewayIdentity generate_root_identity(KeyVault& vault, crypto::Rng& rng,
                                       SerialSource& serials, const Clock& clock,
                                       std::string subject) {
  GatewayIdentity id;
  id.vault_handle = vault.create_entry(rng);
  Certificate& c = id.root_cert;
  c.serial = serials.next();
  c.subject = subject;
  c.issuer = std::move(subject);
  c.role = Role::Root;
  c.not_before = clock.now_s();
  c.not_after = c.not_before + kRootValiditySeconds;
  c.public_key = vault.public_key(id.vault_handle);
  c.signature = vault.sign(id.vault_handle, c.signed_region());
  return id;
}

Certificate issue_certificate(const CertSigningRequest& csr, const GatewayIdentity& issuer,
                              int validity_days, const KeyVault& vault, SerialSource& serials,
                              const Clock& clock) {
  if (csr.role == Role::Root)
    throw Error(Errc::RoleForbidden, "signing requests may not ask for the ROOT role");
  if (!csr.proof_valid()) throw Error(Errc::InvalidProof, "proof of possession does not verify");
  if (issuer.root_cert.role != Role::Root)
    throw Error(Errc::RoleForbidden, "issuer is not a ROOT identity");
  if (validity_days <= 0) throw Error(Errc::InvalidValue, "validity_days must be positive");
  Certificate c;
  c.serial = serials.next();
  c.subject = csr.subject;
  c.issuer = issuer.root_cert.subject;
  c.role = csr.role;
  c.not_before = clock.now_s();
  c.not_after = c.not_before + static_cast<UnixSeconds>(validity_days) * 86400;
  c.public_key = csr.public_key;
  c.signature = vault.sign(issuer.vault_handle, c.signed_region());
  return c;
}

VerifyOutcome verify_chain(const Certificate& cert, const Certificate& root,
                           const RevocationList& revocations, UnixSeconds now) {
  if (root.role != Role::Root || cert.issuer != root.subject) return VerifyOutcome::UnknownIssuer;
  Bytes region;
  try {
    region = cert.signed_region();
  } catch (const Error&) {
    return VerifyOutcome::BadSignature;
  }
  if (!crypto::verify(cert.signature, region, root.public_key))
    return VerifyOutcome::BadSignature;
  if (now < cert.not_before) return VerifyOutcome::NotYetValid;
  if (now >= cert.not_after) return VerifyOutcome::Expired;
  if (revocations.contains(cert.serial)) return VerifyOutcome::Revoked;
  return VerifyOutcome::Valid;
}

void write_certificate(const std::filesystem::path& path, const Certificate& cert) {
  fsutil::write_atomic(path, cert.encode());
}

Certificate read_certificate(const std::filesystem::path& path) {
  return Certificate::decode(fsutil::read_file(path));
}

}  // namespace homegate::pki
