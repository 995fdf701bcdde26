#include "homegate/gateway.hpp"

#include <algorithm>

#include "homegate/fsutil.hpp"
#include "homegate/views.hpp"

namespace homegate::core {

namespace fs = std::filesystem;
using nlohmann::json;
using audit::Category;
using enroll::DeviceStatus;
using enroll::RequestState;

std::string_view ingest_outcome_name(IngestOutcome o) {
  switch (o) {
    case IngestOutcome::Stored: return "stored";
    case IngestOutcome::RejectedReplay: return "rejected_replay";
    case IngestOutcome::RejectedUnknown: return "rejected_unknown";
    case IngestOutcome::RejectedAuth: return "rejected_auth";
    case IngestOutcome::RejectedQuarantined: return "rejected_quarantined";
    case IngestOutcome::RejectedRevoked: return "rejected_revoked";
    case IngestOutcome::RejectedMalformed: return "rejected_malformed";
  }
  return "?";
}

namespace {

constexpr std::string_view kMasterSalt = "HGV1-master";

crypto::Key32 master_from_seed(const crypto::Key32& seed) {
  return to_fixed<32>(crypto::hkdf_sha256(seed, as_bytes(kMasterSalt), {}, 32));
}

crypto::Digest ruleset_digest(const seg::RuleSet& rs) {
  return crypto::sha256(as_bytes(rs.render()));
}

Bytes pending_body(const RequestId& id) { return Bytes(id.begin(), id.end()); }

Bytes reply(enroll::MessageType type, Bytes body) {
  return enroll::EnrollmentMessage{type, std::move(body)}.encode();
}

Bytes rejected_reply(std::string_view code) {
  ByteWriter w;
  w.str(code);
  return reply(enroll::MessageType::Rejected, std::move(w).take());
}

json state_json_request(const enroll::EnrollmentRequest& r) {
  json j = request_view(r);
  j["csr"] = to_base64(r.csr.encode());
  return j;
}

enroll::EnrollmentRequest request_from_json(const json& j) {
  enroll::EnrollmentRequest r;
  r.request_id = to_fixed<16>(from_hex(j.at("id").get<std::string>()));
  r.csr = pki::CertSigningRequest::decode(from_base64(j.at("csr").get<std::string>()));
  r.requested_name = j.at("requested_name").get<std::string>();
  r.received_at = j.at("received_at").get<UnixMs>();
  r.source_address = j.at("source_address").get<std::string>();
  r.state = enroll::parse_request_state(j.at("state").get<std::string>());
  r.reason = j.value("reason", "");
  r.decided_at = j.value("decided_at", UnixMs{0});
  if (j.contains("device_id") && !j.at("device_id").is_null())
    r.device_id = to_fixed<8>(from_hex(j.at("device_id").get<std::string>()));
  return r;
}

json state_json_device(const enroll::DeviceRecord& d) {
  json j = device_view(d);
  j["certificate_bytes"] = to_base64(d.certificate.encode());
  return j;
}

enroll::DeviceRecord device_from_json(const json& j) {
  enroll::DeviceRecord d;
  d.device_id = to_fixed<8>(from_hex(j.at("id").get<std::string>()));
  d.name = j.at("name").get<std::string>();
  d.certificate = pki::Certificate::decode(from_base64(j.at("certificate_bytes").get<std::string>()));
  d.zone = j.at("zone").get<std::string>();
  d.telemetry_key_epoch = j.at("telemetry_key_epoch").get<std::uint32_t>();
  d.status = enroll::parse_device_status(j.at("status").get<std::string>());
  d.last_seq = j.at("last_seq").get<std::uint64_t>();
  d.address = seg::Ipv4::parse(j.at("address").get<std::string>());
  d.request_id = to_fixed<16>(from_hex(j.at("request_id").get<std::string>()));
  d.enrolled_at = j.at("enrolled_at").get<UnixMs>();
  d.last_seen = j.at("last_seen").get<UnixMs>();
  return d;
}

}  // namespace

// --- construction -------------------------------------------------------------------

Gateway::Gateway(const Config& config, const Clock& clock, std::unique_ptr<crypto::Rng> rng)
    : config_(config),
      clock_(clock),
      rng_(std::move(rng)),
      sentinel_([&] {
        ids::Thresholds t;
        t.auth_fail_threshold = config.ids_auth_fail_threshold;
        t.flood_rate = config.ids_flood_rate;
        return t;
      }()) {}

Gateway::~Gateway() {
  try {
    persist();
  } catch (...) {
  }
}

std::unique_ptr<Gateway> Gateway::make(const Config& config, const Clock& clock,
                                       std::unique_ptr<crypto::Rng> rng) {
  return std::unique_ptr<Gateway>(new Gateway(config, clock, std::move(rng)));
}

std::unique_ptr<Gateway> Gateway::in_memory(const Config& config, const Clock& clock,
                                            const crypto::Key32& seed) {
  auto gw = make(config, clock, std::make_unique<crypto::Rng>(seed));
  gw->vault_ = std::make_unique<pki::KeyVault>(master_from_seed(seed));
  gw->serials_ = std::make_unique<pki::SerialSource>(*gw->rng_, true);
  gw->identity_ = pki::generate_root_identity(*gw->vault_, *gw->rng_, *gw->serials_, clock);
  gw->audit_ = std::make_unique<audit::AuditLog>();
  gw->store_ = std::make_unique<store::ReadingStore>(config.store_max_readings);
  {
    ByteWriter w;
    w.str("init");
    w.raw(gw->identity_.root_cert.serial);
    w.raw(gw->identity_.root_cert.public_key);
    gw->audit_locked(Category::Config, w.bytes());
  }
  gw->define_zone(std::string(kGatewayZoneName), seg::Block::parse(kGatewayZoneRange),
                  seg::ZoneRole::Gateway);
  return gw;
}

constexpr const char* kPlaceholderPage =
    "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>homegate</title></head>\n"
    "<body><h1>homegate</h1>\n<ul>\n"
    "<li><a href=\"/api/v1/health\">health</a></li>\n"
    "<li><a href=\"/api/v1/devices\">devices</a></li>\n"
    "<li><a href=\"/api/v1/enrollments?state=PENDING\">pending enrollments</a></li>\n"
    "<li><a href=\"/api/v1/alerts\">alerts</a></li>\n"
    "<li><a href=\"/api/v1/zones\">zones</a></li>\n"
    "<li><a href=\"/api/v1/policy/rules\">policy</a></li>\n"
    "</ul></body></html>\n";

InitResult init_data_dir(const fs::path& dir, std::optional<crypto::Key32> seed,
                         const Clock& clock) {
  if (fs::exists(dir / kMasterKeyFile))
    throw Error(Errc::InvalidValue, "data directory " + dir.string() + " is already initialized");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::StorageFailure, "cannot create " + dir.string() + ": " + ec.message());

  crypto::Rng rng = seed ? crypto::Rng(*seed) : crypto::Rng();
  crypto::Key32 master = seed ? master_from_seed(*seed) : crypto::Rng().bytes<32>();
  pki::KeyVault vault(master);
  pki::SerialSource serials(rng, seed.has_value());
  auto identity = pki::generate_root_identity(vault, rng, serials, clock);

  fsutil::write_atomic(dir / kMasterKeyFile, master);
  fs::permissions(dir / kMasterKeyFile, fs::perms::owner_read | fs::perms::owner_write,
                  fs::perm_options::replace, ec);
  crypto::wipe(master);
  vault.save(dir / kVaultFile, rng);
  pki::write_certificate(dir / kRootCertFile, identity.root_cert);

  json state = {{"version", 1},
                {"root_handle", to_hex(identity.vault_handle.token())},
                {"serial_counter_mode", serials.counter_mode()},
                {"serial_next", serials.next_counter()}};
  const std::string text = state.dump(2);
  fsutil::write_atomic(dir / kStateFile, as_bytes(text));
  {
    audit::AuditLog log(dir);
    ByteWriter w;
    w.str("init");
    w.raw(identity.root_cert.serial);
    w.raw(identity.root_cert.public_key);
    log.append(Category::Config, w.bytes(), clock.now_ms());
  }

  // placeholder page until a dashboard build is copied over it
  fs::create_directories(dir / kWwwDir, ec);
  if (!ec && !fs::exists(dir / kWwwDir / "index.html"))
    fsutil::write_atomic(dir / kWwwDir / "index.html", as_bytes(std::string_view(kPlaceholderPage)));

  Config cfg;
  cfg.data_dir = dir;
  auto gw = Gateway::open(cfg, clock);
  gw->define_zone(std::string(kGatewayZoneName), seg::Block::parse(kGatewayZoneRange),
                  seg::ZoneRole::Gateway);
  return {identity.root_cert, dir};
}

std::unique_ptr<Gateway> Gateway::open(const Config& config, const Clock& clock) {
  const fs::path dir = config.data_dir;
  for (const char* f : {kMasterKeyFile, kVaultFile, kRootCertFile, kStateFile})
    if (!fs::exists(dir / f))
      throw Error(Errc::UninitializedDataDir,
                  "data directory " + dir.string() + " is not initialized (missing " + f +
                      "); run `homegate init --data-dir " + dir.string() + "`");
  const Bytes master_raw = fsutil::read_file(dir / kMasterKeyFile);
  if (master_raw.size() != 32) throw Error(Errc::VaultFailure, "master.key must be 32 bytes");
  crypto::Key32 master = to_fixed<32>(master_raw);

  auto gw = make(config, clock, std::make_unique<crypto::Rng>());
  gw->dir_ = dir;
  gw->vault_ = pki::KeyVault::load(master, dir / kVaultFile);
  crypto::wipe(master);
  gw->identity_.root_cert = pki::read_certificate(dir / kRootCertFile);
  gw->audit_ = std::make_unique<audit::AuditLog>(dir);
  gw->store_ = std::make_unique<store::ReadingStore>(dir / kReadingsFile, config.store_max_readings);
  gw->load_state();
  return gw;
}

void Gateway::load_state() {
  const Bytes raw = fsutil::read_file(*dir_ / kStateFile);
  json st;
  try {
    st = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw Error(Errc::StorageFailure, std::string("state.json is unreadable: ") + e.what());
  }
  try {
    identity_.vault_handle = pki::VaultHandle::from_token(
        to_fixed<16>(from_hex(st.at("root_handle").get<std::string>())));
    if (vault_->public_key(identity_.vault_handle) != identity_.root_cert.public_key)
      throw Error(Errc::VaultFailure, "root certificate does not match the vault");
    serials_ = std::make_unique<pki::SerialSource>(*rng_, st.value("serial_counter_mode", false),
                                                   st.value("serial_next", std::uint64_t{1}));
    for (const auto& z : st.value("zones", json::array())) {
      auto zone = zone_from_json(z);
      zones_.define_zone(zone.name, zone.range, zone.role, zone.allow_to);
    }
    for (const auto& a : st.value("assignments", json::array()))
      zones_.restore_assignment(
          to_fixed<8>(from_hex(a.at("device").get<std::string>())),
          seg::Assignment{a.at("zone").get<std::string>(),
                          seg::Ipv4::parse(a.at("address").get<std::string>())});
    for (const auto& r : st.value("enrollments", json::array()))
      enrollments_.insert(request_from_json(r));
    for (const auto& d : st.value("devices", json::array())) {
      auto rec = device_from_json(d);
      // Readings may have been stored after the last state write.
      rec.last_seq = std::max(rec.last_seq, store_->max_seq(rec.device_id));
      if (rec.status == DeviceStatus::Active)
        sentinel_.track_device(rec.device_id, std::max(rec.last_seen, rec.enrolled_at));
      registry_.insert(std::move(rec));
    }
    for (const auto& r : st.value("revocations", json::array()))
      revocations_.add(to_fixed<16>(from_hex(r.at("serial").get<std::string>())),
                       r.at("revoked_at").get<UnixSeconds>(), r.value("reason", ""));
    std::vector<ids::Alert> alerts;
    for (const auto& a : st.value("alerts", json::array())) alerts.push_back(alert_from_json(a));
    sentinel_.restore(std::move(alerts));
  } catch (const json::exception& e) {
    throw Error(Errc::StorageFailure, std::string("state.json is inconsistent: ") + e.what());
  }
  policy_ = project_policy(zones_.zones(), zones_.assignments(), denied_locked());
}

// --- persistence and plumbing -----------------------------------------------------------

void Gateway::persist() {
  std::lock_guard lock(mu_);
  persist_locked();
}

void Gateway::persist_locked() {
  if (!dir_) return;
  json st;
  st["version"] = 1;
  st["root_handle"] = to_hex(identity_.vault_handle.token());
  st["serial_counter_mode"] = serials_->counter_mode();
  st["serial_next"] = serials_->next_counter();
  st["zones"] = json::array();
  for (const auto& z : zones_.zones()) st["zones"].push_back(zone_view(z));
  st["assignments"] = json::array();
  for (const auto& [id, a] : zones_.assignments())
    st["assignments"].push_back(
        {{"device", to_hex(id)}, {"zone", a.zone}, {"address", a.address.to_string()}});
  st["enrollments"] = json::array();
  for (const auto& r : enrollments_.list()) st["enrollments"].push_back(state_json_request(r));
  st["devices"] = json::array();
  for (const auto& d : registry_.list()) st["devices"].push_back(state_json_device(d));
  st["revocations"] = json::array();
  for (const auto& r : revocations_.entries())
    st["revocations"].push_back(
        {{"serial", to_hex(r.serial)}, {"revoked_at", r.revoked_at}, {"reason", r.reason}});
  st["alerts"] = json::array();
  for (const auto& a : sentinel_.alerts()) st["alerts"].push_back(alert_view(a));
  const std::string text = st.dump(2);
  fsutil::write_atomic(*dir_ / kStateFile, as_bytes(text));
}

void Gateway::audit_locked(Category category, const Bytes& body) {
  audit_->append(category, body, clock_.now_ms());
}

bool Gateway::authorize(const std::string& token) const {
  if (config_.operator_token.empty() || token.size() != config_.operator_token.size())
    return false;
  return crypto::constant_time_equal(as_bytes(token), as_bytes(config_.operator_token));
}

void Gateway::require_operator(const std::string& token) const {
  if (!authorize(token)) throw Error(Errc::Unauthorized, "missing or invalid operator token");
}

void Gateway::set_outbound(Outbound out) {
  std::lock_guard lock(mu_);
  outbound_ = std::move(out);
}

std::uint64_t Gateway::subscribe(Subscriber s) {
  std::lock_guard lock(sub_mu_);
  const auto id = next_sub_++;
  subscribers_.emplace(id, std::move(s));
  return id;
}

void Gateway::unsubscribe(std::uint64_t id) {
  std::lock_guard lock(sub_mu_);
  subscribers_.erase(id);
}

void Gateway::emit(const std::string& type, json data) {
  std::vector<Subscriber> subs;
  {
    std::lock_guard lock(sub_mu_);
    for (const auto& [id, s] : subscribers_) subs.push_back(s);
  }
  const GatewayEvent ev{type, std::move(data)};
  for (const auto& s : subs) s(ev);
}

crypto::Key32 Gateway::device_key(const DeviceId& id, std::uint32_t epoch) {
  const auto k = std::make_pair(id, epoch);
  auto it = key_cache_.find(k);
  if (it != key_cache_.end()) return it->second;
  const auto key = vault_->derive_device_key(identity_.vault_handle, id, epoch);
  key_cache_.emplace(k, key);
  return key;
}

// --- policy ------------------------------------------------------------------------------

std::set<DeviceId> Gateway::denied_locked() const {
  std::set<DeviceId> out;
  for (const auto& d : registry_.list())
    if (d.status != DeviceStatus::Active) out.insert(d.device_id);
  return out;
}

seg::RuleSet Gateway::project_policy(const std::vector<seg::Zone>& zones,
                                     const std::map<DeviceId, seg::Assignment>& assignments,
                                     const std::set<DeviceId>& denied) const {
  return seg::compile_policy(zones, assignments, denied);
}

PolicyDelta Gateway::swap_policy_locked(seg::RuleSet next) {
  std::multiset<std::string> before, after;
  for (const auto& r : policy_.rules) before.insert(r.render());
  for (const auto& r : next.rules) after.insert(r.render());
  PolicyDelta d;
  std::set_difference(after.begin(), after.end(), before.begin(), before.end(),
                      std::back_inserter(d.added));
  std::set_difference(before.begin(), before.end(), after.begin(), after.end(),
                      std::back_inserter(d.removed));
  policy_ = std::move(next);
  return d;
}

seg::Zone Gateway::define_zone(const std::string& name, const seg::Block& range,
                               seg::ZoneRole role, std::vector<seg::Grant> allow_to) {
  std::lock_guard lock(mu_);
  zones_.validate_new_zone(name, range, role);
  for (const auto& g : allow_to)
    if (g.zone != name && !zones_.find(g.zone))
      throw Error(Errc::UnknownZone, "grant names unknown zone '" + g.zone + "'");
  auto zones = zones_.zones();
  zones.push_back(seg::Zone{name, range, role, allow_to});
  auto next = project_policy(zones, zones_.assignments(), denied_locked());

  ByteWriter w;
  w.str(name);
  w.str(range.to_string());
  w.u8(static_cast<std::uint8_t>(role));
  w.u16(static_cast<std::uint16_t>(allow_to.size()));
  for (const auto& g : allow_to) {
    w.str(g.zone);
    w.u16(g.port.value_or(0));
    w.u8(static_cast<std::uint8_t>(g.proto));
  }
  w.raw(ruleset_digest(next));
  audit_locked(Category::Zone, w.bytes());

  auto z = zones_.define_zone(name, range, role, std::move(allow_to));
  swap_policy_locked(std::move(next));
  persist_locked();
  return z;
}

std::vector<seg::Zone> Gateway::zones() const { return zones_.zones(); }

seg::RuleSet Gateway::policy() const {
  std::lock_guard lock(mu_);
  return policy_;
}

seg::Action Gateway::check_reachability(seg::Ipv4 src, seg::Ipv4 dst, std::uint16_t port,
                                        seg::Proto proto) const {
  std::lock_guard lock(mu_);
  return seg::check_reachability(policy_, src, dst, port, proto);
}

seg::Ipv4 Gateway::gateway_address() const {
  for (const auto& z : zones_.zones())
    if (z.role == seg::ZoneRole::Gateway) return z.gateway_address();
  return seg::Block::parse(kGatewayZoneRange).base;
}

// --- enrollment -------------------------------------------------------------------------

enroll::EnrollmentRequest Gateway::submit_enrollment(const pki::CertSigningRequest& csr,
                                                     const std::string& requested_name,
                                                     const std::string& source_address) {
  std::lock_guard lock(mu_);
  if (csr.role == pki::Role::Root)
    throw Error(Errc::RoleForbidden, "enrollment cannot request a ROOT certificate");
  if (!csr.proof_valid()) throw Error(Errc::InvalidProof, "possession proof does not verify");
  if (requested_name.size() > enroll::kMaxRequestedName)
    throw Error(Errc::InvalidValue, "requested name longer than 64 bytes");
  enrollments_.check_submit(csr);

  enroll::EnrollmentRequest req;
  do {
    req.request_id = rng_->bytes<16>();
  } while (enrollments_.find(req.request_id));
  req.csr = csr;
  req.requested_name = requested_name;
  req.received_at = clock_.now_ms();
  req.source_address = source_address;

  ByteWriter w;
  w.raw(req.request_id);
  w.raw(csr.public_key);
  w.str(csr.subject);
  w.str(requested_name);
  w.str(source_address);
  audit_locked(Category::Enroll, w.bytes());

  enrollments_.insert(req);
  persist_locked();
  emit("enrollment", request_view(req));

  if (config_.enrollment_auto_approve) {
    for (const auto& z : zones_.zones()) {
      if (z.role != seg::ZoneRole::Iot) continue;
      return approve_locked(req, z.name).request;
    }
  }
  return req;
}

EnrollmentOutcome Gateway::decide_enrollment(const RequestId& id, const Decision& decision,
                                             const std::string& operator_token) {
  require_operator(operator_token);
  std::lock_guard lock(mu_);
  auto req = enrollments_.find(id);
  if (!req) throw Error(Errc::UnknownRequest, "unknown enrollment request " + to_hex(id));
  if (req->state != RequestState::Pending)
    throw Error(Errc::NotPending,
                "request is already " + std::string(enroll::request_state_name(req->state)));
  EnrollmentOutcome out = std::holds_alternative<Approve>(decision)
                              ? approve_locked(*req, std::get<Approve>(decision).zone)
                              : deny_locked(*req, std::get<Deny>(decision).reason);
  if (outbound_) outbound_(out.request.source_address, out.response_datagram);
  return out;
}

EnrollmentOutcome Gateway::approve_locked(const enroll::EnrollmentRequest& req,
                                          const std::string& zone_name) {
  const auto zone = zones_.find(zone_name);
  if (!zone) throw Error(Errc::UnknownZone, "unknown zone '" + zone_name + "'");
  if (zone->role == seg::ZoneRole::Gateway)
    throw Error(Errc::InvalidValue, "devices cannot be placed in the GATEWAY zone");

  DeviceId device_id{};
  do {
    device_id = rng_->bytes<8>();
  } while (device_id == DeviceId{} || registry_.contains(device_id));
  const seg::Ipv4 address = zones_.peek_assignment(device_id, zone_name);
  const auto cert = pki::issue_certificate(req.csr, identity_, enroll::kDefaultValidityDays,
                                           *vault_, *serials_, clock_);
  auto assignments = zones_.assignments();
  assignments[device_id] = seg::Assignment{zone_name, address};
  auto next = project_policy(zones_.zones(), assignments, denied_locked());
  const UnixMs now = clock_.now_ms();

  ByteWriter w;
  w.raw(req.request_id);
  w.u8(1);
  w.raw(device_id);
  w.str(zone_name);
  w.u32(address.value);
  w.raw(cert.serial);
  w.raw(ruleset_digest(next));
  audit_locked(Category::Decide, w.bytes());

  EnrollmentOutcome out;
  out.request = enrollments_.transition(req.request_id, RequestState::Approved,
                                        [&](enroll::EnrollmentRequest& r) {
                                          r.device_id = device_id;
                                          r.decided_at = now;
                                        });
  zones_.assign_device(device_id, zone_name);
  enroll::DeviceRecord dev;
  dev.device_id = device_id;
  dev.name = req.requested_name.empty() ? req.csr.subject : req.requested_name;
  dev.certificate = cert;
  dev.zone = zone_name;
  dev.address = address;
  dev.request_id = req.request_id;
  dev.enrolled_at = now;
  registry_.insert(dev);
  sentinel_.track_device(device_id, now);
  swap_policy_locked(std::move(next));
  persist_locked();

  out.device = dev;
  out.response_datagram = approval_datagram(dev);
  emit("enrollment", request_view(out.request));
  emit("device", device_view(dev));
  return out;
}

EnrollmentOutcome Gateway::deny_locked(const enroll::EnrollmentRequest& req,
                                       const std::string& reason) {
  ByteWriter w;
  w.raw(req.request_id);
  w.u8(0);
  w.str(reason);
  audit_locked(Category::Decide, w.bytes());

  const UnixMs now = clock_.now_ms();
  EnrollmentOutcome out;
  out.request = enrollments_.transition(req.request_id, RequestState::Denied,
                                        [&](enroll::EnrollmentRequest& r) {
                                          r.reason = reason;
                                          r.decided_at = now;
                                        });
  persist_locked();
  ByteWriter body;
  body.raw(req.request_id);
  body.str(reason);
  out.response_datagram = reply(enroll::MessageType::Denied, std::move(body).take());
  emit("enrollment", request_view(out.request));
  return out;
}

Bytes Gateway::approval_datagram(const enroll::DeviceRecord& dev) {
  const auto key = device_key(dev.device_id, dev.telemetry_key_epoch);
  enroll::ApprovalPayload p;
  p.request_id = dev.request_id;
  p.device_id = dev.device_id;
  p.address = dev.address;
  p.epoch = dev.telemetry_key_epoch;
  p.certificate = dev.certificate;
  p.key_wrap = enroll::wrap_telemetry_key(key, dev.certificate.public_key, dev.device_id,
                                          dev.telemetry_key_epoch, *rng_);
  return reply(enroll::MessageType::Approved, p.encode());
}

std::size_t Gateway::sweep_expired_enrollments() {
  std::lock_guard lock(mu_);
  const UnixMs now = clock_.now_ms();
  const auto stale =
      enrollments_.expired_candidates(now, UnixMs{config_.enrollment_pending_ttl_s} * 1000);
  for (const auto& id : stale) {
    ByteWriter w;
    w.raw(id);
    w.u8(2);
    w.str("expired");
    audit_locked(Category::Decide, w.bytes());
    auto r = enrollments_.transition(id, RequestState::Expired, [&](enroll::EnrollmentRequest& q) {
      q.reason = "pending ttl elapsed";
      q.decided_at = now;
    });
    emit("enrollment", request_view(r));
  }
  if (!stale.empty()) persist_locked();
  return stale.size();
}

std::vector<enroll::EnrollmentRequest> Gateway::enrollments(
    std::optional<RequestState> state) const {
  return enrollments_.list(state);
}

RevocationRecord Gateway::revoke_device(const DeviceId& id, const std::string& reason,
                                        const std::string& operator_token) {
  require_operator(operator_token);
  std::lock_guard lock(mu_);
  auto dev = registry_.find(id);
  if (!dev) throw Error(Errc::UnknownDevice, "unknown device " + to_hex(id));
  const auto serial = dev->certificate.serial;
  if (dev->status == DeviceStatus::Revoked) {
    for (const auto& r : revocations_.entries())
      if (r.serial == serial) return RevocationRecord{id, serial, r.revoked_at, r.reason, false};
  }
  auto denied = denied_locked();
  denied.insert(id);
  auto next = project_policy(zones_.zones(), zones_.assignments(), denied);
  const UnixSeconds at = clock_.now_s();

  ByteWriter w;
  w.raw(id);
  w.raw(serial);
  w.str(reason);
  w.raw(ruleset_digest(next));
  audit_locked(Category::Revoke, w.bytes());

  revocations_.add(serial, at, reason);
  auto rec = registry_.update(id, [](enroll::DeviceRecord& d) { d.status = DeviceStatus::Revoked; });
  sentinel_.untrack_device(id);
  for (auto it = key_cache_.begin(); it != key_cache_.end();)
    it = it->first.first == id ? key_cache_.erase(it) : std::next(it);
  swap_policy_locked(std::move(next));
  persist_locked();
  emit("device", device_view(rec));
  return RevocationRecord{id, serial, at, reason, true};
}

// --- devices, quarantine, alerts ------------------------------------------------------------

std::vector<enroll::DeviceRecord> Gateway::devices() const { return registry_.list(); }

std::optional<enroll::DeviceRecord> Gateway::device(const DeviceId& id) const {
  return registry_.find(id);
}

PolicyDelta Gateway::quarantine(const DeviceId& id, const std::string& cause) {
  std::lock_guard lock(mu_);
  return quarantine_locked(id, cause);
}

PolicyDelta Gateway::quarantine_locked(const DeviceId& id, const std::string& cause) {
  auto dev = registry_.find(id);
  if (!dev) throw Error(Errc::UnknownDevice, "unknown device " + to_hex(id));
  if (dev->status == DeviceStatus::Quarantined)
    throw Error(Errc::AlreadyQuarantined, "device " + to_hex(id) + " is already quarantined");
  if (dev->status != DeviceStatus::Active)
    throw Error(Errc::NotActive, "device " + to_hex(id) + " is revoked");
  auto denied = denied_locked();
  denied.insert(id);
  auto next = project_policy(zones_.zones(), zones_.assignments(), denied);

  ByteWriter w;
  w.raw(id);
  w.str(cause);
  w.raw(ruleset_digest(next));
  audit_locked(Category::Quarantine, w.bytes());

  auto rec =
      registry_.update(id, [](enroll::DeviceRecord& d) { d.status = DeviceStatus::Quarantined; });
  sentinel_.untrack_device(id);
  auto delta = swap_policy_locked(std::move(next));
  persist_locked();
  emit("device", device_view(rec));
  return delta;
}

PolicyDelta Gateway::release(const DeviceId& id, const std::string& operator_token) {
  require_operator(operator_token);
  std::lock_guard lock(mu_);
  auto dev = registry_.find(id);
  if (!dev) throw Error(Errc::UnknownDevice, "unknown device " + to_hex(id));
  if (dev->status != DeviceStatus::Quarantined)
    throw Error(Errc::NotQuarantined, "device " + to_hex(id) + " is not quarantined");
  auto denied = denied_locked();
  denied.erase(id);
  auto next = project_policy(zones_.zones(), zones_.assignments(), denied);
  const std::uint32_t epoch = dev->telemetry_key_epoch + 1;

  ByteWriter w;
  w.raw(id);
  w.u32(epoch);
  w.raw(ruleset_digest(next));
  audit_locked(Category::Release, w.bytes());

  auto rec = registry_.update(id, [&](enroll::DeviceRecord& d) {
    d.status = DeviceStatus::Active;
    d.telemetry_key_epoch = epoch;
  });
  sentinel_.track_device(id, clock_.now_ms());
  auto delta = swap_policy_locked(std::move(next));
  persist_locked();
  emit("device", device_view(rec));
  return delta;
}

std::vector<ids::Alert> Gateway::alerts(std::optional<UnixMs> since,
                                        std::optional<bool> acknowledged) const {
  return sentinel_.alerts(since, acknowledged);
}

ids::Alert Gateway::acknowledge_alert(std::uint64_t alert_id) {
  std::lock_guard lock(mu_);
  const auto all = sentinel_.alerts();
  auto it = std::find_if(all.begin(), all.end(),
                         [&](const ids::Alert& a) { return a.alert_id == alert_id; });
  if (it == all.end()) throw Error(Errc::UnknownAlert, "unknown alert " + std::to_string(alert_id));
  if (it->acknowledged) return *it;
  ByteWriter w;
  w.str("alert_ack");
  w.u64(alert_id);
  audit_locked(Category::Config, w.bytes());
  auto a = sentinel_.acknowledge(alert_id);
  persist_locked();
  emit("alert", alert_view(a));
  return a;
}

std::map<ids::RuleId, std::uint64_t> Gateway::alert_counts() const {
  return sentinel_.counts_by_rule();
}

void Gateway::handle_alerts(const std::vector<ids::Alert>& alerts) {
  for (const auto& a : alerts) {
    emit("alert", alert_view(a));
    if (a.rule == ids::RuleId::R4Flood && config_.ids_auto_quarantine && a.device_id) {
      try {
        quarantine_locked(*a.device_id, "R4 flood");
      } catch (const Error&) {
        // already isolated, or the audit write failed: the alert stands
      }
    }
  }
  if (!alerts.empty()) persist_locked();
}

void Gateway::tick() {
  std::lock_guard lock(mu_);
  sweep_expired_enrollments();
  handle_alerts(sentinel_.sweep(clock_.now_ms()));
  persist_locked();
}

pki::VerifyOutcome Gateway::verify_certificate(const pki::Certificate& cert) const {
  return pki::verify_chain(cert, identity_.root_cert, revocations_, clock_.now_s());
}

// --- telemetry --------------------------------------------------------------------------------

IngestOutcome Gateway::ingest(ByteView datagram, const std::string& source_address) {
  std::lock_guard lock(mu_);
  return ingest_locked(datagram, source_address);
}

IngestOutcome Gateway::ingest_locked(ByteView datagram, const std::string& source_address) {
  const UnixMs now = clock_.now_ms();
  auto event = [&](ids::EventKind kind, std::optional<DeviceId> id) {
    handle_alerts(sentinel_.evaluate(ids::SecurityEvent{kind, id, source_address, now}));
  };

  const auto parsed = relay::parse_header(datagram);
  if (std::holds_alternative<relay::DecodeError>(parsed)) return IngestOutcome::RejectedMalformed;
  const auto& hdr = std::get<relay::EnvelopeHeader>(parsed);

  const auto dev = registry_.find(hdr.device_id);
  if (!dev) {
    event(ids::EventKind::UnknownDevice, hdr.device_id);
    return IngestOutcome::RejectedUnknown;
  }
  if (dev->status == DeviceStatus::Quarantined) {
    event(ids::EventKind::QuarantinedTraffic, dev->device_id);
    return IngestOutcome::RejectedQuarantined;
  }
  if (dev->status == DeviceStatus::Revoked) {
    event(ids::EventKind::RevokedTraffic, dev->device_id);
    return IngestOutcome::RejectedRevoked;
  }
  if (hdr.seq <= dev->last_seq) {
    event(ids::EventKind::Replay, dev->device_id);
    return IngestOutcome::RejectedReplay;
  }

  const auto key = device_key(dev->device_id, dev->telemetry_key_epoch);
  const auto decoded = relay::decode_envelope(
      datagram, [&](const relay::DeviceId& id) -> std::optional<relay::DeviceKey> {
        if (id != dev->device_id) return std::nullopt;
        return relay::DeviceKey{key, dev->telemetry_key_epoch};
      });
  if (const auto* err = std::get_if<relay::DecodeError>(&decoded)) {
    if (*err == relay::DecodeError::AuthFailure) {
      event(ids::EventKind::AuthFailure, dev->device_id);
      return IngestOutcome::RejectedAuth;
    }
    return IngestOutcome::RejectedMalformed;
  }
  const auto& env = std::get<relay::DecodedEnvelope>(decoded);

  store::StoredReading row{env.device_id, env.seq,  env.reading.metric,
                           env.reading.value, env.reading.timestamp, now};
  const auto ins = store_->insert(row);
  if (!ins.inserted) {
    event(ids::EventKind::Replay, dev->device_id);
    return IngestOutcome::RejectedReplay;
  }
  if (ins.pruned > 0) {
    ByteWriter w;
    w.str("prune");
    w.u64(ins.pruned);
    try {
      audit_locked(Category::Config, w.bytes());
    } catch (const Error&) {
    }
  }
  registry_.update(dev->device_id, [&](enroll::DeviceRecord& d) {
    d.last_seq = env.seq;
    d.last_seen = now;
  });
  event(ids::EventKind::Clean, dev->device_id);
  return IngestOutcome::Stored;
}

std::optional<Bytes> Gateway::handle_datagram(ByteView datagram,
                                              const std::string& source_address) {
  if (datagram.size() >= 4 &&
      std::equal(relay::kEnrollmentMagic.begin(), relay::kEnrollmentMagic.end(), datagram.begin())) {
    std::lock_guard lock(mu_);
    return handle_enrollment_datagram(datagram, source_address);
  }
  ingest(datagram, source_address);
  return std::nullopt;
}

std::optional<Bytes> Gateway::handle_enrollment_datagram(ByteView datagram,
                                                         const std::string& source_address) {
  std::string name;
  pki::CertSigningRequest csr;
  try {
    const auto msg = enroll::EnrollmentMessage::decode(datagram);
    if (msg.type != enroll::MessageType::Request) return std::nullopt;
    std::tie(name, csr) = enroll::parse_request_body(msg.body);
  } catch (const Error&) {
    return rejected_reply("malformed");
  }

  // A device that lost its reply (or needs a new key epoch) simply asks again.
  if (const auto prev = enrollments_.find_by_public_key(csr.public_key)) {
    if (prev->state == RequestState::Pending && csr.proof_valid())
      return reply(enroll::MessageType::Pending, pending_body(prev->request_id));
    if (prev->state == RequestState::Approved && prev->device_id && csr.proof_valid()) {
      const auto dev = registry_.find(*prev->device_id);
      if (dev && dev->status == DeviceStatus::Active) return approval_datagram(*dev);
      if (dev) return rejected_reply(enroll::device_status_name(dev->status));
    }
  }
  try {
    const auto req = submit_enrollment(csr, name, source_address);
    if (req.state == RequestState::Approved && req.device_id)
      if (const auto dev = registry_.find(*req.device_id)) return approval_datagram(*dev);
    return reply(enroll::MessageType::Pending, pending_body(req.request_id));
  } catch (const Error& e) {
    return rejected_reply(errc_name(e.code()));
  }
}

// --- store and export -----------------------------------------------------------------------

std::vector<store::SeriesPoint> Gateway::query_readings(const DeviceId& id, UnixMs from,
                                                        UnixMs to, std::uint64_t bucket_s,
                                                        store::Aggregate agg) const {
  if (!registry_.contains(id)) throw Error(Errc::UnknownDevice, "unknown device " + to_hex(id));
  return store_->query(id, from, to, bucket_s, agg);
}

store::EncryptedBundle Gateway::export_batch(UnixMs from, UnixMs to,
                                             const crypto::Key32& recipient_public) {
  if (from > to) throw Error(Errc::BadRange, "export range has from > to");
  std::lock_guard lock(mu_);
  const auto rows = store_->range(from, to);
  auto bundle = store::seal_bundle(rows, from, to, recipient_public, clock_.now_ms(), *rng_);
  ByteWriter w;
  w.u64(from);
  w.u64(to);
  w.u32(bundle.header.record_count);
  w.raw(bundle.bundle_hash());
  audit_locked(Category::Export, w.bytes());
  return bundle;
}

}  // namespace homegate::core
