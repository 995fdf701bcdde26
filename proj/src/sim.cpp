#include "homegate/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "homegate/views.hpp"

namespace homegate::sim {

using nlohmann::json;

// --- spec and scenarios ------------------------------------------------------------

void FleetSpec::validate() const {
  auto check = [](const LinkModel& l, const char* which) {
    for (double p : {l.loss_prob, l.dup_prob})
      if (!(p >= 0.0 && p <= 1.0))
        throw Error(Errc::InvalidSpec, std::string(which) + " link probability outside [0,1]");
  };
  check(direct, "direct");
  check(repeater_link, "repeater");
  check(uplink, "uplink");
  if (send_interval_ms == 0) throw Error(Errc::InvalidSpec, "send_interval_ms must be positive");
}

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Baseline: return "baseline";
    case Scenario::ReplayAttack: return "replay_attack";
    case Scenario::RogueDevice: return "rogue_device";
    case Scenario::Flood: return "flood";
    case Scenario::DupRepeater: return "dup_repeater";
    case Scenario::StaleKey: return "stale_key";
  }
  return "?";
}

Scenario parse_scenario(std::string_view s) {
  for (auto sc : {Scenario::Baseline, Scenario::ReplayAttack, Scenario::RogueDevice,
                  Scenario::Flood, Scenario::DupRepeater, Scenario::StaleKey})
    if (scenario_name(sc) == s) return sc;
  throw Error(Errc::UnknownScenario,
              "unknown scenario '" + std::string(s) +
                  "' (expected baseline|replay_attack|rogue_device|flood|dup_repeater|stale_key)");
}

// --- report --------------------------------------------------------------------------

std::uint64_t ScenarioReport::rejected_total() const {
  std::uint64_t n = 0;
  for (const auto& [k, v] : rejected) n += v;
  return n;
}

namespace {

json link_json(const LinkModel& l) {
  return {{"loss_prob", l.loss_prob}, {"dup_prob", l.dup_prob}, {"max_delay_ms", l.max_delay_ms}};
}

}  // namespace

json ScenarioReport::to_json() const {
  json devs = json::array();
  for (const auto& d : devices) {
    json j = {{"name", d.name},        {"role", d.role},         {"via_repeater", d.via_repeater},
              {"status", d.status},    {"sent", d.sent},         {"stored", d.stored},
              {"last_seq", d.last_seq}, {"key_epoch", d.key_epoch}};
    j["device_id"] = d.device_id ? json(*d.device_id) : json(nullptr);
    devs.push_back(j);
  }
  return {{"scenario", scenario},
          {"spec",
           {{"n_direct", spec.n_direct},
            {"n_via_repeater", spec.n_via_repeater},
            {"send_interval_ms", spec.send_interval_ms},
            {"duration_s", spec.duration_s},
            {"seed", spec.seed},
            {"links",
             {{"direct", link_json(spec.direct)},
              {"repeater", link_json(spec.repeater_link)},
              {"uplink", link_json(spec.uplink)}}}}},
          {"sent", sent},
          {"distinct_sent", distinct_sent},
          {"delivered", delivered},
          {"stored", stored},
          {"store_rows", store_rows},
          {"rejected", rejected},
          {"alerts_by_rule", alerts_by_rule},
          {"repeater", repeater},
          {"enrollment",
           {{"requests", enrollment_requests},
            {"enrolled", enrolled},
            {"timeouts", enrollment_timeouts}}},
          {"injected", {{"replays", replays_injected}, {"rogue", rogue_injected}}},
          {"conserved", conserved()},
          {"devices", devs},
          {"virtual_time_ms", virtual_time_ms}};
}

std::string ScenarioReport::to_table() const {
  std::ostringstream o;
  auto row = [&o](const std::string& label) -> std::ostream& {
    return o << std::left << std::setw(24) << label;
  };
  row("scenario") << scenario << "  (seed " << spec.seed << ", " << spec.n_direct << " direct + "
                  << spec.n_via_repeater << " via repeater, " << spec.duration_s << " s)\n";
  row("sent") << sent << "  (distinct " << distinct_sent << ")\n";
  row("delivered") << delivered << "\n";
  row("stored") << stored << "  (store rows " << store_rows << ")\n";
  for (const auto& [k, v] : rejected)
    if (v) row(k) << v << "\n";
  row("conservation") << (conserved() ? "ok" : "VIOLATED") << "\n";
  row("enrollment") << enrolled << " enrolled, " << enrollment_timeouts << " timed out\n";
  for (const auto& [k, v] : alerts_by_rule) row("alerts " + k) << v << "\n";
  if (spec.n_via_repeater)
    row("repeater") << "fwd " << repeater.at("forwarded") << ", dup " << repeater.at("dropped_dup")
                    << ", hops " << repeater.at("dropped_hops") << "\n";
  row("virtual time") << virtual_time_ms << " ms\n\n";
  o << std::left << std::setw(12) << "device" << std::setw(18) << "id" << std::setw(20) << "status"
    << std::setw(8) << "sent" << std::setw(8) << "stored" << "epoch\n";
  for (const auto& d : devices)
    o << std::left << std::setw(12) << d.name << std::setw(18) << d.device_id.value_or("-")
      << std::setw(20) << d.status << std::setw(8) << d.sent << std::setw(8) << d.stored
      << d.key_epoch << "\n";
  return o.str();
}

// --- links --------------------------------------------------------------------------

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::vector<Delivery> virtual_link_deliver(const Bytes& datagram, const LinkModel& link,
                                           std::mt19937_64& rng) {
  // Every call consumes the same draws whatever the probabilities are.
  const double u_loss = uniform01(rng);
  const double u_dup = uniform01(rng);
  std::vector<Delivery> out;
  if (u_loss < link.loss_prob) return out;
  const int copies = u_dup < link.dup_prob ? 2 : 1;
  for (int i = 0; i < copies; ++i) {
    const double u = uniform01(rng);
    const auto delay = std::min<UnixMs>(
        link.max_delay_ms, static_cast<UnixMs>(u * static_cast<double>(link.max_delay_ms + 1)));
    out.push_back({datagram, delay});
  }
  return out;
}

// --- simulation ----------------------------------------------------------------------

struct Simulation::Device {
  enum class State { Idle, Enrolling, Active, TimedOut };
  std::string name;
  std::string address;
  std::string zone;
  pki::Role role = pki::Role::Device;
  bool via_repeater = false;
  bool flood = false;
  crypto::Key32 seed{};
  State state = State::Idle;
  int attempts = 0;
  relay::DeviceId device_id{};
  std::uint32_t epoch = 0;
  crypto::Key32 key{};
  std::uint64_t seq = 0;
  double value = 20.0;
  UnixMs interval = 1000;
  std::uint64_t sent = 0;
  std::uint64_t stored = 0;
};

namespace {

crypto::Key32 derive_seed(std::string_view label, std::uint64_t seed, std::string_view name = {}) {
  ByteWriter w;
  w.str(label);
  w.u64(seed);
  w.str(name);
  return crypto::sha256(w.bytes());
}

constexpr const char* kDirectZone = "direct";
constexpr const char* kMeshZone = "mesh";
constexpr const char* kRelayZone = "relays";

}  // namespace

Simulation::Simulation(FleetSpec spec, Scenario scenario, ScenarioParams params)
    : spec_(std::move(spec)),
      scenario_(scenario),
      params_(params),
      clock_(kEpoch),
      rng_(spec_.seed),
      attacker_rng_(spec_.seed ^ 0x9E3779B97F4A7C15ull),
      repeater_(core::Config{}.relay_max_hops, 1024) {
  spec_.validate();
  if (scenario_ == Scenario::DupRepeater) {
    spec_.repeater_link.dup_prob = 0.1;
    spec_.uplink.dup_prob = 0.1;
  }
  core::Config cfg;
  cfg.operator_token = kOperatorToken;
  cfg.ids_flood_rate = params_.flood_rate;
  cfg.runtime_single_thread = true;
  gw_ = core::Gateway::in_memory(cfg, clock_, derive_seed("simfleet-gateway", spec_.seed));

  gw_->define_zone(kDirectZone, seg::Block::parse("10.20.0.0/16"), seg::ZoneRole::Iot);
  gw_->define_zone(kMeshZone, seg::Block::parse("10.30.0.0/16"), seg::ZoneRole::Iot);
  gw_->define_zone(kRelayZone, seg::Block::parse("10.40.0.0/24"), seg::ZoneRole::Repeater);

  // Scripted operator: approve every pending request after a short delay.
  gw_->subscribe([this](const core::GatewayEvent& ev) {
    if (ev.type != "enrollment" || ev.data.at("state") != "PENDING") return;
    const auto id = to_fixed<16>(from_hex(ev.data.at("id").get<std::string>()));
    const auto name = ev.data.at("requested_name").get<std::string>();
    schedule(clock_.now_ms() + kOperatorDelayMs, [this, id, name] {
      const auto z = zone_for_name_.find(name);
      if (z == zone_for_name_.end()) return;
      try {
        gw_->decide_enrollment(id, core::Approve{z->second}, kOperatorToken);
      } catch (const Error&) {
      }
    });
  });
  gw_->set_outbound([this](const std::string& addr, const Bytes& d) { route_reply(addr, d); });

  report_.scenario = std::string(scenario_name(scenario_));
  report_.spec = spec_;
  for (auto o : {core::IngestOutcome::RejectedReplay, core::IngestOutcome::RejectedUnknown,
                 core::IngestOutcome::RejectedAuth, core::IngestOutcome::RejectedQuarantined,
                 core::IngestOutcome::RejectedRevoked, core::IngestOutcome::RejectedMalformed})
    report_.rejected[std::string(core::ingest_outcome_name(o))] = 0;

  auto add = [&](std::string name, std::string zone, pki::Role role, bool via) {
    auto d = std::make_unique<Device>();
    d->name = std::move(name);
    d->address = "sim/" + d->name;
    d->zone = std::move(zone);
    d->role = role;
    d->via_repeater = via;
    d->seed = derive_seed("simfleet-device", spec_.seed, d->name);
    d->interval = spec_.send_interval_ms;
    d->value = 18.0 + 6.0 * uniform01(rng_);
    zone_for_name_[d->name] = d->zone;
    by_address_[d->address] = d.get();
    devices_.push_back(std::move(d));
  };
  auto numbered = [](const char* prefix, std::uint32_t i) {
    std::ostringstream o;
    o << prefix << std::setw(3) << std::setfill('0') << i;
    return o.str();
  };
  if (spec_.n_via_repeater > 0) add("repeater-1", kRelayZone, pki::Role::Repeater, false);
  for (std::uint32_t i = 1; i <= spec_.n_direct; ++i) add(numbered("direct-", i), kDirectZone, pki::Role::Device, false);
  for (std::uint32_t i = 1; i <= spec_.n_via_repeater; ++i) add(numbered("mesh-", i), kMeshZone, pki::Role::Device, true);

  if (scenario_ == Scenario::Flood) {
    for (auto& d : devices_) {
      if (d->role != pki::Role::Device) continue;
      d->flood = true;
      d->interval = std::max<UnixMs>(1, 1000 / (std::uint64_t{params_.flood_rate} * params_.flood_multiplier));
      break;
    }
  }
}

Simulation::~Simulation() = default;

void Simulation::schedule(UnixMs at, std::function<void()> fn) {
  queue_.push(Event{at, order_++, std::move(fn)});
}

void Simulation::link_send(const LinkModel& link, const Bytes& d, std::function<void(Bytes)> arrive) {
  const UnixMs now = clock_.now_ms();
  for (auto& del : virtual_link_deliver(d, link, rng_)) {
    auto copy = std::make_shared<Bytes>(std::move(del.datagram));
    schedule(now + del.delay, [arrive, copy] { arrive(*copy); });
  }
}

void Simulation::send_path(Device* from, const Bytes& d) {
  const std::string source = from->address;
  if (from->via_repeater) {
    link_send(spec_.repeater_link, d, [this, source](Bytes x) {
      const auto dec = repeater_.forward(x, clock_.now_ms());
      if (dec.kind != relay::ForwardDecision::Kind::Forward) return;
      link_send(spec_.uplink, dec.datagram,
                [this, source](Bytes y) { at_gateway(y, source, true); });
    });
  } else {
    link_send(spec_.direct, d, [this, source](Bytes x) { at_gateway(x, source, true); });
  }
}

void Simulation::at_gateway(const Bytes& d, const std::string& source, bool capturable) {
  if (d.size() >= 4 && std::equal(relay::kEnrollmentMagic.begin(), relay::kEnrollmentMagic.end(), d.begin())) {
    if (auto reply = gw_->handle_datagram(d, source)) route_reply(source, *reply);
    return;
  }
  ++report_.delivered;
  const auto outcome = gw_->ingest(d, source);
  if (outcome != core::IngestOutcome::Stored) {
    ++report_.rejected[std::string(core::ingest_outcome_name(outcome))];
    return;
  }
  ++report_.stored;
  const auto hdr = std::get<relay::EnvelopeHeader>(relay::parse_header(d));
  if (auto it = by_id_.find(hdr.device_id); it != by_id_.end()) ++it->second->stored;

  if (scenario_ == Scenario::ReplayAttack && capturable &&
      captured_.size() < params_.replay_count) {
    captured_.push_back(d);
    const UnixMs delay = 1000 + attacker_rng_() % 2001;
    auto copy = std::make_shared<Bytes>(d);
    schedule(clock_.now_ms() + delay, [this, copy] {
      ++report_.sent;
      ++report_.replays_injected;
      at_gateway(*copy, "sim/attacker", false);
    });
  }
}

void Simulation::route_reply(const std::string& address, const Bytes& d) {
  const auto it = by_address_.find(address);
  if (it == by_address_.end()) return;
  Device* dev = it->second;
  if (dev->via_repeater) {
    link_send(spec_.uplink, d, [this, dev](Bytes x) {
      link_send(spec_.repeater_link, x, [this, dev](Bytes y) { device_receive(*dev, y); });
    });
  } else {
    link_send(spec_.direct, d, [this, dev](Bytes x) { device_receive(*dev, x); });
  }
}

void Simulation::device_receive(Device& dev, const Bytes& d) {
  enroll::EnrollmentMessage msg;
  try {
    msg = enroll::EnrollmentMessage::decode(d);
  } catch (const Error&) {
    return;
  }
  if (msg.type != enroll::MessageType::Approved || dev.state != Device::State::Enrolling) return;
  enroll::ApprovalPayload p;
  try {
    p = enroll::ApprovalPayload::decode(msg.body);
  } catch (const Error&) {
    return;
  }
  const auto key = enroll::unwrap_telemetry_key(p.key_wrap, dev.seed, p.device_id, p.epoch);
  if (!key) return;
  dev.state = Device::State::Active;
  dev.device_id = p.device_id;
  dev.epoch = p.epoch;
  dev.key = *key;
  by_id_[dev.device_id] = &dev;
  ++report_.enrolled;
  if (dev.role != pki::Role::Device) return;
  const UnixMs first = clock_.now_ms() + static_cast<UnixMs>(uniform01(rng_) * static_cast<double>(dev.interval));
  schedule(first, [this, &dev] { device_send(dev); });
}

void Simulation::device_enroll(Device& dev) {
  if (dev.state == Device::State::Active) return;
  if (dev.attempts > kEnrollRetries) {
    dev.state = Device::State::TimedOut;
    ++report_.enrollment_timeouts;
    return;
  }
  dev.state = Device::State::Enrolling;
  ++dev.attempts;
  ++report_.enrollment_requests;
  const auto csr = pki::CertSigningRequest::make(dev.name, dev.role, dev.seed);
  send_path(&dev, enroll::make_request_datagram(dev.name, csr));
  schedule(clock_.now_ms() + kEnrollRetryMs, [this, &dev] { device_enroll(dev); });
}

void Simulation::device_send(Device& dev) {
  const UnixMs t = clock_.now_ms() - kEpoch;
  if (dev.state != Device::State::Active || t >= spec_.duration_s * 1000) return;
  ++dev.seq;
  dev.value += (uniform01(rng_) - 0.5) * 0.2;
  const relay::Reading r{"temp_c", dev.value, clock_.now_ms()};
  const auto dg = relay::encode_envelope(r, dev.key, dev.device_id, dev.seq, dev.epoch);
  ++dev.sent;
  ++report_.sent;
  ++report_.distinct_sent;
  send_path(&dev, dg);
  schedule(clock_.now_ms() + dev.interval, [this, &dev] { device_send(dev); });
}

void Simulation::schedule_attacks() {
  const UnixMs duration_ms = spec_.duration_s * 1000;
  if (scenario_ == Scenario::RogueDevice) {
    relay::DeviceId id{};
    crypto::Key32 key{};
    for (auto& b : id) b = static_cast<std::uint8_t>(attacker_rng_());
    for (auto& b : key) b = static_cast<std::uint8_t>(attacker_rng_());
    for (std::uint32_t k = 0; k < params_.rogue_count; ++k) {
      schedule(kEpoch + 2000 + UnixMs{k} * 1000, [this, id, key, k] {
        const relay::Reading r{"temp_c", 21.0, clock_.now_ms()};
        ++report_.sent;
        ++report_.rogue_injected;
        at_gateway(relay::encode_envelope(r, key, id, k + 1, 0), "sim/rogue", false);
      });
    }
  }
  if (scenario_ == Scenario::StaleKey) {
    schedule(kEpoch + duration_ms / 2, [this] {
      for (auto& d : devices_) {
        if (d->role != pki::Role::Device || d->state != Device::State::Active) continue;
        const auto id = d->device_id;
        try {
          gw_->quarantine(id, "operator drill");
        } catch (const Error&) {
          return;
        }
        // Released a moment later: the gateway moves to epoch+1, the device
        // keeps its old key.
        schedule(clock_.now_ms() + 1, [this, id] {
          try {
            gw_->release(id, kOperatorToken);
          } catch (const Error&) {
          }
        });
        return;
      }
    });
  }
}

ScenarioReport Simulation::run() {
  const auto wall0 = std::chrono::steady_clock::now();
  const UnixMs duration_ms = spec_.duration_s * 1000;

  for (auto& d : devices_) {
    // The repeater comes up first so that relayed requests have a path.
    const UnixMs start = d->role == pki::Role::Repeater
                             ? 0
                             : (spec_.n_via_repeater ? 100 : 0) +
                                   static_cast<UnixMs>(uniform01(rng_) * 1000.0);
    Device* dev = d.get();
    schedule(kEpoch + start, [this, dev] { device_enroll(*dev); });
  }
  for (UnixMs t = 1000; t <= duration_ms; t += 1000) schedule(kEpoch + t, [this] { gw_->tick(); });
  schedule_attacks();

  UnixMs last = kEpoch;
  while (!queue_.empty()) {
    Event ev = queue_.top();
    queue_.pop();
    clock_.set(ev.at);
    last = ev.at;
    ev.fn();
  }

  report_.virtual_time_ms = last - kEpoch;
  report_.store_rows = gw_->stored_count();
  for (const auto& [rule, n] : gw_->alert_counts()) report_.alerts_by_rule[std::string(ids::rule_name(rule))] = n;
  report_.repeater = {{"forwarded", repeater_.forwarded_count()},
                      {"dropped_dup", repeater_.dropped_dup_count()},
                      {"dropped_hops", repeater_.dropped_hops_count()},
                      {"dropped_malformed", repeater_.dropped_malformed_count()}};
  report_.devices.clear();
  for (const auto& d : devices_) {
    DeviceReport r;
    r.name = d->name;
    r.role = std::string(pki::role_name(d->role));
    r.via_repeater = d->via_repeater;
    r.sent = d->sent;
    r.stored = d->stored;
    switch (d->state) {
      case Device::State::Active: {
        r.device_id = to_hex(d->device_id);
        const auto rec = gw_->device(d->device_id);
        r.status = rec ? std::string(enroll::device_status_name(rec->status)) : "UNKNOWN";
        r.last_seq = rec ? rec->last_seq : 0;
        r.key_epoch = rec ? rec->telemetry_key_epoch : 0;
        break;
      }
      case Device::State::TimedOut: r.status = "ENROLLMENT_TIMEOUT"; break;
      default: r.status = "ENROLLING"; break;
    }
    report_.devices.push_back(std::move(r));
  }
  report_.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0).count();
  return report_;
}

ScenarioReport run_scenario(std::string_view name, const FleetSpec& spec,
                            const ScenarioParams& params) {
  Simulation sim(spec, parse_scenario(name), params);
  return sim.run();
}

// --- credential fleet ---------------------------------------------------------------

std::vector<std::unique_ptr<ids::MockLoginEndpoint>> make_credential_fleet(
    const CredentialFleetOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  auto rotated = [&] {
    std::ostringstream o;
    o << std::hex << rng() << rng();
    return o.str();
  };
  std::vector<std::unique_ptr<ids::MockLoginEndpoint>> out;
  std::uint64_t n = 0;
  auto add = [&](std::string id, std::string service, ids::AuthScheme scheme,
                 std::vector<std::pair<std::string, std::string>> accounts, bool reachable = true) {
    out.push_back(std::make_unique<ids::MockLoginEndpoint>(std::move(id), std::move(service), scheme,
                                                           std::move(accounts), reachable,
                                                           opts.seed * 1000 + n++));
  };
  add("camera-1", "http-admin", ids::AuthScheme::Plain,
      {{"admin", opts.plant_admin ? "admin" : rotated()}});
  add("firewall-1", "fortios-ssh", ids::AuthScheme::ChallengeSha256,
      {{"admin", rotated()},
       {"Fortimanager_Access", opts.plant_fortinet ? "FGTAbc11*xy+Qqz27" : rotated()}});
  for (std::uint32_t i = 1; i <= opts.clean_devices; ++i)
    add("plug-" + std::to_string(i), i % 2 ? "http-admin" : "ssh", ids::AuthScheme::Plain,
        {{"admin", rotated()}, {"root", rotated()}});
  if (opts.include_unreachable)
    add("hub-offline", "http-admin", ids::AuthScheme::Plain, {{"admin", "admin"}}, false);
  return out;
}

}  // namespace homegate::sim
