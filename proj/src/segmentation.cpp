#include "homegate/segmentation.hpp"

#include <algorithm>
#include <charconv>
#include <mutex>
#include <sstream>

namespace homegate::seg {

namespace {

unsigned parse_uint(std::string_view s, unsigned max, std::string_view what) {
  unsigned v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty() || v > max)
    throw Error(Errc::InvalidAddress, "invalid " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

}  // namespace

Ipv4 Ipv4::parse(std::string_view text) {
  std::uint32_t v = 0;
  int parts = 0;
  while (true) {
    const auto dot = text.find('.');
    const auto part = text.substr(0, dot);
    v = (v << 8) | parse_uint(part, 255, "address octet");
    ++parts;
    if (dot == std::string_view::npos) break;
    text.remove_prefix(dot + 1);
  }
  if (parts != 4) throw Error(Errc::InvalidAddress, "address needs four octets");
  return Ipv4{v};
}

std::string Ipv4::to_string() const {
  return std::to_string(value >> 24) + "." + std::to_string((value >> 16) & 0xFF) + "." +
         std::to_string((value >> 8) & 0xFF) + "." + std::to_string(value & 0xFF);
}

Block Block::make(Ipv4 base, std::uint8_t prefix) {
  if (prefix > 32) throw Error(Errc::InvalidAddress, "prefix length above 32");
  Block b;
  b.prefix = prefix;
  b.base = Ipv4{base.value & b.mask()};
  return b;
}

Block Block::parse(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return host(Ipv4::parse(text));
  const Ipv4 addr = Ipv4::parse(text.substr(0, slash));
  const auto prefix = static_cast<std::uint8_t>(parse_uint(text.substr(slash + 1), 32, "prefix"));
  Block b = make(addr, prefix);
  if (b.base != addr)
    throw Error(Errc::InvalidAddress, "address block '" + std::string(text) +
                                          "' has host bits set");
  return b;
}

std::uint32_t Block::mask() const {
  return prefix == 0 ? 0u : ~std::uint32_t{0} << (32 - prefix);
}

bool Block::overlaps(const Block& o) const {
  return contains(o.base) || o.contains(base);
}

std::string Block::to_string() const { return base.to_string() + "/" + std::to_string(prefix); }

std::string_view proto_name(Proto p) {
  switch (p) {
    case Proto::Any: return "any";
    case Proto::Udp: return "udp";
    case Proto::Tcp: return "tcp";
  }
  return "?";
}

Proto parse_proto(std::string_view s) {
  if (s == "udp" || s == "UDP") return Proto::Udp;
  if (s == "tcp" || s == "TCP") return Proto::Tcp;
  if (s == "any" || s == "ANY") return Proto::Any;
  throw Error(Errc::InvalidValue, "unknown protocol '" + std::string(s) + "'");
}

std::string_view zone_role_name(ZoneRole r) {
  switch (r) {
    case ZoneRole::Iot: return "IOT";
    case ZoneRole::Repeater: return "REPEATER";
    case ZoneRole::Operator: return "OPERATOR";
    case ZoneRole::Gateway: return "GATEWAY";
  }
  return "?";
}

ZoneRole parse_zone_role(std::string_view s) {
  if (s == "IOT") return ZoneRole::Iot;
  if (s == "REPEATER") return ZoneRole::Repeater;
  if (s == "OPERATOR") return ZoneRole::Operator;
  if (s == "GATEWAY") return ZoneRole::Gateway;
  throw Error(Errc::InvalidValue, "unknown zone role '" + std::string(s) + "'");
}

Ipv4 Zone::gateway_address() const {
  if (role == ZoneRole::Gateway) return range.base;
  return Ipv4{range.base.value + 1};
}

std::uint64_t Zone::assignable() const {
  if (role == ZoneRole::Gateway || range.prefix >= 31) return 0;
  return range.size() - 3;
}

// --- rules -------------------------------------------------------------------

bool Rule::matches(Ipv4 s, Ipv4 d, std::uint16_t p, Proto pr) const {
  if (!src.contains(s) || !dst.contains(d)) return false;
  if (proto != Proto::Any && proto != pr) return false;
  if (port && *port != p) return false;
  return true;
}

std::string Rule::render() const {
  std::string out = "-A FORWARD";
  if (src.prefix != 0) out += " -s " + src.to_string();
  if (dst.prefix != 0) out += " -d " + dst.to_string();
  if (proto != Proto::Any) out += " -p " + std::string(proto_name(proto));
  if (port) out += " --dport " + std::to_string(*port);
  out += action == Action::Allow ? " -j ACCEPT" : " -j DROP";
  return out;
}

std::string RuleSet::render() const {
  std::string out;
  for (const auto& r : rules) out += r.render() + "\n";
  return out;
}

RuleSet compile_policy(const std::vector<Zone>& zones,
                       const std::map<DeviceId, Assignment>& assignments,
                       const std::set<DeviceId>& quarantined) {
  RuleSet rs;
  auto add = [&](Action a, Block s, Block d, std::optional<std::uint16_t> port, Proto p,
                 std::string comment) {
    rs.rules.push_back(Rule{a, s, d, port, p, std::move(comment)});
  };

  // (1) quarantine dominates everything else.
  for (const auto& dev : quarantined) {
    auto it = assignments.find(dev);
    if (it == assignments.end()) continue;
    add(Action::Deny, Block::host(it->second.address), Block::any(), std::nullopt, Proto::Any,
        "quarantine " + to_hex(dev));
  }

  const Zone* gateway_zone = nullptr;
  for (const auto& z : zones)
    if (z.role == ZoneRole::Gateway) gateway_zone = &z;

  // Each zone reaches the gateway on its in-zone interface and, when a
  // GATEWAY zone is defined, on the gateway's canonical address.
  auto gateway_grants = [&](const Zone& z, std::uint16_t port, Proto proto) {
    add(Action::Allow, z.range, Block::host(z.gateway_address()), port, proto,
        z.name + " -> gateway (local)");
    if (gateway_zone)
      add(Action::Allow, z.range, gateway_zone->range, port, proto, z.name + " -> gateway");
  };

  // (2) device zones -> gateway telemetry port; IOT zones -> repeaters.
  for (const auto& z : zones)
    if (z.role == ZoneRole::Iot || z.role == ZoneRole::Repeater)
      gateway_grants(z, kTelemetryPort, Proto::Udp);
  for (const auto& rz : zones) {
    if (rz.role != ZoneRole::Repeater) continue;
    for (const auto& [dev, a] : assignments) {
      if (a.zone != rz.name) continue;
      for (const auto& iz : zones)
        if (iz.role == ZoneRole::Iot)
          add(Action::Allow, iz.range, Block::host(a.address), kTelemetryPort, Proto::Udp,
              iz.name + " -> repeater " + to_hex(dev));
    }
  }

  // (3) operator zones -> API.
  for (const auto& z : zones)
    if (z.role == ZoneRole::Operator) gateway_grants(z, kOperatorPort, Proto::Tcp);

  // (4) explicit grants; grants naming unknown zones are skipped.
  for (const auto& z : zones) {
    for (const auto& g : z.allow_to) {
      auto target = std::find_if(zones.begin(), zones.end(),
                                 [&](const Zone& t) { return t.name == g.zone; });
      if (target == zones.end()) continue;
      add(Action::Allow, z.range, target->range, g.port, g.proto, z.name + " -> " + g.zone);
    }
  }

  // (5)
  add(Action::Deny, Block::any(), Block::any(), std::nullopt, Proto::Any, "default deny");
  return rs;
}

Action check_reachability(const RuleSet& rules, Ipv4 src, Ipv4 dst, std::uint16_t port,
                          Proto proto) {
  for (const auto& r : rules.rules)
    if (r.matches(src, dst, port, proto)) return r.action;
  return Action::Deny;
}

// --- registry ------------------------------------------------------------------

void ZoneRegistry::validate_new_zone(const std::string& name, const Block& range,
                                     ZoneRole role) const {
  if (name.empty() || name.size() > kMaxZoneName)
    throw Error(Errc::InvalidValue, "zone name must be 1..32 bytes");
  if (role == ZoneRole::Gateway && range.prefix != 32)
    throw Error(Errc::InvalidValue, "the GATEWAY zone holds exactly one address (/32)");
  std::shared_lock lock(mu_);
  for (const auto& z : zones_) {
    if (z.name == name) throw Error(Errc::DuplicateName, "zone '" + name + "' already exists");
    if (role == ZoneRole::Gateway && z.role == ZoneRole::Gateway)
      throw Error(Errc::DuplicateName, "a GATEWAY zone is already defined");
  }
  for (const auto& z : zones_)
    if (z.range.overlaps(range))
      throw Error(Errc::OverlappingRange,
                  range.to_string() + " overlaps zone '" + z.name + "' " + z.range.to_string());
}

Zone ZoneRegistry::define_zone(std::string name, Block range, ZoneRole role,
                               std::vector<Grant> allow_to) {
  validate_new_zone(name, range, role);
  std::unique_lock lock(mu_);
  // Re-check under the write lock: another writer may have raced us.
  for (const auto& z : zones_)
    if (z.name == name || z.range.overlaps(range))
      throw Error(z.name == name ? Errc::DuplicateName : Errc::OverlappingRange,
                  "zone conflicts with '" + z.name + "'");
  zones_.push_back(Zone{std::move(name), range, role, std::move(allow_to)});
  return zones_.back();
}

Ipv4 ZoneRegistry::next_free(const Zone& z, const DeviceId& device) const {
  if (z.assignable() == 0)
    throw Error(Errc::ZoneExhausted, "zone '" + z.name + "' has no assignable addresses");
  std::set<std::uint32_t> used;
  for (const auto& [dev, a] : leases_)
    if (a.zone == z.name && dev != device) used.insert(a.address.value);
  const std::uint32_t first = z.range.base.value + 2;
  const std::uint32_t last = z.range.last().value - 1;
  for (std::uint32_t v = first; v <= last; ++v)
    if (!used.count(v)) return Ipv4{v};
  throw Error(Errc::ZoneExhausted, "zone '" + z.name + "' is exhausted");
}

Ipv4 ZoneRegistry::peek_assignment(const DeviceId& device, const std::string& zone_name) const {
  std::shared_lock lock(mu_);
  auto zit = std::find_if(zones_.begin(), zones_.end(),
                          [&](const Zone& z) { return z.name == zone_name; });
  if (zit == zones_.end()) throw Error(Errc::UnknownZone, "unknown zone '" + zone_name + "'");
  auto lit = leases_.find(device);
  if (lit != leases_.end() && lit->second.zone == zone_name) return lit->second.address;
  return next_free(*zit, device);
}

Ipv4 ZoneRegistry::assign_device(const DeviceId& device, const std::string& zone_name) {
  std::unique_lock lock(mu_);
  auto zit = std::find_if(zones_.begin(), zones_.end(),
                          [&](const Zone& z) { return z.name == zone_name; });
  if (zit == zones_.end()) throw Error(Errc::UnknownZone, "unknown zone '" + zone_name + "'");
  auto lit = leases_.find(device);
  if (lit != leases_.end() && lit->second.zone == zone_name) return lit->second.address;
  const Ipv4 addr = next_free(*zit, device);
  leases_[device] = Assignment{zone_name, addr};
  return addr;
}

void ZoneRegistry::release_device(const DeviceId& device) {
  std::unique_lock lock(mu_);
  leases_.erase(device);
}

void ZoneRegistry::restore_assignment(const DeviceId& device, Assignment a) {
  std::unique_lock lock(mu_);
  leases_[device] = std::move(a);
}

std::optional<Zone> ZoneRegistry::find(const std::string& name) const {
  std::shared_lock lock(mu_);
  for (const auto& z : zones_)
    if (z.name == name) return z;
  return std::nullopt;
}

std::optional<Assignment> ZoneRegistry::assignment(const DeviceId& device) const {
  std::shared_lock lock(mu_);
  auto it = leases_.find(device);
  if (it == leases_.end()) return std::nullopt;
  return it->second;
}

std::vector<Zone> ZoneRegistry::zones() const {
  std::shared_lock lock(mu_);
  return zones_;
}

std::map<DeviceId, Assignment> ZoneRegistry::assignments() const {
  std::shared_lock lock(mu_);
  return leases_;
}

}  // namespace homegate::seg
