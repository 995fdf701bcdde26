#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "homegate/bytes.hpp"

// Virtual subnets: disjoint IPv4-style address zones, deterministic
// per-device allocation, and an ordered default-deny ruleset evaluated
// natively (first match wins).
namespace homegate::seg {

using DeviceId = FixedBytes<8>;

struct Ipv4 {
  std::uint32_t value = 0;

  static Ipv4 parse(std::string_view text);
  std::string to_string() const;
  friend auto operator<=>(const Ipv4&, const Ipv4&) = default;
};

/// Base address plus prefix length. The base is normalised to the network
/// address on construction.
struct Block {
  Ipv4 base;
  std::uint8_t prefix = 32;

  static Block make(Ipv4 base, std::uint8_t prefix);
  static Block parse(std::string_view text);  // "a.b.c.d/n" or "a.b.c.d"
  static Block host(Ipv4 addr) { return make(addr, 32); }
  static Block any() { return make(Ipv4{0}, 0); }

  std::uint32_t mask() const;
  std::uint64_t size() const { return std::uint64_t{1} << (32 - prefix); }
  Ipv4 first() const { return base; }
  Ipv4 last() const { return Ipv4{base.value | ~mask()}; }
  bool contains(Ipv4 a) const { return (a.value & mask()) == base.value; }
  bool overlaps(const Block& o) const;
  std::string to_string() const;  // always "a.b.c.d/n"

  friend bool operator==(const Block&, const Block&) = default;
};

enum class Proto : std::uint8_t { Any, Udp, Tcp };
enum class Action : std::uint8_t { Allow, Deny };
enum class ZoneRole : std::uint8_t { Iot, Repeater, Operator, Gateway };

std::string_view proto_name(Proto p);
Proto parse_proto(std::string_view s);
std::string_view zone_role_name(ZoneRole r);
ZoneRole parse_zone_role(std::string_view s);

inline constexpr std::uint16_t kTelemetryPort = 5683;
inline constexpr std::uint16_t kOperatorPort = 8080;
inline constexpr std::size_t kMaxZoneName = 32;

struct Grant {
  std::string zone;
  std::optional<std::uint16_t> port;  // nullopt = any port
  Proto proto = Proto::Any;
  friend bool operator==(const Grant&, const Grant&) = default;
};

struct Zone {
  std::string name;
  Block range;
  ZoneRole role = ZoneRole::Iot;
  std::vector<Grant> allow_to;

  /// The gateway's interface inside this zone (host .1); for the GATEWAY
  /// zone, its single address.
  Ipv4 gateway_address() const;
  /// Hosts excluding network, broadcast and the gateway's .1.
  std::uint64_t assignable() const;
  friend bool operator==(const Zone&, const Zone&) = default;
};

struct Rule {
  Action action = Action::Deny;
  Block src = Block::any();
  Block dst = Block::any();
  std::optional<std::uint16_t> port;
  Proto proto = Proto::Any;
  std::string comment;

  bool matches(Ipv4 s, Ipv4 d, std::uint16_t p, Proto pr) const;
  /// iptables-like line, e.g.
  /// "-A FORWARD -s 10.10.1.7/32 -d 10.10.0.1/32 -p udp --dport 5683 -j ACCEPT".
  std::string render() const;
};

/// Ordered rules; the last rule is always the explicit deny-all.
struct RuleSet {
  std::vector<Rule> rules;
  std::string render() const;  // one rule per line, trailing newline
};

struct Assignment {
  std::string zone;
  Ipv4 address;
  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Rule order: (1) DENY per quarantined device; (2) ALLOW IOT/REPEATER
/// zones to the gateway on UDP 5683 (plus IOT zones to each repeater);
/// (3) ALLOW OPERATOR zones to the gateway on TCP 8080; (4) allow_to
/// grants; (5) DENY all.
RuleSet compile_policy(const std::vector<Zone>& zones,
                       const std::map<DeviceId, Assignment>& assignments,
                       const std::set<DeviceId>& quarantined);

Action check_reachability(const RuleSet& rules, Ipv4 src, Ipv4 dst, std::uint16_t port,
                          Proto proto);

/// Zone definitions and address leases. Reads are concurrent, writes
/// serialized; `zones()` / `assignments()` hand out snapshots.
class ZoneRegistry {
 public:
  /// Validates without mutating; define_zone = validate + commit.
  void validate_new_zone(const std::string& name, const Block& range, ZoneRole role) const;
  Zone define_zone(std::string name, Block range, ZoneRole role,
                   std::vector<Grant> allow_to = {});

  /// Lowest free host address; idempotent for an existing lease in the
  /// same zone. Moving a device to a new zone releases the old lease.
  Ipv4 assign_device(const DeviceId& device, const std::string& zone_name);
  /// Address the next assign_device call would return, without leasing.
  Ipv4 peek_assignment(const DeviceId& device, const std::string& zone_name) const;
  void release_device(const DeviceId& device);
  void restore_assignment(const DeviceId& device, Assignment a);

  std::optional<Zone> find(const std::string& name) const;
  std::optional<Assignment> assignment(const DeviceId& device) const;
  std::vector<Zone> zones() const;
  std::map<DeviceId, Assignment> assignments() const;

 private:
  Ipv4 next_free(const Zone& z, const DeviceId& device) const;

  mutable std::shared_mutex mu_;
  std::vector<Zone> zones_;
  std::map<DeviceId, Assignment> leases_;
};

}  // namespace homegate::seg
