#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "homegate/gateway.hpp"
#include "homegate/ids.hpp"
#include "homegate/telemetry.hpp"

// simfleet: a single-threaded discrete-event network with a device fleet,
// one repeater and scripted attackers, driving the real Gateway in-process.
namespace homegate::sim {

struct LinkModel {
  double loss_prob = 0.0;
  double dup_prob = 0.0;
  UnixMs max_delay_ms = 20;
};

struct FleetSpec {
  std::uint32_t n_direct = 0;
  std::uint32_t n_via_repeater = 0;
  UnixMs send_interval_ms = 1000;
  std::uint64_t duration_s = 60;
  std::uint64_t seed = 0;
  LinkModel direct;          // device <-> gateway
  LinkModel repeater_link;   // device <-> repeater
  LinkModel uplink;          // repeater <-> gateway

  /// Throws InvalidSpec.
  void validate() const;
};

enum class Scenario { Baseline, ReplayAttack, RogueDevice, Flood, DupRepeater, StaleKey };
std::string_view scenario_name(Scenario s);
/// Throws UnknownScenario.
Scenario parse_scenario(std::string_view s);

struct ScenarioParams {
  std::uint32_t replay_count = 50;
  std::uint32_t rogue_count = 20;
  std::uint32_t flood_multiplier = 2;
  std::uint32_t flood_rate = 10;  // gateway ids.flood_rate
};

struct DeviceReport {
  std::string name;
  std::string role;  // DEVICE | REPEATER
  bool via_repeater = false;
  std::optional<std::string> device_id;
  std::string status;  // registry status, or ENROLLMENT_TIMEOUT / ENROLLING
  std::uint64_t sent = 0;
  std::uint64_t stored = 0;
  std::uint64_t last_seq = 0;
  std::uint32_t key_epoch = 0;
};

struct ScenarioReport {
  std::string scenario;
  FleetSpec spec;
  std::uint64_t sent = 0;           // every telemetry datagram emitted by any sender
  std::uint64_t distinct_sent = 0;  // unique (device, seq) from enrolled devices
  std::uint64_t delivered = 0;      // telemetry datagrams that reached ingest
  std::uint64_t stored = 0;         // Stored outcomes
  std::uint64_t store_rows = 0;     // rows in the reading store afterwards
  std::map<std::string, std::uint64_t> rejected;  // by outcome name
  std::map<std::string, std::uint64_t> alerts_by_rule;
  std::map<std::string, std::uint64_t> repeater;
  std::uint64_t enrollment_requests = 0;
  std::uint64_t enrolled = 0;
  std::uint64_t enrollment_timeouts = 0;
  std::uint64_t replays_injected = 0;
  std::uint64_t rogue_injected = 0;
  std::vector<DeviceReport> devices;
  UnixMs virtual_time_ms = 0;
  double wall_ms = 0.0;  // not part of to_json(): runs must compare byte-equal

  std::uint64_t rejected_total() const;
  /// delivered == stored + sum(rejected)
  bool conserved() const { return delivered == stored + rejected_total(); }
  nlohmann::json to_json() const;
  std::string to_table() const;
};

struct Delivery {
  Bytes datagram;
  UnixMs delay = 0;
};

/// Uniform double in [0,1) from the top 53 bits of one draw.
double uniform01(std::mt19937_64& rng);

/// Loss, then duplication, then an independent uniform delay per copy.
std::vector<Delivery> virtual_link_deliver(const Bytes& datagram, const LinkModel& link,
                                           std::mt19937_64& rng);

class Simulation {
 public:
  Simulation(FleetSpec spec, Scenario scenario, ScenarioParams params = {});
  ~Simulation();

  ScenarioReport run();
  core::Gateway& gateway() { return *gw_; }
  const relay::Repeater& repeater() const { return repeater_; }
  const ManualClock& clock() const { return clock_; }

  static constexpr UnixMs kEpoch = 1'700'000'000'000;  // virtual t = 0
  static constexpr UnixMs kEnrollRetryMs = 5000;
  static constexpr int kEnrollRetries = 3;
  static constexpr UnixMs kOperatorDelayMs = 500;
  static constexpr const char* kOperatorToken = "simfleet-operator-token";

 private:
  struct Device;
  struct Event {
    UnixMs at;
    std::uint64_t order;
    std::function<void()> fn;
    bool operator>(const Event& o) const { return at != o.at ? at > o.at : order > o.order; }
  };

  void schedule(UnixMs at, std::function<void()> fn);
  void send_path(Device* from, const Bytes& d);
  void link_send(const LinkModel& link, const Bytes& d, std::function<void(Bytes)> arrive);
  void at_gateway(const Bytes& d, const std::string& source, bool capturable);
  void route_reply(const std::string& address, const Bytes& d);
  void device_receive(Device& dev, const Bytes& d);
  void device_enroll(Device& dev);
  void device_send(Device& dev);
  void schedule_attacks();

  FleetSpec spec_;
  Scenario scenario_;
  ScenarioParams params_;
  ManualClock clock_;
  std::mt19937_64 rng_;
  std::mt19937_64 attacker_rng_;
  std::unique_ptr<core::Gateway> gw_;
  relay::Repeater repeater_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t order_ = 0;
  std::vector<std::unique_ptr<Device>> devices_;
  std::map<std::string, Device*> by_address_;
  std::map<std::string, std::string> zone_for_name_;
  std::vector<Bytes> captured_;
  ScenarioReport report_;
  std::map<relay::DeviceId, Device*> by_id_;
};

/// Convenience: build, run, report.
ScenarioReport run_scenario(std::string_view name, const FleetSpec& spec,
                            const ScenarioParams& params = {});

// --- credential-audit fleet ------------------------------------------------------

struct CredentialFleetOptions {
  bool plant_admin = true;     // one camera with admin/admin
  bool plant_fortinet = true;  // one firewall with the hard-coded support account
  std::uint32_t clean_devices = 3;
  bool include_unreachable = false;
  std::uint64_t seed = 0;
};

/// Mock login endpoints exposed by simulated devices.
std::vector<std::unique_ptr<ids::MockLoginEndpoint>> make_credential_fleet(
    const CredentialFleetOptions& opts);

}  // namespace homegate::sim
