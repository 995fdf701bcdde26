#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "homegate/bytes.hpp"
#include "homegate/clock.hpp"

// Rule-based intrusion detection over the ingest event stream, plus the
// default-credential audit against simulator login endpoints.
namespace homegate::ids {

using DeviceId = FixedBytes<8>;

enum class EventKind : std::uint8_t {
  Clean,
  UnknownDevice,
  Replay,
  AuthFailure,
  QuarantinedTraffic,
  RevokedTraffic,
};
std::string_view event_kind_name(EventKind k);

struct SecurityEvent {
  EventKind kind = EventKind::Clean;
  std::optional<DeviceId> device_id;
  std::string source_address;
  UnixMs at = 0;
};

enum class RuleId : std::uint8_t { R1Unknown, R2Replay, R3Auth, R4Flood, R5Silent };
enum class Severity : std::uint8_t { Info, Warn, Crit };
std::string_view rule_name(RuleId r);
std::string_view severity_name(Severity s);

struct Alert {
  std::uint64_t alert_id = 0;
  RuleId rule = RuleId::R1Unknown;
  std::optional<DeviceId> device_id;
  std::string source;
  Severity severity = Severity::Info;
  UnixMs at = 0;
  std::string detail;
  bool acknowledged = false;
};

struct Thresholds {
  UnixMs window_ms = 60'000;            // R1/R2/R3 window and re-alert suppression
  std::uint32_t auth_fail_threshold = 5;
  std::uint32_t flood_rate = 10;        // envelopes per second
  UnixMs flood_window_ms = 10'000;
  UnixMs silence_ms = 24ull * 3600 * 1000;
};

/// Evaluates events in arrival order. At most one alert per (rule, key)
/// per window, so bursts cannot turn into alert storms.
class Sentinel {
 public:
  explicit Sentinel(Thresholds t = {});

  /// Appends and returns the alerts raised by this event.
  std::vector<Alert> evaluate(const SecurityEvent& event);

  /// Marks `device` as expected to report; silence is measured from `since`
  /// until the next CLEAN event.
  void track_device(const DeviceId& device, UnixMs since);
  void untrack_device(const DeviceId& device);
  /// R5: raises INFO for tracked devices silent for longer than silence_ms.
  std::vector<Alert> sweep(UnixMs now);

  std::vector<Alert> alerts(std::optional<UnixMs> since = std::nullopt,
                            std::optional<bool> acknowledged = std::nullopt) const;
  /// Only mutation an alert ever sees. Throws UnknownAlert.
  Alert acknowledge(std::uint64_t alert_id);
  /// Restores persisted alerts (ids continue after the largest one).
  void restore(std::vector<Alert> alerts);
  std::map<RuleId, std::uint64_t> counts_by_rule() const;
  const Thresholds& thresholds() const { return t_; }

 private:
  bool suppressed(RuleId rule, const std::string& key, UnixMs at);
  Alert& raise(RuleId rule, Severity sev, const SecurityEvent& ev, std::string key,
               std::string detail);

  Thresholds t_;
  mutable std::mutex mu_;
  std::vector<Alert> alerts_;
  std::uint64_t next_id_ = 1;
  std::map<std::pair<RuleId, std::string>, UnixMs> last_fired_;
  std::map<std::string, std::deque<UnixMs>> auth_failures_;
  std::map<std::string, std::deque<UnixMs>> envelopes_;
  struct Silence {
    UnixMs last_clean = 0;
    bool alerted = false;
  };
  std::map<DeviceId, Silence> silence_;
};

// --- default-credential audit --------------------------------------------------

struct DictionaryEntry {
  std::size_t id = 0;  // 1-based line order among entries
  std::string service;
  std::string username;
  std::string password;
};

/// `service<TAB>username<TAB>password` lines; '#' comments and blank lines
/// are skipped. Throws ParseError naming the line.
std::vector<DictionaryEntry> parse_dictionary(std::string_view text);
std::vector<DictionaryEntry> load_dictionary(const std::filesystem::path& path);

enum class AuthScheme { Plain, ChallengeSha256 };

/// A login surface exposed by a simulated device. ChallengeSha256
/// endpoints expect SHA-256(challenge || password) instead of the password.
class LoginEndpoint {
 public:
  virtual ~LoginEndpoint() = default;
  virtual std::string target_id() const = 0;
  virtual std::string service() const = 0;
  virtual AuthScheme scheme() const = 0;
  /// Throws TargetUnreachable.
  virtual Bytes challenge() = 0;
  virtual bool login(const std::string& username, ByteView proof) = 0;
};

class MockLoginEndpoint final : public LoginEndpoint {
 public:
  MockLoginEndpoint(std::string target_id, std::string service, AuthScheme scheme,
                    std::vector<std::pair<std::string, std::string>> accounts,
                    bool reachable = true, std::uint64_t challenge_seed = 0);

  std::string target_id() const override { return id_; }
  std::string service() const override { return service_; }
  AuthScheme scheme() const override { return scheme_; }
  Bytes challenge() override;
  bool login(const std::string& username, ByteView proof) override;

  std::uint64_t attempts() const { return attempts_; }
  const std::vector<UnixMs>& attempt_times() const { return attempt_times_; }
  void attach_clock(const Clock* clock) { clock_ = clock; }

 private:
  std::string id_;
  std::string service_;
  AuthScheme scheme_;
  std::vector<std::pair<std::string, std::string>> accounts_;
  bool reachable_;
  std::uint64_t counter_;
  Bytes pending_challenge_;
  std::uint64_t attempts_ = 0;
  std::vector<UnixMs> attempt_times_;
  const Clock* clock_ = nullptr;
};

struct CredentialFinding {
  std::string target_id;
  std::string service;
  std::string username;
  std::string password;  // kept on the record only; every rendering masks it
  std::size_t entry_id = 0;

  std::string masked_password() const;
};

struct CredentialScanReport {
  std::vector<CredentialFinding> findings;
  std::vector<std::string> unreachable;
  std::uint64_t attempts = 0;
};

/// Paces attempts to at most `per_second` per target using `wait_until`
/// (a real sleep or a virtual-clock advance).
struct ScanPacing {
  const Clock* clock = nullptr;
  std::function<void(UnixMs)> wait_until;
  std::uint32_t per_second = 2;
};

CredentialScanReport audit_default_credentials(const std::vector<LoginEndpoint*>& targets,
                                               const std::vector<DictionaryEntry>& dictionary,
                                               const ScanPacing& pacing);

}  // namespace homegate::ids
