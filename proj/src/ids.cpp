#include "homegate/ids.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "homegate/crypto.hpp"
#include "homegate/fsutil.hpp"

namespace homegate::ids {

std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Clean: return "CLEAN";
    case EventKind::UnknownDevice: return "UNKNOWN_DEVICE";
    case EventKind::Replay: return "REPLAY";
    case EventKind::AuthFailure: return "AUTH_FAILURE";
    case EventKind::QuarantinedTraffic: return "QUARANTINED_TRAFFIC";
    case EventKind::RevokedTraffic: return "REVOKED_TRAFFIC";
  }
  return "?";
}

std::string_view rule_name(RuleId r) {
  switch (r) {
    case RuleId::R1Unknown: return "R1_UNKNOWN";
    case RuleId::R2Replay: return "R2_REPLAY";
    case RuleId::R3Auth: return "R3_AUTH";
    case RuleId::R4Flood: return "R4_FLOOD";
    case RuleId::R5Silent: return "R5_SILENT";
  }
  return "?";
}

std::string_view severity_name(Severity s) {
  switch (s) {
    case Severity::Info: return "INFO";
    case Severity::Warn: return "WARN";
    case Severity::Crit: return "CRIT";
  }
  return "?";
}

Sentinel::Sentinel(Thresholds t) : t_(t) {}

bool Sentinel::suppressed(RuleId rule, const std::string& key, UnixMs at) {
  auto it = last_fired_.find({rule, key});
  return it != last_fired_.end() && at < it->second + t_.window_ms;
}

Alert& Sentinel::raise(RuleId rule, Severity sev, const SecurityEvent& ev, std::string key,
                       std::string detail) {
  last_fired_[{rule, key}] = ev.at;
  Alert a;
  a.alert_id = next_id_++;
  a.rule = rule;
  a.device_id = ev.device_id;
  a.source = ev.source_address;
  a.severity = sev;
  a.at = ev.at;
  a.detail = std::move(detail);
  alerts_.push_back(std::move(a));
  return alerts_.back();
}

std::vector<Alert> Sentinel::evaluate(const SecurityEvent& ev) {
  std::lock_guard lock(mu_);
  std::vector<Alert> out;
  const std::string device_key = ev.device_id ? to_hex(*ev.device_id) : ev.source_address;

  auto trim = [](std::deque<UnixMs>& q, UnixMs at, UnixMs width) {
    while (!q.empty() && q.front() + width <= at) q.pop_front();
  };

  switch (ev.kind) {
    case EventKind::UnknownDevice: {
      const std::string key = ev.source_address.empty() ? device_key : ev.source_address;
      if (!suppressed(RuleId::R1Unknown, key, ev.at))
        out.push_back(raise(RuleId::R1Unknown, Severity::Warn, ev, key,
                            "envelope from unenrolled sender " + key));
      break;
    }
    case EventKind::Replay:
      if (!suppressed(RuleId::R2Replay, device_key, ev.at))
        out.push_back(raise(RuleId::R2Replay, Severity::Warn, ev, device_key,
                            "replayed sequence number from " + device_key));
      break;
    case EventKind::AuthFailure: {
      auto& q = auth_failures_[device_key];
      q.push_back(ev.at);
      trim(q, ev.at, t_.window_ms);
      if (q.size() >= t_.auth_fail_threshold && !suppressed(RuleId::R3Auth, device_key, ev.at)) {
        out.push_back(raise(RuleId::R3Auth, Severity::Crit, ev, device_key,
                            std::to_string(q.size()) + " authentication failures within " +
                                std::to_string(t_.window_ms / 1000) + " s from " + device_key));
        q.clear();
      }
      break;
    }
    case EventKind::Clean:
      if (ev.device_id) {
        auto it = silence_.find(*ev.device_id);
        if (it != silence_.end()) it->second = {ev.at, false};
      }
      break;
    case EventKind::QuarantinedTraffic:
    case EventKind::RevokedTraffic:
      break;
  }

  // R4 counts envelopes that reached an admitted device's pipeline.
  const bool counts_for_flood = ev.device_id && (ev.kind == EventKind::Clean ||
                                                 ev.kind == EventKind::Replay ||
                                                 ev.kind == EventKind::AuthFailure);
  if (counts_for_flood) {
    auto& q = envelopes_[device_key];
    q.push_back(ev.at);
    trim(q, ev.at, t_.flood_window_ms);
    const std::uint64_t limit =
        std::uint64_t{t_.flood_rate} * std::max<UnixMs>(1, t_.flood_window_ms / 1000);
    if (q.size() > limit && !suppressed(RuleId::R4Flood, device_key, ev.at)) {
      out.push_back(raise(RuleId::R4Flood, Severity::Crit, ev, device_key,
                          std::to_string(q.size()) + " envelopes within " +
                              std::to_string(t_.flood_window_ms / 1000) + " s from " +
                              device_key + " (limit " + std::to_string(t_.flood_rate) + "/s)"));
      q.clear();
    }
  }
  return out;
}

void Sentinel::track_device(const DeviceId& device, UnixMs since) {
  std::lock_guard lock(mu_);
  silence_[device] = {since, false};
}

void Sentinel::untrack_device(const DeviceId& device) {
  std::lock_guard lock(mu_);
  silence_.erase(device);
}

std::vector<Alert> Sentinel::sweep(UnixMs now) {
  std::lock_guard lock(mu_);
  std::vector<Alert> out;
  for (auto& [dev, s] : silence_) {
    if (s.alerted || now <= s.last_clean + t_.silence_ms) continue;
    s.alerted = true;
    SecurityEvent ev{EventKind::Clean, dev, "", now};
    out.push_back(raise(RuleId::R5Silent, Severity::Info, ev, to_hex(dev),
                        "no clean telemetry from " + to_hex(dev) + " for " +
                            std::to_string((now - s.last_clean) / 1000) + " s"));
  }
  return out;
}

std::vector<Alert> Sentinel::alerts(std::optional<UnixMs> since,
                                    std::optional<bool> acknowledged) const {
  std::lock_guard lock(mu_);
  std::vector<Alert> out;
  for (const auto& a : alerts_) {
    if (since && a.at < *since) continue;
    if (acknowledged && a.acknowledged != *acknowledged) continue;
    out.push_back(a);
  }
  return out;
}

Alert Sentinel::acknowledge(std::uint64_t alert_id) {
  std::lock_guard lock(mu_);
  for (auto& a : alerts_)
    if (a.alert_id == alert_id) {
      a.acknowledged = true;
      return a;
    }
  throw Error(Errc::UnknownAlert, "no alert with id " + std::to_string(alert_id));
}

void Sentinel::restore(std::vector<Alert> alerts) {
  std::lock_guard lock(mu_);
  alerts_ = std::move(alerts);
  next_id_ = 1;
  for (const auto& a : alerts_) next_id_ = std::max(next_id_, a.alert_id + 1);
}

std::map<RuleId, std::uint64_t> Sentinel::counts_by_rule() const {
  std::lock_guard lock(mu_);
  std::map<RuleId, std::uint64_t> out;
  for (const auto& a : alerts_) ++out[a.rule];
  return out;
}

// --- credential audit ----------------------------------------------------------

std::vector<DictionaryEntry> parse_dictionary(std::string_view text) {
  std::vector<DictionaryEntry> out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw Error(Errc::ParseError, "dictionary line " + std::to_string(line_no) +
                                        ": expected service<TAB>username<TAB>password");
    DictionaryEntry e;
    e.id = out.size() + 1;
    e.service = line.substr(0, t1);
    e.username = line.substr(t1 + 1, t2 - t1 - 1);
    e.password = line.substr(t2 + 1);
    if (e.service.empty() || e.username.empty())
      throw Error(Errc::ParseError,
                  "dictionary line " + std::to_string(line_no) + ": empty service or username");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<DictionaryEntry> load_dictionary(const std::filesystem::path& path) {
  const Bytes b = fsutil::read_file(path);
  return parse_dictionary(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

MockLoginEndpoint::MockLoginEndpoint(std::string target_id, std::string service,
                                     AuthScheme scheme,
                                     std::vector<std::pair<std::string, std::string>> accounts,
                                     bool reachable, std::uint64_t challenge_seed)
    : id_(std::move(target_id)),
      service_(std::move(service)),
      scheme_(scheme),
      accounts_(std::move(accounts)),
      reachable_(reachable),
      counter_(challenge_seed) {}

Bytes MockLoginEndpoint::challenge() {
  if (!reachable_) throw Error(Errc::TargetUnreachable, id_ + " is unreachable");
  if (scheme_ == AuthScheme::Plain) return {};
  ByteWriter w;
  w.raw(as_bytes(id_));
  w.u64(counter_++);
  const auto d = crypto::sha256(w.bytes());
  pending_challenge_.assign(d.begin(), d.begin() + 16);
  return pending_challenge_;
}

bool MockLoginEndpoint::login(const std::string& username, ByteView proof) {
  if (!reachable_) throw Error(Errc::TargetUnreachable, id_ + " is unreachable");
  ++attempts_;
  if (clock_) attempt_times_.push_back(clock_->now_ms());
  for (const auto& [user, pass] : accounts_) {
    if (user != username) continue;
    if (scheme_ == AuthScheme::Plain) return crypto::constant_time_equal(proof, as_bytes(pass));
    Bytes msg = pending_challenge_;
    msg.insert(msg.end(), pass.begin(), pass.end());
    return crypto::constant_time_equal(proof, crypto::sha256(msg));
  }
  return false;
}

std::string CredentialFinding::masked_password() const {
  if (password.size() <= 2) return std::string(password.size(), '*');
  return password.substr(0, 1) + std::string(password.size() - 2, '*') + password.back();
}

CredentialScanReport audit_default_credentials(const std::vector<LoginEndpoint*>& targets,
                                               const std::vector<DictionaryEntry>& dictionary,
                                               const ScanPacing& pacing) {
  if (dictionary.empty()) throw Error(Errc::EmptyDictionary, "credential dictionary is empty");
  const UnixMs spacing = 1000 / std::max<std::uint32_t>(1, pacing.per_second);
  CredentialScanReport report;
  for (LoginEndpoint* target : targets) {
    std::optional<UnixMs> last_attempt;
    try {
      for (const auto& entry : dictionary) {
        if (entry.service != target->service()) continue;
        if (pacing.clock && last_attempt && pacing.wait_until) {
          const UnixMs due = *last_attempt + spacing;
          if (pacing.clock->now_ms() < due) pacing.wait_until(due);
        }
        const Bytes challenge = target->challenge();
        Bytes proof;
        if (target->scheme() == AuthScheme::Plain) {
          proof.assign(entry.password.begin(), entry.password.end());
        } else {
          Bytes msg = challenge;
          msg.insert(msg.end(), entry.password.begin(), entry.password.end());
          const auto d = crypto::sha256(msg);
          proof.assign(d.begin(), d.end());
        }
        if (pacing.clock) last_attempt = pacing.clock->now_ms();
        ++report.attempts;
        if (target->login(entry.username, proof))
          report.findings.push_back({target->target_id(), target->service(), entry.username,
                                     entry.password, entry.id});
      }
    } catch (const Error& e) {
      if (e.code() != Errc::TargetUnreachable) throw;
      report.unreachable.push_back(target->target_id());
    }
  }
  return report;
}

}  // namespace homegate::ids
