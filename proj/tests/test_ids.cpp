#include <doctest.h>

#include "homegate/error.hpp"
#include "homegate/ids.hpp"
#include "support/fixtures.hpp"

using namespace homegate;
using namespace homegate::ids;

namespace {

constexpr UnixMs kT0 = 1'700'000'000'000;

DeviceId dev(std::uint8_t n) {
  DeviceId d{};
  d[7] = n;
  return d;
}

SecurityEvent event(EventKind k, UnixMs at, std::optional<DeviceId> d = dev(1),
                    std::string src = "192.0.2.5:4000") {
  return SecurityEvent{k, d, std::move(src), at};
}

std::size_t fire(Sentinel& s, EventKind k, int n, UnixMs start, UnixMs step,
                 std::optional<DeviceId> d = dev(1)) {
  std::size_t alerts = 0;
  for (int i = 0; i < n; ++i) alerts += s.evaluate(event(k, start + i * step, d)).size();
  return alerts;
}

}  // namespace

TEST_SUITE("ids") {

TEST_CASE("clean traffic raises nothing") {
  Sentinel s;
  CHECK(fire(s, EventKind::Clean, 50, kT0, 1000) == 0);
  CHECK(s.alerts().empty());
}

TEST_CASE("R1 unknown sender keyed by source") {
  Sentinel s;
  auto a = s.evaluate(event(EventKind::UnknownDevice, kT0, std::nullopt, "198.51.100.7:9"));
  REQUIRE(a.size() == 1);
  CHECK(a[0].rule == RuleId::R1Unknown);
  CHECK(a[0].severity == Severity::Warn);
  CHECK(a[0].source == "198.51.100.7:9");
  CHECK(s.evaluate(event(EventKind::UnknownDevice, kT0 + 10, std::nullopt, "198.51.100.7:9"))
            .empty());
  CHECK(s.evaluate(event(EventKind::UnknownDevice, kT0 + 10, std::nullopt, "198.51.100.8:9"))
            .size() == 1);
  CHECK(s.evaluate(event(EventKind::UnknownDevice, kT0 + 60'000, std::nullopt, "198.51.100.7:9"))
            .size() == 1);
}

TEST_CASE("R2 replay storms are suppressed per window") {
  Sentinel s;
  const UnixMs duration = 300'000;
  std::size_t r2 = 0;
  for (int i = 0; i < 1000; ++i)
    r2 += s.evaluate(event(EventKind::Replay, kT0 + i * duration / 1000)).size();
  CHECK(r2 >= 1);
  CHECK(r2 <= (duration + 59'999) / 60'000);
  CHECK(s.counts_by_rule()[RuleId::R2Replay] == r2);
}

TEST_CASE("R3 fires at the threshold, not before") {
  Sentinel s;
  CHECK(fire(s, EventKind::AuthFailure, 4, kT0, 1000) == 0);
  auto a = s.evaluate(event(EventKind::AuthFailure, kT0 + 4000));
  REQUIRE(a.size() == 1);
  CHECK(a[0].rule == RuleId::R3Auth);
  CHECK(a[0].severity == Severity::Crit);
}

TEST_CASE("R3 window slides") {
  Sentinel s;
  // failures at 0..3 s; each later one arrives as an old one expires
  CHECK(fire(s, EventKind::AuthFailure, 4, kT0, 1000) == 0);
  CHECK(s.evaluate(event(EventKind::AuthFailure, kT0 + 60'000)).empty());
  CHECK(s.evaluate(event(EventKind::AuthFailure, kT0 + 61'000)).empty());
  CHECK(s.evaluate(event(EventKind::AuthFailure, kT0 + 61'500)).size() == 1);
}

TEST_CASE("R3 honours the configured threshold") {
  Thresholds t;
  t.auth_fail_threshold = 2;
  Sentinel s(t);
  CHECK(fire(s, EventKind::AuthFailure, 1, kT0, 1) == 0);
  CHECK(fire(s, EventKind::AuthFailure, 1, kT0 + 1, 1) == 1);
}

TEST_CASE("R4 flood above the rate") {
  Sentinel s;
  // 100 envelopes in 10 s is exactly the limit
  CHECK(fire(s, EventKind::Clean, 100, kT0, 100) == 0);
  auto a = s.evaluate(event(EventKind::Clean, kT0 + 9'999));
  REQUIRE(a.size() == 1);
  CHECK(a[0].rule == RuleId::R4Flood);
  CHECK(a[0].severity == Severity::Crit);
  CHECK(fire(s, EventKind::Clean, 500, kT0 + 10'000, 10) == 0);  // suppressed
  // other devices are unaffected
  CHECK(fire(s, EventKind::Clean, 50, kT0, 100, dev(2)) == 0);
}

TEST_CASE("quarantined traffic does not count toward floods") {
  Sentinel s;
  CHECK(fire(s, EventKind::QuarantinedTraffic, 1000, kT0, 1) == 0);
  CHECK(fire(s, EventKind::RevokedTraffic, 1000, kT0, 1) == 0);
}

TEST_CASE("R5 silence on a virtual clock") {
  ManualClock clock(kT0);
  Sentinel s;
  s.track_device(dev(1), clock.now_ms());
  s.track_device(dev(2), clock.now_ms());
  clock.advance(23ull * 3600 * 1000);
  s.evaluate(event(EventKind::Clean, clock.now_ms(), dev(2)));
  CHECK(s.sweep(clock.now_ms()).empty());
  clock.advance(3600 * 1000 + 1);
  auto a = s.sweep(clock.now_ms());
  REQUIRE(a.size() == 1);
  CHECK(a[0].rule == RuleId::R5Silent);
  CHECK(a[0].severity == Severity::Info);
  CHECK(a[0].device_id == dev(1));
  CHECK(s.sweep(clock.now_ms() + 1000).empty());
  clock.advance(24ull * 3600 * 1000);
  a = s.sweep(clock.now_ms());
  REQUIRE(a.size() == 1);
  CHECK(a[0].device_id == dev(2));
  s.untrack_device(dev(1));
  s.untrack_device(dev(2));
  CHECK(s.sweep(clock.now_ms() + 100ull * 24 * 3600 * 1000).empty());
}

TEST_CASE("acknowledge and query") {
  Sentinel s;
  s.evaluate(event(EventKind::Replay, kT0));
  s.evaluate(event(EventKind::Replay, kT0, dev(2)));
  const auto all = s.alerts();
  REQUIRE(all.size() == 2);
  CHECK(all[0].alert_id == 1);
  CHECK(all[1].alert_id == 2);
  const auto a = s.acknowledge(1);
  CHECK(a.acknowledged);
  CHECK(s.alerts(std::nullopt, false).size() == 1);
  CHECK(s.alerts(std::nullopt, true).size() == 1);
  CHECK(s.alerts(kT0 + 1).empty());
  try {
    s.acknowledge(99);
    FAIL("expected UnknownAlert");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownAlert);
  }
  Sentinel r;
  r.restore(s.alerts());
  CHECK(r.evaluate(event(EventKind::Replay, kT0, dev(3)))[0].alert_id == 3);
}

TEST_CASE("dictionary parsing") {
  const auto d = parse_dictionary("# c\n\nhttp-admin\tadmin\tadmin\r\ntelnet\troot\t\n");
  REQUIRE(d.size() == 2);
  CHECK(d[0].id == 1);
  CHECK(d[1].service == "telnet");
  CHECK(d[1].password.empty());
  for (const char* bad : {"x\ty\n", "a\tb\tc\td\n", "\tu\tp\n", "s\t\tp\n"}) {
    try {
      parse_dictionary(std::string("ok\tu\tp\n") + bad);
      FAIL("expected ParseError");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ParseError);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  const auto shipped = load_dictionary(fixtures::source_dir() / "data/default_creds.txt");
  CHECK(shipped.size() >= 10);
}

TEST_CASE("credential scan finds weak accounts, paced") {
  ManualClock clock(kT0);
  MockLoginEndpoint plain("cam-1", "http-admin", AuthScheme::Plain, {{"admin", "admin"}});
  MockLoginEndpoint chal("fw-1", "ssh", AuthScheme::ChallengeSha256, {{"pi", "raspberry"}}, true, 9);
  MockLoginEndpoint strong("nas-1", "http-admin", AuthScheme::Plain, {{"admin", "k9#Qv!2rL"}});
  MockLoginEndpoint down("old-1", "telnet", AuthScheme::Plain, {{"root", "xc3511"}}, false);
  for (auto* e : {&plain, &chal, &strong, &down}) e->attach_clock(&clock);

  const auto dict = parse_dictionary(
      "http-admin\troot\troot\nhttp-admin\tadmin\tadmin\nhttp-admin\tadmin\t1234\n"
      "ssh\tpi\traspberry\ntelnet\troot\txc3511\n");
  ScanPacing pacing{&clock, [&](UnixMs t) { clock.set(t); }, 2};
  const auto report = audit_default_credentials({&plain, &chal, &strong, &down}, dict, pacing);

  REQUIRE(report.findings.size() == 2);
  CHECK(report.findings[0].target_id == "cam-1");
  CHECK(report.findings[0].entry_id == 2);
  CHECK(report.findings[0].masked_password() == "a***n");
  CHECK(report.findings[1].target_id == "fw-1");
  CHECK(report.findings[1].masked_password() == "r*******y");
  CHECK(report.unreachable == std::vector<std::string>{"old-1"});
  CHECK(plain.attempts() == 3);
  CHECK(strong.attempts() == 3);
  for (auto* e : {&plain, &strong}) {
    const auto& t = e->attempt_times();
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] - t[i - 1] >= 500);
  }
}

TEST_CASE("masking never reveals short secrets") {
  CredentialFinding f;
  f.password = "";
  CHECK(f.masked_password().empty());
  f.password = "ab";
  CHECK(f.masked_password() == "**");
  f.password = "FGTAbc11*xy+Qqz27";
  CHECK(f.masked_password().find("Abc11") == std::string::npos);
}

TEST_CASE("empty dictionary is refused") {
  MockLoginEndpoint e("x", "ssh", AuthScheme::Plain, {});
  try {
    audit_default_credentials({&e}, {}, ScanPacing{});
    FAIL("expected EmptyDictionary");
  } catch (const Error& err) {
    CHECK(err.code() == Errc::EmptyDictionary);
  }
  CHECK(e.attempts() == 0);
}

}  // TEST_SUITE
