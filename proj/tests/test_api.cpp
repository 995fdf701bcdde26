#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <json.hpp>

#include "homegate/error.hpp"
#include "homegate/service.hpp"
#include "support/fixtures.hpp"

using namespace homegate;
using namespace homegate::core;
using nlohmann::json;

namespace {

constexpr UnixMs kT0 = 1'700'000'000'000;

struct ApiRig {
  ManualClock clock{kT0};
  fixtures::TempDir www;
  std::unique_ptr<Gateway> gw;
  std::unique_ptr<ApiServer> api;
  std::unique_ptr<httplib::Client> client;

  ApiRig() {
    gw = Gateway::in_memory(fixtures::test_config(), clock, fixtures::key_from("api"));
    gw->define_zone("sensors", seg::Block::parse("10.10.1.0/24"), seg::ZoneRole::Iot);
    fsutil::write_atomic(www.path() / "index.html", as_bytes(std::string_view("<h1>hi</h1>")));
    api = std::make_unique<ApiServer>(*gw, www.path());
    const int port = api->bind("127.0.0.1", 0);
    api->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(5, 0);
  }
  ~ApiRig() { api->stop(); }

  httplib::Headers auth(const std::string& token = fixtures::kToken) const {
    return {{"Authorization", "Bearer " + token}};
  }

  httplib::Result send(const std::string& method, const std::string& path, const json& body,
                       const httplib::Headers& h) {
    const std::string text = body.dump();
    if (method == "POST") return client->Post(path, h, text, "application/json");
    if (method == "PUT") return client->Put(path, h, text, "application/json");
    return client->Get(path, h);
  }

  std::string pending_id(const std::string& name) {
    fixtures::Device d{name, fixtures::key_from("device-seed:" + name), "192.0.2.1:1"};
    gw->handle_datagram(d.request_datagram(), "192.0.2.1:1");
    for (const auto& r : gw->enrollments(enroll::RequestState::Pending))
      if (r.requested_name == name) return to_hex(r.request_id);
    FAIL("no pending request");
    return {};
  }
};

}  // namespace

TEST_SUITE("api") {

TEST_CASE("every mutating route demands the token") {
  ApiRig rig;
  const auto audits = rig.gw->audit_records().size();
  std::size_t mutating = 0;
  for (const auto& r : api_routes()) {
    if (r.method == "GET") {
      CHECK_FALSE(r.mutating);
      if (r.sample_path == "/api/v1/events") continue;
      auto res = rig.client->Get(r.sample_path);
      REQUIRE(res);
      CHECK(res->status != 401);
      continue;
    }
    CHECK(r.mutating);
    ++mutating;
    for (const auto& headers : {httplib::Headers{}, rig.auth("wrong-token-wrong-token"),
                                httplib::Headers{{"Authorization", fixtures::kToken}}}) {
      auto res = rig.send(r.method, r.sample_path, json::object(), headers);
      REQUIRE(res);
      INFO(r.method << " " << r.sample_path);
      CHECK(res->status == 401);
      CHECK(json::parse(res->body)["code"] == "unauthorized");
    }
  }
  CHECK(mutating >= 8);
  CHECK(rig.gw->audit_records().size() == audits);
}

TEST_CASE("approve without a token leaves the request pending") {
  ApiRig rig;
  const auto id = rig.pending_id("dev-a");
  const std::string path = "/api/v1/enrollments/" + id + "/approve";
  auto res = rig.client->Post(path, json{{"zone", "sensors"}}.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 401);
  CHECK(rig.gw->enrollments(enroll::RequestState::Pending).size() == 1);

  res = rig.send("POST", path, {{"zone", "sensors"}}, rig.auth());
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto body = json::parse(res->body);
  CHECK(body["request"]["state"] == "APPROVED");
  CHECK(body["device"]["status"] == "ACTIVE");

  res = rig.send("POST", path, {{"zone", "sensors"}}, rig.auth());
  REQUIRE(res);
  CHECK(res->status == 409);
  const auto err = json::parse(res->body);
  CHECK(err["status"] == 409);
  CHECK(err["code"] == "not_pending");
  CHECK(err["message"].get<std::string>().size() > 0);
}

TEST_CASE("error shapes") {
  ApiRig rig;
  const auto id = rig.pending_id("dev-b");
  auto res = rig.send("POST", "/api/v1/enrollments/" + id + "/approve", {{"zone", "nope"}}, rig.auth());
  CHECK(res->status == 422);
  CHECK(json::parse(res->body)["code"] == "unknown_zone");
  res = rig.client->Get("/api/v1/devices/00000000000000ff");
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["code"] == "unknown_device");
  res = rig.client->Get("/api/v1/devices/abc");
  CHECK(res->status == 422);
  res = rig.client->Get("/api/v1/nothing-here");
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["code"] == "not_found");
  res = rig.send("PUT", "/api/v1/zones/cams", {{"range", "10.10.1.0/25"}, {"role", "IOT"}}, rig.auth());
  CHECK(res->status == 409);
  CHECK(json::parse(res->body)["code"] == "overlapping_range");
  res = rig.client->Get("/api/v1/alerts?ack=maybe");
  CHECK(res->status == 422);
}

TEST_CASE("zones, policy, health and static files") {
  ApiRig rig;
  auto res = rig.send("PUT", "/api/v1/zones/ops",
                      {{"range", "10.10.9.0/24"}, {"role", "OPERATOR"},
                       {"allow_to", json::array({{{"zone", "sensors"}, {"proto", "tcp"}, {"port", 22}}})}},
                      rig.auth());
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(json::parse(res->body)["name"] == "ops");
  res = rig.client->Get("/api/v1/zones");
  CHECK(json::parse(res->body).size() == 3);
  res = rig.client->Get("/api/v1/policy/rules");
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type").find("text/plain") == 0);
  CHECK(res->body == rig.gw->policy().render());
  CHECK(res->body.find("--dport 22 -j ACCEPT") != std::string::npos);
  res = rig.client->Get("/api/v1/health");
  CHECK(json::parse(res->body)["status"] == "ok");
  res = rig.client->Get("/");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->body == "<h1>hi</h1>");
}

TEST_CASE("telemetry query matches the store") {
  ApiRig rig;
  auto d = fixtures::enroll(*rig.gw, "t1", "sensors");
  for (int i = 0; i < 30; ++i)
    rig.gw->ingest(d.reading(20.0 + i % 7, kT0 + static_cast<UnixMs>(i) * 13'000), d.source);
  const auto want = rig.gw->query_readings(d.id, kT0, kT0 + 400'000, 60, store::Aggregate::Mean);
  auto res = rig.client->Get("/api/v1/telemetry/" + to_hex(d.id) + "?from=" + std::to_string(kT0) +
                             "&to=" + std::to_string(kT0 + 400'000) + "&bucket=60&agg=mean");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto pts = json::parse(res->body)["points"];
  REQUIRE(pts.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(pts[i]["t"] == want[i].t);
    CHECK(pts[i]["value"].get<double>() == want[i].value);
    CHECK(pts[i]["count"] == want[i].count);
  }
  res = rig.client->Get("/api/v1/telemetry/" + to_hex(d.id) + "?from=9&to=1&bucket=60&agg=mean");
  CHECK(res->status == 422);
  CHECK(json::parse(res->body)["code"] == "bad_range");
}

TEST_CASE("mutations through the API are audited") {
  ApiRig rig;
  auto d = fixtures::enroll(*rig.gw, "t2", "sensors");
  const auto before = rig.gw->audit_records().size();
  const std::string dev = "/api/v1/devices/" + to_hex(d.id);
  CHECK(rig.send("POST", dev + "/quarantine", {{"cause", "test"}}, rig.auth())->status == 200);
  CHECK(rig.send("POST", dev + "/release", json::object(), rig.auth())->status == 200);
  const auto pub = crypto::x25519_public(fixtures::key_from("recipient"));
  auto res = rig.send("POST", "/api/v1/export",
                      {{"from", 0}, {"to", kT0 * 2}, {"recipient_pub", to_base64(pub)}}, rig.auth());
  CHECK(res->status == 200);
  CHECK(rig.send("POST", dev + "/revoke", {{"reason", "done"}}, rig.auth())->status == 200);
  const auto recs = rig.gw->audit_records();
  REQUIRE(recs.size() == before + 4);
  CHECK(recs[before].category == audit::Category::Quarantine);
  CHECK(recs[before + 1].category == audit::Category::Release);
  CHECK(recs[before + 2].category == audit::Category::Export);
  CHECK(recs[before + 3].category == audit::Category::Revoke);
  res = rig.client->Get("/api/v1/audit/verify");
  const auto v = json::parse(res->body);
  CHECK(v["ok"] == true);
  CHECK(v["count"] == recs.size());
  CHECK(v["broken_at"].is_null());
}

TEST_CASE("events arrive over SSE") {
  ApiRig rig;
  std::atomic<bool> got{false};
  std::string seen;
  httplib::Client sse("127.0.0.1", rig.api->port());
  sse.set_read_timeout(5, 0);
  std::thread reader([&] {
    sse.Get("/api/v1/events", [&](const char* data, std::size_t n) {
      seen.append(data, n);
      if (seen.find("event: enrollment") != std::string::npos) {
        got = true;
        return false;
      }
      return true;
    });
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  const auto start = std::chrono::steady_clock::now();
  rig.pending_id("sse-dev");
  while (!got && std::chrono::steady_clock::now() - start < std::chrono::seconds(2))
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  CHECK(got.load());
  reader.join();
  CHECK(seen.find("sse-dev") != std::string::npos);
}

}  // TEST_SUITE
