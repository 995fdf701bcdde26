#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "homegate/error.hpp"
#include "homegate/service.hpp"
#include "support/fixtures.hpp"

using namespace homegate;
using namespace homegate::core;
using nlohmann::json;

namespace {

class UdpPeer {
 public:
  explicit UdpPeer(int gateway_port) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    sockaddr_in self{};
    self.sin_family = AF_INET;
    inet_pton(AF_INET, "127.0.0.1", &self.sin_addr);
    ::bind(fd_, reinterpret_cast<sockaddr*>(&self), sizeof self);
    gw_.sin_family = AF_INET;
    gw_.sin_port = htons(static_cast<std::uint16_t>(gateway_port));
    inet_pton(AF_INET, "127.0.0.1", &gw_.sin_addr);
  }
  ~UdpPeer() { ::close(fd_); }

  void send(const Bytes& d) {
    ::sendto(fd_, d.data(), d.size(), 0, reinterpret_cast<sockaddr*>(&gw_), sizeof gw_);
  }

  std::optional<Bytes> receive(int timeout_ms = 2000) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, timeout_ms) <= 0) return std::nullopt;
    Bytes buf(65536);
    const auto n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n <= 0) return std::nullopt;
    buf.resize(static_cast<std::size_t>(n));
    return buf;
  }

 private:
  int fd_ = -1;
  sockaddr_in gw_{};
};

template <typename Pred>
bool eventually(Pred p, std::chrono::milliseconds limit = std::chrono::milliseconds(2000)) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (p()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return p();
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("enrollment and telemetry over real sockets") {
  fixtures::TempDir dir;
  SystemClock clock;
  init_data_dir(dir.path(), std::nullopt, clock);
  const auto config = fixtures::test_config(dir.path());
  {
    auto gw = Gateway::open(config, clock);
    gw->define_zone("sensors", seg::Block::parse("10.10.1.0/24"), seg::ZoneRole::Iot);
  }
  auto svc = Service::start(config, clock);
  REQUIRE(svc->udp_port() > 0);
  REQUIRE(svc->http_port() > 0);

  httplib::Client http("127.0.0.1", svc->http_port());
  http.set_read_timeout(5, 0);
  const auto t0 = std::chrono::steady_clock::now();
  auto health = http.Get("/api/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(2));
  auto index = http.Get("/");
  REQUIRE(index);
  CHECK(index->status == 200);
  CHECK(index->body.find("homegate") != std::string::npos);

  UdpPeer peer(svc->udp_port());
  fixtures::Device dev{"udp-sensor", fixtures::key_from("device-seed:udp-sensor"), "127.0.0.1:0"};
  peer.send(dev.request_datagram());
  auto reply = peer.receive();
  REQUIRE(reply);
  CHECK(enroll::EnrollmentMessage::decode(*reply).type == enroll::MessageType::Pending);

  auto list = http.Get("/api/v1/enrollments?state=PENDING");
  REQUIRE(list);
  const auto pending = json::parse(list->body);
  REQUIRE(pending.size() == 1);
  const std::string id = pending[0]["id"];
  auto approve = http.Post("/api/v1/enrollments/" + id + "/approve",
                           {{"Authorization", std::string("Bearer ") + fixtures::kToken}},
                           json{{"zone", "sensors"}}.dump(), "application/json");
  REQUIRE(approve);
  CHECK(approve->status == 200);

  reply = peer.receive();
  REQUIRE(reply);
  REQUIRE(dev.accept(*reply));
  peer.send(dev.reading(19.5, clock.now_ms()));
  CHECK(eventually([&] { return svc->gateway().stored_count() == 1; }));
  svc->stop();

  auto gw = Gateway::open(config, clock);
  CHECK(gw->stored_count() == 1);
  CHECK(gw->device(dev.id)->status == enroll::DeviceStatus::Active);
}

TEST_CASE("busy port and missing data dir") {
  fixtures::TempDir dir;
  SystemClock clock;
  auto config = fixtures::test_config(dir.path());
  try {
    Service::start(config, clock);
    FAIL("expected UninitializedDataDir");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UninitializedDataDir);
  }
  init_data_dir(dir.path(), std::nullopt, clock);
  auto first = Service::start(config, clock);
  auto clash = config;
  clash.http_listen.port = static_cast<std::uint16_t>(first->http_port());
  try {
    Service::start(clash, clock);
    FAIL("expected PortInUse");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::PortInUse);
  }
  clash = config;
  clash.udp_listen.port = static_cast<std::uint16_t>(first->udp_port());
  try {
    Service::start(clash, clock);
    FAIL("expected PortInUse");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::PortInUse);
  }
}

}  // TEST_SUITE
