#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <iostream>

#include "homegate/service.hpp"

namespace homegate::core {

namespace {

std::optional<sockaddr_in> parse_endpoint(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) return std::nullopt;
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  if (inet_pton(AF_INET, address.substr(0, colon).c_str(), &sa.sin_addr) != 1) return std::nullopt;
  try {
    const int port = std::stoi(address.substr(colon + 1));
    if (port <= 0 || port > 65535) return std::nullopt;
    sa.sin_port = htons(static_cast<std::uint16_t>(port));
  } catch (...) {
    return std::nullopt;
  }
  return sa;
}

std::string endpoint_string(const sockaddr_in& sa) {
  char buf[INET_ADDRSTRLEN] = {};
  inet_ntop(AF_INET, &sa.sin_addr, buf, sizeof buf);
  return std::string(buf) + ":" + std::to_string(ntohs(sa.sin_port));
}

}  // namespace

std::unique_ptr<Service> Service::start(const Config& config, const Clock& clock) {
  std::unique_ptr<Service> s(new Service());
  s->gw_ = Gateway::open(config, clock);

  s->udp_fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (s->udp_fd_ < 0) throw Error(Errc::StorageFailure, "socket: " + std::string(std::strerror(errno)));
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(config.udp_listen.port);  // 0 = ephemeral
  if (inet_pton(AF_INET, config.udp_listen.host.c_str(), &sa.sin_addr) != 1)
    throw Error(Errc::InvalidValue, "bad udp_listen " + config.udp_listen.to_string());
  if (::bind(s->udp_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
    const int err = errno;
    ::close(s->udp_fd_);
    s->udp_fd_ = -1;
    throw Error(Errc::PortInUse, "UDP " + config.udp_listen.to_string() + ": " + std::strerror(err));
  }
  socklen_t len = sizeof sa;
  ::getsockname(s->udp_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  s->udp_port_ = ntohs(sa.sin_port);

  s->api_ = std::make_unique<ApiServer>(*s->gw_, config.data_dir / kWwwDir, config.runtime_single_thread);
  s->api_->bind(config.http_listen.host, config.http_listen.port);

  Service* raw = s.get();
  s->gw_->set_outbound([raw](const std::string& addr, const Bytes& d) { raw->send_to(addr, d); });
  s->running_ = true;
  s->udp_thread_ = std::thread([raw] { raw->udp_loop(); });
  s->tick_thread_ = std::thread([raw] { raw->tick_loop(); });
  s->api_->start();
  return s;
}

Service::~Service() { stop(); }

void Service::stop() {
  const bool was = running_.exchange(false);
  if (api_) api_->stop();
  if (udp_thread_.joinable()) udp_thread_.join();
  if (tick_thread_.joinable()) tick_thread_.join();
  if (udp_fd_ >= 0) {
    ::close(udp_fd_);
    udp_fd_ = -1;
  }
  if (was && gw_) {
    gw_->set_outbound({});
    gw_->persist();
  }
}

void Service::send_to(const std::string& address, const Bytes& datagram) {
  const auto sa = parse_endpoint(address);
  if (!sa || udp_fd_ < 0) return;
  ::sendto(udp_fd_, datagram.data(), datagram.size(), 0, reinterpret_cast<const sockaddr*>(&*sa),
           sizeof *sa);
}

void Service::udp_loop() {
  std::vector<std::uint8_t> buf(65536);
  while (running_) {
    pollfd p{udp_fd_, POLLIN, 0};
    if (::poll(&p, 1, 200) <= 0) continue;
    sockaddr_in from{};
    socklen_t len = sizeof from;
    const auto n = ::recvfrom(udp_fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from), &len);
    if (n <= 0) continue;
    const std::string source = endpoint_string(from);
    try {
      auto reply = gw_->handle_datagram(ByteView(buf.data(), static_cast<std::size_t>(n)), source);
      if (reply)
        ::sendto(udp_fd_, reply->data(), reply->size(), 0, reinterpret_cast<sockaddr*>(&from), len);
    } catch (const std::exception& e) {
      std::cerr << "homegate: datagram from " << source << ": " << e.what() << "\n";
    }
  }
}

void Service::tick_loop() {
  int n = 0;
  while (running_) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    if (++n % 10 != 0) continue;
    try {
      gw_->tick();
    } catch (const std::exception& e) {
      std::cerr << "homegate: tick: " << e.what() << "\n";
    }
  }
}

}  // namespace homegate::core
