#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "homegate/config.hpp"
#include "homegate/gateway.hpp"

namespace httplib {
class Server;
}

namespace homegate::core {

struct RouteInfo {
  std::string method;
  std::string sample_path;  // concrete path used by the auth-totality test
  bool mutating = false;
};

/// Every route the API registers, in registration order.
const std::vector<RouteInfo>& api_routes();

/// HTTP status for a library error code.
int http_status(Errc code);

/// Operator HTTP API over a Gateway. Mutating routes demand
/// `Authorization: Bearer <operator_token>`; errors are {status, code, message}.
class ApiServer {
 public:
  ApiServer(Gateway& gateway, std::optional<std::filesystem::path> www_dir,
            bool single_thread = false);
  ~ApiServer();

  /// Port 0 picks a free port. Throws PortInUse.
  int bind(const std::string& host, int port);
  /// Serves on a background thread.
  void start();
  void stop();
  int port() const { return port_; }

 private:
  void install_routes();

  Gateway& gw_;
  std::unique_ptr<httplib::Server> svr_;
  std::thread thread_;
  std::shared_ptr<std::atomic<bool>> stopping_;
  int port_ = 0;
};

/// UDP listener + HTTP API + housekeeping ticker around one Gateway.
class Service {
 public:
  /// Throws UninitializedDataDir, PortInUse.
  static std::unique_ptr<Service> start(const Config& config, const Clock& clock);
  ~Service();

  void stop();
  int udp_port() const { return udp_port_; }
  int http_port() const { return api_->port(); }
  Gateway& gateway() { return *gw_; }

 private:
  Service() = default;
  void udp_loop();
  void tick_loop();
  void send_to(const std::string& address, const Bytes& datagram);

  std::unique_ptr<Gateway> gw_;
  std::unique_ptr<ApiServer> api_;
  int udp_fd_ = -1;
  int udp_port_ = 0;
  std::atomic<bool> running_{false};
  std::thread udp_thread_;
  std::thread tick_thread_;
};

}  // namespace homegate::core
