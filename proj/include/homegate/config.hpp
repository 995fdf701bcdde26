#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace homegate::core {

struct ListenAddress {
  std::string host;
  std::uint16_t port = 0;

  static ListenAddress parse(std::string_view text);  // "host:port"
  std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// `key = value` lines, '#' comments, dotted section keys. Absent keys keep
/// these defaults; unknown keys are rejected.
struct Config {
  std::filesystem::path data_dir = "homegate-data";
  ListenAddress udp_listen{"0.0.0.0", 5683};
  ListenAddress http_listen{"127.0.0.1", 8080};
  std::string operator_token;  // must be >= 16 chars when set
  bool enrollment_auto_approve = false;
  std::uint32_t enrollment_pending_ttl_s = 600;
  bool ids_auto_quarantine = true;
  std::uint32_t ids_flood_rate = 10;
  std::uint32_t ids_auth_fail_threshold = 5;
  std::uint8_t relay_max_hops = 2;
  std::uint64_t store_max_readings = 1'000'000;
  bool runtime_single_thread = false;
};

/// Throws ParseError (with line), UnknownKey (with the key) or
/// InvalidValue (with key and line).
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

}  // namespace homegate::core
