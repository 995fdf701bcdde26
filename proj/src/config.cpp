#include "homegate/config.hpp"

#include <charconv>
#include <limits>
#include <sstream>

#include "homegate/error.hpp"
#include "homegate/fsutil.hpp"

namespace homegate::core {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::string where(std::string_view key, std::size_t line) {
  return "'" + std::string(key) + "' (line " + std::to_string(line) + ")";
}

std::uint64_t parse_unsigned(std::string_view key, std::string_view v, std::uint64_t max,
                             std::size_t line) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || p != v.data() + v.size() || out > max)
    throw Error(Errc::InvalidValue, "invalid value '" + std::string(v) + "' for " +
                                        where(key, line) + ": expected integer 0.." +
                                        std::to_string(max));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v, std::size_t line) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error(Errc::InvalidValue,
              "invalid value '" + std::string(v) + "' for " + where(key, line) + ": expected true|false");
}

}  // namespace

ListenAddress ListenAddress::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    throw Error(Errc::InvalidValue, "listen address must be host:port");
  ListenAddress a;
  a.host = std::string(text.substr(0, colon));
  const auto port = text.substr(colon + 1);
  unsigned v = 0;
  auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), v);
  if (port.empty() || ec != std::errc{} || p != port.data() + port.size() || v > 65535)
    throw Error(Errc::InvalidValue, "invalid port '" + std::string(port) + "'");
  a.port = static_cast<std::uint16_t>(v);
  return a;
}

Config parse_config(std::string_view text) {
  Config c;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view s = trim(raw);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw Error(Errc::ParseError, "line " + std::to_string(line) + ": expected key = value");
    const std::string_view key = trim(s.substr(0, eq));
    std::string_view value = trim(s.substr(eq + 1));
    if (key.empty()) throw Error(Errc::ParseError, "line " + std::to_string(line) + ": empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);

    auto listen = [&](ListenAddress& out) {
      try {
        out = ListenAddress::parse(value);
      } catch (const Error& e) {
        throw Error(Errc::InvalidValue, std::string(e.what()) + " for " + where(key, line));
      }
    };

    if (key == "data_dir") {
      if (value.empty()) throw Error(Errc::InvalidValue, "empty value for " + where(key, line));
      c.data_dir = std::string(value);
    } else if (key == "udp_listen") {
      listen(c.udp_listen);
    } else if (key == "http_listen") {
      listen(c.http_listen);
    } else if (key == "operator_token") {
      if (value.size() < 16)
        throw Error(Errc::InvalidValue,
                    "operator_token must be at least 16 characters for " + where(key, line));
      c.operator_token = std::string(value);
    } else if (key == "enrollment.auto_approve") {
      c.enrollment_auto_approve = parse_bool(key, value, line);
    } else if (key == "enrollment.pending_ttl_s") {
      c.enrollment_pending_ttl_s = static_cast<std::uint32_t>(
          parse_unsigned(key, value, std::numeric_limits<std::uint32_t>::max(), line));
    } else if (key == "ids.auto_quarantine") {
      c.ids_auto_quarantine = parse_bool(key, value, line);
    } else if (key == "ids.flood_rate") {
      c.ids_flood_rate = static_cast<std::uint32_t>(
          parse_unsigned(key, value, std::numeric_limits<std::uint32_t>::max(), line));
      if (c.ids_flood_rate == 0)
        throw Error(Errc::InvalidValue, "ids.flood_rate must be positive for " + where(key, line));
    } else if (key == "ids.auth_fail_threshold") {
      c.ids_auth_fail_threshold = static_cast<std::uint32_t>(
          parse_unsigned(key, value, std::numeric_limits<std::uint32_t>::max(), line));
      if (c.ids_auth_fail_threshold == 0)
        throw Error(Errc::InvalidValue,
                    "ids.auth_fail_threshold must be positive for " + where(key, line));
    } else if (key == "relay.max_hops") {
      c.relay_max_hops = static_cast<std::uint8_t>(parse_unsigned(key, value, 255, line));
    } else if (key == "store.max_readings") {
      c.store_max_readings =
          parse_unsigned(key, value, std::numeric_limits<std::uint64_t>::max(), line);
      if (c.store_max_readings == 0)
        throw Error(Errc::InvalidValue,
                    "store.max_readings must be positive for " + where(key, line));
    } else if (key == "runtime.single_thread") {
      c.runtime_single_thread = parse_bool(key, value, line);
    } else {
      throw Error(Errc::UnknownKey, "unknown configuration key " + where(key, line));
    }
  }
  return c;
}

Config load_config(const std::filesystem::path& path) {
  const Bytes b = fsutil::read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

}  // namespace homegate::core
