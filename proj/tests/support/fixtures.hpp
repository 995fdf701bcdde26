#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "homegate/gateway.hpp"

namespace fixtures {

using namespace homegate;

inline constexpr const char* kToken = "test-operator-token-0123";

std::filesystem::path source_dir();

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

crypto::Key32 key_from(std::string_view label, std::uint64_t n = 0);

core::Config test_config(const std::filesystem::path& data_dir = {});

// A device driving the gateway in-process through its UDP entry point.
struct Device {
  std::string name;
  crypto::Key32 seed{};
  std::string source;
  core::DeviceId id{};
  std::uint32_t epoch = 0;
  crypto::Key32 key{};
  std::uint64_t seq = 0;

  Bytes request_datagram() const;
  /// Applies an Approved reply; false for anything else.
  bool accept(const Bytes& reply);
  Bytes reading(double value, UnixMs ts, std::string metric = "temp_c");
};

/// Submits, approves into `zone` and applies the reply.
Device enroll(core::Gateway& gw, const std::string& name, const std::string& zone,
              const std::string& source = "192.0.2.10:40000");

/// The 3-zone/6-device segmentation fixture: sensors and cameras (IOT),
/// admin (OPERATOR); s2 quarantined.
struct SegFixture {
  std::vector<seg::Zone> zones;
  std::map<seg::DeviceId, seg::Assignment> assignments;
  std::set<seg::DeviceId> quarantined;
  std::vector<std::pair<std::string, seg::Ipv4>> nodes;  // devices then zone interfaces
};
SegFixture seg_fixture();

}  // namespace fixtures
