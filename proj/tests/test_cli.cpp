#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>

#include <json.hpp>

#include "support/fixtures.hpp"

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(HOMEGATE_BINARY_DIR) + "/homegate " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string dict() { return (fixtures::source_dir() / "data/default_creds.txt").string(); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("sim run is deterministic") {
  const std::string args = "sim run --devices 3 --via-repeater 2 --duration 20 --seed 9 --json";
  const auto a = cli(args);
  const auto b = cli(args);
  CHECK(a.status == 0);
  CHECK(a.out == b.out);
  const auto j = nlohmann::json::parse(a.out);
  CHECK(j["scenario"] == "baseline");
  CHECK(j["stored"].get<std::uint64_t>() > 0);
  const auto table = cli("sim run --devices 2 --duration 5 --seed 9");
  CHECK(table.status == 0);
  CHECK(table.out.find("stored") != std::string::npos);
}

TEST_CASE("unknown scenario fails") {
  const auto r = cli("sim run --scenario meteor --duration 1");
  CHECK(r.status != 0);
  CHECK(r.out.find("unknown_scenario") != std::string::npos);
}

TEST_CASE("credscan masks what it finds") {
  const auto r = cli("credscan --dict " + dict());
  CHECK(r.status == 3);
  CHECK(r.out.find("Fortimanager_Access") != std::string::npos);
  CHECK(r.out.find("FGTAbc11*xy+Qqz27") == std::string::npos);
  CHECK(r.out.find("admin") != std::string::npos);
  const auto j = cli("credscan --json --unreachable --dict " + dict());
  CHECK(j.status == 3);
  CHECK(j.out.find("FGTAbc11*xy+Qqz27") == std::string::npos);
  const auto clean = cli("credscan --clean --dict " + dict());
  CHECK(clean.status == 0);
}

TEST_CASE("init and audit verify") {
  fixtures::TempDir dir;
  const auto data = (dir.path() / "gw").string();
  auto r = cli("init --data-dir " + data);
  CHECK(r.status == 0);
  CHECK(r.out.find(data) != std::string::npos);
  r = cli("init --data-dir " + data);
  CHECK(r.status != 0);
  r = cli("audit verify --data-dir " + data);
  CHECK(r.status == 0);
  CHECK(r.out.find("OK n=") != std::string::npos);
  r = cli("audit verify --json --data-dir " + data);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["ok"] == true);
  std::filesystem::remove(dir.path() / "gw" / "audit.head");
  r = cli("audit verify --data-dir " + data);
  CHECK(r.status == 1);
  CHECK(r.out.find("BROKEN index=") != std::string::npos);
}

TEST_CASE("seeded init is reproducible") {
  fixtures::TempDir dir;
  const std::string seed = "--seed 00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff";
  const auto a = cli("init --json " + seed + " --data-dir " + (dir.path() / "a").string());
  const auto b = cli("init --json " + seed + " --data-dir " + (dir.path() / "b").string());
  REQUIRE(a.status == 0);
  const auto ja = nlohmann::json::parse(a.out);
  const auto jb = nlohmann::json::parse(b.out);
  CHECK(ja["root_public_key"] == jb["root_public_key"]);
  CHECK(ja["root_serial"] == jb["root_serial"]);
}

TEST_CASE("enroll commands need a reachable gateway") {
  const auto r = cli("enroll list --url http://127.0.0.1:1 --token abcdefghijklmnopqrstu");
  CHECK(r.status != 0);
}

}  // TEST_SUITE
