#include "fixtures.hpp"

#include <cstdlib>

#include "homegate/enrollment.hpp"

namespace fixtures {

std::filesystem::path source_dir() { return HOMEGATE_SOURCE_DIR; }

TempDir::TempDir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "homegate-test-XXXXXX").string();
  if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

crypto::Key32 key_from(std::string_view label, std::uint64_t n) {
  ByteWriter w;
  w.str(label);
  w.u64(n);
  return crypto::sha256(w.bytes());
}

core::Config test_config(const std::filesystem::path& data_dir) {
  core::Config c;
  if (!data_dir.empty()) c.data_dir = data_dir;
  c.operator_token = kToken;
  c.udp_listen = {"127.0.0.1", 0};
  c.http_listen = {"127.0.0.1", 0};
  return c;
}

Bytes Device::request_datagram() const {
  const auto csr = pki::CertSigningRequest::make(name, pki::Role::Device, seed);
  return enroll::make_request_datagram(name, csr);
}

bool Device::accept(const Bytes& reply) {
  const auto msg = enroll::EnrollmentMessage::decode(reply);
  if (msg.type != enroll::MessageType::Approved) return false;
  const auto p = enroll::ApprovalPayload::decode(msg.body);
  const auto k = enroll::unwrap_telemetry_key(p.key_wrap, seed, p.device_id, p.epoch);
  if (!k) return false;
  id = p.device_id;
  epoch = p.epoch;
  key = *k;
  return true;
}

Bytes Device::reading(double value, UnixMs ts, std::string metric) {
  return relay::encode_envelope({std::move(metric), value, ts}, key, id, ++seq, epoch);
}

Device enroll(core::Gateway& gw, const std::string& name, const std::string& zone,
              const std::string& source) {
  Device d;
  d.name = name;
  d.seed = key_from("device-seed:" + name);
  d.source = source;
  const auto reply = gw.handle_datagram(d.request_datagram(), source);
  if (!reply) throw std::runtime_error("no enrollment reply");
  const auto req = gw.enrollments(enroll::RequestState::Pending);
  for (const auto& r : req) {
    if (r.requested_name != name) continue;
    const auto out = gw.decide_enrollment(r.request_id, core::Approve{zone}, kToken);
    if (!d.accept(out.response_datagram)) throw std::runtime_error("approval not accepted");
    return d;
  }
  throw std::runtime_error("request for " + name + " not pending");
}

SegFixture seg_fixture() {
  SegFixture f;
  seg::ZoneRegistry reg;
  reg.define_zone("sensors", seg::Block::parse("10.10.1.0/24"), seg::ZoneRole::Iot);
  reg.define_zone("cameras", seg::Block::parse("10.10.2.0/24"), seg::ZoneRole::Iot);
  reg.define_zone("admin", seg::Block::parse("10.10.9.0/24"), seg::ZoneRole::Operator,
                  {{"cameras", 554, seg::Proto::Tcp}, {"sensors", std::nullopt, seg::Proto::Any}});
  const std::pair<const char*, const char*> devs[] = {{"s1", "sensors"}, {"s2", "sensors"},
                                                      {"c1", "cameras"}, {"c2", "cameras"},
                                                      {"a1", "admin"},   {"a2", "admin"}};
  std::uint8_t n = 1;
  for (const auto& [name, zone] : devs) {
    seg::DeviceId id{};
    id[7] = n++;
    const auto addr = reg.assign_device(id, zone);
    f.nodes.emplace_back(name, addr);
    if (std::string(name) == "s2") f.quarantined.insert(id);
  }
  f.zones = reg.zones();
  f.assignments = reg.assignments();
  for (const auto& z : f.zones) f.nodes.emplace_back("gw-" + z.name, z.gateway_address());
  return f;
}

}  // namespace fixtures
