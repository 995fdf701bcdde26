#include <doctest.h>

#include "homegate/enrollment.hpp"
#include "homegate/error.hpp"
#include "homegate/gateway.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace homegate;
using namespace homegate::core;
using enroll::MessageType;
using enroll::RequestState;

namespace {

constexpr UnixMs kT0 = 1'700'000'000'000;

struct Rig {
  ManualClock clock{kT0};
  Config config = fixtures::test_config();
  std::unique_ptr<Gateway> gw;

  explicit Rig(bool auto_approve = false) {
    config.enrollment_auto_approve = auto_approve;
    gw = Gateway::in_memory(config, clock, fixtures::key_from("gw-seed"));
    gw->define_zone("sensors", seg::Block::parse("10.10.1.0/24"), seg::ZoneRole::Iot);
  }
};

pki::CertSigningRequest csr_for(const std::string& name, pki::Role role = pki::Role::Device) {
  return pki::CertSigningRequest::make(name, role, fixtures::key_from("device-seed:" + name));
}

template <typename F>
Errc code_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::InvalidSpec;
}

std::string rejected_code(const Bytes& reply) {
  const auto msg = enroll::EnrollmentMessage::decode(reply);
  REQUIRE(msg.type == MessageType::Rejected);
  ByteReader r(msg.body);
  return r.str(64);
}

}  // namespace

TEST_SUITE("enrollment") {

TEST_CASE("device key derivation agrees with HKDF") {
  const auto master = fixtures::key_from("master");
  enroll::DeviceId id{1, 2, 3, 4, 5, 6, 7, 8};
  ByteWriter info;
  info.raw(id);
  info.u32(3);
  const auto want = oracle::hkdf_sha256(master, as_bytes(enroll::kKeyDerivationSalt), info.bytes(), 32);
  const auto got = enroll::derive_device_key(master, id, 3);
  CHECK(Bytes(got.begin(), got.end()) == want);
  CHECK(enroll::derive_device_key(master, id, 4) != got);
}

TEST_CASE("submit then approve issues a certificate and a key") {
  Rig rig;
  auto& gw = *rig.gw;
  const auto req = gw.submit_enrollment(csr_for("t1"), "t1", "192.0.2.1:1");
  CHECK(req.state == RequestState::Pending);
  CHECK(gw.enrollments(RequestState::Pending).size() == 1);
  const auto out = gw.decide_enrollment(req.request_id, Approve{"sensors"}, fixtures::kToken);
  REQUIRE(out.device);
  CHECK(out.request.state == RequestState::Approved);
  CHECK(out.device->zone == "sensors");
  CHECK(out.device->address.to_string() == "10.10.1.2");
  CHECK(out.device->status == enroll::DeviceStatus::Active);
  CHECK(gw.verify_certificate(out.device->certificate) == pki::VerifyOutcome::Valid);
  CHECK(out.device->certificate.public_key == req.csr.public_key);

  fixtures::Device d;
  d.seed = fixtures::key_from("device-seed:t1");
  REQUIRE(d.accept(out.response_datagram));
  CHECK(d.id == out.device->device_id);
  fixtures::Device wrong;
  wrong.seed = fixtures::key_from("someone-else");
  CHECK_FALSE(wrong.accept(out.response_datagram));
}

TEST_CASE("submission refusals") {
  Rig rig;
  auto& gw = *rig.gw;
  auto bad = csr_for("t2");
  bad.subject = "tampered";
  CHECK(code_of([&] { gw.submit_enrollment(bad, "t2", "a"); }) == Errc::InvalidProof);
  CHECK(code_of([&] { gw.submit_enrollment(csr_for("r", pki::Role::Root), "r", "a"); }) ==
        Errc::RoleForbidden);
  CHECK(code_of([&] { gw.submit_enrollment(csr_for("n"), std::string(65, 'n'), "a"); }) ==
        Errc::InvalidValue);
  gw.submit_enrollment(csr_for("t3"), "t3", "a");
  CHECK(code_of([&] { gw.submit_enrollment(csr_for("t3"), "t3", "a"); }) ==
        Errc::DuplicatePending);
  CHECK(gw.enrollments().size() == 1);
}

TEST_CASE("decisions happen once") {
  Rig rig;
  auto& gw = *rig.gw;
  const auto req = gw.submit_enrollment(csr_for("t4"), "t4", "a");
  CHECK(code_of([&] { gw.decide_enrollment(req.request_id, Approve{"sensors"}, "nope"); }) ==
        Errc::Unauthorized);
  CHECK(code_of([&] { gw.decide_enrollment(req.request_id, Approve{"missing"}, fixtures::kToken); }) ==
        Errc::UnknownZone);
  CHECK(code_of([&] { gw.decide_enrollment(req.request_id, Approve{"gateway"}, fixtures::kToken); }) ==
        Errc::InvalidValue);
  CHECK(gw.enrollments(RequestState::Pending).size() == 1);
  gw.decide_enrollment(req.request_id, Approve{"sensors"}, fixtures::kToken);
  CHECK(code_of([&] { gw.decide_enrollment(req.request_id, Deny{"late"}, fixtures::kToken); }) ==
        Errc::NotPending);
  CHECK(code_of([&] { gw.decide_enrollment(enroll::RequestId{}, Deny{"x"}, fixtures::kToken); }) ==
        Errc::UnknownRequest);
  CHECK(gw.devices().size() == 1);
}

TEST_CASE("deny sends the reason") {
  Rig rig;
  auto& gw = *rig.gw;
  const auto req = gw.submit_enrollment(csr_for("t5"), "t5", "a");
  const auto out = gw.decide_enrollment(req.request_id, Deny{"not mine"}, fixtures::kToken);
  CHECK_FALSE(out.device);
  CHECK(out.request.state == RequestState::Denied);
  CHECK(out.request.reason == "not mine");
  const auto msg = enroll::EnrollmentMessage::decode(out.response_datagram);
  CHECK(msg.type == MessageType::Denied);
  CHECK(gw.devices().empty());
}

TEST_CASE("stale requests expire") {
  Rig rig;
  auto& gw = *rig.gw;
  const auto req = gw.submit_enrollment(csr_for("t6"), "t6", "a");
  rig.clock.advance(599'999);
  CHECK(gw.sweep_expired_enrollments() == 0);
  rig.clock.advance(1);
  CHECK(gw.sweep_expired_enrollments() == 1);
  CHECK(gw.enrollments(RequestState::Expired).size() == 1);
  CHECK(code_of([&] { gw.decide_enrollment(req.request_id, Approve{"sensors"}, fixtures::kToken); }) ==
        Errc::NotPending);
  // the same key may ask again afterwards
  CHECK(gw.submit_enrollment(csr_for("t6"), "t6", "a").state == RequestState::Pending);
}

TEST_CASE("auto approve places devices in the first IOT zone") {
  Rig rig(true);
  const auto reply = rig.gw->handle_datagram(fixtures::Device{"t7", fixtures::key_from("device-seed:t7"), "192.0.2.7:1"}
                                                 .request_datagram(),
                                             "192.0.2.7:1");
  REQUIRE(reply);
  CHECK(enroll::EnrollmentMessage::decode(*reply).type == MessageType::Approved);
  REQUIRE(rig.gw->devices().size() == 1);
  CHECK(rig.gw->devices()[0].zone == "sensors");
}

TEST_CASE("HGE1 conversation over the datagram entry point") {
  Rig rig;
  auto& gw = *rig.gw;
  fixtures::Device d{"t8", fixtures::key_from("device-seed:t8"), "192.0.2.8:1"};
  auto reply = gw.handle_datagram(d.request_datagram(), "192.0.2.8:1");
  REQUIRE(reply);
  CHECK(enroll::EnrollmentMessage::decode(*reply).type == MessageType::Pending);
  // asking again while pending repeats the same request id
  auto again = gw.handle_datagram(d.request_datagram(), "192.0.2.8:1");
  CHECK(*again == *reply);
  CHECK(gw.enrollments().size() == 1);

  const auto id = gw.enrollments()[0].request_id;
  gw.decide_enrollment(id, Approve{"sensors"}, fixtures::kToken);
  reply = gw.handle_datagram(d.request_datagram(), "192.0.2.8:1");
  REQUIRE(d.accept(*reply));

  CHECK(rejected_code(*gw.handle_datagram(Bytes{'H', 'G', 'E', '1', 1, 1, 0}, "x")) == "malformed");
  gw.quarantine(d.id, "test");
  CHECK(rejected_code(*gw.handle_datagram(d.request_datagram(), "x")) == "QUARANTINED");
}

TEST_CASE("revocation is idempotent and blocks traffic") {
  Rig rig;
  auto& gw = *rig.gw;
  auto d = fixtures::enroll(gw, "t9", "sensors");
  CHECK(gw.ingest(d.reading(1.0, kT0), d.source) == IngestOutcome::Stored);
  const auto audits = gw.audit_records().size();
  const auto first = gw.revoke_device(d.id, "lost", fixtures::kToken);
  CHECK(first.newly_revoked);
  CHECK(gw.audit_records().size() == audits + 1);
  const auto second = gw.revoke_device(d.id, "again", fixtures::kToken);
  CHECK_FALSE(second.newly_revoked);
  CHECK(second.reason == "lost");
  CHECK(second.serial == first.serial);
  CHECK(gw.audit_records().size() == audits + 1);
  CHECK(gw.revocations().entries().size() == 1);
  CHECK(gw.verify_certificate(gw.device(d.id)->certificate) == pki::VerifyOutcome::Revoked);
  CHECK(gw.ingest(d.reading(2.0, kT0), d.source) == IngestOutcome::RejectedRevoked);
  CHECK(code_of([&] { gw.quarantine(d.id, "x"); }) == Errc::NotActive);
  CHECK(code_of([&] { gw.revoke_device(enroll::DeviceId{}, "x", fixtures::kToken); }) ==
        Errc::UnknownDevice);
  CHECK(code_of([&] { gw.revoke_device(d.id, "x", "bad-token"); }) == Errc::Unauthorized);
}

}  // TEST_SUITE
