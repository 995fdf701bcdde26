#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "homegate/telemetry.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace homegate;
using namespace homegate::relay;

namespace {

DeviceId dev(std::uint8_t n) {
  DeviceId id{};
  id[7] = n;
  return id;
}

KeyLookup only(const DeviceId& id, const Key32& key, std::uint32_t epoch) {
  return [=](const DeviceId& d) -> std::optional<DeviceKey> {
    if (d != id) return std::nullopt;
    return DeviceKey{key, epoch};
  };
}

template <class T>
T expect_error(const std::variant<DecodedEnvelope, DecodeError>& v) {
  REQUIRE(std::holds_alternative<DecodeError>(v));
  return std::get<DecodeError>(v);
}

}  // namespace

TEST_SUITE("telemetry") {

TEST_CASE("reading validation") {
  CHECK_THROWS_AS(Reading({"", 1.0, 0}).encode(), Error);
  CHECK_THROWS_AS(Reading({std::string(65, 'm'), 1.0, 0}).encode(), Error);
  CHECK_THROWS_AS(Reading({"t", std::nan(""), 0}).encode(), Error);
  CHECK_THROWS_AS(Reading({"t", std::numeric_limits<double>::infinity(), 0}).encode(), Error);
  const Reading r{std::string(64, 'm'), -0.5, 123};
  CHECK(Reading::decode(r.encode()) == r);
  auto enc = r.encode();
  enc.push_back(0);
  CHECK_THROWS_AS(Reading::decode(enc), Error);
}

TEST_CASE("envelope layout") {
  const auto key = fixtures::key_from("k");
  const auto e = encode_envelope({"temp_c", 21.5, 1000}, key, dev(9), 77, 3);
  CHECK(std::string(e.begin(), e.begin() + 4) == "HGT1");
  CHECK(e[4] == 0x01);
  CHECK(e[5] == 0x00);
  CHECK(e[13] == 9);
  CHECK(get_u64_be(e.data() + 14) == 77);
  const auto n = envelope_nonce(3, 77);
  CHECK(std::equal(n.begin(), n.end(), e.begin() + 22));
  CHECK(e.size() == 34 + (1 + 6 + 8 + 8) + 16);
}

TEST_CASE("seal limits") {
  const auto key = fixtures::key_from("k");
  CHECK_THROWS_AS(seal_envelope(Bytes(1025), key, dev(1), 1, 0), Error);
  CHECK_NOTHROW(seal_envelope(Bytes(1024), key, dev(1), 1, 0));
  CHECK(seal_envelope(Bytes(1024), key, dev(1), 1, 0).size() == kMaxDatagram);
  CHECK_THROWS_AS(seal_envelope(Bytes(4), key, dev(1), 0, 0), Error);
}

TEST_CASE("header parsing is robust") {
  const auto key = fixtures::key_from("k");
  const auto e = encode_envelope({"t", 1, 1}, key, dev(1), 1, 0);
  for (std::size_t n = 0; n < e.size(); ++n) {
    const auto v = decode_envelope(ByteView(e).first(n), only(dev(1), key, 0));
    CHECK(std::holds_alternative<DecodeError>(v));
  }
  const auto twenty = parse_header(ByteView(e).first(20));
  REQUIRE(std::holds_alternative<DecodeError>(twenty));
  const auto err = std::get<DecodeError>(twenty);
  CHECK((err == DecodeError::BadMagic || err == DecodeError::MalformedBody));
  CHECK(std::get<DecodeError>(parse_header(as_bytes("GARBAGE-DATAGRAM-GARBAGE-DATAGRAM-GARBAGE-DATA"))) ==
        DecodeError::BadMagic);
  Bytes v2 = e;
  v2[4] = 2;
  CHECK(std::get<DecodeError>(parse_header(v2)) == DecodeError::BadVersion);
  Bytes big(kMaxDatagram + 1, 0);
  std::copy(e.begin(), e.begin() + 5, big.begin());
  CHECK(std::get<DecodeError>(parse_header(big)) == DecodeError::MalformedBody);
}

TEST_CASE("unattributable frames keep their framing errors") {
  const auto key = fixtures::key_from("k");
  auto e = encode_envelope({"t", 1, 1}, key, dev(1), 1, 0);
  e[0] = 'X';
  auto none = [](const DeviceId&) { return std::optional<DeviceKey>{}; };
  CHECK(expect_error<DecodeError>(decode_envelope(e, none)) == DecodeError::BadMagic);
  CHECK(expect_error<DecodeError>(decode_envelope(e, only(dev(1), key, 0))) == DecodeError::AuthFailure);
}

TEST_CASE("wrong key, wrong epoch and unknown device") {
  const auto key = fixtures::key_from("k");
  const auto e = encode_envelope({"t", 1, 1}, key, dev(1), 5, 2);
  CHECK(expect_error<DecodeError>(decode_envelope(e, only(dev(1), fixtures::key_from("x"), 2))) ==
        DecodeError::AuthFailure);
  CHECK(expect_error<DecodeError>(decode_envelope(e, only(dev(1), key, 1))) == DecodeError::AuthFailure);
  CHECK(expect_error<DecodeError>(decode_envelope(e, only(dev(2), key, 2))) == DecodeError::UnknownDevice);
  CHECK(std::holds_alternative<DecodedEnvelope>(decode_envelope(e, only(dev(1), key, 2))));
}

TEST_CASE("authentic body that is not a reading is MalformedBody") {
  const auto key = fixtures::key_from("k");
  const auto e = seal_envelope(as_bytes("not a reading"), key, dev(1), 1, 0);
  CHECK(expect_error<DecodeError>(decode_envelope(e, only(dev(1), key, 0))) == DecodeError::MalformedBody);
}

TEST_CASE("bit flips outside the hop byte never authenticate") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Key32 key{};
    for (auto& b : key) b = static_cast<std::uint8_t>(rng());
    const auto id = dev(static_cast<std::uint8_t>(trial));
    const auto epoch = static_cast<std::uint32_t>(rng() % 5);
    const auto e = encode_envelope({"m" + std::to_string(trial), trial * 1.5, rng() >> 24}, key, id,
                                   1 + rng() % 1000, epoch);
    const KeyLookup lookup = [&](const DeviceId&) {
      return std::optional<DeviceKey>(DeviceKey{key, epoch});
    };
    for (std::size_t i = 0; i < e.size(); ++i)
      for (int bit = 0; bit < 8; ++bit) {
        Bytes m = e;
        m[i] ^= static_cast<std::uint8_t>(1u << bit);
        const auto v = decode_envelope(m, lookup);
        if (i == kHopOffset) {
          CHECK(std::holds_alternative<DecodedEnvelope>(v));
        } else {
          REQUIRE(std::holds_alternative<DecodeError>(v));
          CHECK(std::get<DecodeError>(v) == DecodeError::AuthFailure);
        }
      }
  }
}

TEST_CASE("repeater bumps hops and passes everything else through") {
  Repeater r(2, 8);
  const auto key = fixtures::key_from("k");
  const auto e = encode_envelope({"t", 1, 1}, key, dev(1), 1, 0);
  const auto f = r.forward(e, 0);
  REQUIRE(f.kind == ForwardDecision::Kind::Forward);
  CHECK(f.datagram[kHopOffset] == 1);
  for (std::size_t i = 0; i < e.size(); ++i)
    if (i != kHopOffset) CHECK(f.datagram[i] == e[i]);
  CHECK(std::holds_alternative<DecodedEnvelope>(decode_envelope(f.datagram, only(dev(1), key, 0))));
}

TEST_CASE("repeater suppresses duplicates and enforces max hops") {
  Repeater r(2, 8);
  const auto key = fixtures::key_from("k");
  const auto e = encode_envelope({"t", 1, 1}, key, dev(1), 1, 0);
  CHECK(r.forward(e, 0).kind == ForwardDecision::Kind::Forward);
  CHECK(r.forward(e, 0).kind == ForwardDecision::Kind::DropDuplicate);
  CHECK(r.dropped_dup_count() == 1);

  Repeater chain_a(2, 8), chain_b(2, 8), chain_c(2, 8);
  auto e2 = encode_envelope({"t", 1, 1}, key, dev(1), 2, 0);
  auto h1 = chain_a.forward(e2, 0);
  auto h2 = chain_b.forward(h1.datagram, 0);
  REQUIRE(h2.kind == ForwardDecision::Kind::Forward);
  CHECK(h2.datagram[kHopOffset] == 2);
  CHECK(chain_c.forward(h2.datagram, 0).kind == ForwardDecision::Kind::DropHops);
  CHECK(chain_c.dropped_hops_count() == 1);
}

TEST_CASE("repeater cache is a bounded lru") {
  Repeater r(2, 4);
  const auto key = fixtures::key_from("k");
  std::vector<Bytes> es;
  for (std::uint64_t s = 1; s <= 6; ++s) es.push_back(encode_envelope({"t", 1, 1}, key, dev(1), s, 0));
  for (const auto& e : es) CHECK(r.forward(e, 0).kind == ForwardDecision::Kind::Forward);
  CHECK(r.cache_size() == 4);
  CHECK(r.forward(es[0], 0).kind == ForwardDecision::Kind::Forward);      // evicted
  CHECK(r.forward(es[5], 0).kind == ForwardDecision::Kind::DropDuplicate);  // recent
}

TEST_CASE("repeater relays enrollment frames and drops junk") {
  Repeater r;
  Bytes hge = {'H', 'G', 'E', '1', 1, 1, 0, 0};
  const auto f = r.forward(hge, 0);
  CHECK(f.kind == ForwardDecision::Kind::Forward);
  CHECK(f.datagram == hge);
  CHECK(r.forward(as_bytes("junk"), 0).kind == ForwardDecision::Kind::DropMalformed);
  CHECK(r.dropped_malformed_count() == 1);
}

}
