#include <doctest.h>

#include <random>

#include "homegate/error.hpp"
#include "homegate/store.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace homegate;
using namespace homegate::store;

namespace {

constexpr UnixMs kT0 = 1'700'000'000'000;

DeviceId dev(std::uint8_t n) {
  DeviceId d{};
  d[7] = n;
  return d;
}

StoredReading row(std::uint8_t d, std::uint64_t seq, double v, UnixMs ts,
                  std::string metric = "temp_c") {
  return StoredReading{dev(d), seq, std::move(metric), v, ts, ts + 5};
}

std::vector<SeriesPoint> brute(const std::vector<StoredReading>& rows, const DeviceId& d,
                               UnixMs from, UnixMs to, std::uint64_t bucket_s, Aggregate agg) {
  const UnixMs width = bucket_s * 1000;
  std::vector<SeriesPoint> out;
  for (UnixMs start = from / width * width; start < to; start += width) {
    std::vector<double> vals;
    for (const auto& r : rows)
      if (r.device_id == d && r.device_ts >= from && r.device_ts < to && r.device_ts >= start &&
          r.device_ts < start + width)
        vals.push_back(r.value);
    if (vals.empty()) continue;
    double v = 0;
    if (agg == Aggregate::Count) v = static_cast<double>(vals.size());
    if (agg == Aggregate::Min) v = *std::min_element(vals.begin(), vals.end());
    if (agg == Aggregate::Max) v = *std::max_element(vals.begin(), vals.end());
    if (agg == Aggregate::Mean) {
      for (double x : vals) v += x;
      v /= static_cast<double>(vals.size());
    }
    out.push_back({start, v, vals.size()});
  }
  return out;
}

}  // namespace

TEST_SUITE("store") {

TEST_CASE("reading encoding round trips") {
  const auto r = row(3, 42, -1.25, kT0, "humidity");
  CHECK(StoredReading::decode(r.encode()) == r);
  auto enc = r.encode();
  enc.push_back(0);
  CHECK_THROWS_AS(StoredReading::decode(enc), Error);
}

TEST_CASE("duplicates are no-ops") {
  ReadingStore s;
  CHECK(s.insert(row(1, 1, 20.0, kT0)).inserted);
  CHECK_FALSE(s.insert(row(1, 1, 99.0, kT0 + 1)).inserted);
  CHECK(s.insert(row(2, 1, 20.0, kT0)).inserted);
  CHECK(s.size() == 2);
  CHECK(s.contains(dev(1), 1));
  CHECK_FALSE(s.contains(dev(1), 2));
  CHECK(s.query(dev(1), 0, ~0ull, 0, Aggregate::Raw)[0].value == 20.0);
  CHECK(s.max_seq(dev(1)) == 1);
  CHECK(s.max_seq(dev(9)) == 0);
}

TEST_CASE("aggregates match a brute force oracle") {
  std::mt19937_64 g(3);
  std::vector<StoredReading> rows;
  ReadingStore s;
  for (std::uint64_t i = 1; i <= 600; ++i) {
    const auto d = static_cast<std::uint8_t>(1 + g() % 3);
    const auto r = row(d, i, static_cast<double>(g() % 1000) / 10.0 - 20.0, kT0 + g() % 900'000);
    rows.push_back(r);
    s.insert(r);
  }
  for (int q = 0; q < 40; ++q) {
    const UnixMs a = kT0 + g() % 900'000;
    const UnixMs b = kT0 + g() % 900'000;
    const UnixMs from = std::min(a, b), to = std::max(a, b);
    const std::uint64_t bucket = 1 + g() % 120;
    const auto d = dev(static_cast<std::uint8_t>(1 + g() % 3));
    for (auto agg : {Aggregate::Mean, Aggregate::Min, Aggregate::Max, Aggregate::Count}) {
      const auto got = s.query(d, from, to, bucket, agg);
      const auto want = brute(rows, d, from, to, bucket, agg);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].t == want[i].t);
        CHECK(got[i].count == want[i].count);
        CHECK(got[i].value == doctest::Approx(want[i].value));
      }
    }
    std::size_t raw = 0;
    for (const auto& r : rows) raw += r.device_id == d && r.device_ts >= from && r.device_ts < to;
    const auto got = s.query(d, from, to, 0, Aggregate::Raw);
    CHECK(got.size() == raw);
    CHECK(std::is_sorted(got.begin(), got.end(),
                         [](const SeriesPoint& x, const SeriesPoint& y) { return x.t < y.t; }));
  }
}

TEST_CASE("bad ranges") {
  ReadingStore s;
  for (auto fn : std::vector<std::function<void()>>{
           [&] { s.query(dev(1), 10, 5, 60, Aggregate::Mean); },
           [&] { s.query(dev(1), 0, 5, 0, Aggregate::Max); },
           [&] { s.range(10, 5); }}) {
    try {
      fn();
      FAIL("expected BadRange");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::BadRange);
    }
  }
  CHECK(s.query(dev(1), 5, 5, 60, Aggregate::Mean).empty());
  CHECK(parse_aggregate("mean") == Aggregate::Mean);
  CHECK_THROWS_AS(parse_aggregate("median"), Error);
}

TEST_CASE("oldest rows are pruned at capacity") {
  fixtures::TempDir dir;
  const auto file = dir.path() / "readings.hgr";
  {
    ReadingStore s(file, 10);
    std::uint64_t pruned = 0;
    for (std::uint64_t i = 1; i <= 25; ++i) pruned += s.insert(row(1, i, 1.0, kT0 + i)).pruned;
    CHECK(pruned == 15);
    CHECK(s.size() == 10);
    CHECK_FALSE(s.contains(dev(1), 15));
    CHECK(s.contains(dev(1), 16));
  }
  ReadingStore again(file, 10);
  CHECK(again.size() == 10);
  CHECK(again.contains(dev(1), 25));
  CHECK_FALSE(again.contains(dev(1), 3));
  ReadingStore smaller(file, 4);
  CHECK(smaller.size() == 4);
  CHECK(smaller.contains(dev(1), 22));
}

TEST_CASE("rows reload from disk") {
  fixtures::TempDir dir;
  const auto file = dir.path() / "readings.hgr";
  {
    ReadingStore s(file, 100);
    for (std::uint64_t i = 1; i <= 7; ++i) s.insert(row(2, i, double(i), kT0 + i * 1000));
  }
  ReadingStore s(file, 100);
  CHECK(s.size() == 7);
  CHECK(s.range(0, ~0ull)[6] == row(2, 7, 7.0, kT0 + 7000));
  CHECK(s.device_count(dev(2)) == 7);
}

TEST_CASE("bundle seal and open") {
  crypto::Rng rng(fixtures::key_from("bundle"));
  const auto secret = fixtures::key_from("recipient");
  const auto pub = crypto::x25519_public(secret);
  CHECK(oracle::x25519_public(secret) == pub);
  std::vector<StoredReading> rows;
  for (std::uint64_t i = 1; i <= 9; ++i) rows.push_back(row(1 + i % 2, i, i * 0.5, kT0 + i, "humidity"));
  const auto b = seal_bundle(rows, kT0, kT0 + 100, pub, kT0 + 200, rng);
  CHECK(b.header.record_count == 9);
  CHECK(b.header.devices.size() == 2);
  const auto decoded = EncryptedBundle::decode(b.encode());
  CHECK(decoded.bundle_hash() == b.bundle_hash());
  const auto opened = open_bundle(decoded, secret);
  REQUIRE(opened);
  CHECK(*opened == rows);
  CHECK_FALSE(open_bundle(b, fixtures::key_from("other")));
  auto bad = b;
  bad.header.to += 1;
  CHECK_FALSE(open_bundle(bad, secret));
  const auto enc = b.encode();
  const std::string text(enc.begin(), enc.end());
  CHECK(text.find("humidity") == std::string::npos);
}

}  // TEST_SUITE
