#include <doctest.h>

#include "homegate/error.hpp"
#include "homegate/sim.hpp"

using namespace homegate;
using namespace homegate::sim;

namespace {

FleetSpec spec(std::uint32_t direct, std::uint32_t via, std::uint64_t duration_s, std::uint64_t seed) {
  FleetSpec s;
  s.n_direct = direct;
  s.n_via_repeater = via;
  s.duration_s = duration_s;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("same seed, same report") {
  const auto a = run_scenario("baseline", spec(2, 0, 5, 7));
  const auto b = run_scenario("baseline", spec(2, 0, 5, 7));
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.to_table() == b.to_table());
  CHECK(a.enrolled == 2);
  CHECK(a.stored > 0);
  CHECK(a.conserved());
  const auto c = run_scenario("baseline", spec(2, 0, 5, 8));
  CHECK(c.conserved());
}

TEST_CASE("empty fleet") {
  const auto r = run_scenario("baseline", spec(0, 0, 0, 1));
  CHECK(r.sent == 0);
  CHECK(r.delivered == 0);
  CHECK(r.stored == 0);
  CHECK(r.conserved());
}

TEST_CASE("lossless links store everything once") {
  const auto r = run_scenario("baseline", spec(25, 25, 30, 3));
  CHECK(r.enrolled == 51);  // the repeater enrolls too
  CHECK(r.enrollment_timeouts == 0);
  CHECK(r.stored == r.distinct_sent);
  CHECK(r.stored == r.sent);
  CHECK(r.store_rows == r.stored);
  CHECK(r.rejected_total() == 0);
  CHECK(r.conserved());
  for (const auto& d : r.devices)
    if (d.role == "DEVICE") CHECK(d.stored == d.sent);
}

TEST_CASE("link model draws") {
  std::mt19937_64 g(1);
  const Bytes d{1, 2, 3};
  LinkModel perfect;
  LinkModel dead;
  dead.loss_prob = 1.0;
  for (int i = 0; i < 1000; ++i) {
    const auto out = virtual_link_deliver(d, perfect, g);
    REQUIRE(out.size() == 1);
    CHECK(out[0].datagram == d);
    CHECK(out[0].delay <= perfect.max_delay_ms);
    CHECK(virtual_link_deliver(d, dead, g).empty());
  }
  LinkModel dup;
  dup.dup_prob = 0.1;
  int twice = 0;
  const int trials = 10'000;
  for (int i = 0; i < trials; ++i) twice += virtual_link_deliver(d, dup, g).size() == 2;
  CHECK(twice > trials * 0.08);
  CHECK(twice < trials * 0.12);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(g);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("bad input") {
  try {
    run_scenario("earthquake", spec(1, 0, 1, 1));
    FAIL("expected UnknownScenario");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownScenario);
  }
  auto s = spec(1, 0, 1, 1);
  s.direct.loss_prob = 1.5;
  CHECK_THROWS_AS(s.validate(), Error);
  s = spec(1, 0, 1, 1);
  s.send_interval_ms = 0;
  try {
    Simulation sim(s, Scenario::Baseline);
    sim.run();
    FAIL("expected InvalidSpec");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidSpec);
  }
}

TEST_CASE("stale key after release is rejected") {
  const auto r = run_scenario("stale_key", spec(1, 0, 30, 2));
  CHECK(r.rejected.at("rejected_auth") > 0);
  CHECK(r.conserved());
  bool found = false;
  for (const auto& d : r.devices)
    if (d.role == "DEVICE") {
      found = true;
      CHECK(d.key_epoch == 1);
    }
  CHECK(found);
}

TEST_CASE("total loss times out enrollment") {
  auto s = spec(3, 0, 60, 4);
  s.direct.loss_prob = 1.0;
  const auto r = run_scenario("baseline", s);
  CHECK(r.enrolled == 0);
  CHECK(r.enrollment_timeouts == 3);
  CHECK(r.enrollment_requests == 3u * (1 + Simulation::kEnrollRetries));
  CHECK(r.delivered == 0);
  CHECK(r.conserved());
}

}  // TEST_SUITE
