#include <cstdio>

#include "checks.hpp"

int main() {
  int failed = 0;
  for (const auto& c : acceptance::criteria()) {
    const auto r = acceptance::run_timed(c);
    std::printf("%s %d %s: %s (%.2f s)\n", r.pass ? "PASS" : "FAIL", c.number, c.title.c_str(),
                r.detail.c_str(), r.seconds);
    std::fflush(stdout);
    if (!r.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
