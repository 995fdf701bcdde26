#include "homegate/clock.hpp"

#include <chrono>

namespace homegate {

UnixMs SystemClock::now_ms() const {
  using namespace std::chrono;
  return static_cast<UnixMs>(
      duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

}  // namespace homegate
