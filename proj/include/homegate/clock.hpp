#pragma once

#include <atomic>
#include <cstdint>

namespace homegate {

using UnixMs = std::uint64_t;
using UnixSeconds = std::int64_t;

/// Every time-dependent operation takes its notion of "now" from a Clock;
/// nothing in the library reads wall time directly.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual UnixMs now_ms() const = 0;
  UnixSeconds now_s() const { return static_cast<UnixSeconds>(now_ms() / 1000); }
};

class SystemClock final : public Clock {
 public:
  UnixMs now_ms() const override;
};

/// Settable clock for tests and the simulator's virtual time.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(UnixMs start = 0) : now_(start) {}
  UnixMs now_ms() const override { return now_.load(); }
  void set(UnixMs t) { now_.store(t); }
  void advance(UnixMs delta) { now_.fetch_add(delta); }

 private:
  std::atomic<UnixMs> now_;
};

}  // namespace homegate
