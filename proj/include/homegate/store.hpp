#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "homegate/bytes.hpp"
#include "homegate/clock.hpp"
#include "homegate/crypto.hpp"
#include "homegate/fsutil.hpp"

// Telemetry persistence, bucketed aggregation and ciphertext-only export.
namespace homegate::store {

using DeviceId = FixedBytes<8>;

struct StoredReading {
  DeviceId device_id{};
  std::uint64_t seq = 0;
  std::string metric;
  double value = 0.0;
  UnixMs device_ts = 0;
  UnixMs arrival_ts = 0;

  /// device_id[8] | seq u64 | u16 len metric | f64 value | device_ts u64 | arrival_ts u64
  Bytes encode() const;
  static StoredReading decode(ByteView bytes);
  friend bool operator==(const StoredReading&, const StoredReading&) = default;
};

enum class Aggregate { Raw, Mean, Min, Max, Count };
Aggregate parse_aggregate(std::string_view s);
std::string_view aggregate_name(Aggregate a);

struct SeriesPoint {
  UnixMs t = 0;        // reading time (raw) or bucket start
  double value = 0.0;
  std::uint64_t count = 1;
  friend bool operator==(const SeriesPoint&, const SeriesPoint&) = default;
};

struct InsertResult {
  bool inserted = false;
  std::uint64_t pruned = 0;
};

/// (device_id, seq) keyed table; readings are time-indexed by device_ts.
/// With a path, rows are appended to `readings.hgr` as u32-length frames.
/// Concurrent readers, single writer.
class ReadingStore {
 public:
  explicit ReadingStore(std::uint64_t max_readings = 1'000'000);
  ReadingStore(const std::filesystem::path& file, std::uint64_t max_readings);

  /// Duplicate (device_id, seq) is a no-op returning inserted=false.
  InsertResult insert(const StoredReading& r);
  bool contains(const DeviceId& device, std::uint64_t seq) const;

  /// Half-open [from, to) over device_ts. Aggregates use buckets aligned
  /// to multiples of `bucket_s` seconds; empty buckets are omitted.
  /// Throws BadRange for from > to or bucket_s == 0 with an aggregate.
  std::vector<SeriesPoint> query(const DeviceId& device, UnixMs from, UnixMs to,
                                 std::uint64_t bucket_s, Aggregate agg) const;
  /// All devices, [from, to), ordered by (device_id, seq).
  std::vector<StoredReading> range(UnixMs from, UnixMs to) const;

  std::uint64_t size() const;
  std::uint64_t device_count(const DeviceId& device) const;
  /// Highest stored seq for the device, 0 if none.
  std::uint64_t max_seq(const DeviceId& device) const;

 private:
  void load();
  void compact();

  struct Key {
    DeviceId device;
    std::uint64_t seq;
    friend auto operator<=>(const Key&, const Key&) = default;
  };

  mutable std::shared_mutex mu_;
  std::uint64_t max_readings_;
  std::map<Key, StoredReading> rows_;
  std::deque<Key> fifo_;
  std::optional<std::filesystem::path> path_;
  std::unique_ptr<fsutil::AppendFile> file_;
  std::uint64_t pruned_since_compaction_ = 0;
};

// --- export --------------------------------------------------------------------

struct BundleHeader {
  UnixMs from = 0;
  UnixMs to = 0;
  std::vector<DeviceId> devices;
  std::uint32_t record_count = 0;
  UnixMs created_at = 0;

  Bytes encode() const;
  static BundleHeader decode(ByteView bytes);
  friend bool operator==(const BundleHeader&, const BundleHeader&) = default;
};

/// "HGB1" | u16 len header | u16 len wrapped_key | u32 len payload.
/// payload = AEAD(bundle_key, zero nonce, ad = header, concatenated
/// u16-framed readings); wrapped_key = bundle_key sealed to the
/// recipient's X25519 key.
struct EncryptedBundle {
  BundleHeader header;
  Bytes wrapped_key;
  Bytes payload;

  Bytes encode() const;
  static EncryptedBundle decode(ByteView bytes);
  crypto::Digest bundle_hash() const { return crypto::sha256(encode()); }
};

EncryptedBundle seal_bundle(const std::vector<StoredReading>& readings, UnixMs from, UnixMs to,
                            const crypto::Key32& recipient_public, UnixMs now, crypto::Rng& rng);

/// Recipient side. nullopt on any authentication failure.
std::optional<std::vector<StoredReading>> open_bundle(const EncryptedBundle& bundle,
                                                      const crypto::Key32& recipient_secret);

}  // namespace homegate::store
