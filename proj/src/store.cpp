#include "homegate/store.hpp"

#include <algorithm>
#include <limits>
#include <mutex>

namespace homegate::store {

namespace {

constexpr std::string_view kBundleMagic = "HGB1";
constexpr std::string_view kBundleLabel = "HGB1-bundle-key";

}  // namespace

Bytes StoredReading::encode() const {
  ByteWriter w;
  w.raw(device_id);
  w.u64(seq);
  w.str(metric);
  w.f64(value);
  w.u64(device_ts);
  w.u64(arrival_ts);
  return std::move(w).take();
}

StoredReading StoredReading::decode(ByteView bytes) {
  ByteReader r(bytes);
  StoredReading s;
  s.device_id = r.fixed<8>();
  s.seq = r.u64();
  s.metric = r.str(64);
  s.value = r.f64();
  s.device_ts = r.u64();
  s.arrival_ts = r.u64();
  r.expect_end();
  return s;
}

Aggregate parse_aggregate(std::string_view s) {
  if (s == "raw") return Aggregate::Raw;
  if (s == "mean") return Aggregate::Mean;
  if (s == "min") return Aggregate::Min;
  if (s == "max") return Aggregate::Max;
  if (s == "count") return Aggregate::Count;
  throw Error(Errc::InvalidValue, "unknown aggregate '" + std::string(s) + "'");
}

std::string_view aggregate_name(Aggregate a) {
  switch (a) {
    case Aggregate::Raw: return "raw";
    case Aggregate::Mean: return "mean";
    case Aggregate::Min: return "min";
    case Aggregate::Max: return "max";
    case Aggregate::Count: return "count";
  }
  return "?";
}

ReadingStore::ReadingStore(std::uint64_t max_readings) : max_readings_(max_readings) {}

ReadingStore::ReadingStore(const std::filesystem::path& file, std::uint64_t max_readings)
    : max_readings_(max_readings), path_(file) {
  load();
  file_ = std::make_unique<fsutil::AppendFile>(file, /*sync=*/false);
}

void ReadingStore::load() {
  std::error_code ec;
  if (!std::filesystem::exists(*path_, ec)) return;
  const Bytes data = fsutil::read_file(*path_);
  std::size_t pos = 0;
  while (data.size() - pos >= 4) {
    ByteReader lr(ByteView(data).subspan(pos, 4));
    const std::uint32_t len = lr.u32();
    if (data.size() - pos - 4 < len) break;  // torn tail from a crash
    try {
      auto r = StoredReading::decode(ByteView(data).subspan(pos + 4, len));
      Key k{r.device_id, r.seq};
      if (rows_.emplace(k, std::move(r)).second) fifo_.push_back(k);
    } catch (const Error&) {
      break;
    }
    pos += 4 + len;
  }
  if (pos != data.size()) fsutil::AppendFile(*path_, false).truncate(pos);
  while (fifo_.size() > max_readings_) {
    rows_.erase(fifo_.front());
    fifo_.pop_front();
    ++pruned_since_compaction_;
  }
  if (pruned_since_compaction_) compact();
}

void ReadingStore::compact() {
  if (!path_) return;
  ByteWriter w;
  for (const auto& k : fifo_) {
    const Bytes enc = rows_.at(k).encode();
    w.u32(static_cast<std::uint32_t>(enc.size()));
    w.raw(enc);
  }
  file_.reset();
  fsutil::write_atomic(*path_, w.bytes());
  file_ = std::make_unique<fsutil::AppendFile>(*path_, false);
  pruned_since_compaction_ = 0;
}

InsertResult ReadingStore::insert(const StoredReading& r) {
  std::unique_lock lock(mu_);
  const Key k{r.device_id, r.seq};
  if (rows_.count(k)) return {};
  if (file_) {
    const Bytes enc = r.encode();
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(enc.size()));
    w.raw(enc);
    file_->append(w.bytes());
  }
  rows_.emplace(k, r);
  fifo_.push_back(k);
  InsertResult res{true, 0};
  while (fifo_.size() > max_readings_) {
    rows_.erase(fifo_.front());
    fifo_.pop_front();
    ++res.pruned;
  }
  if (res.pruned) {
    pruned_since_compaction_ += res.pruned;
    if (pruned_since_compaction_ >= std::max<std::uint64_t>(1, max_readings_ / 10)) compact();
  }
  return res;
}

bool ReadingStore::contains(const DeviceId& device, std::uint64_t seq) const {
  std::shared_lock lock(mu_);
  return rows_.count(Key{device, seq}) != 0;
}

std::vector<SeriesPoint> ReadingStore::query(const DeviceId& device, UnixMs from, UnixMs to,
                                             std::uint64_t bucket_s, Aggregate agg) const {
  if (from > to) throw Error(Errc::BadRange, "from must not exceed to");
  if (agg != Aggregate::Raw && bucket_s == 0)
    throw Error(Errc::BadRange, "aggregates need bucket >= 1 second");
  std::shared_lock lock(mu_);
  const auto lo = rows_.lower_bound(Key{device, 0});
  const auto hi = rows_.upper_bound(Key{device, std::numeric_limits<std::uint64_t>::max()});
  std::vector<SeriesPoint> out;
  if (agg == Aggregate::Raw) {
    for (auto it = lo; it != hi; ++it) {
      const auto& r = it->second;
      if (r.device_ts >= from && r.device_ts < to) out.push_back({r.device_ts, r.value, 1});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const SeriesPoint& a, const SeriesPoint& b) { return a.t < b.t; });
    return out;
  }
  const UnixMs width = bucket_s * 1000;
  struct Acc {
    double sum = 0, min = 0, max = 0;
    std::uint64_t n = 0;
  };
  std::map<UnixMs, Acc> buckets;
  for (auto it = lo; it != hi; ++it) {
    const auto& r = it->second;
    if (r.device_ts < from || r.device_ts >= to) continue;
    Acc& a = buckets[r.device_ts / width * width];
    if (a.n == 0) {
      a.min = a.max = r.value;
    } else {
      a.min = std::min(a.min, r.value);
      a.max = std::max(a.max, r.value);
    }
    a.sum += r.value;
    ++a.n;
  }
  for (const auto& [start, a] : buckets) {
    double v = 0;
    switch (agg) {
      case Aggregate::Mean: v = a.sum / static_cast<double>(a.n); break;
      case Aggregate::Min: v = a.min; break;
      case Aggregate::Max: v = a.max; break;
      case Aggregate::Count: v = static_cast<double>(a.n); break;
      case Aggregate::Raw: break;
    }
    out.push_back({start, v, a.n});
  }
  return out;
}

std::vector<StoredReading> ReadingStore::range(UnixMs from, UnixMs to) const {
  if (from > to) throw Error(Errc::BadRange, "from must not exceed to");
  std::shared_lock lock(mu_);
  std::vector<StoredReading> out;
  for (const auto& [k, r] : rows_)
    if (r.device_ts >= from && r.device_ts < to) out.push_back(r);
  return out;
}

std::uint64_t ReadingStore::size() const {
  std::shared_lock lock(mu_);
  return rows_.size();
}

std::uint64_t ReadingStore::device_count(const DeviceId& device) const {
  std::shared_lock lock(mu_);
  const auto lo = rows_.lower_bound(Key{device, 0});
  const auto hi = rows_.upper_bound(Key{device, std::numeric_limits<std::uint64_t>::max()});
  return static_cast<std::uint64_t>(std::distance(lo, hi));
}

std::uint64_t ReadingStore::max_seq(const DeviceId& device) const {
  std::shared_lock lock(mu_);
  auto hi = rows_.upper_bound(Key{device, std::numeric_limits<std::uint64_t>::max()});
  if (hi == rows_.begin()) return 0;
  --hi;
  return hi->first.device == device ? hi->first.seq : 0;
}

// --- export --------------------------------------------------------------------

Bytes BundleHeader::encode() const {
  ByteWriter w;
  w.u64(from);
  w.u64(to);
  w.u32(static_cast<std::uint32_t>(devices.size()));
  for (const auto& d : devices) w.raw(d);
  w.u32(record_count);
  w.u64(created_at);
  return std::move(w).take();
}

BundleHeader BundleHeader::decode(ByteView bytes) {
  ByteReader r(bytes);
  BundleHeader h;
  h.from = r.u64();
  h.to = r.u64();
  const std::uint32_t n = r.u32();
  if (n > r.remaining() / 8) throw Error(Errc::Malformed, "device count exceeds header size");
  for (std::uint32_t i = 0; i < n; ++i) h.devices.push_back(r.fixed<8>());
  h.record_count = r.u32();
  h.created_at = r.u64();
  r.expect_end();
  return h;
}

Bytes EncryptedBundle::encode() const {
  ByteWriter w;
  w.raw(as_bytes(kBundleMagic));
  w.var(header.encode());
  w.var(wrapped_key);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  return std::move(w).take();
}

EncryptedBundle EncryptedBundle::decode(ByteView bytes) {
  ByteReader r(bytes);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kBundleMagic.begin()))
    throw Error(Errc::Malformed, "not an export bundle");
  EncryptedBundle b;
  b.header = BundleHeader::decode(r.var());
  const auto wk = r.var();
  b.wrapped_key.assign(wk.begin(), wk.end());
  const auto payload = r.raw(r.u32());
  b.payload.assign(payload.begin(), payload.end());
  r.expect_end();
  return b;
}

EncryptedBundle seal_bundle(const std::vector<StoredReading>& readings, UnixMs from, UnixMs to,
                            const crypto::Key32& recipient_public, UnixMs now,
                            crypto::Rng& rng) {
  EncryptedBundle b;
  b.header.from = from;
  b.header.to = to;
  b.header.record_count = static_cast<std::uint32_t>(readings.size());
  b.header.created_at = now;
  for (const auto& r : readings)
    if (std::find(b.header.devices.begin(), b.header.devices.end(), r.device_id) ==
        b.header.devices.end())
      b.header.devices.push_back(r.device_id);
  std::sort(b.header.devices.begin(), b.header.devices.end());

  ByteWriter plain;
  for (const auto& r : readings) plain.var(r.encode());
  const Bytes ad = b.header.encode();
  crypto::Key32 bundle_key = rng.bytes<32>();
  b.wrapped_key = crypto::seal_to(recipient_public, bundle_key, ad, kBundleLabel, rng);
  b.payload = crypto::aead_seal(bundle_key, crypto::Nonce{}, ad, plain.bytes());
  crypto::wipe(bundle_key);
  return b;
}

std::optional<std::vector<StoredReading>> open_bundle(const EncryptedBundle& bundle,
                                                      const crypto::Key32& recipient_secret) {
  const Bytes ad = bundle.header.encode();
  auto key_bytes = crypto::open_sealed(recipient_secret, bundle.wrapped_key, ad, kBundleLabel);
  if (!key_bytes || key_bytes->size() != 32) return std::nullopt;
  const auto key = to_fixed<32>(*key_bytes);
  auto plain = crypto::aead_open(key, crypto::Nonce{}, ad, bundle.payload);
  if (!plain) return std::nullopt;
  std::vector<StoredReading> out;
  ByteReader r(*plain);
  while (r.remaining() > 0) out.push_back(StoredReading::decode(r.var()));
  return out;
}

}  // namespace homegate::store
