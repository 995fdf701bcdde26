#include "homegate/audit.hpp"

#include <algorithm>

namespace homegate::audit {

namespace {

constexpr std::size_t kFixedRecordBytes = 8 + 8 + 1 + 2 + 32 + 32;

struct Frames {
  std::vector<ChainedAuditRecord> records;
  std::size_t good_bytes = 0;         // bytes covered by complete frames
  std::optional<std::uint64_t> bad;   // index of first undecodable frame
  bool torn_tail = false;             // last frame shorter than its length
};

Frames parse_frames(ByteView log) {
  Frames f;
  std::size_t pos = 0;
  while (pos < log.size()) {
    const std::uint64_t i = f.records.size();
    if (log.size() - pos < 4) {
      f.torn_tail = true;
      f.bad = i;
      return f;
    }
    ByteReader len_reader(log.subspan(pos, 4));
    const std::uint32_t len = len_reader.u32();
    if (log.size() - pos - 4 < len) {
      f.torn_tail = true;
      f.bad = i;
      return f;
    }
    try {
      f.records.push_back(ChainedAuditRecord::decode(log.subspan(pos + 4, len)));
    } catch (const Error&) {
      f.bad = i;
      return f;
    }
    pos += 4 + len;
    f.good_bytes = pos;
  }
  return f;
}

std::optional<Digest> read_head(const std::filesystem::path& p) {
  std::error_code ec;
  if (!std::filesystem::exists(p, ec)) return std::nullopt;
  Bytes b = fsutil::read_file(p);
  if (b.size() != 32) return Digest{};  // unreadable head never matches
  return to_fixed<32>(b);
}

Bytes frame(const ChainedAuditRecord& r) {
  const Bytes enc = r.encode();
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(enc.size()));
  w.raw(enc);
  return std::move(w).take();
}

}  // namespace

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Enroll: return "ENROLL";
    case Category::Decide: return "DECIDE";
    case Category::Revoke: return "REVOKE";
    case Category::Quarantine: return "QUARANTINE";
    case Category::Release: return "RELEASE";
    case Category::Zone: return "ZONE";
    case Category::Policy: return "POLICY";
    case Category::Export: return "EXPORT";
    case Category::Config: return "CONFIG";
  }
  return "?";
}

Category parse_category(std::uint8_t raw) {
  if (raw > 8) throw Error(Errc::Malformed, "unknown audit category " + std::to_string(raw));
  return static_cast<Category>(raw);
}

Digest ChainedAuditRecord::compute_hash() const {
  ByteWriter w;
  w.raw(prev_hash);
  w.u64(index);
  w.u64(at);
  w.u8(static_cast<std::uint8_t>(category));
  w.raw(body);
  return crypto::sha256(w.bytes());
}

Bytes ChainedAuditRecord::encode() const {
  ByteWriter w;
  w.u64(index);
  w.u64(at);
  w.u8(static_cast<std::uint8_t>(category));
  w.var(body);
  w.raw(prev_hash);
  w.raw(record_hash);
  return std::move(w).take();
}

ChainedAuditRecord ChainedAuditRecord::decode(ByteView bytes) {
  if (bytes.size() < kFixedRecordBytes) throw Error(Errc::Malformed, "short audit record");
  ByteReader r(bytes);
  ChainedAuditRecord rec;
  rec.index = r.u64();
  rec.at = r.u64();
  rec.category = parse_category(r.u8());
  const auto body = r.var();
  rec.body.assign(body.begin(), body.end());
  rec.prev_hash = r.fixed<32>();
  rec.record_hash = r.fixed<32>();
  r.expect_end();
  return rec;
}

IntegrityResult verify_chain_integrity(const std::vector<ChainedAuditRecord>& records,
                                       const std::optional<Digest>& head) {
  Digest expected_prev{};
  for (std::uint64_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.index != i || r.prev_hash != expected_prev || r.compute_hash() != r.record_hash)
      return IntegrityResult::broken(records.size(), i);
    expected_prev = r.record_hash;
  }
  if (head) {
    const bool empty_ok = records.empty() && *head == Digest{};
    if (!empty_ok && (records.empty() || records.back().record_hash != *head))
      return IntegrityResult::broken(records.size(), records.size());
  }
  return IntegrityResult::good(records.size());
}

IntegrityResult verify_log_bytes(ByteView log, const std::optional<Digest>& head) {
  Frames f = parse_frames(log);
  auto result = verify_chain_integrity(f.records, std::nullopt);
  if (!result.ok) return result;
  if (f.bad) return IntegrityResult::broken(f.records.size(), *f.bad);
  return verify_chain_integrity(f.records, head);
}

IntegrityResult verify_directory(const std::filesystem::path& dir) {
  const auto log_path = dir / kLogFile;
  std::error_code ec;
  Bytes log;
  if (std::filesystem::exists(log_path, ec)) log = fsutil::read_file(log_path);
  auto head = read_head(dir / kHeadFile);
  if (!head && !log.empty()) {
    Frames f = parse_frames(log);
    return IntegrityResult::broken(f.records.size(), f.records.size());
  }
  return verify_log_bytes(log, head);
}

// --- AuditLog ------------------------------------------------------------------

AuditLog::AuditLog() = default;

AuditLog::AuditLog(const std::filesystem::path& dir) : dir_(dir) {
  std::filesystem::create_directories(dir);
  recover();
  file_ = std::make_unique<fsutil::AppendFile>(dir / kLogFile, /*sync=*/true);
}

void AuditLog::recover() {
  const auto log_path = *dir_ / kLogFile;
  std::error_code ec;
  if (!std::filesystem::exists(log_path, ec)) return;
  const Bytes log = fsutil::read_file(log_path);
  Frames f = parse_frames(log);
  if (f.torn_tail) {
    // A crash mid-append leaves a partial final frame; the operation that
    // wrote it never reported success, so dropping it is safe.
    fsutil::AppendFile(log_path, true).truncate(f.good_bytes);
    recovery_ = Recovery::TruncatedTornFrame;
  }
  records_ = std::move(f.records);
  const auto head = read_head(*dir_ / kHeadFile);
  if (records_.empty()) return;
  const Digest tail = records_.back().record_hash;
  const bool head_lags =
      (!head && records_.size() == 1) ||
      (head && records_.size() >= 2 && records_[records_.size() - 2].record_hash == *head);
  if (head_lags && records_.back().compute_hash() == tail) {
    // Crash between the durable frame write and the head replacement.
    fsutil::write_atomic(*dir_ / kHeadFile, tail);
    recovery_ = Recovery::RolledHeadForward;
  }
}

ChainedAuditRecord AuditLog::append(Category category, ByteView body, UnixMs now) {
  std::lock_guard lock(mu_);
  if (fault_ && fault_()) throw Error(Errc::StorageFailure, "injected audit storage failure");
  ChainedAuditRecord rec;
  rec.index = records_.size();
  rec.at = now;
  rec.category = category;
  rec.body.assign(body.begin(), body.end());
  rec.prev_hash = records_.empty() ? Digest{} : records_.back().record_hash;
  rec.record_hash = rec.compute_hash();
  if (file_) {
    const std::uint64_t before = file_->size();
    try {
      file_->append(frame(rec));
      fsutil::write_atomic(*dir_ / kHeadFile, rec.record_hash);
    } catch (const Error&) {
      try {
        file_->truncate(before);
      } catch (const Error&) {
      }
      throw;
    }
  }
  records_.push_back(rec);
  return rec;
}

std::vector<ChainedAuditRecord> AuditLog::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::uint64_t AuditLog::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

Digest AuditLog::head() const {
  std::lock_guard lock(mu_);
  return records_.empty() ? Digest{} : records_.back().record_hash;
}

IntegrityResult AuditLog::verify() const {
  if (dir_) return verify_directory(*dir_);
  std::lock_guard lock(mu_);
  return verify_chain_integrity(records_);
}

void AuditLog::set_fault_injector(std::function<bool()> fault) {
  std::lock_guard lock(mu_);
  fault_ = std::move(fault);
}

}  // namespace homegate::audit
