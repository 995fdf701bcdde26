#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "homegate/bytes.hpp"
#include "homegate/clock.hpp"
#include "homegate/crypto.hpp"
#include "homegate/fsutil.hpp"

// Hash-chained, append-only audit log.
//
//   record_hash = SHA-256(prev_hash || index u64 || at u64 || category u8 || body)
//
// audit.hgl holds `u32 length || canonical record` frames; audit.head holds
// the latest record_hash (exactly 32 bytes) so that truncation of the log
// tail is detectable.
namespace homegate::audit {

using crypto::Digest;

enum class Category : std::uint8_t {
  Enroll = 0,
  Decide = 1,
  Revoke = 2,
  Quarantine = 3,
  Release = 4,
  Zone = 5,
  Policy = 6,
  Export = 7,
  Config = 8,
};
std::string_view category_name(Category c);
Category parse_category(std::uint8_t raw);

struct ChainedAuditRecord {
  std::uint64_t index = 0;
  UnixMs at = 0;
  Category category = Category::Config;
  Bytes body;
  Digest prev_hash{};
  Digest record_hash{};

  Digest compute_hash() const;
  /// index u64 | at u64 | category u8 | u16 len body | prev_hash | record_hash
  Bytes encode() const;
  static ChainedAuditRecord decode(ByteView bytes);

  friend bool operator==(const ChainedAuditRecord&, const ChainedAuditRecord&) = default;
};

struct IntegrityResult {
  bool ok = true;
  std::uint64_t count = 0;      // records parsed
  std::uint64_t broken_at = 0;  // meaningful when !ok

  static IntegrityResult good(std::uint64_t n) { return {true, n, 0}; }
  static IntegrityResult broken(std::uint64_t n, std::uint64_t i) { return {false, n, i}; }
};

/// Recomputes every link and hash; reports the smallest failing index.
/// With a head hash, a valid chain whose tail differs from it is reported
/// as Broken(count).
IntegrityResult verify_chain_integrity(const std::vector<ChainedAuditRecord>& records,
                                       const std::optional<Digest>& head = std::nullopt);

/// Same check over the raw audit.hgl bytes; framing or decode errors in
/// frame i report Broken(i).
IntegrityResult verify_log_bytes(ByteView log, const std::optional<Digest>& head);

/// Reads `dir/audit.hgl` and `dir/audit.head`; a missing head file with a
/// non-empty log is reported as Broken(count).
IntegrityResult verify_directory(const std::filesystem::path& dir);

inline constexpr const char* kLogFile = "audit.hgl";
inline constexpr const char* kHeadFile = "audit.head";

/// Single-writer log. With a directory it is durable: the record frame is
/// fdatasync'ed and the head file atomically replaced before append()
/// returns. Without one it lives in memory (simulation).
class AuditLog {
 public:
  AuditLog();  // in-memory
  explicit AuditLog(const std::filesystem::path& dir);
  AuditLog(const AuditLog&) = delete;
  AuditLog& operator=(const AuditLog&) = delete;

  /// Throws Errc::StorageFailure; on failure nothing is appended.
  ChainedAuditRecord append(Category category, ByteView body, UnixMs now);

  std::vector<ChainedAuditRecord> records() const;
  std::uint64_t size() const;
  Digest head() const;
  IntegrityResult verify() const;

  /// Test hook: when it returns true the next append fails before writing.
  void set_fault_injector(std::function<bool()> fault);

  /// What open-time recovery did, for logging.
  enum class Recovery { None, TruncatedTornFrame, RolledHeadForward };
  Recovery recovery() const { return recovery_; }

 private:
  void recover();

  mutable std::mutex mu_;
  std::optional<std::filesystem::path> dir_;
  std::unique_ptr<fsutil::AppendFile> file_;
  std::vector<ChainedAuditRecord> records_;
  std::function<bool()> fault_;
  Recovery recovery_ = Recovery::None;
};

}  // namespace homegate::audit
