#pragma once

#include <filesystem>

#include "homegate/bytes.hpp"

namespace homegate::fsutil {

/// Throws Errc::StorageFailure on any I/O error.
Bytes read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, fsyncs, then renames over `path`.
void write_atomic(const std::filesystem::path& path, ByteView data);

/// Append-only file descriptor wrapper. `sync` controls whether each
/// append is followed by fdatasync.
class AppendFile {
 public:
  AppendFile(const std::filesystem::path& path, bool sync);
  AppendFile(const AppendFile&) = delete;
  AppendFile& operator=(const AppendFile&) = delete;
  ~AppendFile();

  void append(ByteView data);
  /// Cuts the file back to `size` bytes (used when a write half-failed).
  void truncate(std::uint64_t size);
  std::uint64_t size() const { return size_; }

 private:
  int fd_ = -1;
  bool sync_;
  std::uint64_t size_ = 0;
  std::filesystem::path path_;
};

}  // namespace homegate::fsutil
