#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace homegate {

enum class Errc {
  // identity-pki
  VaultFailure,
  UnknownHandle,
  InvalidProof,
  RoleForbidden,
  // enrollment
  DuplicatePending,
  RegistryFull,
  NotPending,
  UnknownRequest,
  UnknownZone,
  Unauthorized,
  UnknownDevice,
  // telemetry
  PayloadTooLarge,
  InvalidReading,
  // segmentation
  DuplicateName,
  OverlappingRange,
  ZoneExhausted,
  InvalidAddress,
  // sentinel
  AlreadyQuarantined,
  NotQuarantined,
  NotActive,
  EmptyDictionary,
  UnknownAlert,
  TargetUnreachable,
  // store
  StorageFailure,
  BadRange,
  Malformed,
  // core
  ParseError,
  UnknownKey,
  InvalidValue,
  PortInUse,
  UninitializedDataDir,
  // sim
  UnknownScenario,
  InvalidSpec,
};

std::string_view errc_name(Errc code) noexcept;

/// Every fallible operation in the library throws this; `code()` is the
/// machine-readable discriminator the API and CLI map to their own shapes.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace homegate
