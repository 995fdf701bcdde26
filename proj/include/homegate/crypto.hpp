#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string_view>

#include "homegate/bytes.hpp"

// Thin value-typed wrappers over libsodium. Sizes are pinned by the wire
// formats: 32-byte keys, 64-byte signatures, 12-byte nonces, 16-byte tags.
namespace homegate::crypto {

inline constexpr std::size_t kKeySize = 32;
inline constexpr std::size_t kSignatureSize = 64;
inline constexpr std::size_t kNonceSize = 12;
inline constexpr std::size_t kTagSize = 16;
inline constexpr std::size_t kHashSize = 32;

using Key32 = FixedBytes<32>;
using Signature = FixedBytes<64>;
using Nonce = FixedBytes<12>;
using Digest = FixedBytes<32>;

/// Idempotent; every entry point below calls it.
void ensure_init();

/// Source of key material, serials and ids. Unseeded instances draw from
/// the OS; seeded instances expand a 32-byte seed with a ChaCha20
/// keystream so every derived value is byte-reproducible.
class Rng {
 public:
  Rng();
  explicit Rng(const Key32& seed);

  void fill(std::span<std::uint8_t> out);
  template <std::size_t N>
  FixedBytes<N> bytes() {
    FixedBytes<N> out{};
    fill(out);
    return out;
  }
  bool seeded() const { return seed_.has_value(); }

 private:
  std::mutex mu_;
  std::optional<Key32> seed_;
  std::uint64_t offset_ = 0;
};

// --- Ed25519 -------------------------------------------------------------

struct SigningKeyPair {
  Key32 seed;        // private
  Key32 public_key;
};

SigningKeyPair signing_keypair_from_seed(const Key32& seed);
Signature sign(const Key32& seed, ByteView message);
bool verify(const Signature& sig, ByteView message, const Key32& public_key);

// --- X25519 --------------------------------------------------------------

Key32 x25519_public(const Key32& secret);
/// Throws Errc::InvalidValue for low-order points (all-zero shared secret).
Key32 x25519_shared(const Key32& secret, const Key32& peer_public);
/// Maps an Ed25519 verification key to its Montgomery form.
Key32 ed25519_pk_to_x25519(const Key32& public_key);
Key32 ed25519_seed_to_x25519(const Key32& seed);

// --- AEAD: ChaCha20-Poly1305 (IETF, 96-bit nonce) ------------------------

Bytes aead_seal(const Key32& key, const Nonce& nonce, ByteView ad, ByteView plaintext);
/// Returns nullopt on any authentication failure.
std::optional<Bytes> aead_open(const Key32& key, const Nonce& nonce, ByteView ad,
                               ByteView ciphertext_and_tag);

// --- Hashing and key derivation ------------------------------------------

Digest sha256(ByteView data);
Digest hmac_sha256(ByteView key, ByteView message);
/// RFC 5869 extract-and-expand over HMAC-SHA256.
Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length);

// --- Public-key sealing ----------------------------------------------------

/// Ephemeral X25519 agreement with `recipient`, HKDF to a one-time key, then
/// AEAD under a zero nonce. Output: ephemeral_public(32) || ciphertext || tag.
Bytes seal_to(const Key32& recipient_x25519, ByteView plaintext, ByteView ad,
              std::string_view label, Rng& rng);
std::optional<Bytes> open_sealed(const Key32& recipient_secret, ByteView sealed,
                                 ByteView ad, std::string_view label);

bool constant_time_equal(ByteView a, ByteView b);
void wipe(std::span<std::uint8_t> data);

}  // namespace homegate::crypto
