#include "homegate/crypto.hpp"

#include <sodium.h>

#include <cstring>

namespace homegate::crypto {

void ensure_init() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error(Errc::VaultFailure, "libsodium initialisation failed");
}

Rng::Rng() { ensure_init(); }

Rng::Rng(const Key32& seed) : seed_(seed) { ensure_init(); }

void Rng::fill(std::span<std::uint8_t> out) {
  if (out.empty()) return;
  if (!seed_) {
    randombytes_buf(out.data(), out.size());
    return;
  }
  std::lock_guard lock(mu_);
  // Keystream block index = offset / 64; unaligned heads are trimmed.
  const std::uint64_t first_block = offset_ / 64;
  const std::size_t skip = offset_ % 64;
  Bytes stream(skip + out.size(), 0);
  static const std::uint8_t zero_nonce[crypto_stream_chacha20_ietf_NONCEBYTES] = {};
  crypto_stream_chacha20_ietf_xor_ic(stream.data(), stream.data(), stream.size(), zero_nonce,
                                     static_cast<std::uint32_t>(first_block), seed_->data());
  std::memcpy(out.data(), stream.data() + skip, out.size());
  offset_ += out.size();
}

SigningKeyPair signing_keypair_from_seed(const Key32& seed) {
  ensure_init();
  SigningKeyPair kp{seed, {}};
  std::uint8_t sk[crypto_sign_SECRETKEYBYTES];
  crypto_sign_seed_keypair(kp.public_key.data(), sk, seed.data());
  sodium_memzero(sk, sizeof sk);
  return kp;
}

Signature sign(const Key32& seed, ByteView message) {
  ensure_init();
  std::uint8_t pk[crypto_sign_PUBLICKEYBYTES];
  std::uint8_t sk[crypto_sign_SECRETKEYBYTES];
  crypto_sign_seed_keypair(pk, sk, seed.data());
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), sk);
  sodium_memzero(sk, sizeof sk);
  return sig;
}

bool verify(const Signature& sig, ByteView message, const Key32& public_key) {
  ensure_init();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(),
                                     public_key.data()) == 0;
}

Key32 x25519_public(const Key32& secret) {
  ensure_init();
  Key32 pub{};
  crypto_scalarmult_base(pub.data(), secret.data());
  return pub;
}

Key32 x25519_shared(const Key32& secret, const Key32& peer_public) {
  ensure_init();
  Key32 shared{};
  if (crypto_scalarmult(shared.data(), secret.data(), peer_public.data()) != 0)
    throw Error(Errc::InvalidValue, "key agreement with low-order point");
  return shared;
}

Key32 ed25519_pk_to_x25519(const Key32& public_key) {
  ensure_init();
  Key32 out{};
  if (crypto_sign_ed25519_pk_to_curve25519(out.data(), public_key.data()) != 0)
    throw Error(Errc::InvalidValue, "not a valid Ed25519 public key");
  return out;
}

Key32 ed25519_seed_to_x25519(const Key32& seed) {
  ensure_init();
  std::uint8_t pk[crypto_sign_PUBLICKEYBYTES];
  std::uint8_t sk[crypto_sign_SECRETKEYBYTES];
  crypto_sign_seed_keypair(pk, sk, seed.data());
  Key32 out{};
  crypto_sign_ed25519_sk_to_curve25519(out.data(), sk);
  sodium_memzero(sk, sizeof sk);
  return out;
}

Bytes aead_seal(const Key32& key, const Nonce& nonce, ByteView ad, ByteView plaintext) {
  ensure_init();
  Bytes out(plaintext.size() + kTagSize);
  unsigned long long out_len = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(out.data(), &out_len, plaintext.data(),
                                            plaintext.size(), ad.data(), ad.size(), nullptr,
                                            nonce.data(), key.data());
  out.resize(out_len);
  return out;
}

std::optional<Bytes> aead_open(const Key32& key, const Nonce& nonce, ByteView ad,
                               ByteView ciphertext_and_tag) {
  ensure_init();
  if (ciphertext_and_tag.size() < kTagSize) return std::nullopt;
  Bytes out(ciphertext_and_tag.size() - kTagSize);
  unsigned long long out_len = 0;
  if (crypto_aead_chacha20poly1305_ietf_decrypt(
          out.data(), &out_len, nullptr, ciphertext_and_tag.data(), ciphertext_and_tag.size(),
          ad.data(), ad.size(), nonce.data(), key.data()) != 0)
    return std::nullopt;
  out.resize(out_len);
  return out;
}

Digest sha256(ByteView data) {
  ensure_init();
  Digest d{};
  crypto_hash_sha256(d.data(), data.data(), data.size());
  return d;
}

Digest hmac_sha256(ByteView key, ByteView message) {
  ensure_init();
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, key.data(), key.size());
  crypto_auth_hmacsha256_update(&st, message.data(), message.size());
  Digest d{};
  crypto_auth_hmacsha256_final(&st, d.data());
  return d;
}

Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length) {
  if (length > 255 * kHashSize) throw Error(Errc::InvalidValue, "HKDF output too long");
  const Digest zero_salt{};
  const Digest prk = hmac_sha256(salt.empty() ? ByteView(zero_salt) : salt, ikm);
  Bytes okm;
  okm.reserve(length);
  Bytes block;
  for (std::uint8_t counter = 1; okm.size() < length; ++counter) {
    Bytes msg = block;
    msg.insert(msg.end(), info.begin(), info.end());
    msg.push_back(counter);
    const Digest t = hmac_sha256(prk, msg);
    block.assign(t.begin(), t.end());
    const std::size_t take = std::min(length - okm.size(), block.size());
    okm.insert(okm.end(), block.begin(), block.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return okm;
}

namespace {

Key32 sealing_key(const Key32& shared, const Key32& ephemeral_pub, const Key32& recipient,
                  std::string_view label) {
  Bytes info(ephemeral_pub.begin(), ephemeral_pub.end());
  info.insert(info.end(), recipient.begin(), recipient.end());
  return to_fixed<32>(hkdf_sha256(shared, as_bytes(label), info, 32));
}

}  // namespace

Bytes seal_to(const Key32& recipient_x25519, ByteView plaintext, ByteView ad,
              std::string_view label, Rng& rng) {
  Key32 eph_secret = rng.bytes<32>();
  const Key32 eph_pub = x25519_public(eph_secret);
  Key32 shared = x25519_shared(eph_secret, recipient_x25519);
  Key32 key = sealing_key(shared, eph_pub, recipient_x25519, label);
  Bytes out(eph_pub.begin(), eph_pub.end());
  const Bytes ct = aead_seal(key, Nonce{}, ad, plaintext);
  out.insert(out.end(), ct.begin(), ct.end());
  wipe(eph_secret);
  wipe(shared);
  wipe(key);
  return out;
}

std::optional<Bytes> open_sealed(const Key32& recipient_secret, ByteView sealed, ByteView ad,
                                 std::string_view label) {
  if (sealed.size() < kKeySize + kTagSize) return std::nullopt;
  const Key32 eph_pub = to_fixed<32>(sealed.first(kKeySize));
  Key32 shared{};
  try {
    shared = x25519_shared(recipient_secret, eph_pub);
  } catch (const Error&) {
    return std::nullopt;
  }
  Key32 key = sealing_key(shared, eph_pub, x25519_public(recipient_secret), label);
  auto pt = aead_open(key, Nonce{}, ad, sealed.subspan(kKeySize));
  wipe(shared);
  wipe(key);
  return pt;
}

bool constant_time_equal(ByteView a, ByteView b) {
  return a.size() == b.size() && sodium_memcmp(a.data(), b.data(), a.size()) == 0;
}

void wipe(std::span<std::uint8_t> data) { sodium_memzero(data.data(), data.size()); }

}  // namespace homegate::crypto
