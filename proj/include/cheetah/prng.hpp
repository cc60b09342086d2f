#pragma once

#include <sodium.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cheetah {

/// Deterministic ChaCha20 keystream generator. Seeded streams are reproducible;
/// from_entropy() draws the key from the OS.
class Prng {
 public:
  using result_type = std::uint64_t;

  explicit Prng(std::uint64_t seed, std::uint64_t stream = 0) {
    init_sodium();
    std::array<unsigned char, 16> material{};
    std::memcpy(material.data(), &seed, 8);
    std::memcpy(material.data() + 8, &stream, 8);
    crypto_generichash(key_.data(), key_.size(), material.data(), material.size(), nullptr, 0);
  }

  static Prng from_entropy() {
    init_sodium();
    Prng g(0);
    randombytes_buf(g.key_.data(), g.key_.size());
    return g;
  }

  /// Independent child stream; does not disturb this generator.
  Prng fork(std::uint64_t label) const {
    Prng child(0);
    std::array<unsigned char, crypto_stream_chacha20_KEYBYTES + 8> material{};
    std::memcpy(material.data(), key_.data(), key_.size());
    std::memcpy(material.data() + key_.size(), &label, 8);
    crypto_generichash(child.key_.data(), child.key_.size(), material.data(), material.size(), nullptr, 0);
    return child;
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == buffer_.size()) refill();
    return buffer_[pos_++];
  }

  /// Uniform in [0, bound).
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) throw std::invalid_argument("empty range");
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % bound;
  }

  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("empty range");
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  double uniform01() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool coin() { return ((*this)() & 1) != 0; }

  double gaussian(double sigma) {
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static void init_sodium() {
    if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
  }

  void refill() {
    std::array<unsigned char, crypto_stream_chacha20_NONCEBYTES> nonce{};
    std::memcpy(nonce.data(), &block_, 8);
    ++block_;
    crypto_stream_chacha20(reinterpret_cast<unsigned char*>(buffer_.data()), sizeof(buffer_), nonce.data(),
                           key_.data());
    pos_ = 0;
  }

  std::array<unsigned char, crypto_stream_chacha20_KEYBYTES> key_{};
  std::array<std::uint64_t, 64> buffer_{};
  std::size_t pos_ = 64;
  std::uint64_t block_ = 0;
};

}  // namespace cheetah
