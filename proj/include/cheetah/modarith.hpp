#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cheetah::math {

using u64 = std::uint64_t;
using i64 = std::int64_t;
using u128 = unsigned __int128;

/// Word-sized prime modulus with a cached reciprocal for fast mulmod.
/// Valid for moduli below 2^62.
class Modulus {
 public:
  Modulus() = default;
  explicit Modulus(u64 value) : value_(value), inv_(1.0L / static_cast<long double>(value)) {
    if (value < 2 || value >= (u64{1} << 62)) {
      throw std::invalid_argument("modulus out of range [2, 2^62)");
    }
  }

  u64 value() const { return value_; }

  u64 add(u64 a, u64 b) const {
    u64 s = a + b;
    return s >= value_ ? s - value_ : s;
  }
  u64 sub(u64 a, u64 b) const { return a >= b ? a - b : a + value_ - b; }
  u64 neg(u64 a) const { return a == 0 ? 0 : value_ - a; }

  // a, b < value. Floating estimate of the quotient, exact fix-up in 64-bit
  // two's complement.
  u64 mul(u64 a, u64 b) const {
    u64 q = static_cast<u64>(inv_ * a * b);
    i64 r = static_cast<i64>(a * b - q * value_);
    if (r < 0) r += static_cast<i64>(value_);
    if (r >= static_cast<i64>(value_)) r -= static_cast<i64>(value_);
    return static_cast<u64>(r);
  }

  u64 pow(u64 base, u64 exp) const {
    u64 result = 1 % value_;
    base %= value_;
    while (exp) {
      if (exp & 1) result = mul(result, base);
      base = mul(base, base);
      exp >>= 1;
    }
    return result;
  }

  // Requires a prime modulus.
  u64 inv(u64 a) const {
    if (a % value_ == 0) throw std::domain_error("zero has no inverse");
    return pow(a, value_ - 2);
  }

  /// Reduce a signed integer into [0, value).
  u64 from_signed(i64 x) const {
    i64 r = x % static_cast<i64>(value_);
    return static_cast<u64>(r < 0 ? r + static_cast<i64>(value_) : r);
  }

  /// Centered representative in (-value/2, value/2].
  i64 to_signed(u64 x) const {
    return x > value_ / 2 ? static_cast<i64>(x) - static_cast<i64>(value_) : static_cast<i64>(x);
  }

  friend bool operator==(const Modulus& a, const Modulus& b) { return a.value_ == b.value_; }

 private:
  u64 value_ = 0;
  long double inv_ = 0;
};

inline u64 mulmod_slow(u64 a, u64 b, u64 m) { return static_cast<u64>(static_cast<u128>(a) * b % m); }

inline u64 powmod_slow(u64 base, u64 exp, u64 m) {
  u64 r = 1 % m;
  base %= m;
  while (exp) {
    if (exp & 1) r = mulmod_slow(r, base, m);
    base = mulmod_slow(base, base, m);
    exp >>= 1;
  }
  return r;
}

/// Deterministic Miller-Rabin for 64-bit integers.
inline bool is_prime(u64 n) {
  if (n < 2) return false;
  for (u64 small : {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37}) {
    if (n % small == 0) return n == small;
  }
  u64 d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  for (u64 a : {2ULL, 325ULL, 9375ULL, 28178ULL, 450775ULL, 9780504ULL, 1795265022ULL}) {
    u64 x = powmod_slow(a % n, d, n);
    if (a % n == 0 || x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int r = 1; r < s; ++r) {
      x = mulmod_slow(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

/// Largest prime p < 2^bits with p = 1 (mod step).
inline u64 largest_prime_below_pow2(int bits, u64 step) {
  if (bits < 2 || bits > 62) throw std::invalid_argument("prime bit width must be in [2, 62]");
  u64 limit = u64{1} << bits;
  u64 k = (limit - 2) / step;
  for (; k > 0; --k) {
    u64 cand = k * step + 1;
    if (is_prime(cand)) return cand;
  }
  throw std::runtime_error("no prime of the requested form");
}

/// Smallest x with x^n = -1 (mod q), i.e. a primitive 2n-th root of unity.
inline u64 primitive_2n_root(const Modulus& q, std::size_t n) {
  const u64 qv = q.value();
  if ((qv - 1) % (2 * n) != 0) throw std::invalid_argument("modulus is not 1 mod 2n");
  const u64 cofactor = (qv - 1) / (2 * n);
  for (u64 x = 2; x < qv; ++x) {
    u64 psi = q.pow(x, cofactor);
    if (q.pow(psi, n) == qv - 1) return psi;
  }
  throw std::runtime_error("no primitive root found");
}

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t bit_reverse(std::size_t v, int bits) {
  std::size_t r = 0;
  for (int i = 0; i < bits; ++i) {
    r = (r << 1) | ((v >> i) & 1);
  }
  return r;
}

}  // namespace cheetah::math
