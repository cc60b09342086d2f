#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cheetah/modarith.hpp"

namespace cheetah::math {

/// Negacyclic number-theoretic transform over Z_q[X]/(X^n + 1).
///
/// forward() maps coefficients to evaluations at the odd powers of a
/// primitive 2n-th root (in bit-reversed order); pointwise products in the
/// evaluation domain are negacyclic convolutions of the coefficients.
class NttTables {
 public:
  NttTables(std::size_t n, Modulus q) : n_(n), q_(q) {
    if (!is_power_of_two(n) || n < 2) throw std::invalid_argument("NTT size must be a power of two");
    log_n_ = std::countr_zero(n);
    const u64 psi = primitive_2n_root(q_, n_);
    const u64 psi_inv = q_.inv(psi);
    roots_.resize(n_);
    inv_roots_.resize(n_);
    u64 pw = 1, ipw = 1;
    std::vector<u64> powers(n_), inv_powers(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      powers[i] = pw;
      inv_powers[i] = ipw;
      pw = q_.mul(pw, psi);
      ipw = q_.mul(ipw, psi_inv);
    }
    for (std::size_t i = 0; i < n_; ++i) {
      roots_[i] = make_shoup(powers[bit_reverse(i, log_n_)]);
      inv_roots_[i] = make_shoup(inv_powers[bit_reverse(i, log_n_)]);
    }
    n_inv_ = make_shoup(q_.inv(n_ % q_.value()));
  }

  std::size_t size() const { return n_; }
  const Modulus& modulus() const { return q_; }

  void forward(std::span<u64> a) const {
    check(a);
    const u64 q = q_.value();
    std::size_t t = n_;
    for (std::size_t m = 1; m < n_; m <<= 1) {
      t >>= 1;
      for (std::size_t i = 0; i < m; ++i) {
        const Shoup& w = roots_[m + i];
        u64* x = a.data() + 2 * i * t;
        u64* y = x + t;
        for (std::size_t j = 0; j < t; ++j) {
          u64 u = x[j];
          u64 v = mul_shoup(y[j], w);
          u64 s = u + v;
          x[j] = s >= q ? s - q : s;
          y[j] = u >= v ? u - v : u + q - v;
        }
      }
    }
  }

  void inverse(std::span<u64> a) const {
    check(a);
    const u64 q = q_.value();
    std::size_t t = 1;
    for (std::size_t m = n_; m > 1; m >>= 1) {
      const std::size_t h = m >> 1;
      for (std::size_t i = 0; i < h; ++i) {
        const Shoup& w = inv_roots_[h + i];
        u64* x = a.data() + 2 * i * t;
        u64* y = x + t;
        for (std::size_t j = 0; j < t; ++j) {
          u64 u = x[j];
          u64 v = y[j];
          u64 s = u + v;
          x[j] = s >= q ? s - q : s;
          y[j] = mul_shoup(u >= v ? u - v : u + q - v, w);
        }
      }
      t <<= 1;
    }
    for (auto& x : a) x = mul_shoup(x, n_inv_);
  }

 private:
  struct Shoup {
    u64 w;
    u64 w_shoup;  // floor(w * 2^64 / q)
  };

  Shoup make_shoup(u64 w) const {
    return {w, static_cast<u64>((static_cast<u128>(w) << 64) / q_.value())};
  }

  u64 mul_shoup(u64 a, const Shoup& w) const {
    u64 hi = static_cast<u64>((static_cast<u128>(a) * w.w_shoup) >> 64);
    u64 r = a * w.w - hi * q_.value();
    return r >= q_.value() ? r - q_.value() : r;
  }

  void check(std::span<u64> a) const {
    if (a.size() != n_) throw std::invalid_argument("NTT input has wrong length");
  }

  std::size_t n_;
  int log_n_ = 0;
  Modulus q_;
  std::vector<Shoup> roots_;
  std::vector<Shoup> inv_roots_;
  Shoup n_inv_{};
};

}  // namespace cheetah::math
