#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cheetah/modarith.hpp"

namespace cheetah::fp {

/// Signed fixed-point encoding of reals into Z_p with centered representatives.
struct FpParams {
  int scale_bits = 10;
  std::uint64_t plaintext_modulus = 0;
  double clip_bound = 16.0;

  void validate() const {
    if (scale_bits < 1 || scale_bits > 24) throw std::invalid_argument("scale_bits must be in [1, 24]");
    if (!math::is_prime(plaintext_modulus)) throw std::invalid_argument("plaintext modulus must be prime");
    if (!(clip_bound > 0)) throw std::invalid_argument("clip bound must be positive");
    // One product of two clip-bounded values must stay below p/2.
    if (std::ldexp(clip_bound * clip_bound, 2 * scale_bits) >= static_cast<double>(plaintext_modulus / 2)) {
      throw std::invalid_argument("plaintext modulus too small for scale and clip bound");
    }
  }

  double grid() const { return std::ldexp(1.0, -scale_bits); }
};

/// Thrown when a value does not fit the centered range of Z_p at the requested scale.
class RangeError : public std::range_error {
 public:
  using std::range_error::range_error;
};

inline std::uint64_t encode_at(double x, const FpParams& params, int scale_bits) {
  if (!std::isfinite(x)) throw RangeError("cannot encode a non-finite value");
  const double scaled = std::nearbyint(std::ldexp(x, scale_bits));
  const double half = static_cast<double>(params.plaintext_modulus / 2);
  if (std::fabs(scaled) >= half) {
    throw RangeError("value " + std::to_string(x) + " overflows the plaintext modulus at scale " +
                     std::to_string(scale_bits));
  }
  const auto v = static_cast<std::int64_t>(scaled);
  const auto p = static_cast<std::int64_t>(params.plaintext_modulus);
  return static_cast<std::uint64_t>(v < 0 ? v + p : v);
}

/// round(x * 2^f) mod p after clamping to the clip bound. Clamps bump *saturations.
inline std::uint64_t encode_scalar(double x, const FpParams& params, std::uint64_t* saturations = nullptr) {
  const double b = params.clip_bound;
  if (x > b || x < -b) {
    x = x > b ? b : -b;
    if (saturations) ++*saturations;
  }
  return encode_at(x, params, params.scale_bits);
}

inline double decode_scalar(std::uint64_t e, const FpParams& params, int scale_bits_actual) {
  if (scale_bits_actual != params.scale_bits && scale_bits_actual != 2 * params.scale_bits) {
    throw std::invalid_argument("unexpected scale " + std::to_string(scale_bits_actual) +
                                " (expected f or 2f)");
  }
  const std::uint64_t p = params.plaintext_modulus;
  e %= p;
  const std::int64_t centered =
      e > p / 2 ? static_cast<std::int64_t>(e) - static_cast<std::int64_t>(p) : static_cast<std::int64_t>(e);
  return std::ldexp(static_cast<double>(centered), -scale_bits_actual);
}

inline std::vector<std::uint64_t> encode_vector(std::span<const double> xs, const FpParams& params,
                                                std::uint64_t* saturations = nullptr) {
  std::vector<std::uint64_t> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(encode_scalar(x, params, saturations));
  return out;
}

inline std::vector<double> decode_vector(std::span<const std::uint64_t> es, const FpParams& params,
                                         int scale_bits_actual) {
  std::vector<double> out;
  out.reserve(es.size());
  for (auto e : es) out.push_back(decode_scalar(e, params, scale_bits_actual));
  return out;
}

/// Round a 2f-scale real back onto the f-bit grid.
inline double requantize(double y, const FpParams& params) {
  return std::ldexp(std::nearbyint(std::ldexp(y, params.scale_bits)), -params.scale_bits);
}

inline bool on_grid(double x, int scale_bits) {
  const double s = std::ldexp(x, scale_bits);
  return s == std::nearbyint(s);
}

}  // namespace cheetah::fp
