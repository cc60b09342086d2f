#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cheetah/bytes.hpp"
#include "cheetah/modarith.hpp"
#include "cheetah/ntt.hpp"
#include "cheetah/prng.hpp"

namespace cheetah::phe {

using math::u128;
using math::u64;

enum class Owner : std::uint8_t { client = 0, server = 1 };

inline std::string_view to_string(Owner o) { return o == Owner::client ? "client" : "server"; }

inline Owner owner_from_string(std::string_view s) {
  if (s == "client") return Owner::client;
  if (s == "server") return Owner::server;
  throw std::invalid_argument("unknown role '" + std::string(s) + "'");
}

/// Ring and modulus parameters shared by both backends.
///
/// q is held as two residues. make() picks both factors = 1 (mod 2n*p), so
/// q = 1 (mod p): the rounding term of a plaintext product then contributes
/// noise of order n*p instead of n*p^2.
struct PheParams {
  std::size_t n = 4096;
  u64 p = 0;
  std::array<u64, 2> q{};
  double sigma = 3.2;

  static PheParams make(std::size_t n = 4096, int p_bits = 36, int q_bits = 62) {
    if (!math::is_power_of_two(n)) throw std::invalid_argument("slot count must be a power of two");
    PheParams params;
    params.n = n;
    params.p = math::largest_prime_below_pow2(p_bits, 2 * n);
    const u64 step = 2 * n * params.p;
    u64 k = ((u64{1} << q_bits) - 2) / step;
    int found = 0;
    for (; k > 0 && found < 2; --k) {
      const u64 cand = k * step + 1;
      if (math::is_prime(cand)) params.q[found++] = cand;
    }
    if (found < 2) throw std::runtime_error("could not find two ciphertext primes");
    params.validate();
    return params;
  }

  u128 q_product() const { return static_cast<u128>(q[0]) * q[1]; }
  u128 delta() const { return q_product() / p; }

  double log2_q() const { return std::log2(static_cast<double>(q[0])) + std::log2(static_cast<double>(q[1])); }

  /// Worst-case noise after one plaintext multiplication of a fresh ciphertext.
  double mul_noise_bound() const {
    const double fresh = 6.0 * sigma + 1.0;
    const double r_t = static_cast<double>(static_cast<u64>(q_product() % p));
    const double nd = static_cast<double>(n), pd = static_cast<double>(p);
    return nd * fresh * pd / 2.0 + r_t * nd * pd / 2.0 + 1.0;
  }

  void validate() const {
    if (!math::is_power_of_two(n) || n < 8) throw std::invalid_argument("slot count must be a power of two >= 8");
    if (!math::is_prime(p)) throw std::invalid_argument("plaintext modulus is not prime");
    if ((p - 1) % (2 * n) != 0) throw std::invalid_argument("plaintext modulus must be 1 mod 2n for batching");
    for (u64 qi : q) {
      if (qi >= (u64{1} << 62)) throw std::invalid_argument("ciphertext prime exceeds 62 bits");
      if (!math::is_prime(qi)) throw std::invalid_argument("ciphertext modulus factor is not prime");
      if ((qi - 1) % (2 * n) != 0) throw std::invalid_argument("ciphertext prime is not NTT-friendly (1 mod 2n)");
    }
    if (q[0] == q[1]) throw std::invalid_argument("ciphertext primes must be distinct");
    if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
    const double delta_d = static_cast<double>(delta());
    if (mul_noise_bound() * 1024.0 >= delta_d / 2.0) {
      throw std::invalid_argument("q/p too small: depth-1 noise leaves less than 10 bits of budget");
    }
  }

  std::uint64_t digest() const {
    return Fnv1a().add("phe-params/1").add_u64(n).add_u64(p).add_u64(q[0]).add_u64(q[1])
        .add_u64(static_cast<std::uint64_t>(std::llround(sigma * 1e6)))
        .value();
  }

  friend bool operator==(const PheParams&, const PheParams&) = default;
};

/// Ternary secret; `ntt` caches the key in the evaluation domain of each q factor.
struct SecretKey {
  Owner owner = Owner::client;
  std::vector<std::int8_t> coeffs;
  std::vector<u64> ntt;

  friend bool operator==(const SecretKey& a, const SecretKey& b) {
    return a.owner == b.owner && a.coeffs == b.coeffs;
  }
};

struct PackedPlaintext {
  std::vector<u64> slots;
  int scale_bits = 0;
};

struct OpCounters {
  std::uint64_t mult_plain = 0;
  std::uint64_t add_ct = 0;
  std::uint64_t add_plain = 0;
  std::uint64_t perm = 0;
  std::uint64_t encrypt = 0;
  std::uint64_t decrypt = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;

  std::uint64_t mult() const { return mult_plain; }
  std::uint64_t add() const { return add_ct + add_plain; }

  OpCounters& operator+=(const OpCounters& o) {
    mult_plain += o.mult_plain;
    add_ct += o.add_ct;
    add_plain += o.add_plain;
    perm += o.perm;
    encrypt += o.encrypt;
    decrypt += o.decrypt;
    bytes_sent += o.bytes_sent;
    bytes_received += o.bytes_received;
    return *this;
  }
  friend OpCounters operator+(OpCounters a, const OpCounters& b) { return a += b; }
  friend OpCounters operator-(const OpCounters& a, const OpCounters& b) {
    OpCounters d;
    d.mult_plain = a.mult_plain - b.mult_plain;
    d.add_ct = a.add_ct - b.add_ct;
    d.add_plain = a.add_plain - b.add_plain;
    d.perm = a.perm - b.perm;
    d.encrypt = a.encrypt - b.encrypt;
    d.decrypt = a.decrypt - b.decrypt;
    d.bytes_sent = a.bytes_sent - b.bytes_sent;
    d.bytes_received = a.bytes_received - b.bytes_received;
    return d;
  }
  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

class OwnerMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ScaleMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a plaintext product is requested on a ciphertext that already carries one.
class DepthViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr int kInfiniteBudget = std::numeric_limits<int>::max();

namespace detail {

struct CiphertextHeader {
  std::uint64_t params_digest = 0;
  Owner owner = Owner::client;
  int scale_bits = 0;
  int mult_depth = 0;
};

inline void write_header(ByteWriter& w, const CiphertextHeader& h) {
  w.u64(h.params_digest);
  w.u8(static_cast<std::uint8_t>(h.owner));
  w.u8(static_cast<std::uint8_t>(h.scale_bits));
  w.u8(static_cast<std::uint8_t>(h.mult_depth));
}

inline CiphertextHeader read_header(ByteReader& r, std::uint64_t expected_digest) {
  CiphertextHeader h;
  h.params_digest = r.u64();
  if (h.params_digest != expected_digest) throw DecodeError("ciphertext parameter digest mismatch");
  const auto owner = r.u8();
  if (owner > 1) throw DecodeError("bad owner tag");
  h.owner = static_cast<Owner>(owner);
  h.scale_bits = r.u8();
  h.mult_depth = r.u8();
  if (h.mult_depth > 1) throw DecodeError("bad multiplicative depth");
  return h;
}

inline constexpr std::size_t kHeaderBytes = 11;

template <class Ct>
void check_binary(const Ct& a, const Ct& b) {
  if (a.owner != b.owner) throw OwnerMismatch("ciphertexts encrypted under different owners");
  if (a.scale_bits != b.scale_bits) throw ScaleMismatch("ciphertext scales differ");
}

template <class Ct>
void check_plain(const Ct& a, const PackedPlaintext& u, std::size_t n) {
  if (u.slots.size() != n) throw std::invalid_argument("plaintext must have exactly n slots");
  if (a.scale_bits != u.scale_bits) throw ScaleMismatch("ciphertext and plaintext scales differ");
}

}  // namespace detail

inline SecretKey sample_ternary_key(std::size_t n, Owner owner, std::uint64_t seed) {
  Prng rng(seed, 0x6b6579 ^ (static_cast<std::uint64_t>(owner) << 32));
  SecretKey key;
  key.owner = owner;
  key.coeffs.resize(n);
  for (auto& c : key.coeffs) c = static_cast<std::int8_t>(static_cast<int>(rng.below(3)) - 1);
  return key;
}

// ---------------------------------------------------------------------------
// Clear backend: slots held in the open, ownership and scale tracked exactly.

struct ClearCiphertext {
  Owner owner = Owner::client;
  int scale_bits = 0;
  int mult_depth = 0;
  std::vector<u64> slots;
};

class ClearBackend {
 public:
  using Ciphertext = ClearCiphertext;
  static constexpr std::string_view kName = "clear";

  explicit ClearBackend(const PheParams& params, std::uint64_t /*seed*/ = 0)
      : params_(std::make_shared<const PheParams>(params)), p_(params.p), digest_(params.digest()) {
    params.validate();
  }

  const PheParams& params() const { return *params_; }
  std::size_t slot_count() const { return params_->n; }

  SecretKey keygen(Owner owner, std::uint64_t seed) const {
    params_->validate();
    return sample_ternary_key(params_->n, owner, seed);
  }

  Ciphertext encrypt(const PackedPlaintext& pt, const SecretKey& key) {
    if (pt.slots.size() != params_->n) throw std::invalid_argument("plaintext must have exactly n slots");
    ++counters_.encrypt;
    Ciphertext ct{key.owner, pt.scale_bits, 0, pt.slots};
    for (auto& s : ct.slots) s %= p_.value();
    return ct;
  }

  PackedPlaintext decrypt(const Ciphertext& ct, const SecretKey& key) {
    if (ct.owner != key.owner) throw OwnerMismatch("decrypt: key owner does not match ciphertext owner");
    ++counters_.decrypt;
    return {ct.slots, ct.scale_bits};
  }

  Ciphertext add_ct(const Ciphertext& a, const Ciphertext& b) {
    detail::check_binary(a, b);
    ++counters_.add_ct;
    Ciphertext r = a;
    r.mult_depth = std::max(a.mult_depth, b.mult_depth);
    for (std::size_t i = 0; i < r.slots.size(); ++i) r.slots[i] = p_.add(a.slots[i], b.slots[i]);
    return r;
  }

  Ciphertext add_plain(const Ciphertext& a, const PackedPlaintext& u) {
    detail::check_plain(a, u, params_->n);
    ++counters_.add_plain;
    Ciphertext r = a;
    for (std::size_t i = 0; i < r.slots.size(); ++i) r.slots[i] = p_.add(a.slots[i], u.slots[i] % p_.value());
    return r;
  }

  Ciphertext mul_plain(const Ciphertext& a, const PackedPlaintext& u) {
    if (u.slots.size() != params_->n) throw std::invalid_argument("plaintext must have exactly n slots");
    if (a.mult_depth != 0) throw DepthViolation("mul_plain on a depth-1 ciphertext");
    ++counters_.mult_plain;
    Ciphertext r = a;
    r.mult_depth = 1;
    r.scale_bits = a.scale_bits + u.scale_bits;
    for (std::size_t i = 0; i < r.slots.size(); ++i) r.slots[i] = p_.mul(a.slots[i], u.slots[i] % p_.value());
    return r;
  }

  int noise_budget(const Ciphertext&, const SecretKey&) const { return kInfiniteBudget; }

  std::size_t serialized_size() const { return detail::kHeaderBytes + 8 * params_->n; }

  Bytes serialize(const Ciphertext& ct) const {
    Bytes out;
    out.reserve(serialized_size());
    ByteWriter w(out);
    detail::write_header(w, {digest_, ct.owner, ct.scale_bits, ct.mult_depth});
    for (u64 s : ct.slots) w.u64(s);
    return out;
  }

  Ciphertext deserialize(std::span<const std::uint8_t> bytes) const {
    ByteReader r(bytes);
    auto h = detail::read_header(r, digest_);
    Ciphertext ct{h.owner, h.scale_bits, h.mult_depth, std::vector<u64>(params_->n)};
    for (auto& s : ct.slots) {
      s = r.u64();
      if (s >= p_.value()) throw DecodeError("slot value out of range");
    }
    if (r.remaining() != 0) throw DecodeError("trailing bytes after ciphertext");
    return ct;
  }

  const OpCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }

 private:
  std::shared_ptr<const PheParams> params_;
  math::Modulus p_;
  std::uint64_t digest_;
  OpCounters counters_;
};

// ---------------------------------------------------------------------------
// RLWE backend: private-key BFV over Z_q[X]/(X^n+1), q = q0*q1 in RNS form.
// Ciphertexts are stored in the NTT domain, residue-major: [q0 | q1].

struct RlweCiphertext {
  Owner owner = Owner::client;
  int scale_bits = 0;
  int mult_depth = 0;
  std::vector<u64> c0;
  std::vector<u64> c1;
};

/// Immutable precomputation shared by all RLWE sessions with the same parameters.
class RlweContext {
 public:
  explicit RlweContext(const PheParams& params)
      : params_(params),
        p_(params.p),
        q_{math::Modulus(params.q[0]), math::Modulus(params.q[1])},
        ntt_p_(params.n, p_),
        ntt_q_{math::NttTables(params.n, q_[0]), math::NttTables(params.n, q_[1])},
        digest_(params.digest()) {
    params.validate();
    q_full_ = params.q_product();
    delta_ = params.delta();
    for (int i = 0; i < 2; ++i) delta_mod_[i] = static_cast<u64>(delta_ % params.q[i]);
    q1_inv_mod_q0_ = q_[0].inv(params.q[1] % params.q[0]);
  }

  const PheParams& params() const { return params_; }
  std::size_t n() const { return params_.n; }
  const math::Modulus& p() const { return p_; }
  const math::Modulus& q(int i) const { return q_[i]; }
  const math::NttTables& ntt_p() const { return ntt_p_; }
  const math::NttTables& ntt_q(int i) const { return ntt_q_[i]; }
  u128 q_full() const { return q_full_; }
  u128 delta() const { return delta_; }
  u64 delta_mod(int i) const { return delta_mod_[i]; }
  std::uint64_t digest() const { return digest_; }

  /// Slots -> coefficients mod p.
  std::vector<u64> slots_to_coeffs(const std::vector<u64>& slots) const {
    std::vector<u64> m(slots);
    for (auto& s : m) s %= p_.value();
    ntt_p_.inverse(m);
    return m;
  }

  /// Centered lift of a mod-p polynomial into the NTT domain of both q factors.
  std::vector<u64> lift_centered(const std::vector<u64>& m) const {
    const std::size_t n = params_.n;
    std::vector<u64> out(2 * n);
    const u64 pv = p_.value();
    for (int i = 0; i < 2; ++i) {
      u64* dst = out.data() + i * n;
      const u64 qi = q_[i].value();
      for (std::size_t k = 0; k < n; ++k) dst[k] = m[k] > pv / 2 ? qi - (pv - m[k]) : m[k];
      ntt_q_[i].forward(std::span<u64>(dst, n));
    }
    return out;
  }

  /// Delta * m in the NTT domain of both q factors.
  std::vector<u64> scale_by_delta(const std::vector<u64>& m) const {
    const std::size_t n = params_.n;
    std::vector<u64> out(2 * n);
    for (int i = 0; i < 2; ++i) {
      u64* dst = out.data() + i * n;
      for (std::size_t k = 0; k < n; ++k) dst[k] = q_[i].mul(m[k], delta_mod_[i]);
      ntt_q_[i].forward(std::span<u64>(dst, n));
    }
    return out;
  }

  /// Inverse NTT of both residues and CRT to integers in [0, q).
  std::vector<u128> to_integers(std::vector<u64> residues) const {
    const std::size_t n = params_.n;
    for (int i = 0; i < 2; ++i) ntt_q_[i].inverse(std::span<u64>(residues.data() + i * n, n));
    std::vector<u128> out(n);
    const u64 q0 = q_[0].value();
    for (std::size_t k = 0; k < n; ++k) {
      const u64 x0 = residues[k], x1 = residues[n + k];
      const u64 diff = q_[0].sub(x0, x1 % q0);
      const u64 t = q_[0].mul(diff, q1_inv_mod_q0_);
      out[k] = static_cast<u128>(x1) + static_cast<u128>(q_[1].value()) * t;
    }
    return out;
  }

 private:
  PheParams params_;
  math::Modulus p_;
  std::array<math::Modulus, 2> q_;
  math::NttTables ntt_p_;
  std::array<math::NttTables, 2> ntt_q_;
  std::uint64_t digest_;
  u128 q_full_ = 0;
  u128 delta_ = 0;
  std::array<u64, 2> delta_mod_{};
  u64 q1_inv_mod_q0_ = 0;
};

class RlweBackend {
 public:
  using Ciphertext = RlweCiphertext;
  static constexpr std::string_view kName = "rlwe";

  RlweBackend(std::shared_ptr<const RlweContext> ctx, std::uint64_t seed)
      : ctx_(std::move(ctx)), rng_(seed, 0x726c7765) {}
  explicit RlweBackend(const PheParams& params, std::uint64_t seed = 0)
      : RlweBackend(std::make_shared<const RlweContext>(params), seed) {}

  /// Encryption randomness from the OS rather than a seed.
  static RlweBackend with_entropy(std::shared_ptr<const RlweContext> ctx) {
    RlweBackend b(std::move(ctx), 0);
    b.rng_ = Prng::from_entropy();
    return b;
  }

  const PheParams& params() const { return ctx_->params(); }
  std::size_t slot_count() const { return ctx_->n(); }
  const std::shared_ptr<const RlweContext>& context() const { return ctx_; }

  SecretKey keygen(Owner owner, std::uint64_t seed) const {
    SecretKey key = sample_ternary_key(ctx_->n(), owner, seed);
    prepare_key(key);
    return key;
  }

  /// Fill the NTT cache of a key loaded from storage.
  void prepare_key(SecretKey& key) const {
    const std::size_t n = ctx_->n();
    if (key.coeffs.size() != n) throw std::invalid_argument("secret key has wrong dimension");
    key.ntt.assign(2 * n, 0);
    for (int i = 0; i < 2; ++i) {
      const auto& qi = ctx_->q(i);
      u64* dst = key.ntt.data() + i * n;
      for (std::size_t k = 0; k < n; ++k) dst[k] = qi.from_signed(key.coeffs[k]);
      ctx_->ntt_q(i).forward(std::span<u64>(dst, n));
    }
  }

  Ciphertext encrypt(const PackedPlaintext& pt, const SecretKey& key) {
    const std::size_t n = ctx_->n();
    if (pt.slots.size() != n) throw std::invalid_argument("plaintext must have exactly n slots");
    const auto& s = ntt_of(key);
    ++counters_.encrypt;
    Ciphertext ct;
    ct.owner = key.owner;
    ct.scale_bits = pt.scale_bits;
    ct.mult_depth = 0;
    ct.c0 = ctx_->scale_by_delta(ctx_->slots_to_coeffs(pt.slots));
    ct.c1.resize(2 * n);
    // Error polynomial, shared by both residues.
    std::vector<std::int64_t> e(n);
    const double sigma = ctx_->params().sigma;
    for (auto& x : e) {
      double g = rng_.gaussian(sigma);
      g = std::clamp(g, -6.0 * sigma, 6.0 * sigma);
      x = std::llround(g);
    }
    for (int i = 0; i < 2; ++i) {
      const auto& qi = ctx_->q(i);
      std::vector<u64> ei(n);
      for (std::size_t k = 0; k < n; ++k) ei[k] = qi.from_signed(e[k]);
      ctx_->ntt_q(i).forward(ei);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = i * n + k;
        const u64 a = rng_.below(qi.value());
        ct.c1[idx] = a;
        // c0 = Delta*m + e - a*s
        ct.c0[idx] = qi.sub(qi.add(ct.c0[idx], ei[k]), qi.mul(a, s[idx]));
      }
    }
    return ct;
  }

  PackedPlaintext decrypt(const Ciphertext& ct, const SecretKey& key) {
    if (ct.owner != key.owner) throw OwnerMismatch("decrypt: key owner does not match ciphertext owner");
    ++counters_.decrypt;
    const auto x = phase(ct, key);
    const std::size_t n = ctx_->n();
    const u128 delta = ctx_->delta();
    const u64 pv = ctx_->p().value();
    std::vector<u64> m(n);
    for (std::size_t k = 0; k < n; ++k) m[k] = static_cast<u64>(((x[k] + delta / 2) / delta) % pv);
    ctx_->ntt_p().forward(m);
    return {std::move(m), ct.scale_bits};
  }

  Ciphertext add_ct(const Ciphertext& a, const Ciphertext& b) {
    detail::check_binary(a, b);
    ++counters_.add_ct;
    Ciphertext r = a;
    r.mult_depth = std::max(a.mult_depth, b.mult_depth);
    pointwise(r.c0, b.c0, [](const math::Modulus& q, u64 x, u64 y) { return q.add(x, y); });
    pointwise(r.c1, b.c1, [](const math::Modulus& q, u64 x, u64 y) { return q.add(x, y); });
    return r;
  }

  Ciphertext add_plain(const Ciphertext& a, const PackedPlaintext& u) {
    detail::check_plain(a, u, ctx_->n());
    ++counters_.add_plain;
    Ciphertext r = a;
    const auto du = ctx_->scale_by_delta(ctx_->slots_to_coeffs(u.slots));
    pointwise(r.c0, du, [](const math::Modulus& q, u64 x, u64 y) { return q.add(x, y); });
    return r;
  }

  Ciphertext mul_plain(const Ciphertext& a, const PackedPlaintext& u) {
    if (u.slots.size() != ctx_->n()) throw std::invalid_argument("plaintext must have exactly n slots");
    if (a.mult_depth != 0) throw DepthViolation("mul_plain on a depth-1 ciphertext");
    ++counters_.mult_plain;
    const auto lifted = ctx_->lift_centered(ctx_->slots_to_coeffs(u.slots));
    Ciphertext r = a;
    r.mult_depth = 1;
    r.scale_bits = a.scale_bits + u.scale_bits;
    auto mul = [](const math::Modulus& q, u64 x, u64 y) { return q.mul(x, y); };
    pointwise(r.c0, lifted, mul);
    pointwise(r.c1, lifted, mul);
    return r;
  }

  /// Bits of headroom left between the decryption noise and Delta/2.
  int noise_budget(const Ciphertext& ct, const SecretKey& key) const {
    if (ct.owner != key.owner) throw OwnerMismatch("noise_budget: key owner does not match ciphertext owner");
    const auto x = phase(ct, key);
    const u128 delta = ctx_->delta();
    u128 worst = 0;
    for (u128 v : x) {
      const u128 k = (v + delta / 2) / delta;
      const u128 base = k * delta;
      const u128 mag = v >= base ? v - base : base - v;
      worst = std::max(worst, mag);
    }
    const int delta_bits = bit_width(delta) - 1;  // floor(log2 Delta)
    const int budget = delta_bits - 1 - bit_width(worst);
    return std::max(budget, 0);
  }

  std::size_t serialized_size() const { return detail::kHeaderBytes + 8 * 4 * ctx_->n(); }

  Bytes serialize(const Ciphertext& ct) const {
    Bytes out;
    out.reserve(serialized_size());
    ByteWriter w(out);
    detail::write_header(w, {ctx_->digest(), ct.owner, ct.scale_bits, ct.mult_depth});
    for (u64 v : ct.c0) w.u64(v);
    for (u64 v : ct.c1) w.u64(v);
    return out;
  }

  Ciphertext deserialize(std::span<const std::uint8_t> bytes) const {
    ByteReader r(bytes);
    auto h = detail::read_header(r, ctx_->digest());
    const std::size_t n = ctx_->n();
    Ciphertext ct{h.owner, h.scale_bits, h.mult_depth, std::vector<u64>(2 * n), std::vector<u64>(2 * n)};
    for (auto* poly : {&ct.c0, &ct.c1}) {
      for (std::size_t k = 0; k < 2 * n; ++k) {
        const u64 v = r.u64();
        if (v >= ctx_->q(static_cast<int>(k / n)).value()) throw DecodeError("ciphertext word out of range");
        (*poly)[k] = v;
      }
    }
    if (r.remaining() != 0) throw DecodeError("trailing bytes after ciphertext");
    return ct;
  }

  const OpCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }

 private:
  static int bit_width(u128 v) {
    int w = 0;
    while (v) {
      v >>= 1;
      ++w;
    }
    return w;
  }

  const std::vector<u64>& ntt_of(const SecretKey& key) const {
    if (key.ntt.size() != 2 * ctx_->n()) throw std::invalid_argument("secret key not prepared for this context");
    return key.ntt;
  }

  // c0 + c1*s as integers in [0, q).
  std::vector<u128> phase(const Ciphertext& ct, const SecretKey& key) const {
    const auto& s = ntt_of(key);
    const std::size_t n = ctx_->n();
    std::vector<u64> x(2 * n);
    for (int i = 0; i < 2; ++i) {
      const auto& qi = ctx_->q(i);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = i * n + k;
        x[idx] = qi.add(ct.c0[idx], qi.mul(ct.c1[idx], s[idx]));
      }
    }
    return ctx_->to_integers(std::move(x));
  }

  template <class Op>
  void pointwise(std::vector<u64>& dst, const std::vector<u64>& src, Op op) const {
    const std::size_t n = ctx_->n();
    for (int i = 0; i < 2; ++i) {
      const auto& qi = ctx_->q(i);
      for (std::size_t k = 0; k < n; ++k) dst[i * n + k] = op(qi, dst[i * n + k], src[i * n + k]);
    }
  }

  std::shared_ptr<const RlweContext> ctx_;
  Prng rng_;
  OpCounters counters_;
};

}  // namespace cheetah::phe
