#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cheetah/fixedpoint.hpp"
#include "cheetah/nn.hpp"
#include "cheetah/packing.hpp"
#include "cheetah/phe.hpp"
#include "cheetah/prng.hpp"
#include "cheetah/wire.hpp"

namespace cheetah::proto {

using pack::SlotVector;
using wire::ErrorCode;
using wire::Message;
using wire::MsgType;
using wire::ProtocolError;
using wire::Which;

/// Knobs for the blinding distributions. Defaults are the production settings.
struct ProtocolOptions {
  /// Unsafe, test-only: v = 1, b = 0, s1 = 0, r1 = 0, r2 = 1, m = 0.
  bool degenerate = false;
  int relu_exp_min = 0, relu_exp_max = 4;       // |v1| = 2^e
  int softmax_exp_min = -2, softmax_exp_max = 2;  // v1 = 2^e
  int r2_exp_min = 2, r2_exp_max = 5;           // r2 = 2^-k
  int mask_log2 = 3;                            // b entries drawn from [-2^mask_log2, 2^mask_log2]
  int softmax_mask_log2 = 2;                    // client b' entries
  double exp_cap = 4096.0;                      // e^-y clamp in the sigmoid step
};

// ---------------------------------------------------------------------------
// Plan: the network split into stages of linear layer + activation + pools.

struct Stage {
  std::size_t index = 0;
  std::size_t linear_layer = 0;
  std::optional<nn::ActKind> act;
  std::vector<nn::MeanPool> pools;
  nn::Shape in_shape, out_shape, pooled_shape;
  pack::LinearLayout layout;
  pack::CompactLayout compact;
  bool terminal = false;

  std::string label(const nn::NetworkSpec& net) const {
    std::string s = nn::layer_name(net.layers[linear_layer]);
    if (act) s += "+" + std::string(nn::to_string(*act));
    for (std::size_t i = 0; i < pools.size(); ++i) s += "+pool";
    return s;
  }
};

struct Plan {
  nn::Shape input;
  std::size_t n = 0;
  std::vector<Stage> stages;

  std::size_t sigmoid_like_stages() const {
    std::size_t k = 0;
    for (const auto& s : stages) k += s.act && (*s.act == nn::ActKind::sigmoid || *s.act == nn::ActKind::tanh);
    return k;
  }
};

inline bool is_sigmoid_like(const std::optional<nn::ActKind>& a) {
  return a && (*a == nn::ActKind::sigmoid || *a == nn::ActKind::tanh);
}

inline Plan build_plan(const nn::NetworkSpec& net, std::size_t n) {
  net.validate();
  const auto shapes = net.shapes();
  Plan plan;
  plan.input = net.input;
  plan.n = n;
  std::size_t i = 0;
  while (i < net.layers.size()) {
    if (!nn::is_linear(net.layers[i])) {
      throw std::invalid_argument("layer " + std::to_string(i) + " (" + nn::layer_name(net.layers[i]) +
                                  ") must follow a conv or fc layer");
    }
    Stage st{plan.stages.size(), i, std::nullopt, {}, shapes[i], shapes[i + 1], shapes[i + 1],
             pack::LinearLayout(net.layers[i], shapes[i], n), {}, false};
    st.compact = {n, st.out_shape.size()};
    std::size_t j = i + 1;
    if (j < net.layers.size()) {
      if (auto* a = std::get_if<nn::Activation>(&net.layers[j])) {
        st.act = a->kind;
        ++j;
      }
    }
    while (j < net.layers.size() && std::holds_alternative<nn::MeanPool>(net.layers[j])) {
      if (!st.act) throw std::invalid_argument("mean pooling must follow an activation");
      st.pools.push_back(std::get<nn::MeanPool>(net.layers[j]));
      ++j;
    }
    st.pooled_shape = shapes[j];
    st.terminal = j == net.layers.size();
    if (!st.terminal && !st.act) {
      throw std::invalid_argument("linear layer " + std::to_string(i) + " is followed by another linear layer");
    }
    plan.stages.push_back(std::move(st));
    i = j;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Encoding helpers.

inline phe::PackedPlaintext encode_slots(const SlotVector& v, const fp::FpParams& fp, int scale_bits) {
  phe::PackedPlaintext pt{std::vector<std::uint64_t>(v.size()), scale_bits};
  for (std::size_t i = 0; i < v.size(); ++i) pt.slots[i] = fp::encode_at(v[i], fp, scale_bits);
  return pt;
}

inline SlotVector decode_slots(const phe::PackedPlaintext& pt, const fp::FpParams& fp) {
  return fp::decode_vector(pt.slots, fp, pt.scale_bits);
}

inline double grid_value(std::int64_t k, const fp::FpParams& fp) { return std::ldexp(static_cast<double>(k), -fp.scale_bits); }

inline std::int64_t to_grid(double x, const fp::FpParams& fp) {
  return static_cast<std::int64_t>(std::nearbyint(std::ldexp(x, fp.scale_bits)));
}

/// Uniform value on the f-bit grid in [lo, hi].
inline double uniform_on_grid(Prng& rng, double lo, double hi, const fp::FpParams& fp) {
  return grid_value(rng.between(to_grid(lo, fp), to_grid(hi, fp)), fp);
}

/// `count` integers in [-bound, bound] summing exactly to `target`.
/// All but the last are uniform; the last closes the sum and the block is redrawn if it falls out of range.
inline std::vector<std::int64_t> sample_sum_block(std::size_t count, std::int64_t target, std::int64_t bound, Prng& rng) {
  if (count == 0) throw std::invalid_argument("empty block");
  if (count == 1 || std::llabs(target) > bound * static_cast<std::int64_t>(count)) {
    std::vector<std::int64_t> out(count, 0);
    out.back() = target;
    return out;
  }
  std::vector<std::int64_t> out(count);
  while (true) {
    std::int64_t sum = 0;
    for (std::size_t k = 0; k + 1 < count; ++k) sum += out[k] = rng.between(-bound, bound);
    const std::int64_t last = target - sum;
    if (last >= -bound && last <= bound) {
      out.back() = last;
      return out;
    }
  }
}

/// Block masks for a linear layer's output ciphertexts: block k's non-fill slots sum to targets[k]·2^-f.
inline std::vector<SlotVector> make_block_masks(const pack::LinearLayout& layout, const std::vector<std::int64_t>& targets,
                                                int mask_log2, const fp::FpParams& fp, Prng& rng, bool zero) {
  std::vector<SlotVector> b(layout.out_ct_count(), SlotVector(layout.slot_count(), 0.0));
  const std::int64_t bound = std::int64_t{1} << (fp.scale_bits + mask_log2);
  for (std::size_t k = 0; k < layout.output_count(); ++k) {
    const auto [ct, slots] = layout.block_slots(k);
    if (zero) {
      b[ct][slots.front()] = grid_value(targets[k], fp);
      continue;
    }
    const auto draws = sample_sum_block(slots.size(), targets[k], bound, rng);
    for (std::size_t s = 0; s < slots.size(); ++s) b[ct][slots[s]] = grid_value(draws[s], fp);
  }
  return b;
}

/// Per-output bias of a linear layer (zero when absent).
inline std::vector<double> output_bias(const nn::Layer& layer, const pack::LinearLayout& layout) {
  std::vector<double> bias(layout.output_count(), 0.0);
  if (auto* c = std::get_if<nn::Conv>(&layer)) {
    if (c->bias) {
      const std::size_t per = layout.conv().blocks_per_channel;
      for (std::size_t k = 0; k < bias.size(); ++k) bias[k] = (*c->bias)[k / per];
    }
  } else if (auto* f = std::get_if<nn::Fc>(&layer)) {
    if (f->bias) bias = *f->bias;
  }
  return bias;
}

/// Add v_k·bias_k to the first non-fill slot of each block.
inline void fold_bias(std::vector<SlotVector>& addend, const pack::LinearLayout& layout, const std::vector<double>& v,
                      const std::vector<double>& bias) {
  for (std::size_t k = 0; k < layout.output_count(); ++k) {
    if (bias[k] == 0.0) continue;
    const auto [ct, slots] = layout.block_slots(k);
    addend[ct][slots.front()] += v[k] * bias[k];
  }
}

// ---------------------------------------------------------------------------
// Blinding material.

/// Random-sign power-of-two factors for the ReLU step and the matching polar indicators.
struct ReluBlinding {
  std::vector<double> v1, v2;
  std::vector<double> id1, id2;
  std::vector<SlotVector> b;  // per output ciphertext, f-grid, block sums 0
};

inline std::pair<double, double> polar_indicators(double v1) {
  const double v2 = 1.0 / v1;
  return v1 > 0 ? std::pair{0.0, v2} : std::pair{v2, -v2};
}

inline ReluBlinding gen_relu_blinding(const pack::LinearLayout& layout, const fp::FpParams& fp, Prng& rng,
                                      const ProtocolOptions& opt) {
  const std::size_t m = layout.output_count();
  ReluBlinding r;
  r.v1.resize(m);
  r.v2.resize(m);
  r.id1.resize(m);
  r.id2.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    double v = 1.0;
    if (!opt.degenerate) {
      const int e = static_cast<int>(rng.between(opt.relu_exp_min, opt.relu_exp_max));
      v = std::ldexp(rng.coin() ? 1.0 : -1.0, e);
    }
    r.v1[k] = v;
    r.v2[k] = 1.0 / v;
    std::tie(r.id1[k], r.id2[k]) = polar_indicators(v);
  }
  r.b = make_block_masks(layout, std::vector<std::int64_t>(m, 0), opt.mask_log2, fp, rng, opt.degenerate);
  return r;
}

/// Server side of the sigmoid step: block sums -r1, with e^r1 quantized for the client.
struct SigmoidBlinding {
  std::vector<double> r1;
  std::vector<double> e_r1;  // q_f(e^r1)
  std::vector<SlotVector> b;
};

inline SigmoidBlinding gen_sigmoid_blinding(const pack::LinearLayout& layout, const fp::FpParams& fp, Prng& rng,
                                            const ProtocolOptions& opt) {
  const std::size_t m = layout.output_count();
  SigmoidBlinding s;
  s.r1.resize(m);
  s.e_r1.resize(m);
  std::vector<std::int64_t> targets(m);
  for (std::size_t k = 0; k < m; ++k) {
    s.r1[k] = opt.degenerate ? 0.0 : uniform_on_grid(rng, 0.0, 1.0, fp);
    s.e_r1[k] = fp::requantize(std::exp(s.r1[k]), fp);
    targets[k] = -to_grid(s.r1[k], fp);
  }
  s.b = make_block_masks(layout, targets, opt.mask_log2, fp, rng, opt.degenerate);
  return s;
}

/// Server side of the softmax step: positive power-of-two v1, block sums q_f(ln v1).
struct SoftmaxBlinding {
  std::vector<double> v1, v2;
  std::vector<double> ln_v1;  // on the f grid
  std::vector<SlotVector> b;
};

inline SoftmaxBlinding gen_softmax_blinding(const pack::LinearLayout& layout, const fp::FpParams& fp, Prng& rng,
                                            const ProtocolOptions& opt) {
  const std::size_t m = layout.output_count();
  SoftmaxBlinding s;
  s.v1.resize(m);
  s.v2.resize(m);
  s.ln_v1.resize(m);
  std::vector<std::int64_t> targets(m);
  for (std::size_t k = 0; k < m; ++k) {
    const int e = opt.degenerate ? 0 : static_cast<int>(rng.between(opt.softmax_exp_min, opt.softmax_exp_max));
    s.v1[k] = std::ldexp(1.0, e);
    s.v2[k] = std::ldexp(1.0, -e);
    targets[k] = to_grid(e * std::numbers::ln2, fp);
    s.ln_v1[k] = grid_value(targets[k], fp);
  }
  s.b = make_block_masks(layout, targets, opt.mask_log2, fp, rng, opt.degenerate);
  return s;
}

/// Unit blinding with zero-sum masks, for a terminal linear layer.
struct PlainBlinding {
  std::vector<SlotVector> b;
};

inline PlainBlinding gen_plain_blinding(const pack::LinearLayout& layout, const fp::FpParams& fp, Prng& rng,
                                        const ProtocolOptions& opt) {
  return {make_block_masks(layout, std::vector<std::int64_t>(layout.output_count(), 0), opt.mask_log2, fp, rng,
                           opt.degenerate)};
}

// ---------------------------------------------------------------------------
// Homomorphic steps. Each is usable on its own; the sessions below compose them.

/// Blinded linear evaluation: output ct o = sum over terms of Mult(in, k'∘v), then Add(·, addend).
template <class B>
std::vector<typename B::Ciphertext> server_linear(B& be, const nn::Layer& layer, const pack::LinearLayout& layout,
                                                  const std::vector<typename B::Ciphertext>& in,
                                                  const std::vector<double>& v, const std::vector<SlotVector>& addend,
                                                  const fp::FpParams& fp) {
  if (in.size() != layout.in_ct_count()) throw std::invalid_argument("server_linear: input ciphertext count mismatch");
  std::vector<typename B::Ciphertext> out;
  out.reserve(layout.out_ct_count());
  for (std::size_t o = 0; o < layout.out_ct_count(); ++o) {
    std::optional<typename B::Ciphertext> acc;
    for (const auto& term : layout.terms(layer, o, v)) {
      auto prod = be.mul_plain(in[term.in_ct], encode_slots(term.weights, fp, fp.scale_bits));
      acc = acc ? be.add_ct(*acc, prod) : std::move(prod);
    }
    out.push_back(be.add_plain(*acc, encode_slots(addend[o], fp, 2 * fp.scale_bits)));
  }
  return out;
}

/// Decrypt blinded linear outputs, decode at 2f and sum each block.
template <class B>
std::vector<double> client_decrypt_and_sum(B& be, const phe::SecretKey& key,
                                           const std::vector<typename B::Ciphertext>& cts,
                                           const pack::LinearLayout& layout, const fp::FpParams& fp) {
  std::vector<SlotVector> decoded;
  decoded.reserve(cts.size());
  for (const auto& ct : cts) decoded.push_back(decode_slots(be.decrypt(ct, key), fp));
  return layout.block_sum(decoded);
}

/// Add(Mult([ID1]_S, y), Mult([ID2]_S, relu(y))): the server-encrypted ReLU of the unblinded value.
template <class B>
typename B::Ciphertext client_relu_eval(B& be, const typename B::Ciphertext& id1, const typename B::Ciphertext& id2,
                                        const SlotVector& y, const fp::FpParams& fp) {
  SlotVector r(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r[i] = std::max(y[i], 0.0);
  auto a = be.mul_plain(id1, encode_slots(y, fp, fp.scale_bits));
  auto b = be.mul_plain(id2, encode_slots(r, fp, fp.scale_bits));
  return be.add_ct(a, b);
}

/// The server's share of an encrypted activation: Add(ct, -s1) with s1 kept by the client.
template <class B>
typename B::Ciphertext client_make_share(B& be, const typename B::Ciphertext& act, const SlotVector& s1,
                                         const fp::FpParams& fp) {
  SlotVector neg(s1.size());
  for (std::size_t i = 0; i < s1.size(); ++i) neg[i] = -s1[i];
  return be.add_plain(act, encode_slots(neg, fp, act.scale_bits));
}

/// Mult(Add([e^r1]_S, e^-y), r2). Values of e^-y above the cap are clamped and counted.
template <class B>
typename B::Ciphertext client_sigmoid_eval(B& be, const typename B::Ciphertext& e_r1, const SlotVector& y,
                                           const SlotVector& r2, std::size_t count, const fp::FpParams& fp,
                                           double cap, std::uint64_t* saturations = nullptr) {
  SlotVector ey(y.size(), 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    double e = std::exp(-y[i]);
    if (e > cap) {
      e = cap;
      if (saturations) ++*saturations;
    }
    ey[i] = e;
  }
  auto sum = be.add_plain(e_r1, encode_slots(ey, fp, fp.scale_bits));
  return be.mul_plain(sum, encode_slots(r2, fp, fp.scale_bits));
}

/// Recover [factor·sigmoid + offset]_C from the client's blinded denominator and [r2]_C.
template <class B>
typename B::Ciphertext server_sigmoid_finish(B& be, const phe::SecretKey& key, const typename B::Ciphertext& share,
                                             const typename B::Ciphertext& r2_ct, const SlotVector& e_r1,
                                             std::size_t count, double factor, double offset, const fp::FpParams& fp) {
  const auto d = decode_slots(be.decrypt(share, key), fp);
  SlotVector g(d.size(), 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    if (!(d[i] > 0)) throw ProtocolError(ErrorCode::internal, "non-positive sigmoid denominator");
    g[i] = factor * e_r1[i] / d[i];
  }
  auto res = be.mul_plain(r2_ct, encode_slots(g, fp, fp.scale_bits));
  if (offset != 0.0) {
    SlotVector off(d.size(), 0.0);
    for (std::size_t i = 0; i < count; ++i) off[i] = offset;
    res = be.add_plain(res, encode_slots(off, fp, res.scale_bits));
  }
  return res;
}

/// Client part of softmax: returns (denominator parts under the server key, [r·e^y]_C).
template <class B>
std::pair<std::vector<typename B::Ciphertext>, std::vector<typename B::Ciphertext>> client_softmax_eval(
    B& be, const phe::SecretKey& key, const std::vector<typename B::Ciphertext>& v_cts, const std::vector<double>& y,
    const pack::CompactLayout& compact, const fp::FpParams& fp, Prng& rng, const ProtocolOptions& opt) {
  std::vector<double> e(y.size());
  double emax = 0;
  for (std::size_t i = 0; i < y.size(); ++i) emax = std::max(emax, e[i] = std::exp(y[i]));
  // r scales the largest term into [1/2, 2) so every product stays well inside the plaintext range.
  const double u = opt.degenerate ? 1.0 : uniform_on_grid(rng, 0.5, 1.0, fp);
  const double r = std::ldexp(u, -static_cast<int>(std::floor(std::log2(emax))));
  std::vector<double> re(y.size()), rb(y.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) re[i] = fp::requantize(r * e[i], fp);
  if (!opt.degenerate && y.size() > 1) {
    const std::int64_t bound = std::int64_t{1} << (fp.scale_bits + opt.softmax_mask_log2);
    const auto bp = sample_sum_block(y.size(), 0, bound, rng);
    for (std::size_t i = 0; i < y.size(); ++i) rb[i] = r * grid_value(bp[i], fp);
  }
  const auto re_slots = compact.pack(re);
  const auto rb_slots = compact.pack(rb);
  std::vector<typename B::Ciphertext> part0, part1;
  for (std::size_t c = 0; c < re_slots.size(); ++c) {
    auto t = be.mul_plain(v_cts[c], encode_slots(re_slots[c], fp, fp.scale_bits));
    part0.push_back(be.add_plain(t, encode_slots(rb_slots[c], fp, t.scale_bits)));
    part1.push_back(be.encrypt(encode_slots(re_slots[c], fp, fp.scale_bits), key));
  }
  return {std::move(part0), std::move(part1)};
}

/// Server finish of softmax: d = sum of decrypted parts, result Mult([r·e^y]_C, 1/(v1·d)).
template <class B>
std::vector<typename B::Ciphertext> server_softmax_finish(B& be, const phe::SecretKey& key,
                                                          const std::vector<typename B::Ciphertext>& part0,
                                                          const std::vector<typename B::Ciphertext>& part1,
                                                          const std::vector<double>& v1,
                                                          const pack::CompactLayout& compact, const fp::FpParams& fp) {
  std::vector<SlotVector> dec;
  for (const auto& ct : part0) dec.push_back(decode_slots(be.decrypt(ct, key), fp));
  const auto vals = compact.unpack(dec);
  double d = 0;
  for (double v : vals) d += v;
  if (!(d > 0)) throw ProtocolError(ErrorCode::internal, "non-positive softmax denominator");
  std::vector<double> g(v1.size());
  for (std::size_t i = 0; i < v1.size(); ++i) g[i] = 1.0 / (v1[i] * d);
  const auto g_slots = compact.pack(g);
  std::vector<typename B::Ciphertext> out;
  for (std::size_t c = 0; c < part1.size(); ++c) out.push_back(be.mul_plain(part1[c], encode_slots(g_slots[c], fp, fp.scale_bits)));
  return out;
}

/// Split a server-held [act]_C into additive shares: returns ([act - m]_C for the client, m).
template <class B>
std::pair<typename B::Ciphertext, SlotVector> server_mask_encrypted_activation(B& be, const typename B::Ciphertext& act,
                                                                               std::size_t count, const fp::FpParams& fp,
                                                                               Prng& rng, bool zero_mask = false) {
  SlotVector m(be.slot_count(), 0.0), neg(be.slot_count(), 0.0);
  if (!zero_mask) {
    for (std::size_t i = 0; i < count; ++i) {
      m[i] = uniform_on_grid(rng, -fp.clip_bound, fp.clip_bound, fp);
      neg[i] = -m[i];
    }
  }
  return {be.add_plain(act, encode_slots(neg, fp, act.scale_bits)), std::move(m)};
}

/// Mean-pool one party's share; each pool is followed by rounding back onto the f grid.
inline std::vector<double> pool_share(std::vector<double> share, nn::Shape shape, const std::vector<nn::MeanPool>& pools,
                                      const fp::FpParams& fp) {
  for (const auto& p : pools) {
    auto t = nn::meanpool_ref(nn::Tensor(shape.dims(), std::move(share)), p);
    shape = nn::output_shape(p, shape);
    share = std::move(t.data);
    for (auto& v : share) v = fp::requantize(v, fp);
  }
  return share;
}

// ---------------------------------------------------------------------------
// Accounting.

struct StageStats {
  std::string label;
  phe::OpCounters server, client;
  phe::OpCounters server_linear;  // the blinded linear evaluation alone
  std::uint64_t bytes_up = 0, bytes_down = 0;
  std::uint64_t linear_bytes = 0;  // CT_UPLOAD + BLINDED_LINEAR of this stage
  std::map<std::string, std::uint64_t> bytes_by_type;
  double client_ms = 0, server_ms = 0;
  std::size_t in_cts = 0, out_cts = 0, compact_cts = 0;

  phe::OpCounters total() const { return server + client; }
};

struct SessionTotals {
  std::uint64_t offline_up = 0, offline_down = 0;
  std::uint64_t saturations = 0;
};

class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(const Message& m) = 0;
  virtual Message receive() = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class B>
typename B::Ciphertext read_ct(const B& be, const Message& m, phe::Owner expected_owner) {
  try {
    auto ct = be.deserialize(m.ct);
    if (ct.owner != expected_owner) {
      throw ProtocolError(ErrorCode::malformed, std::string(wire::to_string(m.type)) + " carries a ciphertext for the wrong key");
    }
    return ct;
  } catch (const DecodeError& e) {
    throw ProtocolError(ErrorCode::malformed, std::string(wire::to_string(m.type)) + ": " + e.what());
  }
}

inline std::string describe(const Message& m) {
  std::string s(wire::to_string(m.type));
  if (m.type != MsgType::hello && m.type != MsgType::error) {
    s += "(layer " + std::to_string(m.layer) + ", sub " + std::to_string(m.sub) + ", seq " + std::to_string(m.seq) + ")";
  }
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Server session: holds the weights and the server key, reacts to one message at a time.

template <class B>
class ServerSession {
 public:
  using Ct = typename B::Ciphertext;

  ServerSession(nn::NetworkSpec net, fp::FpParams fp, B backend, phe::SecretKey key, std::uint64_t seed,
                ProtocolOptions opt = {})
      : net_(std::move(net)),
        fp_(fp),
        be_(std::move(backend)),
        key_(std::move(key)),
        rng_(seed, 0x7365727665),
        opt_(opt),
        plan_(build_plan(net_, be_.slot_count())) {
    if (key_.owner != phe::Owner::server) throw std::invalid_argument("server session needs the server key");
    if (!net_.has_weights()) throw std::invalid_argument("server session needs network weights");
    fp_.validate();
    state_.resize(plan_.stages.size());
    stats_.resize(plan_.stages.size());
    for (const auto& st : plan_.stages) {
      auto& s = stats_[st.index];
      s.label = st.label(net_);
      s.in_cts = st.layout.in_ct_count();
      s.out_cts = st.layout.out_ct_count();
      s.compact_cts = st.act ? st.compact.ct_count() : 0;
    }
  }

  const Plan& plan() const { return plan_; }
  bool finished() const { return phase_ == Phase::done; }
  bool failed() const { return phase_ == Phase::failed; }
  const std::vector<StageStats>& stats() const { return stats_; }
  const B& backend() const { return be_; }

  /// Process one incoming message and return the replies. Failures become a single ERROR reply.
  std::vector<Message> on_message(const Message& m) {
    if (phase_ == Phase::failed || phase_ == Phase::done) {
      return fail(ErrorCode::out_of_order, "session already closed; got " + detail::describe(m));
    }
    try {
      if (m.type == MsgType::error) {
        phase_ = Phase::failed;
        return {};
      }
      return dispatch(m);
    } catch (const ProtocolError& e) {
      return fail(e.code(), e.what());
    } catch (const DecodeError& e) {
      return fail(ErrorCode::malformed, e.what());
    } catch (const std::exception& e) {
      return fail(ErrorCode::internal, e.what());
    }
  }

 private:
  enum class Phase { hello, r2, upload, share, done, failed };

  struct StageState {
    std::variant<std::monostate, ReluBlinding, SigmoidBlinding, SoftmaxBlinding, PlainBlinding> blinding;
    std::vector<double> v;  // per-output factor applied to the weights
    std::vector<Ct> r2, inputs, part0, part1;
    std::vector<double> share;  // server's plaintext share after pooling
  };

  std::vector<Message> fail(ErrorCode code, const std::string& text) {
    phase_ = Phase::failed;
    return {Message::error(code, text)};
  }

  [[noreturn]] void unexpected(const Message& m, const std::string& wanted) {
    throw ProtocolError(ErrorCode::out_of_order, "expected " + wanted + ", got " + detail::describe(m));
  }

  std::string expect_str(MsgType t, std::uint32_t layer, std::uint8_t sub, std::uint32_t seq) const {
    Message e;
    e.type = t;
    e.layer = layer;
    e.sub = sub;
    e.seq = seq;
    return detail::describe(e);
  }

  void expect(const Message& m, MsgType t, std::uint32_t layer, std::uint8_t sub, std::uint32_t seq) {
    const bool has_sub = t == MsgType::indicators || t == MsgType::nonlinear_share;
    if (m.type != t || m.layer != layer || m.seq != seq || (has_sub && m.sub != sub)) {
      unexpected(m, expect_str(t, layer, sub, seq));
    }
  }

  std::vector<Message> dispatch(const Message& m) {
    switch (phase_) {
      case Phase::hello: return on_hello(m);
      case Phase::r2: return on_r2(m);
      case Phase::upload: return on_upload(m);
      case Phase::share: return on_share(m);
      default: unexpected(m, "nothing");
    }
  }

  std::vector<Message> on_hello(const Message& m) {
    if (m.type != MsgType::hello) unexpected(m, "HELLO");
    if (m.params_digest != be_.params().digest()) {
      throw ProtocolError(ErrorCode::digest_mismatch, "encryption parameter digest mismatch");
    }
    if (m.network_digest != net_.digest()) throw ProtocolError(ErrorCode::digest_mismatch, "network digest mismatch");
    std::vector<Message> out{Message::hello(be_.params().digest(), net_.digest())};
    for (const auto& st : plan_.stages) {
      const auto t0 = detail::Clock::now();
      const auto before = be_.counters();
      offline_stage(st, out);
      stats_[st.index].server_ms += detail::ms_since(t0);
      stats_[st.index].server += be_.counters() - before;
    }
    r2_stage_ = next_r2_stage(0);
    if (r2_stage_ < plan_.stages.size()) {
      phase_ = Phase::r2;
    } else {
      phase_ = Phase::upload;
    }
    stage_ = 0;
    seq_ = 0;
    return out;
  }

  std::size_t next_r2_stage(std::size_t from) const {
    while (from < plan_.stages.size() && !is_sigmoid_like(plan_.stages[from].act)) ++from;
    return from;
  }

  void send_compact(std::vector<Message>& out, const Stage& st, Which which, const std::vector<double>& values,
                    int scale) {
    const auto slots = st.compact.pack(values);
    for (std::size_t c = 0; c < slots.size(); ++c) {
      auto ct = be_.encrypt(encode_slots(slots[c], fp_, scale), key_);
      out.push_back(Message::indicators(static_cast<std::uint32_t>(st.index), which, static_cast<std::uint32_t>(c),
                                        be_.serialize(ct)));
    }
  }

  void offline_stage(const Stage& st, std::vector<Message>& out) {
    auto& s = state_[st.index];
    const std::size_t m = st.layout.output_count();
    const nn::Layer& layer = net_.layers[st.linear_layer];
    std::vector<SlotVector> addend;
    if (!st.act) {
      auto pb = gen_plain_blinding(st.layout, fp_, rng_, opt_);
      s.v.assign(m, 1.0);
      addend = pb.b;
      s.blinding = std::move(pb);
    } else if (*st.act == nn::ActKind::relu) {
      auto rb = gen_relu_blinding(st.layout, fp_, rng_, opt_);
      s.v = rb.v1;
      addend = rb.b;
      send_compact(out, st, Which::id1, rb.id1, fp_.scale_bits);
      send_compact(out, st, Which::id2, rb.id2, fp_.scale_bits);
      s.blinding = std::move(rb);
    } else if (is_sigmoid_like(st.act)) {
      auto sb = gen_sigmoid_blinding(st.layout, fp_, rng_, opt_);
      s.v.assign(m, *st.act == nn::ActKind::tanh ? 2.0 : 1.0);
      addend = sb.b;
      send_compact(out, st, Which::e_r1, sb.e_r1, fp_.scale_bits);
      s.blinding = std::move(sb);
    } else {
      auto sm = gen_softmax_blinding(st.layout, fp_, rng_, opt_);
      s.v.assign(m, 1.0);
      addend = sm.b;
      send_compact(out, st, Which::v_vec, sm.v2, fp_.scale_bits);
      s.blinding = std::move(sm);
    }
    fold_bias(addend, st.layout, s.v, output_bias(layer, st.layout));
    addends_.push_back(std::move(addend));
  }

  std::vector<Message> on_r2(const Message& m) {
    const auto& st = plan_.stages[r2_stage_];
    expect(m, MsgType::indicators, static_cast<std::uint32_t>(r2_stage_), static_cast<std::uint8_t>(Which::r2),
           static_cast<std::uint32_t>(seq_));
    state_[r2_stage_].r2.push_back(detail::read_ct(be_, m, phe::Owner::client));
    if (++seq_ == st.compact.ct_count()) {
      seq_ = 0;
      r2_stage_ = next_r2_stage(r2_stage_ + 1);
      if (r2_stage_ == plan_.stages.size()) phase_ = Phase::upload;
    }
    return {};
  }

  // Uploads for stage index == stages.size() carry the client's share of a terminal ReLU.
  std::vector<Message> on_upload(const Message& m) {
    const bool final_relu = stage_ == plan_.stages.size();
    const std::size_t expected =
        final_relu ? plan_.stages.back().compact.ct_count() : plan_.stages[stage_].layout.in_ct_count();
    expect(m, MsgType::ct_upload, static_cast<std::uint32_t>(stage_), 0, static_cast<std::uint32_t>(seq_));
    uploads_.push_back(detail::read_ct(be_, m, phe::Owner::client));
    if (++seq_ < expected) return {};
    seq_ = 0;
    auto in = std::move(uploads_);
    uploads_.clear();

    if (final_relu) {
      const std::size_t last = plan_.stages.size() - 1;
      const auto t0 = detail::Clock::now();
      const auto before = be_.counters();
      const auto& st = plan_.stages[last];
      const auto slots = st.compact.pack(state_[last].share);
      std::vector<Message> out;
      for (std::size_t c = 0; c < in.size(); ++c) {
        auto res = be_.add_plain(in[c], encode_slots(slots[c], fp_, fp_.scale_bits));
        out.push_back(Message::result(static_cast<std::uint32_t>(c), be_.serialize(res)));
      }
      stats_[last].server += be_.counters() - before;
      stats_[last].server_ms += detail::ms_since(t0);
      phase_ = Phase::done;
      return out;
    }

    const auto& st = plan_.stages[stage_];
    if (stage_ > 0) {
      // Fold the server's share of the previous activation into the client's upload; counted with that stage.
      const auto t0 = detail::Clock::now();
      const auto before = be_.counters();
      const auto& prev = plan_.stages[stage_ - 1];
      const auto slots = pack::relayout_share(state_[stage_ - 1].share, prev.pooled_shape, net_.layers[st.linear_layer],
                                              plan_.n);
      for (std::size_t c = 0; c < in.size(); ++c) in[c] = be_.add_plain(in[c], encode_slots(slots[c], fp_, fp_.scale_bits));
      stats_[stage_ - 1].server += be_.counters() - before;
      stats_[stage_ - 1].server_ms += detail::ms_since(t0);
    }

    const auto t0 = detail::Clock::now();
    const auto before = be_.counters();
    auto& s = state_[stage_];
    auto outs = server_linear(be_, net_.layers[st.linear_layer], st.layout, in, s.v, addends_[stage_], fp_);
    std::vector<Message> msgs;
    for (std::size_t o = 0; o < outs.size(); ++o) {
      msgs.push_back(Message::ciphertext(MsgType::blinded_linear, static_cast<std::uint32_t>(stage_),
                                         static_cast<std::uint32_t>(o), be_.serialize(outs[o])));
    }
    stats_[stage_].server += be_.counters() - before;
    stats_[stage_].server_linear += be_.counters() - before;
    stats_[stage_].server_ms += detail::ms_since(t0);
    if (!st.act) {
      phase_ = Phase::done;
    } else {
      phase_ = Phase::share;
      part_ = 0;
    }
    return msgs;
  }

  std::vector<Message> on_share(const Message& m) {
    const auto& st = plan_.stages[stage_];
    auto& s = state_[stage_];
    expect(m, MsgType::nonlinear_share, static_cast<std::uint32_t>(stage_), part_, static_cast<std::uint32_t>(seq_));
    const bool softmax = *st.act == nn::ActKind::softmax;
    const auto owner = part_ == 0 ? phe::Owner::server : phe::Owner::client;
    (part_ == 0 ? s.part0 : s.part1).push_back(detail::read_ct(be_, m, owner));
    if (++seq_ < st.compact.ct_count()) return {};
    seq_ = 0;
    if (softmax && part_ == 0) {
      part_ = 1;
      return {};
    }

    const auto t0 = detail::Clock::now();
    const auto before = be_.counters();
    std::vector<Message> out;
    const std::size_t count = st.compact.count;
    const std::size_t n = plan_.n;

    if (*st.act == nn::ActKind::relu) {
      std::vector<SlotVector> dec;
      for (const auto& ct : s.part0) dec.push_back(decode_slots(be_.decrypt(ct, key_), fp_));
      auto share = st.compact.unpack(dec);
      for (auto& v : share) v = fp::requantize(v, fp_);
      s.share = st.terminal ? std::move(share) : pool_share(std::move(share), st.out_shape, st.pools, fp_);
      advance_after_share(st);
    } else if (softmax) {
      const auto& sm = std::get<SoftmaxBlinding>(s.blinding);
      auto res = server_softmax_finish(be_, key_, s.part0, s.part1, sm.v1, st.compact, fp_);
      for (std::size_t c = 0; c < res.size(); ++c) out.push_back(Message::result(static_cast<std::uint32_t>(c), be_.serialize(res[c])));
      phase_ = Phase::done;
    } else {
      const auto& sb = std::get<SigmoidBlinding>(s.blinding);
      const bool tanh = *st.act == nn::ActKind::tanh;
      const auto e_slots = st.compact.pack(sb.e_r1);
      std::vector<double> mask(count);
      for (std::size_t c = 0; c < s.part0.size(); ++c) {
        const std::size_t used = std::min(n, count - c * n);
        auto act = server_sigmoid_finish(be_, key_, s.part0[c], s.r2[c], e_slots[c], used, tanh ? 2.0 : 1.0,
                                         tanh ? -1.0 : 0.0, fp_);
        if (st.terminal) {
          out.push_back(Message::result(static_cast<std::uint32_t>(c), be_.serialize(act)));
          continue;
        }
        auto [masked, m_slots] = server_mask_encrypted_activation(be_, act, used, fp_, rng_, opt_.degenerate);
        for (std::size_t i = 0; i < used; ++i) mask[c * n + i] = m_slots[i];
        out.push_back(Message::ciphertext(MsgType::nonlinear_share, static_cast<std::uint32_t>(stage_),
                                          static_cast<std::uint32_t>(c), be_.serialize(masked), 2));
      }
      if (st.terminal) {
        phase_ = Phase::done;
      } else {
        s.share = pool_share(std::move(mask), st.out_shape, st.pools, fp_);
        advance_after_share(st);
      }
    }
    stats_[stage_].server += be_.counters() - before;
    stats_[stage_].server_ms += detail::ms_since(t0);
    if (phase_ == Phase::upload) stage_ = next_upload_stage_;
    return out;
  }

  void advance_after_share(const Stage& st) {
    phase_ = Phase::upload;
    next_upload_stage_ = st.index + 1;  // == stages.size() for a terminal ReLU
  }

  nn::NetworkSpec net_;
  fp::FpParams fp_;
  B be_;
  phe::SecretKey key_;
  Prng rng_;
  ProtocolOptions opt_;
  Plan plan_;
  std::vector<StageState> state_;
  std::vector<std::vector<SlotVector>> addends_;
  std::vector<StageStats> stats_;
  std::vector<Ct> uploads_;
  Phase phase_ = Phase::hello;
  std::size_t stage_ = 0, seq_ = 0, r2_stage_ = 0, next_upload_stage_ = 0;
  std::uint8_t part_ = 0;
};

// ---------------------------------------------------------------------------
// Client session: holds the input and the client key, drives the dialogue.

struct ClientOutcome {
  std::vector<double> output;
  std::vector<StageStats> stages;
  SessionTotals totals;
};

template <class B>
class ClientSession {
 public:
  using Ct = typename B::Ciphertext;

  ClientSession(nn::NetworkSpec net, fp::FpParams fp, B backend, phe::SecretKey key, std::uint64_t seed,
                ProtocolOptions opt = {})
      : net_(std::move(net)),
        fp_(fp),
        be_(std::move(backend)),
        key_(std::move(key)),
        rng_(seed, 0x636c69656e74),
        opt_(opt),
        plan_(build_plan(net_, be_.slot_count())) {
    if (key_.owner != phe::Owner::client) throw std::invalid_argument("client session needs the client key");
    fp_.validate();
  }

  const Plan& plan() const { return plan_; }
  const B& backend() const { return be_; }

  ClientOutcome run(Channel& ch, const nn::Tensor& input) {
    ch_ = &ch;
    out_ = {};
    out_.stages.resize(plan_.stages.size());
    for (const auto& st : plan_.stages) {
      auto& s = out_.stages[st.index];
      s.label = st.label(net_);
      s.in_cts = st.layout.in_ct_count();
      s.out_cts = st.layout.out_ct_count();
      s.compact_cts = st.act ? st.compact.ct_count() : 0;
    }
    nn::Tensor x = nn::as_input(net_, input);
    for (auto& v : x.data) {
      if (std::fabs(v) > fp_.clip_bound) {
        v = std::copysign(fp_.clip_bound, v);
        ++out_.totals.saturations;
      }
    }

    send(Message::hello(be_.params().digest(), net_.digest()));
    receive_expect(MsgType::hello, 0, 0, 0);
    offline();

    const std::size_t L = plan_.stages.size();
    std::vector<SlotVector> upload = plan_.stages[0].layout.expand_input(x);
    for (std::size_t l = 0; l < L; ++l) upload = run_stage(plan_.stages[l], upload);
    ch_ = nullptr;
    return std::move(out_);
  }

 private:
  StageStats& stat(std::size_t l) { return out_.stages[std::min(l, out_.stages.size() - 1)]; }

  void tally(const Message& m, bool up) {
    const std::uint64_t sz = wire::frame_size(m);
    if (m.type == MsgType::hello || m.type == MsgType::indicators || m.type == MsgType::error) {
      (up ? out_.totals.offline_up : out_.totals.offline_down) += sz;
      return;
    }
    const std::size_t l = m.type == MsgType::result ? plan_.stages.size() - 1 : m.layer;
    auto& s = stat(l);
    (up ? s.bytes_up : s.bytes_down) += sz;
    (up ? s.client.bytes_sent : s.client.bytes_received) += sz;
    s.bytes_by_type[std::string(wire::to_string(m.type))] += sz;
    if ((m.type == MsgType::ct_upload && m.layer < plan_.stages.size()) || m.type == MsgType::blinded_linear) {
      s.linear_bytes += sz;
    }
  }

  void send(const Message& m) {
    tally(m, true);
    ch_->send(m);
  }

  Message receive_expect(MsgType t, std::uint32_t layer, std::uint8_t sub, std::uint32_t seq) {
    Message m = ch_->receive();
    tally(m, false);
    if (m.type == MsgType::error) throw ProtocolError(m.code, "server error: " + m.text);
    const bool has_sub = t == MsgType::indicators || t == MsgType::nonlinear_share;
    const bool has_layer = t != MsgType::hello && t != MsgType::result;
    if (m.type != t || (has_layer && m.layer != layer) || m.seq != seq || (has_sub && m.sub != sub)) {
      Message e;
      e.type = t;
      e.layer = layer;
      e.sub = sub;
      e.seq = seq;
      throw ProtocolError(ErrorCode::out_of_order, "expected " + detail::describe(e) + ", got " + detail::describe(m));
    }
    if (t == MsgType::hello &&
        (m.params_digest != be_.params().digest() || m.network_digest != net_.digest())) {
      throw ProtocolError(ErrorCode::digest_mismatch, "server HELLO digest mismatch");
    }
    return m;
  }

  std::vector<Ct> receive_cts(MsgType t, std::size_t layer, std::uint8_t sub, std::size_t count, phe::Owner owner) {
    std::vector<Ct> cts;
    for (std::size_t c = 0; c < count; ++c) {
      auto m = receive_expect(t, static_cast<std::uint32_t>(layer), sub, static_cast<std::uint32_t>(c));
      cts.push_back(detail::read_ct(be_, m, owner));
    }
    return cts;
  }

  void offline() {
    for (const auto& st : plan_.stages) {
      if (!st.act) continue;
      const std::size_t k = st.compact.ct_count();
      auto& o = offline_[st.index];
      switch (*st.act) {
        case nn::ActKind::relu:
          o.a = receive_cts(MsgType::indicators, st.index, static_cast<std::uint8_t>(Which::id1), k, phe::Owner::server);
          o.b = receive_cts(MsgType::indicators, st.index, static_cast<std::uint8_t>(Which::id2), k, phe::Owner::server);
          break;
        case nn::ActKind::sigmoid:
        case nn::ActKind::tanh:
          o.a = receive_cts(MsgType::indicators, st.index, static_cast<std::uint8_t>(Which::e_r1), k, phe::Owner::server);
          break;
        case nn::ActKind::softmax:
          o.a = receive_cts(MsgType::indicators, st.index, static_cast<std::uint8_t>(Which::v_vec), k, phe::Owner::server);
          break;
      }
    }
    for (const auto& st : plan_.stages) {
      if (!is_sigmoid_like(st.act)) continue;
      const auto t0 = detail::Clock::now();
      const auto before = be_.counters();
      std::vector<double> r2(st.compact.count);
      for (auto& r : r2) {
        r = opt_.degenerate ? 1.0 : std::ldexp(1.0, -static_cast<int>(rng_.between(opt_.r2_exp_min, opt_.r2_exp_max)));
      }
      auto& o = offline_[st.index];
      o.r2_slots = st.compact.pack(r2);
      for (std::size_t c = 0; c < o.r2_slots.size(); ++c) {
        auto ct = be_.encrypt(encode_slots(o.r2_slots[c], fp_, fp_.scale_bits), key_);
        send(Message::indicators(static_cast<std::uint32_t>(st.index), Which::r2, static_cast<std::uint32_t>(c),
                                 be_.serialize(ct)));
      }
      out_.stages[st.index].client += be_.counters() - before;
      out_.stages[st.index].client_ms += detail::ms_since(t0);
    }
  }

  /// Runs one stage from upload to the next stage's upload vectors; fills out_.output on the last stage.
  std::vector<SlotVector> run_stage(const Stage& st, const std::vector<SlotVector>& upload) {
    auto& s = out_.stages[st.index];
    auto t0 = detail::Clock::now();
    auto before = be_.counters();
    auto flush = [&] {
      s.client += be_.counters() - before;
      s.client_ms += detail::ms_since(t0);
    };
    const auto l32 = static_cast<std::uint32_t>(st.index);

    for (std::size_t c = 0; c < upload.size(); ++c) {
      auto ct = be_.encrypt(encode_slots(upload[c], fp_, fp_.scale_bits), key_);
      send(Message::ciphertext(MsgType::ct_upload, l32, static_cast<std::uint32_t>(c), be_.serialize(ct)));
    }
    flush();
    auto lin = receive_cts(MsgType::blinded_linear, st.index, 0, st.layout.out_ct_count(), phe::Owner::client);
    t0 = detail::Clock::now();
    before = be_.counters();
    const auto y = client_decrypt_and_sum(be_, key_, lin, st.layout, fp_);

    if (!st.act) {
      out_.output = y;
      flush();
      return {};
    }

    std::vector<double> yq(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) yq[i] = fp::requantize(y[i], fp_);
    const auto y_slots = st.compact.pack(yq);
    auto& o = offline_[st.index];
    const std::size_t n = plan_.n;
    std::vector<double> share;

    switch (*st.act) {
      case nn::ActKind::relu: {
        std::vector<double> s1(st.compact.count, 0.0);
        if (!opt_.degenerate) {
          for (auto& v : s1) v = uniform_on_grid(rng_, -fp_.clip_bound, fp_.clip_bound, fp_);
        }
        const auto s1_slots = st.compact.pack(s1);
        for (std::size_t c = 0; c < y_slots.size(); ++c) {
          auto relu_ct = client_relu_eval(be_, o.a[c], o.b[c], y_slots[c], fp_);
          auto sh = client_make_share(be_, relu_ct, s1_slots[c], fp_);
          send(Message::ciphertext(MsgType::nonlinear_share, l32, static_cast<std::uint32_t>(c), be_.serialize(sh), 0));
        }
        if (st.terminal) {
          for (std::size_t c = 0; c < s1_slots.size(); ++c) {
            auto ct = be_.encrypt(encode_slots(s1_slots[c], fp_, fp_.scale_bits), key_);
            send(Message::ciphertext(MsgType::ct_upload, static_cast<std::uint32_t>(plan_.stages.size()),
                                     static_cast<std::uint32_t>(c), be_.serialize(ct)));
          }
          flush();
          finish_with_result(st);
          return {};
        }
        share = std::move(s1);
        break;
      }
      case nn::ActKind::sigmoid:
      case nn::ActKind::tanh: {
        for (std::size_t c = 0; c < y_slots.size(); ++c) {
          const std::size_t used = std::min(n, st.compact.count - c * n);
          auto ct = client_sigmoid_eval(be_, o.a[c], y_slots[c], o.r2_slots[c], used, fp_, opt_.exp_cap,
                                        &out_.totals.saturations);
          send(Message::ciphertext(MsgType::nonlinear_share, l32, static_cast<std::uint32_t>(c), be_.serialize(ct), 0));
        }
        flush();
        if (st.terminal) {
          finish_with_result(st);
          return {};
        }
        auto masked = receive_cts(MsgType::nonlinear_share, st.index, 2, st.compact.ct_count(), phe::Owner::client);
        t0 = detail::Clock::now();
        before = be_.counters();
        std::vector<SlotVector> dec;
        for (const auto& ct : masked) dec.push_back(decode_slots(be_.decrypt(ct, key_), fp_));
        share = st.compact.unpack(dec);
        for (auto& v : share) v = fp::requantize(v, fp_);
        break;
      }
      case nn::ActKind::softmax: {
        auto [part0, part1] = client_softmax_eval(be_, key_, o.a, yq, st.compact, fp_, rng_, opt_);
        for (std::size_t c = 0; c < part0.size(); ++c) {
          send(Message::ciphertext(MsgType::nonlinear_share, l32, static_cast<std::uint32_t>(c), be_.serialize(part0[c]), 0));
        }
        for (std::size_t c = 0; c < part1.size(); ++c) {
          send(Message::ciphertext(MsgType::nonlinear_share, l32, static_cast<std::uint32_t>(c), be_.serialize(part1[c]), 1));
        }
        flush();
        finish_with_result(st);
        return {};
      }
    }

    share = pool_share(std::move(share), st.out_shape, st.pools, fp_);
    const auto& next = plan_.stages[st.index + 1];
    auto slots = pack::relayout_share(share, st.pooled_shape, net_.layers[next.linear_layer], n);
    flush();
    return slots;
  }

  void finish_with_result(const Stage& st) {
    auto res = receive_cts(MsgType::result, 0, 0, st.compact.ct_count(), phe::Owner::client);
    const auto t0 = detail::Clock::now();
    const auto before = be_.counters();
    std::vector<SlotVector> dec;
    for (const auto& ct : res) dec.push_back(decode_slots(be_.decrypt(ct, key_), fp_));
    auto values = st.compact.unpack(dec);
    nn::Tensor t(st.out_shape.dims(), std::move(values));
    for (const auto& p : st.pools) t = nn::meanpool_ref(t, p);
    out_.output = std::move(t.data);
    out_.stages[st.index].client += be_.counters() - before;
    out_.stages[st.index].client_ms += detail::ms_since(t0);
  }

  struct Offline {
    std::vector<Ct> a, b;  // ID1/ID2, E_R1, or V_VEC
    std::vector<SlotVector> r2_slots;
  };

  nn::NetworkSpec net_;
  fp::FpParams fp_;
  B be_;
  phe::SecretKey key_;
  Prng rng_;
  ProtocolOptions opt_;
  Plan plan_;
  std::map<std::size_t, Offline> offline_;
  Channel* ch_ = nullptr;
  ClientOutcome out_;
};

// ---------------------------------------------------------------------------
// In-process transport: every message is framed, checked and decoded on the way through.

template <class B>
class DirectChannel : public Channel {
 public:
  explicit DirectChannel(ServerSession<B>& server) : server_(server) {}

  void send(const Message& m) override {
    const auto in = wire::frame_decode(wire::frame_encode(m));
    for (const auto& r : server_.on_message(in)) pending_.push_back(wire::frame_decode(wire::frame_encode(r)));
  }

  Message receive() override {
    if (pending_.empty()) throw ProtocolError(ErrorCode::internal, "no reply pending from server");
    Message m = std::move(pending_.front());
    pending_.pop_front();
    return m;
  }

 private:
  ServerSession<B>& server_;
  std::deque<Message> pending_;
};

/// Result of an in-process two-party run with both parties' counters merged per stage.
struct RunResult {
  std::vector<double> output;
  std::vector<StageStats> stages;
  SessionTotals totals;

  phe::OpCounters total_ops() const {
    phe::OpCounters t;
    for (const auto& s : stages) t += s.total();
    return t;
  }
  std::uint64_t online_bytes() const {
    std::uint64_t b = 0;
    for (const auto& s : stages) b += s.bytes_up + s.bytes_down;
    return b;
  }
};

struct Seeds {
  std::uint64_t client_key = 1, server_key = 2;
  std::uint64_t client_blind = 3, server_blind = 4;
  std::uint64_t client_enc = 5, server_enc = 6;
};

inline std::vector<StageStats> merge_stats(const std::vector<StageStats>& client, const std::vector<StageStats>& server) {
  auto out = client;
  for (std::size_t i = 0; i < out.size() && i < server.size(); ++i) {
    out[i].server = server[i].server;
    out[i].server_linear = server[i].server_linear;
    out[i].server_ms = server[i].server_ms;
  }
  return out;
}

/// Run both parties in-process over a DirectChannel.
template <class B>
RunResult run_secure_inference(const nn::NetworkSpec& net, const nn::Tensor& input, B client_be, B server_be,
                               const fp::FpParams& fp, const Seeds& seeds = {}, const ProtocolOptions& opt = {}) {
  auto kc = client_be.keygen(phe::Owner::client, seeds.client_key);
  auto ks = server_be.keygen(phe::Owner::server, seeds.server_key);
  ServerSession<B> server(net, fp, std::move(server_be), std::move(ks), seeds.server_blind, opt);
  ClientSession<B> client(net.public_view(), fp, std::move(client_be), std::move(kc), seeds.client_blind, opt);
  DirectChannel<B> ch(server);
  auto outcome = client.run(ch, input);
  if (!server.finished()) throw ProtocolError(ErrorCode::internal, "server session did not finish");
  return {std::move(outcome.output), merge_stats(outcome.stages, server.stats()), outcome.totals};
}

}  // namespace cheetah::proto
