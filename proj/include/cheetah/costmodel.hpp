#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cheetah::cost {

enum class LayerKind { siso, mimo, fc };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::siso: return "siso";
    case LayerKind::mimo: return "mimo";
    case LayerKind::fc: return "fc";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(std::string_view s) {
  if (s == "siso") return LayerKind::siso;
  if (s == "mimo") return LayerKind::mimo;
  if (s == "fc") return LayerKind::fc;
  throw std::invalid_argument("unknown layer kind '" + std::string(s) + "' (siso, mimo, fc)");
}

/// Dimensions of one layer. For conv layers `in` is the input side I and `r` the kernel side.
struct CostInput {
  LayerKind layer = LayerKind::fc;
  std::size_t n = 4096;
  double log_q = 60, log_p = 20;
  std::size_t n_i = 0, n_o = 0;
  std::size_t r = 3, c_i = 1, c_o = 1, in = 28, stride = 1;
  std::optional<std::size_t> c_n;  // input channels per ciphertext; derived from the layout when absent
  bool with_activation = false;    // add the ReLU step (indicator products, share, absorb) to the CHEETAH counts

  void validate() const {
    auto pos = [](std::size_t v, const char* what) {
      if (v == 0) throw std::invalid_argument(std::string(what) + " must be positive");
    };
    pos(n, "n");
    if (!(log_q > 0) || !(log_p > 0)) throw std::invalid_argument("log q and log p must be positive");
    if (layer == LayerKind::fc) {
      pos(n_i, "n_i");
      pos(n_o, "n_o");
      if (n_i > n) throw std::invalid_argument("n_i must not exceed n");
      if (n_o > n) throw std::invalid_argument("n_o must not exceed n");
    } else {
      pos(r, "r");
      pos(c_i, "c_i");
      pos(c_o, "c_o");
      pos(in, "I");
      pos(stride, "stride");
      if (r * r > n) throw std::invalid_argument("r^2 must not exceed n");
      if (layer == LayerKind::siso && (c_i != 1 || c_o != 1)) throw std::invalid_argument("siso needs c_i = c_o = 1");
      if (c_n && *c_n == 0) throw std::invalid_argument("c_n must be positive");
    }
  }
};

struct CostRow {
  std::string scheme;
  LayerKind layer = LayerKind::fc;
  double perm = 0, mult = 0, add = 0;
  std::optional<double> comm_bits;  // absent where the table has no entry

  std::optional<double> comm_kib() const {
    if (!comm_bits) return std::nullopt;
    return *comm_bits / 8.0 / 1024.0;
  }
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

/// Ciphertext counts of the conv slot layout (uniform r*r blocks, one per output position).
struct ConvCounts {
  std::size_t out_side = 0, parts = 0, channels_per_ct = 0, in_cts = 0, out_cts = 0, compact_cts = 0;
};

inline ConvCounts conv_counts(const CostInput& in) {
  ConvCounts c;
  c.out_side = ceil_div(in.in, in.stride);
  const std::size_t block = in.r * in.r;
  const std::size_t positions = c.out_side * c.out_side;
  const std::size_t blocks_per_ct = in.n / block;
  c.parts = ceil_div(positions, blocks_per_ct);
  c.channels_per_ct = in.c_n ? *in.c_n : (c.parts == 1 ? in.n / (positions * block) : 1);
  c.in_cts = ceil_div(in.c_i, c.channels_per_ct) * c.parts;
  c.out_cts = in.c_o * c.parts;
  c.compact_cts = ceil_div(in.c_o * positions, in.n);
  return c;
}

inline std::size_t fc_ct_count(const CostInput& in) { return ceil_div(in.n_o, in.n / in.n_i); }

/// Garbled-circuit ReLU traffic per activated element, in bits.
inline double gc_bits_per_element(const CostInput& in) {
  return (100 * in.log_q + 15 * in.log_p * in.log_q + 25) * in.log_p;
}

inline const std::vector<std::string>& schemes() {
  static const std::vector<std::string> s{"cheetah", "gazelle", "gazelle-ir", "gazelle-or", "gazelle-fc", "naive-fc", "hs-fc"};
  return s;
}

inline const std::vector<std::string>& schemes_for(LayerKind k) {
  static const std::vector<std::string> siso{"gazelle", "cheetah"};
  static const std::vector<std::string> mimo{"gazelle-ir", "gazelle-or", "cheetah"};
  static const std::vector<std::string> fc{"naive-fc", "hs-fc", "gazelle-fc", "cheetah"};
  return k == LayerKind::siso ? siso : k == LayerKind::mimo ? mimo : fc;
}

/// Closed-form Perm/Mult/Add counts and communication for one scheme on one layer. Never runs crypto.
inline CostRow costmodel(const std::string& scheme, const CostInput& in) {
  in.validate();
  CostRow row;
  row.scheme = scheme;
  row.layer = in.layer;
  const double n = static_cast<double>(in.n), lq = in.log_q;
  const auto& allowed = schemes_for(in.layer);
  if (std::find(allowed.begin(), allowed.end(), scheme) == allowed.end()) {
    throw std::invalid_argument("scheme '" + scheme + "' does not apply to " + std::string(to_string(in.layer)) +
                                " layers");
  }

  if (scheme == "cheetah") {
    if (in.layer == LayerKind::fc) {
      const double cts = static_cast<double>(fc_ct_count(in));
      row.mult = cts;
      row.add = cts;
      if (in.with_activation) {
        const double compact = static_cast<double>(ceil_div(in.n_o, in.n));
        row.mult += 2 * compact;
        row.add += 3 * compact;
      }
      row.comm_bits = 2 * n * lq;
    } else {
      const auto c = conv_counts(in);
      row.mult = static_cast<double>(in.c_o * c.in_cts);
      row.add = row.mult;
      if (in.with_activation) {
        // Absorbing the server share into the next layer's upload: one Add per expanded ciphertext.
        const std::size_t absorb = ceil_div(in.c_o * c.out_side * c.out_side * in.r * in.r, in.n);
        row.mult += 2.0 * c.compact_cts;
        row.add += 2.0 * c.compact_cts + absorb;
      }
      row.comm_bits = in.layer == LayerKind::siso ? 2 * n * lq : (static_cast<double>(c.in_cts) + 1) * n * lq;
    }
    return row;
  }

  const double gc = gc_bits_per_element(in);
  const double r2 = static_cast<double>(in.r * in.r);
  const double I2 = static_cast<double>(in.in * in.in);
  if (scheme == "gazelle") {
    row.perm = r2 - 1;
    row.mult = r2;
    row.add = r2 - 1;
    row.comm_bits = 2 * n * lq + gc * I2;
  } else if (scheme == "gazelle-ir" || scheme == "gazelle-or") {
    const double c_n = static_cast<double>(in.c_n ? *in.c_n : std::max<std::size_t>(1, in.n / (in.in * in.in)));
    const double ci = static_cast<double>(in.c_i), co = static_cast<double>(in.c_o);
    const double work = std::ceil(ci * co * r2 / c_n);
    row.mult = work;
    row.add = work;
    if (scheme == "gazelle-ir") {
      row.perm = ci * r2;
    } else {
      row.perm = work;
      row.comm_bits = std::ceil((ci + co) / c_n) * n * lq + gc * co * I2;
    }
  } else {
    const double ni = static_cast<double>(in.n_i), no = static_cast<double>(in.n_o);
    if (scheme == "naive-fc") {
      row.perm = no * std::ceil(std::log2(ni));
      row.mult = no;
      row.add = row.perm;
    } else if (scheme == "hs-fc") {
      row.perm = ni - 1;
      row.mult = ni;
      row.add = ni - 1;
    } else {  // gazelle-fc: hybrid diagonal products then a rotate-and-add tree over n/n_o chunks
      const double prods = std::ceil(ni * no / n);
      row.perm = prods - 1 + std::log2(n / no);
      row.mult = prods;
      row.add = row.perm;
      row.comm_bits = 2 * n * lq + gc * no;
    }
  }
  return row;
}

}  // namespace cheetah::cost
