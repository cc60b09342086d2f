#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cheetah/nn.hpp"

namespace cheetah::pack {

using SlotVector = std::vector<double>;

/// Receptive-field layout of one convolution.
///
/// Block i (output position, row-major) of channel j occupies block_size consecutive
/// slots, one per kernel tap (u, v). Taps that fall into padding are zero-fill.
/// When a channel's blocks do not fit in one ciphertext they are split into `parts`
/// ciphertexts; otherwise several channels share a ciphertext at distinct offsets.
/// Ciphertext index = (j / channels_per_ct) * parts + i / blocks_per_part.
struct ConvLayout {
  std::size_t n = 0;
  std::size_t c_i = 0, c_o = 0;
  std::size_t h_i = 0, w_i = 0, h_o = 0, w_o = 0;
  std::size_t kp = 0, kq = 0, stride = 1;
  std::size_t pad_y = 0, pad_x = 0;
  std::size_t block_size = 0;
  std::size_t blocks_per_channel = 0;
  std::size_t blocks_per_part = 0;
  std::size_t parts = 0;
  std::size_t channels_per_ct = 0;
  std::size_t channel_groups = 0;
  std::size_t ct_count = 0;

  struct SlotRef {
    std::size_t ct = 0, slot = 0;
    friend bool operator==(const SlotRef&, const SlotRef&) = default;
  };

  struct SlotEntry {
    bool fill = true;
    std::size_t j = 0, i = 0, u = 0, v = 0;
  };

  SlotRef locate(std::size_t j, std::size_t i, std::size_t u, std::size_t v) const {
    const std::size_t ct = (j / channels_per_ct) * parts + i / blocks_per_part;
    const std::size_t slot =
        (j % channels_per_ct) * blocks_per_part * block_size + (i % blocks_per_part) * block_size + u * kq + v;
    return {ct, slot};
  }

  /// Input pixel feeding tap (u, v) of output i, or nullopt for padding.
  std::optional<std::pair<std::size_t, std::size_t>> input_pos(std::size_t i, std::size_t u, std::size_t v) const {
    const std::size_t oy = i / w_o, ox = i % w_o;
    const std::size_t y = oy * stride + u, x = ox * stride + v;
    if (y < pad_y || x < pad_x) return std::nullopt;
    if (y - pad_y >= h_i || x - pad_x >= w_i) return std::nullopt;
    return std::make_pair(y - pad_y, x - pad_x);
  }

  SlotEntry entry(std::size_t ct, std::size_t slot) const {
    if (ct >= ct_count || slot >= n) return {};
    const std::size_t group = ct / parts, part = ct % parts;
    const std::size_t per_channel = blocks_per_part * block_size;
    const std::size_t jj = slot / per_channel;
    if (jj >= channels_per_ct) return {};
    const std::size_t j = group * channels_per_ct + jj;
    const std::size_t rem = slot % per_channel;
    const std::size_t i = part * blocks_per_part + rem / block_size;
    const std::size_t tap = rem % block_size;
    if (j >= c_i || i >= blocks_per_channel) return {};
    const std::size_t u = tap / kq, v = tap % kq;
    if (!input_pos(i, u, v)) return {};
    return {false, j, i, u, v};
  }

  std::size_t output_count() const { return c_o * blocks_per_channel; }
  std::size_t out_ct_count() const { return c_o * parts; }
};

inline ConvLayout build_conv_layout(const nn::Shape& in, const nn::Conv& conv, std::size_t n) {
  if (in.c != conv.c_i) throw std::invalid_argument("conv layout: channel mismatch");
  ConvLayout l;
  l.n = n;
  l.c_i = conv.c_i;
  l.c_o = conv.c_o;
  l.h_i = in.h;
  l.w_i = in.w;
  l.kp = conv.kp;
  l.kq = conv.kq;
  l.stride = conv.stride;
  const auto gy = nn::axis_geometry(in.h, conv.kp, conv.stride, conv.padding);
  const auto gx = nn::axis_geometry(in.w, conv.kq, conv.stride, conv.padding);
  l.h_o = gy.out;
  l.w_o = gx.out;
  l.pad_y = gy.pad_before;
  l.pad_x = gx.pad_before;
  l.block_size = conv.kp * conv.kq;
  if (l.block_size > n) throw std::invalid_argument("kernel has more taps than the slot count");
  l.blocks_per_channel = l.h_o * l.w_o;
  l.blocks_per_part = std::min(l.blocks_per_channel, n / l.block_size);
  l.parts = (l.blocks_per_channel + l.blocks_per_part - 1) / l.blocks_per_part;
  l.channels_per_ct = l.parts == 1 ? n / (l.blocks_per_channel * l.block_size) : 1;
  l.channel_groups = (l.c_i + l.channels_per_ct - 1) / l.channels_per_ct;
  l.ct_count = l.channel_groups * l.parts;
  return l;
}

/// x' : each slot holds the input pixel its tap reads, zero for padding.
inline std::vector<SlotVector> expand_input(const nn::Tensor& x, const ConvLayout& l) {
  if (x.rank() != 3 || x.c() != l.c_i || x.h() != l.h_i || x.w() != l.w_i) {
    throw std::invalid_argument("expand_input: tensor does not match layout");
  }
  std::vector<SlotVector> out(l.ct_count, SlotVector(l.n, 0.0));
  for (std::size_t j = 0; j < l.c_i; ++j)
    for (std::size_t i = 0; i < l.blocks_per_channel; ++i)
      for (std::size_t u = 0; u < l.kp; ++u)
        for (std::size_t v = 0; v < l.kq; ++v)
          if (auto pos = l.input_pos(i, u, v)) {
            const auto ref = l.locate(j, i, u, v);
            out[ref.ct][ref.slot] = x.at(j, pos->first, pos->second);
          }
  return out;
}

/// k'_t scaled per output block: slot (j, i, tap) holds k(t, j, tap) * blind[i].
inline std::vector<SlotVector> expand_kernel(const nn::Conv& conv, std::size_t t, const ConvLayout& l,
                                             const std::vector<double>& blind) {
  if (t >= l.c_o) throw std::out_of_range("kernel index out of range");
  if (blind.size() != l.blocks_per_channel) throw std::invalid_argument("expand_kernel: need one factor per block");
  std::vector<SlotVector> out(l.ct_count, SlotVector(l.n, 0.0));
  for (std::size_t j = 0; j < l.c_i; ++j)
    for (std::size_t i = 0; i < l.blocks_per_channel; ++i)
      for (std::size_t u = 0; u < l.kp; ++u)
        for (std::size_t v = 0; v < l.kq; ++v)
          if (l.input_pos(i, u, v)) {
            const auto ref = l.locate(j, i, u, v);
            out[ref.ct][ref.slot] = conv.k(t, j, u, v) * blind[i];
          }
  return out;
}

/// Row-block layout of a fully connected layer: row i of W occupies slots
/// [(i % rows_per_ct) * n_i, ... + n_i) of ciphertext i / rows_per_ct.
struct FcLayout {
  std::size_t n = 0;
  std::size_t n_i = 0, n_o = 0;
  std::size_t block_size = 0;
  std::size_t rows_per_ct = 0;
  std::size_t ct_count = 0;

  struct SlotRef {
    std::size_t ct = 0, slot = 0;
    friend bool operator==(const SlotRef&, const SlotRef&) = default;
  };

  SlotRef locate(std::size_t row, std::size_t j) const { return {row / rows_per_ct, (row % rows_per_ct) * n_i + j}; }

  std::size_t output_count() const { return n_o; }
  std::size_t out_ct_count() const { return ct_count; }
};

inline FcLayout build_fc_layout(std::size_t n_i, std::size_t n_o, std::size_t n) {
  if (n_i == 0 || n_o == 0) throw std::invalid_argument("fc layout: empty layer");
  if (n_i > n) throw std::invalid_argument("fc input length " + std::to_string(n_i) + " exceeds slot count");
  FcLayout l;
  l.n = n;
  l.n_i = n_i;
  l.n_o = n_o;
  l.block_size = n_i;
  l.rows_per_ct = n / n_i;
  l.ct_count = (n_o + l.rows_per_ct - 1) / l.rows_per_ct;
  return l;
}

/// The input vector repeated once per row slot of a ciphertext.
inline SlotVector expand_fc_input(const std::vector<double>& x, const FcLayout& l) {
  if (x.size() != l.n_i) throw std::invalid_argument("expand_fc_input: length mismatch");
  SlotVector out(l.n, 0.0);
  for (std::size_t r = 0; r < l.rows_per_ct; ++r)
    for (std::size_t j = 0; j < l.n_i; ++j) out[r * l.n_i + j] = x[j];
  return out;
}

inline std::vector<SlotVector> expand_fc_weights(const nn::Fc& fc, const FcLayout& l, const std::vector<double>& blind) {
  if (blind.size() != l.n_o) throw std::invalid_argument("expand_fc_weights: need one factor per row");
  std::vector<SlotVector> out(l.ct_count, SlotVector(l.n, 0.0));
  for (std::size_t i = 0; i < l.n_o; ++i)
    for (std::size_t j = 0; j < l.n_i; ++j) {
      const auto ref = l.locate(i, j);
      out[ref.ct][ref.slot] = fc.w(i, j) * blind[i];
    }
  return out;
}

/// One slot per value, spread over as many ciphertexts as needed.
struct CompactLayout {
  std::size_t n = 0;
  std::size_t count = 0;

  std::size_t ct_count() const { return (count + n - 1) / n; }

  std::vector<SlotVector> pack(const std::vector<double>& values) const {
    if (values.size() != count) throw std::invalid_argument("compact pack: length mismatch");
    std::vector<SlotVector> out(ct_count(), SlotVector(n, 0.0));
    for (std::size_t k = 0; k < count; ++k) out[k / n][k % n] = values[k];
    return out;
  }

  std::vector<double> unpack(const std::vector<SlotVector>& cts) const {
    if (cts.size() != ct_count()) throw std::invalid_argument("compact unpack: ciphertext count mismatch");
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k) out[k] = cts[k / n][k % n];
    return out;
  }
};

/// A linear layer's packing, conv or fc, behind one interface.
///
/// Outputs are numbered in CHW order (t * h_o * w_o + i for conv, row for fc), which is
/// also the compact order of the following activation.
class LinearLayout {
 public:
  struct Term {
    std::size_t in_ct;
    SlotVector weights;
  };

  LinearLayout(const nn::Layer& layer, const nn::Shape& in, std::size_t n) : in_(in) {
    if (auto* c = std::get_if<nn::Conv>(&layer)) {
      layout_ = build_conv_layout(in, *c, n);
    } else if (auto* f = std::get_if<nn::Fc>(&layer)) {
      if (in.size() != f->n_i) throw std::invalid_argument("fc layout: input length mismatch");
      layout_ = build_fc_layout(f->n_i, f->n_o, n);
    } else {
      throw std::invalid_argument("not a linear layer");
    }
  }

  bool is_conv() const { return std::holds_alternative<ConvLayout>(layout_); }
  const ConvLayout& conv() const { return std::get<ConvLayout>(layout_); }
  const FcLayout& fc() const { return std::get<FcLayout>(layout_); }

  std::size_t slot_count() const { return is_conv() ? conv().n : fc().n; }
  std::size_t in_ct_count() const { return is_conv() ? conv().ct_count : 1; }
  std::size_t out_ct_count() const { return is_conv() ? conv().out_ct_count() : fc().out_ct_count(); }
  std::size_t output_count() const { return is_conv() ? conv().output_count() : fc().output_count(); }

  nn::Shape output_shape() const {
    if (is_conv()) return {conv().c_o, conv().h_o, conv().w_o};
    return {fc().n_o, 1, 1};
  }

  std::vector<SlotVector> expand_input(const nn::Tensor& x) const {
    if (is_conv()) {
      nn::Tensor shaped = x;
      shaped.dims = in_.dims();
      return pack::expand_input(shaped, conv());
    }
    return {expand_fc_input(x.data, fc())};
  }

  /// Weight operands for output ciphertext `out_ct`, each paired with the input ciphertext it multiplies.
  /// `blind` holds one factor per output (CHW order).
  std::vector<Term> terms(const nn::Layer& layer, std::size_t out_ct, const std::vector<double>& blind) const {
    if (blind.size() != output_count()) throw std::invalid_argument("one blinding factor per output required");
    std::vector<Term> out;
    if (is_conv()) {
      const auto& l = conv();
      const auto& c = std::get<nn::Conv>(layer);
      const std::size_t t = out_ct / l.parts, part = out_ct % l.parts;
      const std::vector<double> v(blind.begin() + t * l.blocks_per_channel,
                                  blind.begin() + (t + 1) * l.blocks_per_channel);
      auto k = expand_kernel(c, t, l, v);
      for (std::size_t g = 0; g < l.channel_groups; ++g) {
        const std::size_t idx = g * l.parts + part;
        out.push_back({idx, std::move(k[idx])});
      }
    } else {
      const auto& l = fc();
      const auto& f = std::get<nn::Fc>(layer);
      SlotVector w(l.n, 0.0);
      for (std::size_t r = 0; r < l.rows_per_ct; ++r) {
        const std::size_t i = out_ct * l.rows_per_ct + r;
        if (i >= l.n_o) break;
        for (std::size_t j = 0; j < l.n_i; ++j) w[r * l.n_i + j] = f.w(i, j) * blind[i];
      }
      out.push_back({0, std::move(w)});
    }
    return out;
  }

  /// Output ciphertext holding output k, and the non-zero-fill slots of its block.
  std::pair<std::size_t, std::vector<std::size_t>> block_slots(std::size_t k) const {
    std::vector<std::size_t> slots;
    if (is_conv()) {
      const auto& l = conv();
      const std::size_t t = k / l.blocks_per_channel, i = k % l.blocks_per_channel;
      const std::size_t groups_used = std::min(l.channels_per_ct, l.c_i);
      for (std::size_t g = 0; g < groups_used; ++g)
        for (std::size_t u = 0; u < l.kp; ++u)
          for (std::size_t v = 0; v < l.kq; ++v)
            if (l.input_pos(i, u, v)) slots.push_back(l.locate(g, i, u, v).slot);
      return {t * l.parts + i / l.blocks_per_part, std::move(slots)};
    }
    const auto& l = fc();
    const auto ref = l.locate(k, 0);
    for (std::size_t j = 0; j < l.n_i; ++j) slots.push_back(ref.slot + j);
    return {ref.ct, std::move(slots)};
  }

  /// Sum each block of the decoded output ciphertexts: one value per output.
  std::vector<double> block_sum(const std::vector<SlotVector>& decoded) const {
    if (decoded.size() != out_ct_count()) throw std::invalid_argument("block_sum: ciphertext count mismatch");
    std::vector<double> y(output_count(), 0.0);
    if (is_conv()) {
      const auto& l = conv();
      const std::size_t groups_used = std::min(l.channels_per_ct, l.c_i);
      for (std::size_t t = 0; t < l.c_o; ++t)
        for (std::size_t i = 0; i < l.blocks_per_channel; ++i) {
          const auto& ct = decoded[t * l.parts + i / l.blocks_per_part];
          double acc = 0;
          for (std::size_t g = 0; g < groups_used; ++g) {
            const std::size_t base = l.locate(g, i, 0, 0).slot;
            for (std::size_t tap = 0; tap < l.block_size; ++tap) acc += ct[base + tap];
          }
          y[t * l.blocks_per_channel + i] = acc;
        }
    } else {
      const auto& l = fc();
      for (std::size_t i = 0; i < l.n_o; ++i) {
        const auto ref = l.locate(i, 0);
        double acc = 0;
        for (std::size_t j = 0; j < l.n_i; ++j) acc += decoded[ref.ct][ref.slot + j];
        y[i] = acc;
      }
    }
    return y;
  }

 private:
  nn::Shape in_;
  std::variant<ConvLayout, FcLayout> layout_;
};

/// Lay out one additive share of an activation tensor for the next linear layer.
inline std::vector<SlotVector> relayout_share(const std::vector<double>& share, const nn::Shape& shape,
                                              const nn::Layer& next, std::size_t n) {
  if (share.size() != shape.size()) throw std::invalid_argument("relayout: share length mismatch");
  LinearLayout layout(next, shape, n);
  return layout.expand_input(nn::Tensor(shape.dims(), share));
}

}  // namespace cheetah::pack
