#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cheetah/bytes.hpp"
#include "cheetah/prng.hpp"

namespace cheetah::nn {

/// Dense tensor. Activations use dims {c, h, w}; conv weights {c_o, c_i, k_p, k_q}; fc weights {n_o, n_i}.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d, double fill = 0.0) : dims(std::move(d)), data(count(dims), fill) {}
  Tensor(std::vector<std::size_t> d, std::vector<double> values) : dims(std::move(d)), data(std::move(values)) {
    if (data.size() != count(dims)) throw std::invalid_argument("tensor data length does not match dims");
  }

  static std::size_t count(const std::vector<std::size_t>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return dims.size(); }

  std::size_t c() const { return dims.at(0); }
  std::size_t h() const { return dims.at(1); }
  std::size_t w() const { return dims.at(2); }

  double& at(std::size_t ch, std::size_t y, std::size_t x) { return data[(ch * dims[1] + y) * dims[2] + x]; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const { return data[(ch * dims[1] + y) * dims[2] + x]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Shape {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const { return c * h * w; }
  std::vector<std::size_t> dims() const { return {c, h, w}; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

enum class Padding { same, valid };
enum class ActKind { relu, sigmoid, tanh, softmax };

inline std::string_view to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }
inline Padding padding_from_string(std::string_view s) {
  if (s == "same") return Padding::same;
  if (s == "valid") return Padding::valid;
  throw std::invalid_argument("unknown padding mode '" + std::string(s) + "'");
}

inline std::string_view to_string(ActKind k) {
  switch (k) {
    case ActKind::relu: return "relu";
    case ActKind::sigmoid: return "sigmoid";
    case ActKind::tanh: return "tanh";
    case ActKind::softmax: return "softmax";
  }
  return "?";
}
inline ActKind act_from_string(std::string_view s) {
  if (s == "relu") return ActKind::relu;
  if (s == "sigmoid") return ActKind::sigmoid;
  if (s == "tanh") return ActKind::tanh;
  if (s == "softmax") return ActKind::softmax;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

struct Conv {
  std::size_t kp = 1, kq = 1;
  std::size_t c_i = 1, c_o = 1;
  std::size_t stride = 1;
  Padding padding = Padding::same;
  Tensor weight;                             // {c_o, c_i, kp, kq}
  std::optional<std::vector<double>> bias;   // c_o

  double k(std::size_t t, std::size_t j, std::size_t u, std::size_t v) const {
    return weight.data[((t * c_i + j) * kp + u) * kq + v];
  }
};

struct Fc {
  std::size_t n_i = 1, n_o = 1;
  Tensor weight;                             // {n_o, n_i}
  std::optional<std::vector<double>> bias;   // n_o

  double w(std::size_t i, std::size_t j) const { return weight.data[i * n_i + j]; }
};

struct Activation {
  ActKind kind = ActKind::relu;
};

struct MeanPool {
  std::size_t ph = 2, pw = 2;
};

using Layer = std::variant<Conv, Fc, Activation, MeanPool>;

inline bool is_linear(const Layer& l) { return std::holds_alternative<Conv>(l) || std::holds_alternative<Fc>(l); }

inline std::string layer_name(const Layer& l) {
  if (std::holds_alternative<Conv>(l)) return "conv";
  if (std::holds_alternative<Fc>(l)) return "fc";
  if (auto* a = std::get_if<Activation>(&l)) return std::string(to_string(a->kind));
  return "meanpool";
}

/// Output extent and leading pad along one axis.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

inline AxisGeometry axis_geometry(std::size_t in, std::size_t k, std::size_t stride, Padding mode) {
  if (stride == 0) throw std::invalid_argument("stride must be positive");
  if (mode == Padding::same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + k;
    const std::size_t total = needed > in ? needed - in : 0;
    return {out, total / 2};
  }
  if (k > in) throw std::invalid_argument("valid convolution with kernel larger than input");
  return {(in - k) / stride + 1, 0};
}

inline Shape output_shape(const Layer& layer, const Shape& in) {
  if (auto* c = std::get_if<Conv>(&layer)) {
    if (in.c != c->c_i) {
      throw std::invalid_argument("conv expects " + std::to_string(c->c_i) + " input channels, got " + to_string(in));
    }
    return {c->c_o, axis_geometry(in.h, c->kp, c->stride, c->padding).out,
            axis_geometry(in.w, c->kq, c->stride, c->padding).out};
  }
  if (auto* f = std::get_if<Fc>(&layer)) {
    if (in.size() != f->n_i) {
      throw std::invalid_argument("fc expects " + std::to_string(f->n_i) + " inputs, got " + to_string(in));
    }
    return {f->n_o, 1, 1};
  }
  if (auto* p = std::get_if<MeanPool>(&layer)) {
    if (p->ph == 0 || p->pw == 0 || in.h % p->ph != 0 || in.w % p->pw != 0) {
      throw std::invalid_argument("pool region does not tile " + to_string(in));
    }
    return {in.c, in.h / p->ph, in.w / p->pw};
  }
  return in;
}

struct NetworkSpec {
  std::string name;
  Shape input;
  std::vector<Layer> layers;

  /// Shapes before each layer plus the final output shape.
  std::vector<Shape> shapes() const {
    std::vector<Shape> out{input};
    for (const auto& l : layers) out.push_back(output_shape(l, out.back()));
    return out;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("network has no layers");
    if (input.size() == 0) throw std::invalid_argument("network input is empty");
    shapes();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (auto* a = std::get_if<Activation>(&layers[i]); a && a->kind == ActKind::softmax) {
        if (i + 1 != layers.size()) throw std::invalid_argument("softmax must be the final layer");
      }
      if (auto* c = std::get_if<Conv>(&layers[i])) {
        if (c->weight.dims != std::vector<std::size_t>{c->c_o, c->c_i, c->kp, c->kq} && !c->weight.data.empty()) {
          throw std::invalid_argument("conv weight dims mismatch");
        }
        if (c->bias && c->bias->size() != c->c_o) throw std::invalid_argument("conv bias length mismatch");
      }
      if (auto* f = std::get_if<Fc>(&layers[i])) {
        if (f->weight.dims != std::vector<std::size_t>{f->n_o, f->n_i} && !f->weight.data.empty()) {
          throw std::invalid_argument("fc weight dims mismatch");
        }
        if (f->bias && f->bias->size() != f->n_o) throw std::invalid_argument("fc bias length mismatch");
      }
    }
  }

  bool has_weights() const {
    for (const auto& l : layers) {
      if (auto* c = std::get_if<Conv>(&l); c && c->weight.data.empty()) return false;
      if (auto* f = std::get_if<Fc>(&l); f && f->weight.data.empty()) return false;
    }
    return true;
  }

  /// Copy with all weights and biases removed.
  NetworkSpec public_view() const {
    NetworkSpec pub = *this;
    for (auto& l : pub.layers) {
      if (auto* c = std::get_if<Conv>(&l)) {
        c->weight = {};
        c->bias.reset();
      }
      if (auto* f = std::get_if<Fc>(&l)) {
        f->weight = {};
        f->bias.reset();
      }
    }
    return pub;
  }

  /// Hash of the architecture only; weights and bias values are excluded.
  std::uint64_t digest() const {
    Fnv1a h;
    h.add("network/1").add_u64(input.c).add_u64(input.h).add_u64(input.w).add_u64(layers.size());
    for (const auto& l : layers) {
      h.add(layer_name(l));
      if (auto* c = std::get_if<Conv>(&l)) {
        h.add_u64(c->kp).add_u64(c->kq).add_u64(c->c_i).add_u64(c->c_o).add_u64(c->stride);
        h.add(to_string(c->padding));
      } else if (auto* f = std::get_if<Fc>(&l)) {
        h.add_u64(f->n_i).add_u64(f->n_o);
      } else if (auto* p = std::get_if<MeanPool>(&l)) {
        h.add_u64(p->ph).add_u64(p->pw);
      }
    }
    return h.value();
  }
};

// ---------------------------------------------------------------------------
// Plaintext reference inference.

inline Tensor conv2d_ref(const Tensor& x, const Conv& conv) {
  if (x.rank() != 3 || x.c() != conv.c_i) throw std::invalid_argument("conv2d_ref: input channel mismatch");
  const auto gy = axis_geometry(x.h(), conv.kp, conv.stride, conv.padding);
  const auto gx = axis_geometry(x.w(), conv.kq, conv.stride, conv.padding);
  Tensor out({conv.c_o, gy.out, gx.out});
  for (std::size_t t = 0; t < conv.c_o; ++t) {
    for (std::size_t oy = 0; oy < gy.out; ++oy) {
      for (std::size_t ox = 0; ox < gx.out; ++ox) {
        double acc = conv.bias ? (*conv.bias)[t] : 0.0;
        for (std::size_t j = 0; j < conv.c_i; ++j) {
          for (std::size_t u = 0; u < conv.kp; ++u) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * conv.stride + u) - static_cast<std::ptrdiff_t>(gy.pad_before);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h())) continue;
            for (std::size_t v = 0; v < conv.kq; ++v) {
              const auto ix =
                  static_cast<std::ptrdiff_t>(ox * conv.stride + v) - static_cast<std::ptrdiff_t>(gx.pad_before);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w())) continue;
              acc += conv.k(t, j, u, v) * x.at(j, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        out.at(t, oy, ox) = acc;
      }
    }
  }
  return out;
}

inline Tensor fc_ref(const Tensor& x, const Fc& fc) {
  if (x.size() != fc.n_i) throw std::invalid_argument("fc_ref: input length mismatch");
  Tensor out({fc.n_o, 1, 1});
  for (std::size_t i = 0; i < fc.n_o; ++i) {
    double acc = fc.bias ? (*fc.bias)[i] : 0.0;
    for (std::size_t j = 0; j < fc.n_i; ++j) acc += fc.w(i, j) * x.data[j];
    out.data[i] = acc;
  }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> softmax(const std::vector<double>& x) {
  if (x.empty()) return {};
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += out[i] = std::exp(x[i] - m);
  for (auto& v : out) v /= sum;
  return out;
}

inline Tensor activation_ref(ActKind kind, Tensor x) {
  switch (kind) {
    case ActKind::relu:
      for (auto& v : x.data) v = std::max(v, 0.0);
      break;
    case ActKind::sigmoid:
      for (auto& v : x.data) v = sigmoid(v);
      break;
    case ActKind::tanh:
      for (auto& v : x.data) v = 2.0 * sigmoid(2.0 * v) - 1.0;
      break;
    case ActKind::softmax:
      x.data = softmax(x.data);
      break;
  }
  return x;
}

inline Tensor meanpool_ref(const Tensor& x, const MeanPool& pool) {
  const Shape s = output_shape(pool, {x.c(), x.h(), x.w()});
  Tensor out(s.dims());
  const double inv = 1.0 / static_cast<double>(pool.ph * pool.pw);
  for (std::size_t ch = 0; ch < s.c; ++ch)
    for (std::size_t oy = 0; oy < s.h; ++oy)
      for (std::size_t ox = 0; ox < s.w; ++ox) {
        double acc = 0;
        for (std::size_t u = 0; u < pool.ph; ++u)
          for (std::size_t v = 0; v < pool.pw; ++v) acc += x.at(ch, oy * pool.ph + u, ox * pool.pw + v);
        out.at(ch, oy, ox) = acc * inv;
      }
  return out;
}

inline Tensor apply_layer(const Layer& layer, const Tensor& x) {
  if (auto* c = std::get_if<Conv>(&layer)) return conv2d_ref(x, *c);
  if (auto* f = std::get_if<Fc>(&layer)) return fc_ref(x, *f);
  if (auto* a = std::get_if<Activation>(&layer)) return activation_ref(a->kind, x);
  return meanpool_ref(x, std::get<MeanPool>(layer));
}

/// Reshape a flat or differently ranked tensor to the network input shape.
inline Tensor as_input(const NetworkSpec& net, Tensor x) {
  if (x.size() == 0) throw std::invalid_argument("input tensor is empty");
  if (x.size() != net.input.size()) {
    throw std::invalid_argument("input has " + std::to_string(x.size()) + " values, network expects " +
                                to_string(net.input));
  }
  for (double v : x.data)
    if (!std::isfinite(v)) throw std::invalid_argument("input contains non-finite values");
  x.dims = net.input.dims();
  return x;
}

inline std::vector<double> infer_ref(const NetworkSpec& net, const Tensor& input) {
  Tensor x = as_input(net, input);
  for (const auto& l : net.layers) x = apply_layer(l, x);
  return x.data;
}

inline std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

// ---------------------------------------------------------------------------
// Fixtures.

inline Conv make_conv(std::size_t c_i, std::size_t c_o, std::size_t k, std::size_t stride = 1,
                      Padding padding = Padding::same) {
  Conv c;
  c.kp = c.kq = k;
  c.c_i = c_i;
  c.c_o = c_o;
  c.stride = stride;
  c.padding = padding;
  return c;
}

inline Fc make_fc(std::size_t n_i, std::size_t n_o) {
  Fc f;
  f.n_i = n_i;
  f.n_o = n_o;
  return f;
}

inline NetworkSpec network_template(std::string_view name) {
  NetworkSpec net;
  net.name = std::string(name);
  const Activation relu{ActKind::relu};
  if (name == "tiny") {
    net.input = {1, 8, 8};
    net.layers = {make_conv(1, 2, 3), relu};
  } else if (name == "netA") {
    net.input = {1, 28, 28};
    net.layers = {make_conv(1, 5, 5, 2), relu, make_fc(980, 100), relu, make_fc(100, 10)};
  } else if (name == "netB") {
    net.input = {1, 28, 28};
    net.layers = {make_conv(1, 16, 5), relu, MeanPool{2, 2}, make_conv(16, 16, 5), relu, MeanPool{2, 2},
                  make_fc(784, 100), relu, make_fc(100, 10)};
  } else if (name == "vgghead") {
    net.input = {3, 32, 32};
    net.layers = {make_conv(3, 64, 3), relu, make_conv(64, 64, 3), relu, MeanPool{2, 2},
                  make_conv(64, 128, 3), relu, make_conv(128, 128, 3), relu, MeanPool{2, 2}};
  } else {
    throw std::invalid_argument("unknown network template '" + std::string(name) + "'");
  }
  return net;
}

/// Fill every linear layer with weights uniform in [-1, 1] scaled by 1/sqrt(fan_in), plus small biases.
/// Values are rounded to float32 so they survive a save/load cycle unchanged.
inline void randomize_weights(NetworkSpec& net, std::uint64_t seed, bool with_bias = true) {
  Prng rng(seed, 0x77656967);
  auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  auto draw = [&](std::size_t fan_in) {
    return f32(rng.uniform(-1.0, 1.0) / std::max(1.0, std::sqrt(static_cast<double>(fan_in))));
  };
  for (auto& l : net.layers) {
    if (auto* c = std::get_if<Conv>(&l)) {
      const std::size_t fan = c->c_i * c->kp * c->kq;
      c->weight = Tensor({c->c_o, c->c_i, c->kp, c->kq});
      for (auto& v : c->weight.data) v = draw(fan);
      if (with_bias) {
        c->bias = std::vector<double>(c->c_o);
        for (auto& b : *c->bias) b = f32(rng.uniform(-0.1, 0.1));
      }
    } else if (auto* f = std::get_if<Fc>(&l)) {
      f->weight = Tensor({f->n_o, f->n_i});
      for (auto& v : f->weight.data) v = draw(f->n_i);
      if (with_bias) {
        f->bias = std::vector<double>(f->n_o);
        for (auto& b : *f->bias) b = f32(rng.uniform(-0.1, 0.1));
      }
    }
  }
}

inline NetworkSpec gen_random_network(std::string_view template_name, std::uint64_t seed) {
  auto net = network_template(template_name);
  randomize_weights(net, seed);
  net.validate();
  return net;
}

inline Tensor random_input(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Prng rng(seed, 0x696e70);
  Tensor x(shape.dims());
  for (auto& v : x.data) v = static_cast<double>(static_cast<float>(rng.uniform(lo, hi)));
  return x;
}

}  // namespace cheetah::nn
