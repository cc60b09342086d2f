#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "cheetah/bytes.hpp"
#include "cheetah/nn.hpp"

namespace cheetah::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Raised for unreadable, truncated or corrupt model files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kTensorMagic = "CHTW";
inline constexpr std::size_t kTensorHeaderBytes = 16;
inline constexpr std::size_t kMaxRank = 5;

inline Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const fs::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

// Layout: "CHTW" | rank u8 | reserved u8 | 5 x u16 dims | f32 data | crc32 over everything before it.
inline Bytes encode_tensor(const nn::Tensor& t) {
  if (t.rank() == 0 || t.rank() > kMaxRank) throw std::invalid_argument("tensor rank must be 1..5");
  Bytes out;
  ByteWriter w(out);
  w.raw(kTensorMagic);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  w.u8(0);
  for (std::size_t i = 0; i < kMaxRank; ++i) {
    const std::size_t d = i < t.rank() ? t.dims[i] : 0;
    if (d > 0xffff) throw std::invalid_argument("tensor dimension exceeds 65535");
    w.u16(static_cast<std::uint16_t>(d));
  }
  for (double v : t.data) w.f32(static_cast<float>(v));
  w.u32(crc32_of(out));
  return out;
}

inline nn::Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kTensorHeaderBytes + 4) throw FormatError("tensor file truncated");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader footer(bytes.last(4));
  if (footer.u32() != crc32_of(body)) throw FormatError("tensor checksum mismatch");
  ByteReader r(body);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kTensorMagic.begin())) throw FormatError("bad tensor magic");
  const std::size_t rank = r.u8();
  r.u8();
  if (rank == 0 || rank > kMaxRank) throw FormatError("bad tensor rank");
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < kMaxRank; ++i) {
    const std::size_t d = r.u16();
    if (i < rank) dims.push_back(d);
  }
  const std::size_t count = nn::Tensor::count(dims);
  if (r.remaining() != 4 * count) throw FormatError("tensor data length does not match header");
  std::vector<double> data(count);
  for (auto& v : data) v = r.f32();
  return nn::Tensor(std::move(dims), std::move(data));
}

inline void save_tensor(const fs::path& path, const nn::Tensor& t) { write_file(path, encode_tensor(t)); }

inline nn::Tensor load_tensor(const fs::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const DecodeError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Round every weight to float32 so in-memory values equal what a save/load cycle yields.
inline void round_to_f32(nn::NetworkSpec& net) {
  auto round = [](std::vector<double>& v) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  };
  for (auto& l : net.layers) {
    if (auto* c = std::get_if<nn::Conv>(&l)) {
      round(c->weight.data);
      if (c->bias) round(*c->bias);
    } else if (auto* f = std::get_if<nn::Fc>(&l)) {
      round(f->weight.data);
      if (f->bias) round(*f->bias);
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest (JSON). Weight references are relative to the manifest's directory.

inline json layer_to_json(const nn::Layer& l) {
  json j;
  j["type"] = nn::layer_name(l);
  if (auto* c = std::get_if<nn::Conv>(&l)) {
    j["kernel"] = {c->kp, c->kq};
    j["in_channels"] = c->c_i;
    j["out_channels"] = c->c_o;
    j["stride"] = c->stride;
    j["padding"] = nn::to_string(c->padding);
  } else if (auto* f = std::get_if<nn::Fc>(&l)) {
    j["in"] = f->n_i;
    j["out"] = f->n_o;
  } else if (auto* p = std::get_if<nn::MeanPool>(&l)) {
    j["region"] = {p->ph, p->pw};
  }
  return j;
}

inline nn::Layer layer_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "conv") {
    nn::Conv c;
    const auto k = j.at("kernel");
    c.kp = k.at(0).get<std::size_t>();
    c.kq = k.at(1).get<std::size_t>();
    c.c_i = j.at("in_channels").get<std::size_t>();
    c.c_o = j.at("out_channels").get<std::size_t>();
    c.stride = j.value("stride", std::size_t{1});
    c.padding = nn::padding_from_string(j.value("padding", std::string("same")));
    if (c.kp == 0 || c.kq == 0 || c.c_i == 0 || c.c_o == 0 || c.stride == 0) throw FormatError("conv dims must be positive");
    return c;
  }
  if (type == "fc") {
    nn::Fc f;
    f.n_i = j.at("in").get<std::size_t>();
    f.n_o = j.at("out").get<std::size_t>();
    if (f.n_i == 0 || f.n_o == 0) throw FormatError("fc dims must be positive");
    return f;
  }
  if (type == "meanpool") {
    const auto r = j.at("region");
    return nn::MeanPool{r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()};
  }
  return nn::Activation{nn::act_from_string(type)};
}

inline json network_to_json(const nn::NetworkSpec& net) {
  json j;
  j["format"] = "cheetah-net/1";
  j["name"] = net.name;
  j["input"] = {net.input.c, net.input.h, net.input.w};
  j["layers"] = json::array();
  for (const auto& l : net.layers) j["layers"].push_back(layer_to_json(l));
  return j;
}

inline nn::NetworkSpec network_from_json(const json& j) {
  nn::NetworkSpec net;
  net.name = j.value("name", std::string("unnamed"));
  const auto in = j.at("input");
  if (in.size() != 3) throw FormatError("input must be [c, h, w]");
  net.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
  for (const auto& lj : j.at("layers")) net.layers.push_back(layer_from_json(lj));
  return net;
}

/// Write manifest.json plus one tensor file per weight and bias.
inline void save_network(const fs::path& dir, const nn::NetworkSpec& net) {
  fs::create_directories(dir);
  json j = network_to_json(net);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    auto put = [&](const std::string& key, const nn::Tensor& t) {
      const std::string file = "layer" + std::to_string(i) + "_" + key + ".chtw";
      save_tensor(dir / file, t);
      j["layers"][i][key] = file;
    };
    if (auto* c = std::get_if<nn::Conv>(&l)) {
      if (!c->weight.data.empty()) put("weights", c->weight);
      if (c->bias) put("bias", nn::Tensor({c->c_o}, *c->bias));
    } else if (auto* f = std::get_if<nn::Fc>(&l)) {
      if (!f->weight.data.empty()) put("weights", f->weight);
      if (f->bias) put("bias", nn::Tensor({f->n_o}, *f->bias));
    }
  }
  const std::string text = j.dump(2) + "\n";
  write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Write a weight-free manifest for the client.
inline void save_public_manifest(const fs::path& path, const nn::NetworkSpec& net) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const std::string text = network_to_json(net.public_view()).dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Load a manifest. A directory argument means <dir>/manifest.json. Weights are loaded when referenced.
inline nn::NetworkSpec load_network(const fs::path& path_in) {
  const fs::path path = fs::is_directory(path_in) ? path_in / "manifest.json" : path_in;
  const fs::path dir = path.parent_path();
  json j;
  try {
    const auto raw = read_file(path);
    j = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  nn::NetworkSpec net;
  try {
    net = network_from_json(j);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const auto& lj = j.at("layers").at(i);
      if (auto* c = std::get_if<nn::Conv>(&net.layers[i])) {
        if (lj.contains("weights")) c->weight = load_tensor(dir / lj["weights"].get<std::string>());
        if (lj.contains("bias")) c->bias = load_tensor(dir / lj["bias"].get<std::string>()).data;
      } else if (auto* f = std::get_if<nn::Fc>(&net.layers[i])) {
        if (lj.contains("weights")) f->weight = load_tensor(dir / lj["weights"].get<std::string>());
        if (lj.contains("bias")) f->bias = load_tensor(dir / lj["bias"].get<std::string>()).data;
      }
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + path.string() + ": " + e.what());
  }
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return net;
}

}  // namespace cheetah::io
