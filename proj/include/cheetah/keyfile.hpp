#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cheetah/bytes.hpp"
#include "cheetah/model_io.hpp"
#include "cheetah/phe.hpp"

namespace cheetah::keys {

// Layout (little endian):
//   "CHKY" | version u8 | role u8 | reserved u16 | n u32 | p u64 | q0 u64 | q1 u64 | sigma*1e6 u64 | seed u64
//   | n ternary coefficients as i8 | crc32 u32 over everything before it
inline constexpr std::string_view kMagic = "CHKY";
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 4 + 1 + 1 + 2 + 4 + 8 * 5;

struct KeyFile {
  phe::PheParams params;
  phe::SecretKey key;
  std::uint64_t seed = 0;
};

inline Bytes encode_key(const KeyFile& k) {
  Bytes out;
  ByteWriter w(out);
  w.raw(kMagic);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(k.key.owner));
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(k.params.n));
  w.u64(k.params.p);
  w.u64(k.params.q[0]);
  w.u64(k.params.q[1]);
  w.u64(static_cast<std::uint64_t>(std::llround(k.params.sigma * 1e6)));
  w.u64(k.seed);
  for (auto c : k.key.coeffs) w.u8(static_cast<std::uint8_t>(c));
  w.u32(crc32_of(out));
  return out;
}

inline KeyFile decode_key(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes + 4) throw io::FormatError("key file too short");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  if (tail.u32() != crc32_of(body)) throw io::FormatError("key file checksum mismatch");
  ByteReader r(body);
  const auto magic = r.raw(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != kMagic) throw io::FormatError("not a key file");
  if (r.u8() != kVersion) throw io::FormatError("unsupported key file version");
  const auto role = r.u8();
  if (role > 1) throw io::FormatError("bad role in key file");
  r.u16();
  KeyFile k;
  k.key.owner = static_cast<phe::Owner>(role);
  k.params.n = r.u32();
  k.params.p = r.u64();
  k.params.q[0] = r.u64();
  k.params.q[1] = r.u64();
  k.params.sigma = static_cast<double>(r.u64()) / 1e6;
  k.seed = r.u64();
  if (r.remaining() != k.params.n) throw io::FormatError("key length does not match n");
  for (auto b : r.rest()) {
    const auto c = static_cast<std::int8_t>(b);
    if (c < -1 || c > 1) throw io::FormatError("key coefficient out of range");
    k.key.coeffs.push_back(c);
  }
  try {
    k.params.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("key file parameters rejected: ") + e.what());
  }
  return k;
}

inline void save_key(const std::filesystem::path& path, const KeyFile& k) { io::write_file(path, encode_key(k)); }

inline KeyFile load_key(const std::filesystem::path& path) { return decode_key(io::read_file(path)); }

/// Parameter file: either {"n", "p_bits", "q_bits"} to search for primes, or explicit {"n", "p", "q": [q0, q1], "sigma"}.
inline phe::PheParams params_from_json(const nlohmann::json& j) {
  try {
    phe::PheParams p;
    if (j.contains("p")) {
      p.n = j.at("n").get<std::size_t>();
      p.p = j.at("p").get<std::uint64_t>();
      const auto q = j.at("q");
      if (q.size() != 2) throw io::FormatError("q must list two primes");
      p.q = {q.at(0).get<std::uint64_t>(), q.at(1).get<std::uint64_t>()};
      p.sigma = j.value("sigma", 3.2);
      p.validate();
    } else {
      p = phe::PheParams::make(j.value("n", std::size_t{4096}), j.value("p_bits", 36), j.value("q_bits", 62));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(std::string("malformed parameter file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("invalid parameters: ") + e.what());
  } catch (const std::runtime_error& e) {
    throw io::FormatError(std::string("invalid parameters: ") + e.what());
  }
}

inline nlohmann::json params_to_json(const phe::PheParams& p) {
  return {{"n", p.n}, {"p", p.p}, {"q", {p.q[0], p.q[1]}}, {"sigma", p.sigma}};
}

inline phe::PheParams load_params(const std::filesystem::path& path) {
  const auto raw = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError("malformed parameter file " + path.string() + ": " + e.what());
  }
  return params_from_json(j);
}

}  // namespace cheetah::keys
