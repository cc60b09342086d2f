#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "cheetah/bytes.hpp"

namespace cheetah::wire {

enum class MsgType : std::uint8_t {
  hello = 1,
  ct_upload = 2,
  blinded_linear = 3,
  indicators = 4,
  nonlinear_share = 5,
  result = 6,
  error = 7,
};

/// Which offline vector an INDICATORS message carries.
enum class Which : std::uint8_t { id1 = 0, id2 = 1, e_r1 = 2, v_vec = 3, r2 = 4 };

enum class ErrorCode : std::uint16_t {
  digest_mismatch = 1,
  out_of_order = 2,
  malformed = 3,
  internal = 4,
};

inline std::string_view to_string(MsgType t) {
  switch (t) {
    case MsgType::hello: return "HELLO";
    case MsgType::ct_upload: return "CT_UPLOAD";
    case MsgType::blinded_linear: return "BLINDED_LINEAR";
    case MsgType::indicators: return "INDICATORS";
    case MsgType::nonlinear_share: return "NONLINEAR_SHARE";
    case MsgType::result: return "RESULT";
    case MsgType::error: return "ERROR";
  }
  return "UNKNOWN";
}

inline std::string_view to_string(Which w) {
  switch (w) {
    case Which::id1: return "ID1";
    case Which::id2: return "ID2";
    case Which::e_r1: return "E_R1";
    case Which::v_vec: return "V_VEC";
    case Which::r2: return "R2";
  }
  return "?";
}

/// A protocol failure carrying the wire error code.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/// One decoded message. Fields not used by a type stay at their defaults.
struct Message {
  MsgType type = MsgType::hello;
  std::uint64_t params_digest = 0;   // HELLO
  std::uint64_t network_digest = 0;  // HELLO
  std::uint32_t layer = 0;           // CT_UPLOAD, BLINDED_LINEAR, INDICATORS, NONLINEAR_SHARE
  std::uint8_t sub = 0;              // INDICATORS: Which; NONLINEAR_SHARE: part
  std::uint32_t seq = 0;             // all ciphertext-carrying types
  Bytes ct;
  ErrorCode code = ErrorCode::internal;  // ERROR
  std::string text;                      // ERROR

  static Message hello(std::uint64_t params, std::uint64_t network) {
    Message m;
    m.type = MsgType::hello;
    m.params_digest = params;
    m.network_digest = network;
    return m;
  }
  static Message ciphertext(MsgType type, std::uint32_t layer, std::uint32_t seq, Bytes ct, std::uint8_t sub = 0) {
    Message m;
    m.type = type;
    m.layer = layer;
    m.seq = seq;
    m.sub = sub;
    m.ct = std::move(ct);
    return m;
  }
  static Message indicators(std::uint32_t layer, Which which, std::uint32_t seq, Bytes ct) {
    return ciphertext(MsgType::indicators, layer, seq, std::move(ct), static_cast<std::uint8_t>(which));
  }
  static Message result(std::uint32_t seq, Bytes ct) { return ciphertext(MsgType::result, 0, seq, std::move(ct)); }
  static Message error(ErrorCode code, std::string text) {
    Message m;
    m.type = MsgType::error;
    m.code = code;
    m.text = std::move(text);
    return m;
  }

  Which which() const { return static_cast<Which>(sub); }
  std::uint8_t part() const { return sub; }

  friend bool operator==(const Message&, const Message&) = default;
};

inline constexpr std::string_view kMagic = "CHTA";
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 10;  // magic, version, type, length
inline constexpr std::size_t kTrailerBytes = 4;  // crc32
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

inline std::size_t payload_size(const Message& m) {
  switch (m.type) {
    case MsgType::hello: return 16;
    case MsgType::ct_upload:
    case MsgType::blinded_linear: return 8 + m.ct.size();
    case MsgType::indicators:
    case MsgType::nonlinear_share: return 9 + m.ct.size();
    case MsgType::result: return 4 + m.ct.size();
    case MsgType::error: return 2 + m.text.size();
  }
  return 0;
}

inline std::size_t frame_size(const Message& m) { return kHeaderBytes + payload_size(m) + kTrailerBytes; }

inline Bytes encode_payload(const Message& m) {
  Bytes out;
  out.reserve(payload_size(m));
  ByteWriter w(out);
  switch (m.type) {
    case MsgType::hello:
      w.u64(m.params_digest);
      w.u64(m.network_digest);
      break;
    case MsgType::ct_upload:
    case MsgType::blinded_linear:
      w.u32(m.layer);
      w.u32(m.seq);
      w.raw(m.ct);
      break;
    case MsgType::indicators:
    case MsgType::nonlinear_share:
      w.u32(m.layer);
      w.u8(m.sub);
      w.u32(m.seq);
      w.raw(m.ct);
      break;
    case MsgType::result:
      w.u32(m.seq);
      w.raw(m.ct);
      break;
    case MsgType::error:
      w.u16(static_cast<std::uint16_t>(m.code));
      w.raw(m.text);
      break;
  }
  return out;
}

inline Message decode_payload(std::uint8_t type_byte, std::span<const std::uint8_t> payload) {
  if (type_byte < 1 || type_byte > 7) {
    throw ProtocolError(ErrorCode::malformed, "unknown message type " + std::to_string(type_byte));
  }
  Message m;
  m.type = static_cast<MsgType>(type_byte);
  try {
    ByteReader r(payload);
    auto take_ct = [&] {
      const auto rest = r.rest();
      m.ct.assign(rest.begin(), rest.end());
    };
    switch (m.type) {
      case MsgType::hello:
        m.params_digest = r.u64();
        m.network_digest = r.u64();
        if (r.remaining() != 0) throw DecodeError("trailing bytes in HELLO");
        break;
      case MsgType::ct_upload:
      case MsgType::blinded_linear:
        m.layer = r.u32();
        m.seq = r.u32();
        take_ct();
        break;
      case MsgType::indicators:
        m.layer = r.u32();
        m.sub = r.u8();
        if (m.sub > static_cast<std::uint8_t>(Which::r2)) throw DecodeError("unknown indicator kind");
        m.seq = r.u32();
        take_ct();
        break;
      case MsgType::nonlinear_share:
        m.layer = r.u32();
        m.sub = r.u8();
        m.seq = r.u32();
        take_ct();
        break;
      case MsgType::result:
        m.seq = r.u32();
        take_ct();
        break;
      case MsgType::error: {
        m.code = static_cast<ErrorCode>(r.u16());
        const auto rest = r.rest();
        m.text.assign(rest.begin(), rest.end());
        break;
      }
    }
  } catch (const DecodeError& e) {
    throw ProtocolError(ErrorCode::malformed, std::string(to_string(m.type)) + ": " + e.what());
  }
  return m;
}

inline Bytes frame_encode(const Message& m) {
  const Bytes payload = encode_payload(m);
  if (payload.size() > kMaxPayload) throw ProtocolError(ErrorCode::internal, "payload too large");
  Bytes out;
  out.reserve(kHeaderBytes + payload.size() + kTrailerBytes);
  ByteWriter w(out);
  w.raw(kMagic);
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  // CRC covers the type byte and the payload.
  const std::uint8_t type_byte[1] = {static_cast<std::uint8_t>(m.type)};
  w.u32(crc32_of(payload, crc32_of(type_byte)));
  return out;
}

struct FrameHeader {
  std::uint8_t type = 0;
  std::uint32_t length = 0;
};

inline FrameHeader parse_header(std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderBytes) throw ProtocolError(ErrorCode::malformed, "truncated frame header");
  if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) throw ProtocolError(ErrorCode::malformed, "bad frame magic");
  if (header[4] != kVersion) {
    throw ProtocolError(ErrorCode::malformed, "unsupported frame version " + std::to_string(header[4]));
  }
  ByteReader r(header.subspan(6, 4));
  FrameHeader h{header[5], r.u32()};
  if (h.length > kMaxPayload) throw ProtocolError(ErrorCode::malformed, "frame length exceeds limit");
  return h;
}

/// Decode the frame body (payload followed by the CRC) for an already parsed header.
inline Message finish_frame(const FrameHeader& h, std::span<const std::uint8_t> body) {
  if (body.size() != static_cast<std::size_t>(h.length) + kTrailerBytes) {
    throw ProtocolError(ErrorCode::malformed, "frame length mismatch");
  }
  const auto payload = body.first(h.length);
  ByteReader tail(body.last(kTrailerBytes));
  const std::uint32_t crc_wire = tail.u32();
  const std::uint8_t type_byte[1] = {h.type};
  if (crc32_of(payload, crc32_of(type_byte)) != crc_wire) throw ProtocolError(ErrorCode::malformed, "frame CRC mismatch");
  return decode_payload(h.type, payload);
}

inline Message frame_decode(std::span<const std::uint8_t> frame) {
  const auto h = parse_header(frame);
  return finish_frame(h, frame.subspan(kHeaderBytes));
}

}  // namespace cheetah::wire
