#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cheetah/protocol.hpp"
#include "cheetah/wire.hpp"

namespace cheetah::net {

inline constexpr std::uint16_t kDefaultPort = 7462;

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = kDefaultPort;

  std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// "host:port", "host", ":port" or "port". Empty means the default.
inline Endpoint parse_endpoint(std::string_view s) {
  Endpoint e;
  if (s.empty()) return e;
  const auto colon = s.rfind(':');
  std::string_view host = s, port;
  if (colon != std::string_view::npos) {
    host = s.substr(0, colon);
    port = s.substr(colon + 1);
  } else if (s.find_first_not_of("0123456789") == std::string_view::npos) {
    host = {};
    port = s;
  }
  if (!host.empty()) e.host = std::string(host);
  if (!port.empty()) {
    unsigned long v = 0;
    try {
      std::size_t used = 0;
      v = std::stoul(std::string(port), &used);
      if (used != port.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::invalid_argument("bad port in address '" + std::string(s) + "'");
    }
    if (v > 65535) throw std::invalid_argument("port out of range in '" + std::string(s) + "'");
    e.port = static_cast<std::uint16_t>(v);
  }
  return e;
}

/// Flag value if given, else CHEETAH_ADDR, else the default endpoint.
inline Endpoint resolve_endpoint(const std::string& flag) {
  if (!flag.empty()) return parse_endpoint(flag);
  if (const char* env = std::getenv("CHEETAH_ADDR"); env && *env) return parse_endpoint(env);
  return {};
}

struct ByteCounters {
  std::uint64_t sent = 0, received = 0;
  std::map<std::string, std::uint64_t> sent_by_type, received_by_type;
};

namespace detail {

inline void write_all(int fd, std::span<const std::uint8_t> data) {
  while (!data.empty()) {
    const ssize_t k = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    data = data.subspan(static_cast<std::size_t>(k));
  }
}

/// Returns false on a clean end of stream before any byte was read.
inline bool read_all(int fd, std::span<std::uint8_t> out, bool eof_ok) {
  std::size_t got = 0;
  while (got < out.size()) {
    const ssize_t k = ::recv(fd, out.data() + got, out.size() - got, 0);
    if (k < 0) {
      if (errno == EINTR) continue;
      throw TransportError(std::string("receive failed: ") + std::strerror(errno));
    }
    if (k == 0) {
      if (got == 0 && eof_ok) return false;
      throw TransportError("connection closed mid-frame");
    }
    got += static_cast<std::size_t>(k);
  }
  return true;
}

}  // namespace detail

/// A framed, blocking, duplex message stream over a connected socket.
class SocketChannel : public proto::Channel {
 public:
  explicit SocketChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  SocketChannel(const SocketChannel&) = delete;
  SocketChannel& operator=(const SocketChannel&) = delete;
  SocketChannel(SocketChannel&& o) noexcept : fd_(std::exchange(o.fd_, -1)), counters_(std::move(o.counters_)) {}
  ~SocketChannel() override { close(); }

  void send(const wire::Message& m) override {
    const auto frame = wire::frame_encode(m);
    detail::write_all(fd_, frame);
    counters_.sent += frame.size();
    counters_.sent_by_type[std::string(wire::to_string(m.type))] += frame.size();
  }

  /// Write pre-encoded bytes as they are; used to inject damaged frames in tests.
  void send_bytes(std::span<const std::uint8_t> bytes) {
    detail::write_all(fd_, bytes);
    counters_.sent += bytes.size();
  }

  wire::Message receive() override {
    auto m = try_receive();
    if (!m) throw TransportError("connection closed by peer");
    return std::move(*m);
  }

  /// Like receive(), but a clean close between frames yields nullopt.
  std::optional<wire::Message> try_receive() {
    std::array<std::uint8_t, wire::kHeaderBytes> header{};
    if (!detail::read_all(fd_, header, true)) return std::nullopt;
    const auto h = wire::parse_header(header);
    std::vector<std::uint8_t> body(h.length + wire::kTrailerBytes);
    detail::read_all(fd_, body, false);
    auto m = wire::finish_frame(h, body);
    const std::size_t size = header.size() + body.size();
    counters_.received += size;
    counters_.received_by_type[std::string(wire::to_string(m.type))] += size;
    return m;
  }

  void close() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

  const ByteCounters& counters() const { return counters_; }

 private:
  int fd_ = -1;
  ByteCounters counters_;
};

inline SocketChannel connect(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + ep.to_string() + ": " + ::gai_strerror(rc));
  }
  std::string last = "no addresses";
  for (auto* a = res; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      return SocketChannel(fd);
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw TransportError("cannot connect to " + ep.to_string() + ": " + last);
}

/// Listening socket that runs one handler thread per accepted connection.
class Server {
 public:
  using Handler = std::function<void(SocketChannel&)>;

  explicit Server(const Endpoint& ep) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const char* host = ep.host.empty() ? nullptr : ep.host.c_str();
    if (int rc = ::getaddrinfo(host, std::to_string(ep.port).c_str(), &hints, &res); rc != 0) {
      throw TransportError("cannot resolve " + ep.to_string() + ": " + ::gai_strerror(rc));
    }
    for (auto* a = res; a && fd_ < 0; a = a->ai_next) {
      const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
        fd_ = fd;
      } else {
        ::close(fd);
      }
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw TransportError("cannot listen on " + ep.to_string() + ": " + std::strerror(errno));
  }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() {
    stop();
    join();
    ::close(fd_);
  }

  /// Bound port (useful when listening on port 0).
  std::uint16_t port() const {
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&ss), &len);
    if (ss.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
    return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  }

  /// Accept connections until stop() or until `max_sessions` have been accepted (0 = unlimited).
  /// Each connection gets its own thread; returns after all handler threads finish.
  void serve(const Handler& handler, std::size_t max_sessions = 0) {
    std::size_t accepted = 0;
    while (!stopping_ && (max_sessions == 0 || accepted < max_sessions)) {
      const int c = ::accept(fd_, nullptr, nullptr);
      if (c < 0) {
        if (errno == EINTR) continue;
        if (stopping_) break;
        throw TransportError(std::string("accept failed: ") + std::strerror(errno));
      }
      ++accepted;
      std::lock_guard lock(mu_);
      threads_.emplace_back([handler, c] {
        SocketChannel ch(c);
        handler(ch);
      });
    }
    join();
  }

  /// Unblocks serve(); safe to call from another thread.
  void stop() {
    stopping_ = true;
    ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  void join() {
    std::vector<std::thread> ts;
    {
      std::lock_guard lock(mu_);
      ts.swap(threads_);
    }
    for (auto& t : ts)
      if (t.joinable()) t.join();
  }

  int fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::vector<std::thread> threads_;
};

struct SessionSummary {
  bool ok = false;
  std::string error;
  ByteCounters bytes;
  std::vector<proto::StageStats> stages;
};

/// Drive a server session over a socket until it finishes, fails, or the peer goes away.
template <class B>
SessionSummary serve_session(proto::ServerSession<B>& session, SocketChannel& ch) {
  SessionSummary s;
  try {
    while (!session.finished() && !session.failed()) {
      auto m = ch.try_receive();
      if (!m) throw TransportError("client closed the connection mid-protocol");
      for (const auto& r : session.on_message(*m)) {
        ch.send(r);
        if (r.type == wire::MsgType::error) s.error = r.text;
      }
    }
    s.ok = session.finished();
  } catch (const wire::ProtocolError& e) {
    // Frame-level damage: tell the client if the socket still works.
    s.error = e.what();
    try {
      ch.send(wire::Message::error(e.code(), e.what()));
    } catch (const std::exception&) {
    }
  } catch (const std::exception& e) {
    s.error = e.what();
  }
  s.bytes = ch.counters();
  s.stages = session.stats();
  return s;
}

}  // namespace cheetah::net
