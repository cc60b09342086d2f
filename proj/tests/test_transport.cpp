#include <gtest/gtest.h>

#include "cheetah/transport.hpp"

using namespace cheetah;
using namespace cheetah::net;
using phe::ClearBackend;
using phe::Owner;
using phe::PheParams;
using phe::RlweBackend;
using wire::ErrorCode;
using wire::Message;
using wire::MsgType;

namespace {

const PheParams& params() {
  static const PheParams p = PheParams::make();
  return p;
}

std::shared_ptr<const phe::RlweContext> ctx() {
  static auto c = std::make_shared<const phe::RlweContext>(params());
  return c;
}

fp::FpParams fixed() { return {10, params().p, 16.0}; }

Endpoint any_port() { return {"127.0.0.1", 0}; }

/// Runs `server.serve(handler, sessions)` on a thread for the lifetime of the object.
struct Running {
  Server server{any_port()};
  std::thread thread;

  Running(Server::Handler h, std::size_t sessions) {
    thread = std::thread([this, h, sessions] { server.serve(h, sessions); });
  }
  ~Running() {
    if (thread.joinable()) thread.join();
  }
  Endpoint endpoint() const { return {"127.0.0.1", server.port()}; }
};

template <class B>
Server::Handler protocol_handler(const nn::NetworkSpec& net, B be, std::uint64_t seed, SessionSummary* out = nullptr) {
  return [net, be, seed, out](SocketChannel& ch) {
    proto::ServerSession<B> session(net, fixed(), be, be.keygen(Owner::server, 2), seed);
    auto s = serve_session(session, ch);
    if (out) *out = s;
  };
}

}  // namespace

TEST(Endpoint, Parse) {
  EXPECT_EQ(parse_endpoint("").to_string(), "127.0.0.1:7462");
  EXPECT_EQ(parse_endpoint("10.0.0.2:9000").to_string(), "10.0.0.2:9000");
  EXPECT_EQ(parse_endpoint(":81").to_string(), "127.0.0.1:81");
  EXPECT_EQ(parse_endpoint("8080").to_string(), "127.0.0.1:8080");
  EXPECT_EQ(parse_endpoint("example.org").to_string(), "example.org:7462");
  EXPECT_THROW(parse_endpoint("h:99999"), std::invalid_argument);
  EXPECT_THROW(parse_endpoint("h:12x"), std::invalid_argument);
}

TEST(Endpoint, EnvironmentFallback) {
  ::setenv("CHEETAH_ADDR", "127.0.0.1:9911", 1);
  EXPECT_EQ(resolve_endpoint("").port, 9911);
  EXPECT_EQ(resolve_endpoint(":1234").port, 1234);
  ::unsetenv("CHEETAH_ADDR");
  EXPECT_EQ(resolve_endpoint("").port, kDefaultPort);
}

TEST(Socket, HelloEcho) {
  Running r(
      [](SocketChannel& ch) {
        while (auto m = ch.try_receive()) ch.send(*m);
      },
      1);
  auto ch = connect(r.endpoint());
  EXPECT_EQ(ch.counters().sent, 0u);
  const auto hello = Message::hello(11, 22);
  ch.send(hello);
  EXPECT_EQ(ch.receive(), hello);
  EXPECT_EQ(ch.counters().sent, wire::frame_size(hello));
  EXPECT_EQ(ch.counters().received, wire::frame_size(hello));
  EXPECT_EQ(ch.counters().sent_by_type.at("HELLO"), wire::frame_size(hello));
}

TEST(Socket, NetASessionMatchesInProcessRun) {
  const auto net = nn::gen_random_network("netA", 5);
  const auto x = nn::random_input(net.input, 6);
  SessionSummary summary;
  Running r(protocol_handler(net, RlweBackend(ctx(), 2), 4, &summary), 1);
  proto::ClientSession<RlweBackend> client(net.public_view(), fixed(), RlweBackend(ctx(), 1),
                                           RlweBackend(ctx(), 0).keygen(Owner::client, 1), 3);
  auto ch = connect(r.endpoint());
  const auto remote = client.run(ch, x);
  ch.close();
  r.thread.join();

  proto::Seeds seeds;
  seeds.server_blind = 4;
  seeds.client_blind = 3;
  const auto local = proto::run_secure_inference(net, x, RlweBackend(ctx(), 1), RlweBackend(ctx(), 2), fixed(), seeds);
  EXPECT_EQ(remote.output, local.output);
  EXPECT_TRUE(summary.ok) << summary.error;
  std::uint64_t tallied = remote.totals.offline_up + remote.totals.offline_down;
  for (const auto& s : remote.stages) tallied += s.bytes_up + s.bytes_down;
  EXPECT_EQ(tallied, ch.counters().sent + ch.counters().received);
  EXPECT_EQ(summary.bytes.sent, ch.counters().received);
  EXPECT_EQ(summary.bytes.received, ch.counters().sent);
  for (const auto& s : summary.stages) EXPECT_EQ(s.server.perm, 0u);
}

TEST(Socket, DigestMismatchSurfacesCodeOne) {
  const auto net = nn::gen_random_network("tiny", 1);
  const auto other = nn::gen_random_network("netA", 1);
  SessionSummary summary;
  Running r(protocol_handler(other, ClearBackend(params()), 4, &summary), 1);
  proto::ClientSession<ClearBackend> client(net.public_view(), fixed(), ClearBackend(params()),
                                            ClearBackend(params()).keygen(Owner::client, 1), 3);
  auto ch = connect(r.endpoint());
  try {
    client.run(ch, nn::random_input(net.input, 1));
    FAIL() << "expected a protocol error";
  } catch (const wire::ProtocolError& e) {
    EXPECT_EQ(e.code(), ErrorCode::digest_mismatch);
  }
  ch.close();
  r.thread.join();
  EXPECT_FALSE(summary.ok);
}

TEST(Socket, ResetMidProtocolAbortsClient) {
  const auto net = nn::gen_random_network("tiny", 1);
  Running r(
      [](SocketChannel& ch) {
        ch.receive();
        ch.close();
      },
      1);
  proto::ClientSession<ClearBackend> client(net.public_view(), fixed(), ClearBackend(params()),
                                            ClearBackend(params()).keygen(Owner::client, 1), 3);
  auto ch = connect(r.endpoint());
  EXPECT_THROW(client.run(ch, nn::random_input(net.input, 1)), TransportError);
}

TEST(Socket, ServerSurvivesClientVanishing) {
  const auto net = nn::gen_random_network("tiny", 1);
  SessionSummary summary;
  Running r(protocol_handler(net, ClearBackend(params()), 4, &summary), 1);
  {
    auto ch = connect(r.endpoint());
    ch.send(Message::hello(params().digest(), net.digest()));
    ch.receive();
  }
  r.thread.join();
  EXPECT_FALSE(summary.ok);
  EXPECT_FALSE(summary.error.empty());
}

TEST(Socket, CorruptFrameGetsErrorReply) {
  const auto net = nn::gen_random_network("tiny", 1);
  SessionSummary summary;
  Running r(protocol_handler(net, ClearBackend(params()), 4, &summary), 1);
  auto ch = connect(r.endpoint());
  auto frame = wire::frame_encode(Message::hello(params().digest(), net.digest()));
  frame.back() ^= 1;
  ch.send_bytes(frame);
  const auto reply = ch.receive();
  EXPECT_EQ(reply.type, MsgType::error);
  EXPECT_EQ(reply.code, ErrorCode::malformed);
  ch.close();
  r.thread.join();
  EXPECT_FALSE(summary.ok);
}

TEST(Socket, ConcurrentSessions) {
  const auto net = nn::gen_random_network("tiny", 7);
  Running r(protocol_handler(net, ClearBackend(params()), 4), 3);
  std::vector<std::vector<double>> outs(3);
  std::vector<std::thread> clients;
  for (int i = 0; i < 3; ++i) {
    clients.emplace_back([&, i] {
      proto::ClientSession<ClearBackend> client(net.public_view(), fixed(), ClearBackend(params()),
                                                ClearBackend(params()).keygen(Owner::client, 1), 10 + i);
      auto ch = connect(r.endpoint());
      outs[i] = client.run(ch, nn::random_input(net.input, 8)).output;
    });
  }
  for (auto& t : clients) t.join();
  r.thread.join();
  const auto ref = nn::infer_ref(net, nn::random_input(net.input, 8));
  for (const auto& o : outs) {
    ASSERT_EQ(o.size(), ref.size());
    for (std::size_t k = 0; k < o.size(); ++k) EXPECT_NEAR(o[k], ref[k], 1e-2);
  }
}
