#include <gtest/gtest.h>

#include "cheetah/costmodel.hpp"
#include "cheetah/protocol.hpp"

using namespace cheetah;
using namespace cheetah::cost;

namespace {

CostInput fc(std::size_t n_o, std::size_t n_i, std::size_t n) {
  CostInput in;
  in.layer = LayerKind::fc;
  in.n = n;
  in.n_i = n_i;
  in.n_o = n_o;
  return in;
}

CostInput conv(LayerKind k, std::size_t c_i, std::size_t c_o, std::size_t r, std::size_t side, std::size_t n = 4096) {
  CostInput in;
  in.layer = k;
  in.n = n;
  in.c_i = c_i;
  in.c_o = c_o;
  in.r = r;
  in.in = side;
  return in;
}

}  // namespace

TEST(CostModel, GazelleFcKnownRows) {
  // n_o x n_i with n = 2048: Perm, Mult, Add.
  struct Row { std::size_t n_o, n_i; double perm, mult, add; };
  for (auto r : {Row{1, 2048, 11, 1, 11}, Row{2, 1024, 10, 1, 10}, Row{4, 512, 9, 1, 9}, Row{8, 256, 8, 1, 8},
                 Row{16, 128, 7, 1, 7}}) {
    const auto g = costmodel("gazelle-fc", fc(r.n_o, r.n_i, 2048));
    EXPECT_EQ(g.perm, r.perm) << r.n_o;
    EXPECT_EQ(g.mult, r.mult) << r.n_o;
    EXPECT_EQ(g.add, r.add) << r.n_o;
    const auto c = costmodel("cheetah", fc(r.n_o, r.n_i, 2048));
    EXPECT_EQ(c.perm, 0);
    EXPECT_EQ(c.mult, 1);
    EXPECT_EQ(c.add, 1);
  }
}

TEST(CostModel, CheetahCommunicationAtTenThousandSlots) {
  auto in = fc(1, 2048, 10000);
  in.log_q = 60;
  const auto c = costmodel("cheetah", in);
  EXPECT_EQ(*c.comm_bits, 2.0 * 10000 * 60);
  EXPECT_NEAR(*c.comm_kib() / 143.1, 1.0, 0.05);
  auto siso = conv(LayerKind::siso, 1, 1, 3, 28, 10000);
  EXPECT_EQ(*costmodel("cheetah", siso).comm_bits, *c.comm_bits);
  // Communication does not depend on the FC dimensions.
  for (std::size_t n_o : {2, 4, 8, 16}) {
    auto other = fc(n_o, 2048 / n_o, 10000);
    EXPECT_EQ(*costmodel("cheetah", other).comm_bits, *c.comm_bits);
  }
}

TEST(CostModel, GazelleCommunicationIncludesGarbledCircuit) {
  auto in = fc(1, 2048, 10000);
  const auto g1 = costmodel("gazelle-fc", in);
  in.n_o = 2;
  in.n_i = 1024;
  const auto g2 = costmodel("gazelle-fc", in);
  EXPECT_EQ(*g2.comm_bits - *g1.comm_bits, gc_bits_per_element(in));
  EXPECT_EQ(gc_bits_per_element(in), (100 * 60 + 15 * 20 * 60 + 25) * 20.0);
  EXPECT_FALSE(costmodel("hs-fc", in).comm_bits.has_value());
  EXPECT_FALSE(costmodel("naive-fc", in).comm_bits.has_value());
}

TEST(CostModel, CheetahIsPermFreeEverywhere) {
  for (auto k : {LayerKind::siso, LayerKind::mimo, LayerKind::fc}) {
    for (bool act : {false, true}) {
      CostInput in = k == LayerKind::fc ? fc(10, 100, 4096) : conv(k, k == LayerKind::siso ? 1 : 3, k == LayerKind::siso ? 1 : 4, 3, 16);
      in.with_activation = act;
      EXPECT_EQ(costmodel("cheetah", in).perm, 0) << to_string(k);
    }
  }
}

TEST(CostModel, SisoAndFcWithActivation) {
  auto siso = conv(LayerKind::siso, 1, 1, 3, 16);
  siso.with_activation = true;
  const auto s = costmodel("cheetah", siso);
  EXPECT_EQ(s.mult, 3);
  EXPECT_EQ(s.add, 4);
  auto f = fc(1, 2048, 4096);
  f.with_activation = true;
  const auto c = costmodel("cheetah", f);
  EXPECT_EQ(c.mult, 3);
  EXPECT_EQ(c.add, 4);
}

TEST(CostModel, MimoCeilConvention) {
  auto m = conv(LayerKind::mimo, 4, 2, 3, 8);
  const auto counts = conv_counts(m);
  EXPECT_EQ(counts.channels_per_ct, 7u);  // floor(4096 / (64 * 9))
  EXPECT_EQ(counts.in_cts, 1u);
  m.with_activation = true;
  const auto c = costmodel("cheetah", m);
  EXPECT_EQ(c.mult, 2 * 1 + 2);
  EXPECT_EQ(c.add, 2 * 1 + 2 + 1);
  const auto ir = costmodel("gazelle-ir", m), orr = costmodel("gazelle-or", m);
  EXPECT_EQ(ir.perm, 4 * 9);
  EXPECT_EQ(orr.perm, std::ceil(4.0 * 2 * 9 / 64));
}

TEST(CostModel, GazelleSiso) {
  const auto g = costmodel("gazelle", conv(LayerKind::siso, 1, 1, 5, 28));
  EXPECT_EQ(g.perm, 24);
  EXPECT_EQ(g.mult, 25);
}

TEST(CostModel, RejectsBadInputs) {
  EXPECT_THROW(costmodel("gazelle-fc", conv(LayerKind::mimo, 2, 2, 3, 8)), std::invalid_argument);
  EXPECT_THROW(costmodel("cheetah", fc(0, 10, 4096)), std::invalid_argument);
  EXPECT_THROW(costmodel("cheetah", fc(1, 5000, 4096)), std::invalid_argument);
  EXPECT_THROW(costmodel("cheetah", conv(LayerKind::siso, 2, 1, 3, 8)), std::invalid_argument);
  EXPECT_THROW(costmodel("unknown", fc(1, 10, 4096)), std::invalid_argument);
  EXPECT_THROW(layer_kind_from_string("pool"), std::invalid_argument);
}

TEST(CostModel, LinearCountsMatchMeasuredRuns) {
  const auto& p = phe::PheParams::make();
  const fp::FpParams fpp{10, p.p, 16.0};
  for (const char* t : {"tiny", "netA", "netB"}) {
    const auto net = nn::gen_random_network(t, 3);
    const auto r = proto::run_secure_inference(net, nn::random_input(net.input, 4), phe::ClearBackend(p),
                                               phe::ClearBackend(p), fpp);
    const auto plan = proto::build_plan(net, p.n);
    for (const auto& st : plan.stages) {
      const auto& layer = net.layers[st.linear_layer];
      CostInput in;
      in.n = p.n;
      if (auto* c = std::get_if<nn::Conv>(&layer)) {
        in.layer = LayerKind::mimo;
        in.c_i = c->c_i;
        in.c_o = c->c_o;
        in.r = c->kp;
        in.in = st.in_shape.h;
        in.stride = c->stride;
      } else {
        const auto& f = std::get<nn::Fc>(layer);
        in.layer = LayerKind::fc;
        in.n_i = f.n_i;
        in.n_o = f.n_o;
      }
      const auto model = costmodel("cheetah", in);
      const auto& got = r.stages[st.index].server_linear;
      EXPECT_EQ(static_cast<double>(got.mult()), model.mult) << t << " stage " << st.index;
      EXPECT_EQ(static_cast<double>(got.add()), model.add) << t << " stage " << st.index;
      EXPECT_EQ(got.perm, 0u);
    }
  }
}
