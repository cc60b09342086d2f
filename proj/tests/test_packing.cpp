#include <gtest/gtest.h>

#include <random>
#include <set>

#include "cheetah/packing.hpp"

using namespace cheetah;
using namespace cheetah::pack;
using nn::Conv;
using nn::Shape;
using nn::Tensor;

namespace {

Conv random_conv(std::mt19937_64& rng, std::size_t c_i, std::size_t c_o, std::size_t k, std::size_t stride = 1,
                 nn::Padding pad = nn::Padding::same) {
  Conv c = nn::make_conv(c_i, c_o, k, stride, pad);
  c.weight = Tensor({c_o, c_i, k, k});
  std::uniform_int_distribution<int> d(-8, 8);
  for (auto& v : c.weight.data) v = d(rng) / 4.0;  // dyadic, so sums are exact
  return c;
}

Tensor random_tensor(std::mt19937_64& rng, Shape s) {
  Tensor x(s.dims());
  std::uniform_int_distribution<int> d(-16, 16);
  for (auto& v : x.data) v = d(rng) / 8.0;
  return x;
}

// block_sum(x' o k') for every kernel, with unit blinding.
std::vector<double> packed_conv(const Tensor& x, const Conv& c, std::size_t n) {
  const nn::Layer layer = c;
  LinearLayout lay(layer, {x.c(), x.h(), x.w()}, n);
  const auto xs = lay.expand_input(x);
  std::vector<SlotVector> outs(lay.out_ct_count(), SlotVector(n, 0.0));
  const std::vector<double> ones(lay.output_count(), 1.0);
  for (std::size_t o = 0; o < lay.out_ct_count(); ++o)
    for (const auto& term : lay.terms(layer, o, ones))
      for (std::size_t s = 0; s < n; ++s) outs[o][s] += xs[term.in_ct][s] * term.weights[s];
  return lay.block_sum(outs);
}

}  // namespace

TEST(ConvLayout, TwoByTwoExample) {
  Conv c = nn::make_conv(1, 1, 3);
  auto l = build_conv_layout({1, 2, 2}, c, 64);
  EXPECT_EQ(l.blocks_per_channel, 4u);
  EXPECT_EQ(l.block_size, 9u);
  EXPECT_EQ(l.ct_count, 1u);
  std::size_t non_fill = 0;
  for (std::size_t s = 0; s < 36; ++s) non_fill += !l.entry(0, s).fill;
  EXPECT_EQ(non_fill, 16u);
  for (std::size_t s = 36; s < 64; ++s) EXPECT_TRUE(l.entry(0, s).fill);

  // Non-fill slots reproduce x' = [x11 x12 x21 x22] four times.
  Tensor x({1, 2, 2}, {11, 12, 21, 22});
  auto xs = expand_input(x, l);
  std::vector<double> compressed;
  for (std::size_t s = 0; s < 36; ++s)
    if (!l.entry(0, s).fill) compressed.push_back(xs[0][s]);
  std::vector<double> expected;
  for (int b = 0; b < 4; ++b) expected.insert(expected.end(), {11, 12, 21, 22});
  EXPECT_EQ(compressed, expected);

  // k' of the first two blocks: taps (2,2),(2,3),(3,2),(3,3) then (2,1),(2,2),(3,1),(3,2), 1-based.
  c.weight = Tensor({1, 1, 3, 3});
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t v = 0; v < 3; ++v) c.weight.data[u * 3 + v] = 10.0 * (u + 1) + (v + 1);
  auto ks = expand_kernel(c, 0, l, {1, 1, 1, 1});
  std::vector<double> kc;
  for (std::size_t s = 0; s < 18; ++s)
    if (!l.entry(0, s).fill) kc.push_back(ks[0][s]);
  EXPECT_EQ(kc, (std::vector<double>{22, 23, 32, 33, 21, 22, 31, 32}));
}

TEST(ConvLayout, OneByOneIsIdentity) {
  auto l = build_conv_layout({1, 4, 4}, nn::make_conv(1, 1, 1), 64);
  EXPECT_EQ(l.block_size, 1u);
  Tensor x({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x.data[i] = static_cast<double>(i);
  auto xs = expand_input(x, l);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(xs[0][i], x.data[i]);
}

TEST(ConvLayout, MnistSizedSplitsIntoParts) {
  auto l = build_conv_layout({1, 28, 28}, nn::make_conv(1, 1, 5), 4096);
  EXPECT_EQ(l.blocks_per_channel, 784u);
  EXPECT_EQ(l.block_size, 25u);
  EXPECT_EQ(l.blocks_per_channel * l.block_size, 19600u);
  EXPECT_EQ(l.blocks_per_part, 163u);
  EXPECT_EQ(l.parts, 5u);
  EXPECT_EQ(l.ct_count, 5u);
}

TEST(ConvLayout, KernelLargerThanSlotsRejected) {
  EXPECT_THROW(build_conv_layout({1, 8, 8}, nn::make_conv(1, 1, 5), 16), std::invalid_argument);
}

TEST(ConvLayout, MapIsInjectiveAndInvertible) {
  for (auto [c_i, h, k, stride, n] : std::vector<std::tuple<int, int, int, int, int>>{
           {1, 6, 3, 1, 512}, {3, 5, 3, 1, 512}, {4, 8, 3, 2, 256}, {2, 7, 5, 1, 128}, {5, 4, 1, 1, 16}}) {
    auto l = build_conv_layout({std::size_t(c_i), std::size_t(h), std::size_t(h)},
                               nn::make_conv(c_i, 1, k, stride), n);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::size_t j = 0; j < l.c_i; ++j)
      for (std::size_t i = 0; i < l.blocks_per_channel; ++i)
        for (std::size_t u = 0; u < l.kp; ++u)
          for (std::size_t v = 0; v < l.kq; ++v) {
            auto ref = l.locate(j, i, u, v);
            ASSERT_LT(ref.ct, l.ct_count);
            ASSERT_LT(ref.slot, l.n);
            ASSERT_TRUE(seen.insert({ref.ct, ref.slot}).second);
            auto e = l.entry(ref.ct, ref.slot);
            if (l.input_pos(i, u, v)) {
              ASSERT_FALSE(e.fill);
              EXPECT_EQ(std::tie(e.j, e.i, e.u, e.v), std::tie(j, i, u, v));
            } else {
              EXPECT_TRUE(e.fill);
            }
          }
  }
}

TEST(ExpandInput, MatchesLayoutInverse) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor(rng, {2, 6, 6});
  auto l = build_conv_layout({2, 6, 6}, nn::make_conv(2, 1, 3), 512);
  auto xs = expand_input(x, l);
  for (std::size_t ct = 0; ct < l.ct_count; ++ct)
    for (std::size_t s = 0; s < l.n; ++s) {
      auto e = l.entry(ct, s);
      if (e.fill) {
        EXPECT_EQ(xs[ct][s], 0.0);
      } else {
        auto pos = *l.input_pos(e.i, e.u, e.v);
        EXPECT_EQ(xs[ct][s], x.at(e.j, pos.first, pos.second));
      }
    }
  for (const auto& v : expand_input(Tensor({2, 6, 6}), l))
    for (double s : v) EXPECT_EQ(s, 0.0);
}

TEST(ExpandKernel, BlindingScalesBlocks) {
  Conv c = nn::make_conv(1, 1, 3);
  c.weight = Tensor({1, 1, 3, 3}, 1.0);
  auto l = build_conv_layout({1, 3, 3}, c, 128);
  auto ks = expand_kernel(c, 0, l, std::vector<double>(9, 2.0));
  for (std::size_t s = 0; s < l.n; ++s) EXPECT_EQ(ks[0][s], l.entry(0, s).fill ? 0.0 : 2.0);

  std::mt19937_64 rng(8);
  Conv r = random_conv(rng, 2, 3, 3);
  auto lr = build_conv_layout({2, 4, 4}, r, 256);
  std::vector<double> v(lr.blocks_per_channel);
  for (auto& x : v) x = std::uniform_real_distribution<double>(-2, 2)(rng);
  auto kr = expand_kernel(r, 2, lr, v);
  for (std::size_t ct = 0; ct < lr.ct_count; ++ct)
    for (std::size_t s = 0; s < lr.n; ++s) {
      auto e = lr.entry(ct, s);
      EXPECT_EQ(kr[ct][s], e.fill ? 0.0 : r.k(2, e.j, e.u, e.v) * v[e.i]);
    }
}

TEST(BlockSum, SingleBlockAndFill) {
  nn::Layer fc = nn::make_fc(4, 1);
  LinearLayout l(fc, {4, 1, 1}, 8);
  EXPECT_EQ(l.block_sum({{1, 2, 3, 4, 100, 100, 100, 100}}), std::vector<double>{10});
}

TEST(ConvPacking, BlockSumEqualsReferenceConv) {
  std::mt19937_64 rng(10);
  for (std::size_t h : {2u, 3u, 5u, 8u})
    for (std::size_t w : {2u, 4u, 7u})
      for (std::size_t k : {1u, 3u, 5u})
        for (std::size_t c_i : {1u, 2u, 4u}) {
          if (k > std::min(h, w) + 2) continue;
          Tensor x = random_tensor(rng, {c_i, h, w});
          Conv c = random_conv(rng, c_i, 2, k);
          auto got = packed_conv(x, c, 256);
          auto ref = nn::conv2d_ref(x, c);
          ASSERT_EQ(got, ref.data) << h << "x" << w << " k" << k << " c" << c_i;
        }
}

TEST(ConvPacking, StrideAndValidPadding) {
  std::mt19937_64 rng(12);
  for (auto pad : {nn::Padding::same, nn::Padding::valid}) {
    Tensor x = random_tensor(rng, {2, 9, 9});
    Conv c = random_conv(rng, 2, 3, 3, 2, pad);
    EXPECT_EQ(packed_conv(x, c, 512), nn::conv2d_ref(x, c).data);
  }
}

TEST(ConvPacking, MultiChannelAccumulationAcrossCiphertexts) {
  std::mt19937_64 rng(13);
  // 6 channels of 36 blocks x 9 taps; n = 512 fits one channel per ct, so six groups accumulate.
  Tensor x = random_tensor(rng, {6, 6, 6});
  Conv c = random_conv(rng, 6, 2, 3);
  const nn::Layer layer = c;
  LinearLayout lay(layer, {6, 6, 6}, 512);
  EXPECT_EQ(lay.conv().channels_per_ct, 1u);
  EXPECT_EQ(lay.in_ct_count(), 6u);
  EXPECT_EQ(packed_conv(x, c, 512), nn::conv2d_ref(x, c).data);
  // Parts and channel packing together: n = 64 splits each channel into parts.
  EXPECT_EQ(packed_conv(x, c, 64), nn::conv2d_ref(x, c).data);
  // Several channels per ciphertext.
  Tensor small = random_tensor(rng, {3, 3, 3});
  Conv c3 = random_conv(rng, 3, 2, 3);
  LinearLayout lay3(nn::Layer(c3), {3, 3, 3}, 256);
  EXPECT_EQ(lay3.conv().channels_per_ct, 3u);
  EXPECT_EQ(packed_conv(small, c3, 256), nn::conv2d_ref(small, c3).data);
}

TEST(FcLayout, SmallExample) {
  auto l = build_fc_layout(4, 2, 16);
  EXPECT_EQ(l.rows_per_ct, 4u);
  EXPECT_EQ(l.ct_count, 1u);
  auto x = expand_fc_input({1, 2, 3, 4}, l);
  EXPECT_EQ(x, (SlotVector{1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4, 1, 2, 3, 4}));
  auto l2 = build_fc_layout(2048, 2, 4096);
  EXPECT_EQ(l2.rows_per_ct, 2u);
  EXPECT_EQ(l2.ct_count, 1u);
  EXPECT_THROW(build_fc_layout(5000, 1, 4096), std::invalid_argument);
}

TEST(FcLayout, IdentityWeightsReproduceInput) {
  nn::Fc f = nn::make_fc(4, 4);
  f.weight = Tensor({4, 4});
  for (int i = 0; i < 4; ++i) f.weight.data[i * 5] = 1;
  auto l = build_fc_layout(4, 4, 16);
  auto w = expand_fc_weights(f, l, {1, 1, 1, 1});
  auto x = expand_fc_input({5, 6, 7, 8}, l);
  SlotVector prod(16);
  for (int s = 0; s < 16; ++s) prod[s] = w[0][s] * x[s];
  LinearLayout lay(nn::Layer(f), {4, 1, 1}, 16);
  EXPECT_EQ(lay.block_sum({prod}), (std::vector<double>{5, 6, 7, 8}));
}

TEST(FcPacking, BlockSumEqualsReference) {
  std::mt19937_64 rng(14);
  for (auto [n_i, n_o, n] : std::vector<std::tuple<int, int, int>>{{16, 8, 64}, {10, 7, 32}, {64, 3, 64}, {5, 20, 16}}) {
    nn::Fc f = nn::make_fc(n_i, n_o);
    f.weight = Tensor({std::size_t(n_o), std::size_t(n_i)});
    std::uniform_int_distribution<int> d(-8, 8);
    for (auto& v : f.weight.data) v = d(rng) / 4.0;
    Tensor x({std::size_t(n_i), 1, 1});
    for (auto& v : x.data) v = d(rng) / 8.0;
    const nn::Layer layer = f;
    LinearLayout lay(layer, {std::size_t(n_i), 1, 1}, n);
    auto xs = lay.expand_input(x);
    std::vector<SlotVector> outs;
    for (std::size_t o = 0; o < lay.out_ct_count(); ++o) {
      SlotVector acc(n, 0.0);
      for (const auto& t : lay.terms(layer, o, std::vector<double>(n_o, 1.0)))
        for (int s = 0; s < n; ++s) acc[s] += xs[t.in_ct][s] * t.weights[s];
      outs.push_back(acc);
    }
    EXPECT_EQ(lay.block_sum(outs), nn::fc_ref(x, f).data);
  }
}

TEST(BlockSlots, CoverExactlyTheNonFillSlots) {
  Conv c = nn::make_conv(2, 3, 3);
  const nn::Layer layer = c;
  LinearLayout lay(layer, {2, 4, 4}, 256);
  const auto& l = lay.conv();
  std::set<std::pair<std::size_t, std::size_t>> from_blocks;
  for (std::size_t k = 0; k < lay.output_count(); ++k) {
    auto [ct, slots] = lay.block_slots(k);
    for (auto s : slots) EXPECT_TRUE(from_blocks.insert({ct, s}).second);
  }
  std::set<std::pair<std::size_t, std::size_t>> expected;
  for (std::size_t t = 0; t < l.c_o; ++t)
    for (std::size_t ct = 0; ct < l.parts; ++ct)
      for (std::size_t s = 0; s < l.n; ++s)
        if (!l.entry(ct, s).fill) expected.insert({t * l.parts + ct, s});
  EXPECT_EQ(from_blocks, expected);
}

TEST(Compact, PackUnpack) {
  CompactLayout c{8, 19};
  EXPECT_EQ(c.ct_count(), 3u);
  std::vector<double> v(19);
  for (int i = 0; i < 19; ++i) v[i] = i;
  auto cts = c.pack(v);
  EXPECT_EQ(cts[2][2], 18.0);
  EXPECT_EQ(cts[2][3], 0.0);
  EXPECT_EQ(c.unpack(cts), v);
}

TEST(Relayout, ZeroLinearityAndFcPlacement) {
  std::mt19937_64 rng(15);
  const Shape s{2, 4, 4};
  const nn::Layer next = nn::make_conv(2, 1, 3);
  for (const auto& v : relayout_share(std::vector<double>(32, 0.0), s, next, 256))
    for (double x : v) EXPECT_EQ(x, 0.0);
  std::uniform_real_distribution<double> d(-4, 4);
  std::vector<double> a(32), b(32), ab(32);
  for (int i = 0; i < 32; ++i) {
    a[i] = d(rng);
    b[i] = d(rng);
    ab[i] = a[i] + b[i];
  }
  auto ra = relayout_share(a, s, next, 256), rb = relayout_share(b, s, next, 256), rab = relayout_share(ab, s, next, 256);
  for (std::size_t ct = 0; ct < ra.size(); ++ct)
    for (std::size_t k = 0; k < 256; ++k) EXPECT_EQ(ra[ct][k] + rb[ct][k], rab[ct][k]);

  const nn::Layer fc = nn::make_fc(32, 3);
  auto rf = relayout_share(a, s, fc, 128);
  ASSERT_EQ(rf.size(), 1u);
  for (int row = 0; row < 4; ++row)
    for (int j = 0; j < 32; ++j) EXPECT_EQ(rf[0][row * 32 + j], a[j]);
}
