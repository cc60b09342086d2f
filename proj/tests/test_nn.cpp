#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cheetah/model_io.hpp"
#include "cheetah/nn.hpp"

using namespace cheetah;
using namespace cheetah::nn;

namespace {

Conv conv_with(std::size_t c_i, std::size_t c_o, std::size_t k, std::vector<double> w, std::size_t stride = 1,
               Padding pad = Padding::same) {
  Conv c = make_conv(c_i, c_o, k, stride, pad);
  c.weight = Tensor({c_o, c_i, k, k}, std::move(w));
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("cheetah_nn_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Conv2dRef, SamePaddingCorner) {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  auto y = conv2d_ref(x, conv_with(1, 1, 3, std::vector<double>(9, 1.0)));
  EXPECT_EQ(y.dims, (std::vector<std::size_t>{1, 2, 2}));
  EXPECT_EQ(y.at(0, 0, 0), 10.0);
}

TEST(Conv2dRef, FirstOutputUsesBottomRightTaps) {
  // Output (1,1) of the 2x2/3x3 example touches k(2,2), k(2,3), k(3,2), k(3,3) in 1-based terms.
  std::vector<double> k(9);
  for (int i = 0; i < 9; ++i) k[i] = 1 << i;
  Tensor x({1, 2, 2}, {1, 10, 100, 1000});
  auto y = conv2d_ref(x, conv_with(1, 1, 3, k));
  EXPECT_EQ(y.at(0, 0, 0), k[4] * 1 + k[5] * 10 + k[7] * 100 + k[8] * 1000);
}

TEST(Conv2dRef, ZeroKernelAndScaling) {
  std::mt19937_64 rng(1);
  Tensor x({1, 5, 5});
  for (auto& v : x.data) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  auto zero = conv2d_ref(x, conv_with(1, 2, 3, std::vector<double>(18, 0.0)));
  for (double v : zero.data) EXPECT_EQ(v, 0.0);
  auto twice = conv2d_ref(x, conv_with(1, 1, 1, {2.0}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(twice.data[i], 2 * x.data[i]);
}

TEST(Conv2dRef, GeometryAndBias) {
  EXPECT_EQ(axis_geometry(28, 5, 2, Padding::same).out, 14u);
  EXPECT_EQ(axis_geometry(28, 5, 1, Padding::same).out, 28u);
  EXPECT_EQ(axis_geometry(28, 5, 1, Padding::same).pad_before, 2u);
  EXPECT_EQ(axis_geometry(8, 3, 1, Padding::valid).out, 6u);
  EXPECT_EQ(axis_geometry(8, 3, 2, Padding::valid).out, 3u);
  auto c = conv_with(1, 1, 1, {0.0});
  c.bias = std::vector<double>{0.5};
  auto y = conv2d_ref(Tensor({1, 3, 3}, 1.0), c);
  for (double v : y.data) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(conv2d_ref(Tensor({2, 3, 3}), c), std::invalid_argument);
}

TEST(FcRef, IdentityZeroAndOracle) {
  Fc id = make_fc(4, 4);
  id.weight = Tensor({4, 4});
  for (int i = 0; i < 4; ++i) id.weight.data[i * 4 + i] = 1;
  Tensor x({4, 1, 1}, {1, -2, 3, -4});
  EXPECT_EQ(fc_ref(x, id).data, x.data);
  Fc zero = make_fc(4, 3);
  zero.weight = Tensor({3, 4});
  EXPECT_EQ(fc_ref(x, zero).data, std::vector<double>(3, 0.0));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-1, 1);
  Fc f = make_fc(16, 8);
  f.weight = Tensor({8, 16});
  for (auto& v : f.weight.data) v = d(rng);
  Tensor in({16, 1, 1});
  for (auto& v : in.data) v = d(rng);
  auto y = fc_ref(in, f);
  for (int i = 0; i < 8; ++i) {
    double dot = 0;
    for (int j = 0; j < 16; ++j) dot += f.weight.data[i * 16 + j] * in.data[j];
    EXPECT_DOUBLE_EQ(y.data[i], dot);
  }
}

TEST(ActivationRef, Examples) {
  Tensor x({2, 1, 1}, {-1, 2});
  EXPECT_EQ(activation_ref(ActKind::relu, x).data, (std::vector<double>{0, 2}));
  EXPECT_EQ(sigmoid(0.0), 0.5);
  auto sm = activation_ref(ActKind::softmax, Tensor({2, 1, 1}, {3.3, 3.3}));
  EXPECT_EQ(sm.data, (std::vector<double>{0.5, 0.5}));
  EXPECT_NEAR(activation_ref(ActKind::tanh, Tensor({1, 1, 1}, {0.7})).data[0], std::tanh(0.7), 1e-12);
}

TEST(ActivationRef, SoftmaxSumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> d(-8, 8);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(10);
    for (auto& v : x) v = d(rng);
    auto a = softmax(x);
    double sum = 0;
    for (double v : a) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    auto shifted = x;
    for (auto& v : shifted) v += 3.25;
    auto b = softmax(shifted);
    for (int i = 0; i < 10; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(MeanPoolRef, Examples) {
  EXPECT_EQ(meanpool_ref(Tensor({1, 2, 2}, {1, 3, 5, 7}), {2, 2}).data, std::vector<double>{4});
  auto c = meanpool_ref(Tensor({2, 4, 4}, 1.25), {2, 2});
  for (double v : c.data) EXPECT_EQ(v, 1.25);
  Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(meanpool_ref(x, {1, 1}).data, x.data);
  EXPECT_THROW(meanpool_ref(x, {2, 2}), std::invalid_argument);
}

TEST(MeanPoolRef, CommutesWithAffineMaps) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(-4, 4);
  Tensor x({3, 4, 6});
  for (auto& v : x.data) v = d(rng);
  const double a = -1.75, b = 0.5;
  Tensor ax = x;
  for (auto& v : ax.data) v = a * v + b;
  auto lhs = meanpool_ref(ax, {2, 3});
  auto rhs = meanpool_ref(x, {2, 3});
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.data[i], a * rhs.data[i] + b, 1e-12);
}

TEST(InferRef, SingleActivationAndComposition) {
  NetworkSpec relu_only{"r", {1, 2, 2}, {Activation{ActKind::relu}}};
  Tensor x({1, 2, 2}, {-1, 2, -3, 4});
  EXPECT_EQ(infer_ref(relu_only, x), (std::vector<double>{0, 2, 0, 4}));

  auto net = gen_random_network("netA", 3);
  auto in = random_input(net.input, 3);
  auto manual = conv2d_ref(in, std::get<Conv>(net.layers[0]));
  manual = activation_ref(ActKind::relu, manual);
  manual = fc_ref(manual, std::get<Fc>(net.layers[2]));
  manual = activation_ref(ActKind::relu, manual);
  manual = fc_ref(manual, std::get<Fc>(net.layers[4]));
  EXPECT_EQ(infer_ref(net, in), manual.data);
  EXPECT_THROW(infer_ref(net, Tensor()), std::invalid_argument);
}

TEST(Network, TemplatesTypeCheck) {
  auto a = network_template("netA");
  auto shapes = a.shapes();
  EXPECT_EQ(shapes[1], (Shape{5, 14, 14}));
  EXPECT_EQ(shapes.back(), (Shape{10, 1, 1}));
  auto b = network_template("netB");
  EXPECT_EQ(b.input, (Shape{1, 28, 28}));
  EXPECT_EQ(b.shapes()[6], (Shape{16, 7, 7}));
  EXPECT_TRUE(std::holds_alternative<MeanPool>(b.layers[2]));
  EXPECT_NO_THROW(network_template("tiny").validate());
  EXPECT_NO_THROW(network_template("vgghead").validate());
  EXPECT_THROW(network_template("resnet"), std::invalid_argument);
}

TEST(Network, SoftmaxMustBeLast) {
  NetworkSpec net{"s", {4, 1, 1}, {Activation{ActKind::softmax}, Activation{ActKind::relu}}};
  EXPECT_THROW(net.validate(), std::invalid_argument);
}

TEST(Network, DigestIgnoresWeights) {
  auto a = gen_random_network("netA", 1), b = gen_random_network("netA", 2);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(a.digest(), a.public_view().digest());
  EXPECT_NE(a.digest(), gen_random_network("netB", 1).digest());
}

TEST(GenRandomNetwork, DeterministicBoundedAndSeedSensitive) {
  auto a = gen_random_network("netB", 5), a2 = gen_random_network("netB", 5), c = gen_random_network("netB", 6);
  const auto& wa = std::get<Conv>(a.layers[0]).weight;
  EXPECT_EQ(wa, std::get<Conv>(a2.layers[0]).weight);
  EXPECT_NE(wa, std::get<Conv>(c.layers[0]).weight);
  for (const auto& l : a.layers) {
    if (auto* f = std::get_if<Fc>(&l)) {
      for (double v : f->weight.data) EXPECT_LE(std::fabs(v), 1.0);
    }
    if (auto* cv = std::get_if<Conv>(&l)) {
      for (double v : cv->weight.data) EXPECT_LE(std::fabs(v), 1.0);
    }
  }
}

TEST(ModelIo, TensorRoundTripAndCorruption) {
  Tensor t({2, 3}, {1.5, -2.25, 0, 3, 4, -5});
  auto bytes = io::encode_tensor(t);
  EXPECT_EQ(bytes.size(), 16u + 6 * 4 + 4);
  EXPECT_EQ(io::decode_tensor(bytes), t);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 5);
  EXPECT_THROW(io::decode_tensor(truncated), io::FormatError);
  auto flipped = bytes;
  flipped[20] ^= 0x40;
  EXPECT_THROW(io::decode_tensor(flipped), io::FormatError);
}

TEST(ModelIo, NetworkSaveLoadRoundTrip) {
  auto dir = temp_dir("roundtrip");
  auto net = gen_random_network("netB", 8);
  io::save_network(dir, net);
  auto back = io::load_network(dir);
  EXPECT_EQ(back.name, "netB");
  EXPECT_EQ(back.input, (Shape{1, 28, 28}));
  EXPECT_EQ(back.digest(), net.digest());
  auto x = random_input(net.input, 1);
  EXPECT_EQ(infer_ref(back, x), infer_ref(net, x));

  io::save_public_manifest(dir / "public.json", net);
  auto pub = io::load_network(dir / "public.json");
  EXPECT_FALSE(pub.has_weights());
  EXPECT_EQ(pub.digest(), net.digest());
}

TEST(ModelIo, MissingOrTruncatedTensorFails) {
  auto dir = temp_dir("broken");
  io::save_network(dir, gen_random_network("tiny", 1));
  auto w = dir / "layer0_weights.chtw";
  auto bytes = io::read_file(w);
  bytes.resize(bytes.size() / 2);
  io::write_file(w, bytes);
  EXPECT_THROW(io::load_network(dir), io::FormatError);
  std::filesystem::remove(w);
  EXPECT_THROW(io::load_network(dir), io::FormatError);
}

TEST(ModelIo, MalformedManifestFails) {
  auto dir = temp_dir("malformed");
  const std::string text = "{\"name\": \"x\", \"layers\": [";
  io::write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  EXPECT_THROW(io::load_network(dir), io::FormatError);
  const std::string bad = R"({"name":"x","input":[1,4,4],"layers":[{"type":"fc","in":15,"out":2}]})";
  io::write_file(dir / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(bad.data()), bad.size()));
  EXPECT_THROW(io::load_network(dir), io::FormatError);
}
