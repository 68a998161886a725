#include <doctest.h>

#include <random>

#include "dosepred/error.hpp"
#include "dosepred/unet.hpp"

using namespace dosepred;

namespace {

NetConfig tiny() {
  NetConfig c;
  c.in_channels = 3;
  c.base_width = 2;
  c.depth = 2;
  c.input_size = 8;
  c.dropout_levels = 1;
  return c;
}

Tensor<float> random_input(const NetConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float> t(c.in_channels, c.input_size, c.input_size, c.input_size);
  for (float& v : t.data) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("width schedule and parameter count") {
  NetConfig c;  // 8 channels in, base 16, depth 4
  CHECK(c.width(1) == 16);
  CHECK(c.width(4) == 128);
  NetConfig deep = c;
  deep.depth = 6;
  deep.input_size = 64;
  CHECK(deep.width(6) == 128);
  // enc: 8208 + 32864 + 131264 + 524672; dec: 221376 + 110688 + 27696; out: 865
  CHECK(UNet3D<float>(c).parameter_count() == 1057633);
  CHECK(UNet3D<float>(tiny()).parameter_count() == 2 * 3 * 64 + 2 + 4 * 2 * 64 + 4 + 8 +
                                                       2 * 4 * 27 + 2 + 4 + 4 * 27 + 1);
}

TEST_CASE("config validation and json round trip") {
  NetConfig bad = tiny();
  bad.input_size = 12;  // not a multiple of 2^3
  bad.depth = 3;
  CHECK_THROWS_AS(bad.validate(), Error);
  const NetConfig c = tiny();
  CHECK(net_config_from_json(nlohmann::json::parse(to_json(c).dump())) == c);
}

TEST_CASE("forward pass shape, range and determinism") {
  UNet3D<float> a(tiny(), 7), b(tiny(), 7), other(tiny(), 8);
  const Tensor<float> x = random_input(tiny(), 1);
  const Tensor<float> ya = a.forward(x, Mode::eval);
  CHECK(ya.c == 1);
  CHECK(ya.d == 8);
  for (float v : ya.data) CHECK(v >= 0.0f);
  CHECK(b.forward(x, Mode::eval) == ya);
  CHECK_FALSE(other.forward(x, Mode::eval) == ya);
  CHECK_FALSE(a.has_tape());

  const Tensor<float> t1 = a.forward(x, Mode::train, 3);
  CHECK(a.has_tape());
  const Tensor<float> t2 = b.forward(x, Mode::train, 3);
  CHECK(t1 == t2);
  a.backward(Tensor<float>(1, 8, 8, 8, 1.0f));
  CHECK_FALSE(a.has_tape());
  CHECK_THROWS_AS(a.backward(Tensor<float>(1, 8, 8, 8, 1.0f)), Error);

  CHECK_THROWS_AS(a.forward(Tensor<float>(2, 8, 8, 8), Mode::eval), Error);
  CHECK_THROWS_AS(a.forward(Tensor<float>(3, 8, 8, 4), Mode::eval), Error);
}

TEST_CASE("parameters are named in declaration order and gradients accumulate") {
  UNet3D<double> net(tiny(), 1);
  const auto params = net.parameters();
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.name);
  CHECK(names == std::vector<std::string>{"enc1.conv.weight", "enc1.conv.bias",
                                          "enc2.conv.weight", "enc2.conv.bias", "enc2.bn.gamma",
                                          "enc2.bn.beta", "dec1.conv.weight", "dec1.conv.bias",
                                          "dec1.bn.gamma", "dec1.bn.beta", "out.conv.weight",
                                          "out.conv.bias"});
  CHECK(net.buffers().size() == 4);

  Tensor<double> x(3, 8, 8, 8, 0.5);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<double>(i % 13) / 13.0;
  auto grad_once = [&] {
    net.forward(x, Mode::train, 1);
    net.backward(Tensor<double>(1, 8, 8, 8, 1.0));
    return std::vector<double>(params.back().grad.begin(), params.back().grad.end());
  };
  net.zero_grad();
  const auto g1 = grad_once();
  const auto g2 = grad_once();
  CHECK(g2[0] == doctest::Approx(2.0 * g1[0]));
  net.zero_grad();
  for (const auto& p : net.parameters())
    for (double v : p.grad) CHECK(v == 0.0);
}
