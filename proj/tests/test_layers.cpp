#include <doctest.h>

#include <cmath>
#include <random>

#include "dosepred/layers.hpp"

using namespace dosepred;

namespace {

Tensor<double> random_tensor(int c, int d, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<double> t(c, d, h, w);
  for (double& v : t.data) v = u(rng);
  return t;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Straight nested-loop convolution with zero padding.
Tensor<double> direct_conv(const Tensor<double>& x, const std::vector<double>& w,
                           const std::vector<double>& b, const ConvShape& s) {
  const int k = s.kernel;
  Tensor<double> y(s.out_ch, s.out_extent(x.d), s.out_extent(x.h), s.out_extent(x.w));
  for (int o = 0; o < s.out_ch; ++o)
    for (int z = 0; z < y.d; ++z)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) {
          double acc = b[o];
          for (int i = 0; i < s.in_ch; ++i)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iz = z * s.stride - s.pad + kz;
                  const int iy = yy * s.stride - s.pad + ky;
                  const int ix = xx * s.stride - s.pad + kx;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= x.d || iy >= x.h || ix >= x.w) continue;
                  acc += w[(((static_cast<std::size_t>(o) * s.in_ch + i) * k + kz) * k + ky) * k +
                           kx] *
                         x.at(i, iz, iy, ix);
                }
          y.at(o, z, yy, xx) = acc;
        }
  return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("averaging kernel on a constant volume") {
  const ConvShape s = down_conv(1, 1);
  const std::vector<double> w(64, 1.0 / 64.0), b(1, 0.0);
  const Tensor<double> ones4(1, 4, 4, 4, 1.0);
  const Tensor<double> y4 = conv3d_forward<double>(ones4, w, b, s);
  CHECK(y4.d == 2);
  // Every window of a 4^3 input touches the padding: 27 of 64 taps inside.
  for (double v : y4.data) CHECK(v == doctest::Approx(27.0 / 64.0));
  const Tensor<double> ones8(1, 8, 8, 8, 1.0);
  const Tensor<double> y8 = conv3d_forward<double>(ones8, w, b, s);
  for (int z = 1; z <= 2; ++z)
    for (int y = 1; y <= 2; ++y)
      for (int x = 1; x <= 2; ++x) CHECK(y8.at(0, z, y, x) == doctest::Approx(1.0));
  const ConvShape valid{1, 1, 4, 2, 0};
  const Tensor<double> y1 = conv3d_forward<double>(ones4, w, b, valid);
  REQUIRE(y1.size() == 1);
  CHECK(y1.data[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("convolution matches the nested-loop oracle") {
  std::mt19937_64 rng(2);
  for (const ConvShape s : {down_conv(3, 5), same_conv(4, 2), ConvShape{2, 3, 3, 2, 1}}) {
    const Tensor<double> x = random_tensor(s.in_ch, 6, 4, 8, rng);
    const auto w = random_vec(s.weight_count(), rng);
    const auto b = random_vec(static_cast<std::size_t>(s.out_ch), rng);
    const Tensor<double> got = conv3d_forward<double>(x, w, b, s);
    const Tensor<double> want = direct_conv(x, w, b, s);
    REQUIRE(got.same_shape(want));
    double err = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got.data[i] - want.data[i]));
    CHECK(err < 1e-12);
  }
}

TEST_CASE("convolution backward is the adjoint of forward") {
  std::mt19937_64 rng(3);
  for (const ConvShape s : {down_conv(3, 4), same_conv(2, 3)}) {
    const Tensor<double> x = random_tensor(s.in_ch, 6, 6, 6, rng);
    const auto w = random_vec(s.weight_count(), rng);
    const std::vector<double> zero_b(static_cast<std::size_t>(s.out_ch), 0.0);
    const Tensor<double> y = conv3d_forward<double>(x, w, zero_b, s);
    const Tensor<double> g = random_tensor(y.c, y.d, y.h, y.w, rng);

    Tensor<double> gx;
    std::vector<double> gw(w.size(), 0.0), gb(zero_b.size(), 0.0);
    conv3d_backward<double>(x, w, g, s, &gx, gw, gb);
    // <conv(x; w), g> is bilinear: equals <x, gx> and <w, gw>.
    const double lhs = dot(y.data, g.data);
    CHECK(dot(x.data, gx.data) == doctest::Approx(lhs).epsilon(1e-12));
    CHECK(dot(w, gw) == doctest::Approx(lhs).epsilon(1e-12));
    for (int o = 0; o < s.out_ch; ++o) {
      double sum = 0.0;
      for (double v : g.channel(o)) sum += v;
      CHECK(gb[static_cast<std::size_t>(o)] == doctest::Approx(sum).epsilon(1e-12));
    }

    // Zero weights: zero output; weight gradient still the input/grad correlation.
    const std::vector<double> zw(w.size(), 0.0);
    const Tensor<double> y0 = conv3d_forward<double>(x, zw, zero_b, s);
    for (double v : y0.data) CHECK(v == 0.0);
    std::vector<double> gw0(w.size(), 0.0), gb0(zero_b.size(), 0.0);
    conv3d_backward<double>(x, zw, g, s, nullptr, gw0, gb0);
    CHECK(gw0 == gw);
  }
}

TEST_CASE("trilinear upsampling") {
  const Tensor<double> c(2, 3, 4, 5, 1.75);
  const Tensor<double> u = upsample2_forward(c);
  CHECK(u.d == 6);
  CHECK(u.h == 8);
  CHECK(u.w == 10);
  for (double v : u.data) CHECK(v == doctest::Approx(1.75).epsilon(1e-15));

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor<double> x = random_tensor(2, 3, 4, 5, rng);
    const Tensor<double> y = random_tensor(2, 6, 8, 10, rng);
    const double lhs = dot(upsample2_forward(x).data, y.data);
    const double rhs = dot(x.data, upsample2_backward(y, 3, 4, 5).data);
    CHECK(std::abs(lhs - rhs) <= 1e-5 * std::abs(lhs));
  }
}

TEST_CASE("batch norm uses per-channel spatial statistics") {
  std::mt19937_64 rng(5);
  Tensor<double> x = random_tensor(3, 4, 4, 4, rng);
  for (double& v : x.channel(1)) v = 5.0 + 3.0 * v;
  const std::vector<double> gamma{1.0, 1.0, 1.0}, beta{0.0, 0.0, 0.0};
  std::vector<double> rm(3, 0.0), rv(3, 1.0);
  BatchNormCache<double> cache;
  const Tensor<double> y = batchnorm_forward<double>(x, gamma, beta, rm, rv, true, {}, &cache);
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (double v : y.channel(c)) mean += v;
    mean /= static_cast<double>(y.spatial());
    for (double v : y.channel(c)) sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(sq / static_cast<double>(y.spatial()) == doctest::Approx(1.0).epsilon(1e-3));
  }
  double m1 = 0.0;
  for (double v : x.channel(1)) m1 += v;
  m1 /= static_cast<double>(x.spatial());
  CHECK(rm[1] == doctest::Approx(0.1 * m1));

  // Eval mode with fresh running stats is (nearly) the identity.
  std::vector<double> rm0(3, 0.0), rv0(3, 1.0);
  const Tensor<double> e = batchnorm_forward<double>(x, gamma, beta, rm0, rv0, false, {}, nullptr);
  CHECK(e.data[10] == doctest::Approx(x.data[10] / std::sqrt(1.0 + 1e-5)));
  CHECK(rm0[0] == 0.0);
}

TEST_CASE("activations, dropout and concatenation") {
  Tensor<double> t(1, 1, 1, 4);
  t.data = {-2.0, -0.5, 0.0, 3.0};
  const Tensor<double> pre = t;
  Tensor<double> l = t;
  leaky_relu_forward(l, 0.2);
  CHECK(l.data == std::vector<double>{-0.4, -0.1, 0.0, 3.0});
  Tensor<double> r = t;
  relu_forward(r);
  CHECK(r.data == std::vector<double>{0.0, 0.0, 0.0, 3.0});
  Tensor<double> g(1, 1, 1, 4, 1.0);
  relu_backward(g, pre);
  CHECK(g.data == std::vector<double>{0.0, 0.0, 0.0, 1.0});

  const auto m = dropout_mask<float>(10000, 0.5, 99);
  CHECK(m == dropout_mask<float>(10000, 0.5, 99));
  CHECK_FALSE(m == dropout_mask<float>(10000, 0.5, 100));
  std::size_t kept = 0;
  for (float v : m) {
    CHECK((v == 0.0f || v == 2.0f));
    kept += v != 0.0f;
  }
  CHECK(kept > 4700);
  CHECK(kept < 5300);

  std::mt19937_64 rng(6);
  const Tensor<double> a = random_tensor(2, 2, 3, 2, rng);
  const Tensor<double> b = random_tensor(3, 2, 3, 2, rng);
  const Tensor<double> ab = concat_forward(a, b);
  CHECK(ab.c == 5);
  const auto [ga, gb] = concat_backward(ab, 2);
  CHECK(ga == a);
  CHECK(gb == b);
}
