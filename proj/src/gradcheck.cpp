#include "dosepred/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "dosepred/case.hpp"
#include "dosepred/dvh.hpp"
#include "dosepred/layers.hpp"
#include "dosepred/rng.hpp"
#include "dosepred/unet.hpp"

namespace dosepred {

namespace {

Geometry cube(int n) { return {{n, n, n}, {2.0, 2.0, 2.0}, {0.0, 0.0, 0.0}}; }

GradcheckResult compare(std::string name, const std::vector<double>& analytic,
                        const std::vector<double>& numeric, double tol) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  const double err = scale > 0.0 ? diff / scale : diff;
  return {std::move(name), err, tol, err < tol};
}

Grid3 random_blob(const Geometry& g, Rng& rng) {
  Grid3 m(g);
  const Vec3 c{uniform(rng, 1.5, 5.5), uniform(rng, 1.5, 5.5), uniform(rng, 1.5, 5.5)};
  const double r = uniform(rng, 1.6, 2.8);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const double d2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
        if (d2 <= r * r) m(x, y, z) = 1.0;
      }
  if (count_inside(m) == 0) m(4, 4, 4) = 1.0;
  return m;
}

std::vector<double> numeric_grad(Grid3 x, const std::function<double(const Grid3&)>& f, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

std::vector<double> to_vec(const Grid3& g) { return {g.values().begin(), g.values().end()}; }

template <typename T>
Tensor<T> random_tensor(int c, int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(c, n, n, n);
  for (T& v : t.data) v = static_cast<T>(uniform(rng, lo, hi));
  return t;
}

template <typename T>
double dot(const std::vector<T>& a, const std::vector<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Directional-derivative check of a scalar function of one flat parameter block.
GradcheckResult directional(std::string name, std::vector<double>& x,
                            const std::vector<double>& analytic,
                            const std::function<double()>& f, Rng& rng, double h, double tol) {
  std::vector<double> dir(x.size());
  for (double& d : dir) d = uniform(rng, -1.0, 1.0);
  const std::vector<double> x0 = x;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] + h * dir[i];
  const double fp = f();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x0[i] - h * dir[i];
  const double fm = f();
  x = x0;
  return compare(std::move(name), {dot(analytic, dir)}, {(fp - fm) / (2.0 * h)}, tol);
}

template <typename T>
std::vector<GradcheckResult> network_check(std::uint64_t seed, double h, double tol) {
  NetConfig cfg;
  cfg.in_channels = 3;
  cfg.base_width = 2;
  cfg.depth = 2;
  cfg.input_size = 8;
  cfg.dropout = 0.5;
  cfg.dropout_levels = 1;
  Rng rng(derive_seed(seed, "net-input"));
  UNet3D<T> net(cfg, seed);
  // Larger weights than the default init keep the activations away from zero.
  for (auto& p : net.parameters())
    for (T& v : p.value) v = static_cast<T>(p.name.ends_with(".weight") ? uniform(rng, -0.5, 0.5)
                                                                        : uniform(rng, -0.1, 0.1));
  const Tensor<T> input = random_tensor<T>(cfg.in_channels, cfg.input_size, rng);
  const Tensor<T> probe = random_tensor<T>(1, cfg.input_size, rng);
  const std::uint64_t dseed = derive_seed(seed, "dropout");

  const auto loss = [&]() {
    const Tensor<T> out = net.forward(input, Mode::train, dseed);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out.data[i]) * probe.data[i];
    return s / 60.0;
  };
  net.zero_grad();
  net.forward(input, Mode::train, dseed);
  Tensor<T> g = probe;
  for (T& v : g.data) v = static_cast<T>(v / T(60));
  net.backward(g);

  auto params = net.parameters();
  std::vector<std::vector<T>> dir(params.size());
  double analytic = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    dir[k].resize(params[k].value.size());
    for (std::size_t i = 0; i < dir[k].size(); ++i) {
      dir[k][i] = static_cast<T>(uniform(rng, -1.0, 1.0));
      analytic += static_cast<double>(params[k].grad[i]) * dir[k][i];
    }
  }
  const auto shift = [&](double s) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < dir[k].size(); ++i)
        params[k].value[i] = static_cast<T>(params[k].value[i] + s * dir[k][i]);
  };
  std::vector<std::vector<T>> saved;
  for (auto& p : params) saved.emplace_back(p.value.begin(), p.value.end());
  const auto restore = [&]() {
    for (std::size_t k = 0; k < params.size(); ++k)
      std::copy(saved[k].begin(), saved[k].end(), params[k].value.begin());
  };
  shift(h);
  const double fp = loss();
  restore();
  shift(-h);
  const double fm = loss();
  restore();
  const std::string tag = sizeof(T) == 4 ? "binary32" : "binary64";
  std::vector<GradcheckResult> out;
  out.push_back(compare("net3d.whole_network." + tag, {analytic}, {(fp - fm) / (2.0 * h)}, tol));
  return out;
}

}  // namespace

std::vector<GradcheckResult> gradcheck_losses(std::uint64_t seed, int instances) {
  std::vector<GradcheckResult> out;
  const double h = 1e-3;
  for (int k = 0; k < instances; ++k) {
    Rng rng(derive_seed(seed, "gradcheck-loss", static_cast<std::uint64_t>(k)));
    const Geometry g = cube(8);
    Grid3 pred(g), real(g);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      real[i] = uniform(rng, 0.0, 70.0);
      // |pred - real| >= 0.1 Gy keeps the MAE away from its kinks.
      const double off = uniform(rng, 0.1, 5.0) * (rng() % 2 ? 1.0 : -1.0);
      pred[i] = real[i] + off;
    }
    StructureSet s(g);
    s.set("ptv", random_blob(g, rng));
    s.set("heart", random_blob(g, rng));
    s.set("lung_l", random_blob(g, rng));
    DvhConfig cfg = DvhConfig::standard();
    cfg.structures = {"ptv", "heart", "lung_l"};

    const std::string suffix = "[" + std::to_string(k) + "]";
    out.push_back(compare("mae_grad" + suffix, to_vec(mae_grad(pred, real)),
                          numeric_grad(pred, [&](const Grid3& p) { return mae_loss(p, real); }, h),
                          1e-4));
    out.push_back(compare("dvh_loss_grad" + suffix, to_vec(dvh_loss_grad(pred, real, s, cfg)),
                          numeric_grad(pred, [&](const Grid3& p) { return dvh_loss(p, real, s, cfg); }, h),
                          1e-4));
  }
  return out;
}

std::vector<GradcheckResult> gradcheck_net3d(std::uint64_t seed) {
  std::vector<GradcheckResult> out;
  Rng rng(derive_seed(seed, "gradcheck-layers"));
  const double h = 1e-5;

  for (const ConvShape shape : {same_conv(2, 3), down_conv(2, 3)}) {
    Tensor<double> x = random_tensor<double>(2, 6, rng);
    std::vector<double> w(shape.weight_count()), b(static_cast<std::size_t>(shape.out_ch));
    for (double& v : w) v = uniform(rng, -1.0, 1.0);
    for (double& v : b) v = uniform(rng, -1.0, 1.0);
    const int on = shape.out_extent(6);
    const Tensor<double> probe = random_tensor<double>(shape.out_ch, on, rng);
    const auto f = [&]() {
      const auto y = conv3d_forward<double>(x, w, b, shape);
      return dot(y.data, probe.data);
    };
    Tensor<double> gx;
    std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
    conv3d_backward<double>(x, w, probe, shape, &gx, gw, gb);
    const std::string tag = shape.stride == 1 ? "conv3x3x3" : "conv4x4x4s2";
    out.push_back(directional("net3d." + tag + ".input", x.data, gx.data, f, rng, h, 1e-6));
    out.push_back(directional("net3d." + tag + ".weight", w, gw, f, rng, h, 1e-6));
    out.push_back(directional("net3d." + tag + ".bias", b, gb, f, rng, h, 1e-6));
  }

  {
    const Tensor<double> x = random_tensor<double>(2, 3, rng);
    const Tensor<double> y = random_tensor<double>(2, 6, rng);
    const double lhs = dot(upsample2_forward(x).data, y.data);
    const double rhs = dot(x.data, upsample2_backward(y, 3, 3, 3).data);
    out.push_back(compare("net3d.upsample.adjoint", {lhs}, {rhs}, 1e-12));
  }

  {
    Tensor<double> x = random_tensor<double>(3, 4, rng, -2.0, 3.0);
    std::vector<double> gamma{1.3, 0.7, -0.4}, beta{0.1, -0.2, 0.3};
    std::vector<double> rm(3, 0.0), rv(3, 1.0);
    const Tensor<double> probe = random_tensor<double>(3, 4, rng);
    const auto f = [&]() {
      std::vector<double> m(3, 0.0), v(3, 1.0);
      const auto y = batchnorm_forward<double>(x, gamma, beta, m, v, true, {}, nullptr);
      return dot(y.data, probe.data);
    };
    BatchNormCache<double> cache;
    batchnorm_forward<double>(x, gamma, beta, rm, rv, true, {}, &cache);
    std::vector<double> gg(3, 0.0), gbeta(3, 0.0);
    const auto gx = batchnorm_backward<double>(probe, cache, gamma, gg, gbeta);
    out.push_back(directional("net3d.batchnorm.input", x.data, gx.data, f, rng, h, 1e-6));
    out.push_back(directional("net3d.batchnorm.gamma", gamma, gg, f, rng, h, 1e-6));
    out.push_back(directional("net3d.batchnorm.beta", beta, gbeta, f, rng, h, 1e-6));
  }

  {
    Tensor<double> x = random_tensor<double>(2, 4, rng);
    for (double& v : x.data)
      if (std::abs(v) < 0.05) v = 0.5;
    const Tensor<double> probe = random_tensor<double>(2, 4, rng);
    const auto f_leaky = [&]() {
      Tensor<double> y = x;
      leaky_relu_forward(y, 0.2);
      return dot(y.data, probe.data);
    };
    Tensor<double> g = probe;
    leaky_relu_backward(g, x, 0.2);
    out.push_back(directional("net3d.leaky_relu", x.data, g.data, f_leaky, rng, 1e-6, 1e-6));
    const auto f_relu = [&]() {
      Tensor<double> y = x;
      relu_forward(y);
      return dot(y.data, probe.data);
    };
    g = probe;
    relu_backward(g, x);
    out.push_back(directional("net3d.relu", x.data, g.data, f_relu, rng, 1e-6, 1e-6));
  }

  {
    Tensor<double> a = random_tensor<double>(2, 3, rng), b = random_tensor<double>(3, 3, rng);
    const Tensor<double> probe = random_tensor<double>(5, 3, rng);
    auto [ga, gb] = concat_backward(probe, 2);
    const auto f = [&]() { return dot(concat_forward(a, b).data, probe.data); };
    out.push_back(directional("net3d.concat.a", a.data, ga.data, f, rng, h, 1e-6));
    out.push_back(directional("net3d.concat.b", b.data, gb.data, f, rng, h, 1e-6));
  }

  for (auto& r : network_check<double>(seed, 1e-6, 1e-4)) out.push_back(r);
  for (auto& r : network_check<float>(seed, 1e-3, 1e-2)) out.push_back(r);
  return out;
}

}  // namespace dosepred
