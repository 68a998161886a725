#include "dosepred/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "dosepred/error.hpp"
#include "dosepred/rng.hpp"

namespace dosepred {

namespace {

// Output indices o in [lo, hi) whose input tap o * stride + k - pad is in [0, n).
struct TapRange {
  int lo = 0;
  int hi = 0;
};

TapRange tap_range(int k, int n, int out_n, const ConvShape& s) {
  const int off = k - s.pad;
  int lo = off >= 0 ? 0 : (-off + s.stride - 1) / s.stride;
  int hi = (n - 1 - off) >= 0 ? (n - 1 - off) / s.stride + 1 : 0;
  lo = std::clamp(lo, 0, out_n);
  hi = std::clamp(hi, 0, out_n);
  return {lo, std::max(lo, hi)};
}

void check_conv_input(int channels, int d, int h, int w, const ConvShape& s, std::size_t weights,
                      std::size_t biases) {
  if (channels != s.in_ch)
    fail_validation("conv3d: expected " + std::to_string(s.in_ch) + " input channels, got " +
                    std::to_string(channels));
  if (weights != s.weight_count() || biases != static_cast<std::size_t>(s.out_ch))
    fail_validation("conv3d: parameter size mismatch");
  if (s.stride == 2 && (d % 2 || h % 2 || w % 2))
    fail_validation("conv3d: strided convolution needs even spatial extents");
  if (s.out_extent(d) < 1 || s.out_extent(h) < 1 || s.out_extent(w) < 1)
    fail_validation("conv3d: input too small for kernel");
}


// Column buffers cover a slab of output z-slices so the unfolded input stays
// around 16 MB regardless of volume size.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

int slab_depth(const ConvShape& s, int oh, int ow, int od) {
  const std::size_t rows = static_cast<std::size_t>(s.in_ch) * s.kernel * s.kernel * s.kernel;
  const std::size_t per_slice = rows * static_cast<std::size_t>(oh) * ow;
  return std::clamp(static_cast<int>(kColumnBudget / std::max<std::size_t>(per_slice, 1)), 1, od);
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfolds output slices [oz0, oz1) into col[(ci, kz, ky, kx)][(oz, oy, ox)].
template <typename T>
void im2col(const Tensor<T>& x, const ConvShape& s, int oz0, int oz1, int oh, int ow,
            const std::vector<TapRange>& rx, T* col) {
  const int K = s.kernel, st = s.stride;
  const std::size_t cols = static_cast<std::size_t>(oz1 - oz0) * oh * ow;
  std::size_t row = 0;
  for (int ci = 0; ci < s.in_ch; ++ci) {
    for (int kz = 0; kz < K; ++kz) {
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx, ++row) {
          T* dst = col + row * cols;
          const int off = kx - s.pad;
          const int lo = rx[kx].lo, hi = rx[kx].hi;
          for (int oz = oz0; oz < oz1; ++oz) {
            const int iz = oz * st + kz - s.pad;
            for (int oy = 0; oy < oh; ++oy, dst += ow) {
              const int iy = oy * st + ky - s.pad;
              if (iz < 0 || iz >= x.d || iy < 0 || iy >= x.h) {
                std::fill(dst, dst + ow, T(0));
                continue;
              }
              const T* in = x.row(ci, iz, iy);
              std::fill(dst, dst + lo, T(0));
              if (st == 1) {
                for (int ox = lo; ox < hi; ++ox) dst[ox] = in[ox + off];
              } else {
                for (int ox = lo; ox < hi; ++ox) dst[ox] = in[ox * st + off];
              }
              std::fill(dst + hi, dst + ow, T(0));
            }
          }
        }
      }
    }
  }
}

// Scatter-adds col back onto the input positions it was gathered from.
template <typename T>
void col2im(const T* col, const ConvShape& s, int oz0, int oz1, int oh, int ow,
            const std::vector<TapRange>& rx, Tensor<T>& gx) {
  const int K = s.kernel, st = s.stride;
  const std::size_t cols = static_cast<std::size_t>(oz1 - oz0) * oh * ow;
  std::size_t row = 0;
  for (int ci = 0; ci < s.in_ch; ++ci) {
    for (int kz = 0; kz < K; ++kz) {
      for (int ky = 0; ky < K; ++ky) {
        for (int kx = 0; kx < K; ++kx, ++row) {
          const T* src = col + row * cols;
          const int off = kx - s.pad;
          const int lo = rx[kx].lo, hi = rx[kx].hi;
          for (int oz = oz0; oz < oz1; ++oz) {
            const int iz = oz * st + kz - s.pad;
            for (int oy = 0; oy < oh; ++oy, src += ow) {
              const int iy = oy * st + ky - s.pad;
              if (iz < 0 || iz >= gx.d || iy < 0 || iy >= gx.h) continue;
              T* g = gx.row(ci, iz, iy);
              if (st == 1) {
                for (int ox = lo; ox < hi; ++ox) g[ox + off] += src[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox) g[ox * st + off] += src[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                         const ConvShape& s) {
  check_conv_input(x.c, x.d, x.h, x.w, s, weight.size(), bias.size());
  const int od = s.out_extent(x.d), oh = s.out_extent(x.h), ow = s.out_extent(x.w);
  const int K = s.kernel;
  const auto rows = static_cast<Eigen::Index>(s.in_ch) * K * K * K;
  Tensor<T> out(s.out_ch, od, oh, ow);
  std::vector<TapRange> rx(K);
  for (int k = 0; k < K; ++k) rx[k] = tap_range(k, x.w, ow, s);

  const Eigen::Map<const RowMatrix<T>> W(weight.data(), s.out_ch, rows);
  const int slab = slab_depth(s, oh, ow, od);
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  std::vector<T> col;
  RowMatrix<T> y;
  for (int oz0 = 0; oz0 < od; oz0 += slab) {
    const int oz1 = std::min(od, oz0 + slab);
    const auto cols = static_cast<Eigen::Index>((oz1 - oz0) * plane);
    col.resize(static_cast<std::size_t>(rows * cols));
    im2col(x, s, oz0, oz1, oh, ow, rx, col.data());
    const Eigen::Map<const RowMatrix<T>> C(col.data(), rows, cols);
    y.noalias() = W * C;
    for (int co = 0; co < s.out_ch; ++co) {
      T* dst = out.channel(co).data() + oz0 * plane;
      const T b = bias[static_cast<std::size_t>(co)];
      for (Eigen::Index p = 0; p < cols; ++p) dst[p] = y(co, p) + b;
    }
  }
  return out;
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& grad_out,
                     const ConvShape& s, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias) {
  check_conv_input(x.c, x.d, x.h, x.w, s, weight.size(), grad_bias.size());
  const int od = s.out_extent(x.d), oh = s.out_extent(x.h), ow = s.out_extent(x.w);
  if (grad_out.c != s.out_ch || grad_out.d != od || grad_out.h != oh || grad_out.w != ow)
    fail_validation("conv3d_backward: output gradient shape mismatch");
  if (grad_weight.size() != weight.size()) fail_validation("conv3d_backward: weight gradient size");
  const int K = s.kernel;
  const auto rows = static_cast<Eigen::Index>(s.in_ch) * K * K * K;

  for (int co = 0; co < s.out_ch; ++co) {
    const auto g = grad_out.channel(co);
    T acc = T(0);
    for (T v : g) acc += v;
    grad_bias[static_cast<std::size_t>(co)] += acc;
  }
  if (grad_in) *grad_in = Tensor<T>(x.c, x.d, x.h, x.w);

  std::vector<TapRange> rx(K);
  for (int k = 0; k < K; ++k) rx[k] = tap_range(k, x.w, ow, s);
  const Eigen::Map<const RowMatrix<T>> W(weight.data(), s.out_ch, rows);
  Eigen::Map<RowMatrix<T>> GW(grad_weight.data(), s.out_ch, rows);
  const int slab = slab_depth(s, oh, ow, od);
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  std::vector<T> col, gcol;
  RowMatrix<T> G;
  for (int oz0 = 0; oz0 < od; oz0 += slab) {
    const int oz1 = std::min(od, oz0 + slab);
    const auto cols = static_cast<Eigen::Index>((oz1 - oz0) * plane);
    G.resize(s.out_ch, cols);
    for (int co = 0; co < s.out_ch; ++co) {
      const T* src = grad_out.channel(co).data() + oz0 * plane;
      std::copy(src, src + cols, G.row(co).data());
    }
    col.resize(static_cast<std::size_t>(rows * cols));
    im2col(x, s, oz0, oz1, oh, ow, rx, col.data());
    const Eigen::Map<const RowMatrix<T>> C(col.data(), rows, cols);
    GW.noalias() += G * C.transpose();
    if (grad_in) {
      gcol.resize(col.size());
      Eigen::Map<RowMatrix<T>> GC(gcol.data(), rows, cols);
      GC.noalias() = W.transpose() * G;
      col2im(gcol.data(), s, oz0, oz1, oh, ow, rx, *grad_in);
    }
  }
}

namespace {

// View of a tensor as [outer][n][inner] along one spatial axis (0 = x, 1 = y, 2 = z).
struct AxisView {
  std::size_t outer;
  int n;
  std::size_t inner;
};

AxisView axis_view(int c, int d, int h, int w, int axis) {
  switch (axis) {
    case 0:
      return {static_cast<std::size_t>(c) * d * h, w, 1};
    case 1:
      return {static_cast<std::size_t>(c) * d, h, static_cast<std::size_t>(w)};
    default:
      return {static_cast<std::size_t>(c), d, static_cast<std::size_t>(h) * w};
  }
}

template <typename T>
Tensor<T> upsample_axis(const Tensor<T>& x, int axis) {
  Tensor<T> out(x.c, axis == 2 ? 2 * x.d : x.d, axis == 1 ? 2 * x.h : x.h, axis == 0 ? 2 * x.w : x.w);
  const AxisView v = axis_view(x.c, x.d, x.h, x.w, axis);
  const T a = T(0.25), b = T(0.75);
  for (std::size_t o = 0; o < v.outer; ++o) {
    const T* src = x.data.data() + o * v.n * v.inner;
    T* dst = out.data.data() + o * 2 * v.n * v.inner;
    for (int m = 0; m < v.n; ++m) {
      const T* cur = src + m * v.inner;
      const T* prev = src + std::max(m - 1, 0) * v.inner;
      const T* next = src + std::min(m + 1, v.n - 1) * v.inner;
      T* even = dst + (2 * m) * v.inner;
      T* odd = dst + (2 * m + 1) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        even[i] = a * prev[i] + b * cur[i];
        odd[i] = b * cur[i] + a * next[i];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_axis_adjoint(const Tensor<T>& g, int axis) {
  Tensor<T> out(g.c, axis == 2 ? g.d / 2 : g.d, axis == 1 ? g.h / 2 : g.h, axis == 0 ? g.w / 2 : g.w);
  const AxisView v = axis_view(out.c, out.d, out.h, out.w, axis);
  const T a = T(0.25), b = T(0.75);
  for (std::size_t o = 0; o < v.outer; ++o) {
    const T* src = g.data.data() + o * 2 * v.n * v.inner;
    T* dst = out.data.data() + o * v.n * v.inner;
    for (int m = 0; m < v.n; ++m) {
      const T* even = src + (2 * m) * v.inner;
      const T* odd = src + (2 * m + 1) * v.inner;
      T* cur = dst + m * v.inner;
      T* prev = dst + std::max(m - 1, 0) * v.inner;
      T* next = dst + std::min(m + 1, v.n - 1) * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) {
        prev[i] += a * even[i];
        cur[i] += b * even[i] + b * odd[i];
        next[i] += a * odd[i];
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x) {
  return upsample_axis(upsample_axis(upsample_axis(x, 0), 1), 2);
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& grad_out, int d, int h, int w) {
  if (grad_out.d != 2 * d || grad_out.h != 2 * h || grad_out.w != 2 * w)
    fail_validation("upsample2_backward: gradient shape mismatch");
  return upsample_axis_adjoint(upsample_axis_adjoint(upsample_axis_adjoint(grad_out, 2), 1), 0);
}

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                            std::span<T> running_mean, std::span<T> running_var, bool train,
                            const BatchNormSettings& settings, BatchNormCache<T>* cache) {
  const auto nc = static_cast<std::size_t>(x.c);
  if (gamma.size() != nc || beta.size() != nc || running_mean.size() != nc || running_var.size() != nc)
    fail_validation("batchnorm: channel mismatch");
  Tensor<T> y(x.c, x.d, x.h, x.w);
  if (cache) {
    cache->xhat = Tensor<T>(x.c, x.d, x.h, x.w);
    cache->inv_std.assign(nc, T(0));
  }
  const std::size_t n = x.spatial();
  for (int c = 0; c < x.c; ++c) {
    const auto xs = x.channel(c);
    double mean = 0.0;
    double var = 0.0;
    if (train) {
      for (T v : xs) mean += v;
      mean /= static_cast<double>(n);
      for (T v : xs) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n);
      const double m = settings.momentum;
      const double unbiased = n > 1 ? var * n / (n - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - m) * running_mean[c] + m * mean);
      running_var[c] = static_cast<T>((1.0 - m) * running_var[c] + m * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + settings.eps));
    const T mu = static_cast<T>(mean);
    auto ys = y.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = (xs[i] - mu) * inv;
      if (cache) cache->xhat.channel(c)[i] = xh;
      ys[i] = gamma[c] * xh + beta[c];
    }
    if (cache) cache->inv_std[c] = inv;
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                             std::span<const T> gamma, std::span<T> grad_gamma,
                             std::span<T> grad_beta) {
  if (!grad_out.same_shape(cache.xhat)) fail_validation("batchnorm_backward: shape mismatch");
  Tensor<T> gx(grad_out.c, grad_out.d, grad_out.h, grad_out.w);
  const std::size_t n = grad_out.spatial();
  for (int c = 0; c < grad_out.c; ++c) {
    const auto g = grad_out.channel(c);
    const auto xh = cache.xhat.channel(c);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_g += g[i];
      sum_gx += static_cast<double>(g[i]) * xh[i];
    }
    grad_gamma[c] += static_cast<T>(sum_gx);
    grad_beta[c] += static_cast<T>(sum_g);
    // dxhat = g * gamma; dx = inv_std / n * (n dxhat - sum(dxhat) - xhat sum(dxhat xhat))
    const double gm = gamma[c];
    const T k1 = static_cast<T>(gm * cache.inv_std[c]);
    const T k2 = static_cast<T>(gm * cache.inv_std[c] * sum_g / n);
    const T k3 = static_cast<T>(gm * cache.inv_std[c] * sum_gx / n);
    auto out = gx.channel(c);
    for (std::size_t i = 0; i < n; ++i) out[i] = k1 * g[i] - k2 - xh[i] * k3;
  }
  return gx;
}

template <typename T>
void leaky_relu_forward(Tensor<T>& x, T slope) {
  for (T& v : x.data) v = v > T(0) ? v : slope * v;
}

template <typename T>
void leaky_relu_backward(Tensor<T>& grad, const Tensor<T>& pre, T slope) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad.data[i] *= pre.data[i] > T(0) ? T(1) : slope;
}

template <typename T>
void relu_forward(Tensor<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward(Tensor<T>& grad, const Tensor<T>& pre) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(pre.data[i] > T(0))) grad.data[i] = T(0);
  }
}

template <typename T>
std::vector<T> dropout_mask(std::size_t n, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) fail_validation("dropout: rate must lie in [0, 1)");
  std::vector<T> mask(n, T(1));
  if (rate == 0.0) return mask;
  Rng rng(seed);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (T& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < rate ? T(0) : keep;
  }
  return mask;
}

template <typename T>
void apply_mask(Tensor<T>& x, const std::vector<T>& mask) {
  if (mask.size() != x.size()) fail_validation("dropout: mask size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] *= mask[i];
}

template <typename T>
Tensor<T> concat_forward(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.d != b.d || a.h != b.h || a.w != b.w) fail_validation("concat: spatial shape mismatch");
  Tensor<T> out(a.c + b.c, a.d, a.h, a.w);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& grad, int a_channels) {
  if (a_channels < 0 || a_channels > grad.c) fail_validation("concat_backward: channel mismatch");
  Tensor<T> a(a_channels, grad.d, grad.h, grad.w);
  Tensor<T> b(grad.c - a_channels, grad.d, grad.h, grad.w);
  std::copy(grad.data.begin(), grad.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
  std::copy(grad.data.begin() + static_cast<std::ptrdiff_t>(a.size()), grad.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

#define DOSEPRED_INSTANTIATE_LAYERS(T)                                                           \
  template Tensor<T> conv3d_forward(const Tensor<T>&, std::span<const T>, std::span<const T>,    \
                                    const ConvShape&);                                           \
  template void conv3d_backward(const Tensor<T>&, std::span<const T>, const Tensor<T>&,          \
                                const ConvShape&, Tensor<T>*, std::span<T>, std::span<T>);       \
  template Tensor<T> upsample2_forward(const Tensor<T>&);                                        \
  template Tensor<T> upsample2_backward(const Tensor<T>&, int, int, int);                        \
  template Tensor<T> batchnorm_forward(const Tensor<T>&, std::span<const T>, std::span<const T>, \
                                       std::span<T>, std::span<T>, bool,                         \
                                       const BatchNormSettings&, BatchNormCache<T>*);            \
  template Tensor<T> batchnorm_backward(const Tensor<T>&, const BatchNormCache<T>&,              \
                                        std::span<const T>, std::span<T>, std::span<T>);         \
  template void leaky_relu_forward(Tensor<T>&, T);                                               \
  template void leaky_relu_backward(Tensor<T>&, const Tensor<T>&, T);                            \
  template void relu_forward(Tensor<T>&);                                                        \
  template void relu_backward(Tensor<T>&, const Tensor<T>&);                                     \
  template std::vector<T> dropout_mask<T>(std::size_t, double, std::uint64_t);                   \
  template void apply_mask(Tensor<T>&, const std::vector<T>&);                                   \
  template Tensor<T> concat_forward(const Tensor<T>&, const Tensor<T>&);                         \
  template std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>&, int);

DOSEPRED_INSTANTIATE_LAYERS(float)
DOSEPRED_INSTANTIATE_LAYERS(double)

#undef DOSEPRED_INSTANTIATE_LAYERS

}  // namespace dosepred
