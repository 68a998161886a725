#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dosepred/tensor.hpp"

namespace dosepred {

/// Cubic-kernel 3D convolution geometry. Weights are laid out
/// [out][in][kz][ky][kx]; one bias per output channel.
struct ConvShape {
  int in_ch = 1;
  int out_ch = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  std::size_t weight_count() const noexcept {
    return static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel * kernel;
  }
  int out_extent(int n) const noexcept { return (n + 2 * pad - kernel) / stride + 1; }
};

/// 4x4x4, stride 2, pad 1: halves every spatial extent.
constexpr ConvShape down_conv(int in_ch, int out_ch) { return {in_ch, out_ch, 4, 2, 1}; }
/// 3x3x3, stride 1, pad 1: keeps the spatial extent.
constexpr ConvShape same_conv(int in_ch, int out_ch) { return {in_ch, out_ch, 3, 1, 1}; }

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias,
                         const ConvShape& shape);

/// Accumulates into grad_weight / grad_bias. When grad_in is non-null it is
/// overwritten with the input gradient.
template <typename T>
void conv3d_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& grad_out,
                     const ConvShape& shape, Tensor<T>* grad_in, std::span<T> grad_weight,
                     std::span<T> grad_bias);

/// Trilinear x2 upsampling with half-pixel centers and edge clamping.
template <typename T>
Tensor<T> upsample2_forward(const Tensor<T>& x);

/// Adjoint of upsample2_forward for an input of extent (d, h, w).
template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& grad_out, int d, int h, int w);

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

struct BatchNormSettings {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Per-channel normalization over the spatial volume (batch size 1). In
/// training mode uses the sample statistics and updates the running ones.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                            std::span<T> running_mean, std::span<T> running_var, bool train,
                            const BatchNormSettings& settings, BatchNormCache<T>* cache);

template <typename T>
Tensor<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                             std::span<const T> gamma, std::span<T> grad_gamma,
                             std::span<T> grad_beta);

template <typename T>
void leaky_relu_forward(Tensor<T>& x, T slope);
/// In place on grad; `pre` is the activation input.
template <typename T>
void leaky_relu_backward(Tensor<T>& grad, const Tensor<T>& pre, T slope);

template <typename T>
void relu_forward(Tensor<T>& x);
template <typename T>
void relu_backward(Tensor<T>& grad, const Tensor<T>& pre);

/// Inverted-dropout mask: 0 with probability `rate`, else 1 / (1 - rate).
template <typename T>
std::vector<T> dropout_mask(std::size_t n, double rate, std::uint64_t seed);

template <typename T>
void apply_mask(Tensor<T>& x, const std::vector<T>& mask);

/// Channel concatenation [a; b].
template <typename T>
Tensor<T> concat_forward(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_backward(const Tensor<T>& grad, int a_channels);

}  // namespace dosepred
