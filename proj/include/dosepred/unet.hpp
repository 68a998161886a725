#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosepred/layers.hpp"
#include "dosepred/tensor.hpp"

namespace dosepred {

/// Encoder-decoder layout. Encoder level l (1-based) halves the extent with a
/// 4x4x4 stride-2 convolution; the decoder mirrors it with trilinear x2
/// upsampling and 3x3x3 convolutions, concatenating the encoder output of the
/// same level.
struct NetConfig {
  int in_channels = 8;   // CT + 5 OARs + PTV + beam
  int base_width = 16;
  int depth = 4;
  int input_size = 64;
  double dropout = 0.5;
  int dropout_levels = 3;  // decoder levels (from the bottleneck) with dropout
  double leaky_slope = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double init_std = 0.02;
  /// Final ReLU output is multiplied by this (Gy per network unit).
  double output_scale = 60.0;

  /// Channel width of encoder level l in [1, depth]: doubles per level, capped at 8x base.
  int width(int level) const;
  void validate() const;

  bool operator==(const NetConfig&) const = default;
};

nlohmann::ordered_json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

enum class Mode { train, eval };

/// Named view of one parameter tensor and its gradient.
template <typename T>
struct ParamRef {
  std::string name;
  std::span<T> value;
  std::span<T> grad;
};

template <typename T>
class UNet3D {
 public:
  explicit UNet3D(const NetConfig& cfg, std::uint64_t init_seed = 0);

  const NetConfig& config() const noexcept { return cfg_; }

  /// Returns the 1-channel dose prediction (Gy). Train mode records the tape;
  /// `dropout_seed` fixes the dropout masks of this pass.
  Tensor<T> forward(const Tensor<T>& input, Mode mode, std::uint64_t dropout_seed = 0);

  /// Accumulates parameter gradients for the last train-mode forward and
  /// consumes the tape.
  void backward(const Tensor<T>& grad_output);

  void zero_grad();
  bool has_tape() const noexcept { return tape_.has_value(); }

  /// Trainable parameters in declaration order.
  std::vector<ParamRef<T>> parameters();
  /// Batch-norm running statistics in declaration order.
  std::vector<std::span<T>> buffers();
  std::size_t parameter_count() const;

 private:
  struct Conv {
    ConvShape shape;
    std::vector<T> w, b, gw, gb;
  };
  struct Norm {
    std::vector<T> gamma, beta, mean, var, ggamma, gbeta;
  };
  struct EncoderLevel {
    Conv conv;
    std::optional<Norm> norm;
  };
  struct DecoderLevel {
    Conv conv;
    Norm norm;
    bool dropout = false;
  };

  struct EncoderTape {
    Tensor<T> input;
    Tensor<T> pre;  // activation input
    BatchNormCache<T> bn;
  };
  struct DecoderTape {
    Tensor<T> upsampled;
    Tensor<T> pre;
    BatchNormCache<T> bn;
    std::vector<T> mask;
    int in_d = 0, in_h = 0, in_w = 0;
  };
  struct Tape {
    std::vector<EncoderTape> enc;  // index l-1
    std::vector<DecoderTape> dec;  // index j, 1..depth-1 used
    Tensor<T> final_up;
    Tensor<T> final_pre;
    int final_in_d = 0, final_in_h = 0, final_in_w = 0;
  };

  static Conv make_conv(const ConvShape& shape);
  static Norm make_norm(int channels);

  NetConfig cfg_;
  std::vector<EncoderLevel> enc_;  // index l-1
  std::vector<DecoderLevel> dec_;  // index j for j in [1, depth-1]; dec_[0] unused
  Conv final_;
  std::optional<Tape> tape_;
};

extern template class UNet3D<float>;
extern template class UNet3D<double>;

}  // namespace dosepred
