#pragma once

#include <cstdint>
#include <vector>

#include "dosepred/unet.hpp"

namespace dosepred {

struct AdamSettings {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments per parameter tensor, in parameter order.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;

  /// Zero moments shaped like `params`.
  static AdamState zeros_like(const std::vector<ParamRef<T>>& params);
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update. Gradients are checked first: a non-finite
/// entry aborts the step (nothing is modified) with a numeric error naming
/// the parameter.
template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr,
               const AdamSettings& settings);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace dosepred
