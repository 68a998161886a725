#include "dosepred/adam.hpp"

#include <cmath>

#include "dosepred/error.hpp"

namespace dosepred {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const std::vector<ParamRef<T>>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.size(), T(0));
    s.v.emplace_back(p.value.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr,
               const AdamSettings& settings) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    fail_validation("adam: state has " + std::to_string(state.m.size()) + " tensors, model has " +
                    std::to_string(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (p.grad.size() != p.value.size() || state.m[k].size() != p.value.size() ||
        state.v[k].size() != p.value.size())
      fail_validation("adam: shape mismatch for '" + p.name + "'");
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      if (!std::isfinite(static_cast<double>(p.grad[i])))
        fail_numeric("adam: non-finite gradient in '" + p.name + "' at element " +
                     std::to_string(i));
    }
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail_validation("adam: invalid learning rate");

  state.t += 1;
  const double b1 = settings.beta1, b2 = settings.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      p.value[i] = static_cast<T>(p.value[i] - lr * mhat / (std::sqrt(vhat) + settings.eps));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(const std::vector<ParamRef<float>>&, AdamState<float>&, double,
                               const AdamSettings&);
template void adam_step<double>(const std::vector<ParamRef<double>>&, AdamState<double>&, double,
                                const AdamSettings&);

}  // namespace dosepred
