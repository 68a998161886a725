#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dosepred {

struct GradcheckResult {
  std::string name;
  double error = 0.0;      // max |analytic - numeric| / max |numeric|
  double tolerance = 0.0;
  bool passed = false;
};

/// Central differences (h = 1e-3 Gy) of mae_loss and dvh_loss on random 8^3
/// instances. MAE voxels are kept away from sign ties.
std::vector<GradcheckResult> gradcheck_losses(std::uint64_t seed = 11, int instances = 10);

/// Layer-level checks (conv, upsampling adjoint, batch norm, activations,
/// concat) in binary64 plus whole-network directional derivatives on the
/// 8^3 / depth 2 / width 2 configuration in binary64 and binary32.
std::vector<GradcheckResult> gradcheck_net3d(std::uint64_t seed = 13);

}  // namespace dosepred
