#pragma once

#include <vector>

#include "dosepred/grid.hpp"

namespace dosepred {

/// Coplanar treatment beams rotating about the patient z axis.
struct BeamSpec {
  std::vector<double> angles_deg;  // gantry angles in [0, 360)
  Vec3 isocenter{0.0, 0.0, 0.0};   // mm
  double sad_mm = 1000.0;          // source-axis distance
  double margin_mm = 5.0;          // aperture dilation around the projected PTV

  void validate() const;
  bool operator==(const BeamSpec&) const = default;
};

/// Parameters of the broad-beam kernel.
struct BeamKernelParams {
  double mu_eff = 0.005;       // 1/mm
  double penumbra_mm = 3.0;    // lateral Gaussian sigma
  double buildup_mm = 15.0;    // d_max

  void validate() const;
  bool operator==(const BeamKernelParams&) const = default;
};

}  // namespace dosepred
