#pragma once

#include <vector>

#include "dosepred/beam_spec.hpp"
#include "dosepred/grid.hpp"

namespace dosepred {

/// Piecewise-linear CT number to relative electron density: -1000 HU -> 0,
/// 0 HU -> 1, 1000 HU -> 1.5, clamped to [0, 2].
double hu_to_density(double hu) noexcept;
Grid3 hu_to_density(const Grid3& ct);

/// Density-weighted path length (mm) from `source` to `point`. The segment is
/// clipped to the volume (outside counts as vacuum) and integrated with the
/// midpoint rule at a step of half the smallest voxel spacing.
double radiological_depth(const Grid3& density, const Vec3& source, const Vec3& point);

/// Center of mass of the voxels inside `mask` (mm).
Vec3 mask_centroid(const Grid3& mask);

/// Beam frame for one gantry angle. The source orbits in the axial plane;
/// angle 0 places it at -y (anterior) looking towards +y.
struct BeamFrame {
  Vec3 source{};
  Vec3 axis{};     // unit vector source -> isocenter
  Vec3 lateral{};  // in-plane unit vector perpendicular to axis
  double sad = 1000.0;

  static BeamFrame make(const BeamSpec& spec, double angle_deg);

  /// Returns (u, v) on the isocenter plane and the distance along the axis
  /// from the source.
  void project(const Vec3& p, double& u, double& v, double& along) const noexcept;
};

/// Depth-dose curve: linear build-up to 1 at d_max, exponential beyond.
double depth_dose(double radiological_depth_mm, const BeamKernelParams& params) noexcept;

/// Unnormalized dose of a single beam (fluence x depth dose x inverse square).
Grid3 single_beam_dose(const Grid3& density, const Grid3& ptv, const BeamSpec& spec,
                       double angle_deg, const BeamKernelParams& params);

/// Per-beam unnormalized doses, in ascending gantry-angle order.
std::vector<Grid3> beam_doses(const Grid3& ct, const Grid3& ptv, const BeamSpec& spec,
                              const BeamKernelParams& params = {});

/// Unweighted sum of per-beam doses scaled to a peak of 1.
Grid3 sum_beams(const std::vector<Grid3>& doses);

/// Sum over beams, rescaled so the maximum voxel is exactly 1.
Grid3 beam_dose(const Grid3& ct, const Grid3& ptv, const BeamSpec& spec,
                const BeamKernelParams& params = {});

}  // namespace dosepred
