#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "dosepred/beam_spec.hpp"
#include "dosepred/case.hpp"
#include "dosepred/grid.hpp"

namespace dosepred {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

/// Synthetic thorax generator settings. Lengths in mm, all ranges sampled
/// uniformly per case.
struct PhantomConfig {
  std::uint64_t seed = 1;
  Index3 dims{64, 64, 64};
  Vec3 spacing{7.0, 7.0, 5.0};

  Range body_semi_x{150.0, 185.0};
  Range body_semi_y{100.0, 125.0};
  Range lung_semi_x{45.0, 60.0};
  Range lung_semi_y{55.0, 75.0};
  Range lung_semi_z{90.0, 125.0};
  Range heart_radius{38.0, 50.0};
  Range cord_radius{8.0, 11.0};
  Range esophagus_radius{8.0, 11.0};
  Range ptv_radius{15.0, 30.0};
  /// PTV center offset inside the chosen lung, as a fraction of its semi-axes.
  double ptv_placement = 0.55;
  int beams_min = 5;
  int beams_max = 7;
  double angle_jitter_deg = 8.0;
  BeamKernelParams kernel;

  /// Desk-scale configuration with `n` voxels per axis over a fixed
  /// 448 x 448 x 320 mm field of view.
  static PhantomConfig with_dims(int n, std::uint64_t seed = 1);

  void validate() const;
};

/// Settings that emulate plan-quality variability between planners.
struct PerturbSpec {
  std::uint64_t seed = 2;
  double weight_jitter = 0.15;    // relative, per angular beam sector
  Range blur_sigma_mm{0.0, 6.0};
  double norm_jitter = 0.05;      // relative PTV-mean jitter

  void validate() const;
  bool is_identity() const noexcept {
    return weight_jitter == 0.0 && norm_jitter == 0.0 && blur_sigma_mm.hi == 0.0;
  }
};

inline constexpr double kPrescriptionGy = 60.0;

/// Deterministic in (cfg, index); reference_dose is the consistent plan and
/// beam_channel the unweighted beam sum it was fitted from.
CaseBundle generate_case(const PhantomConfig& cfg, int index);

struct ReferencePlan {
  Grid3 dose;
  std::vector<double> weights;  // per beam, ascending angle order
  double scale = 1.0;           // final PTV-mean normalization factor
  bool fallback = false;        // weight fit was singular; uniform weights used
};

/// Least-squares beam weighting: mean PTV dose towards the prescription,
/// mean OAR doses towards zero, ridge towards uniform weights. Identical
/// procedure for every case.
ReferencePlan make_reference_plan(const Grid3& ct, const StructureSet& structures,
                                  const BeamSpec& beams, const BeamKernelParams& kernel = {});

/// Weighting stage on precomputed per-beam doses.
ReferencePlan weight_beams(const std::vector<Grid3>& beam_doses, const StructureSet& structures,
                           double prescription = kPrescriptionGy);

/// Blur, angular-sector weight jitter and PTV-mean jitter, deterministic in
/// (spec.seed, case_id).
Grid3 perturb_plan(const Grid3& dose, const Grid3& ptv, const PerturbSpec& spec,
                   std::string_view case_id, double prescription = kPrescriptionGy);

/// Separable Gaussian blur with sigma in mm; clamp-to-edge.
Grid3 gaussian_blur(const Grid3& g, double sigma_mm);

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> test;
  bool operator==(const DatasetSplit&) const = default;
};

/// Seeded shuffle of case indices [0, n) into train and test.
DatasetSplit split_dataset(int n_cases, int n_test, std::uint64_t seed);

}  // namespace dosepred
