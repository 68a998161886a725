#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "dosepred/case.hpp"
#include "dosepred/grid.hpp"

namespace dosepred {

inline constexpr double kHuMin = -1000.0;
inline constexpr double kHuMax = 3071.0;

/// Clamps HU to [-1000, 3071] and maps affinely onto [0, 1].
Grid3 clip_rescale_ct(const Grid3& ct);

Grid3 clip_dose(const Grid3& dose, double lo = 0.0, double hi = 70.0);

struct NormalizedDose {
  Grid3 dose;
  double scale = 1.0;
};

/// Scales the whole dose so that the mean inside `ptv` equals `prescription`.
NormalizedDose normalize_ptv_mean(const Grid3& dose, const Grid3& ptv,
                                  double prescription = 60.0,
                                  const std::string& case_id = {});

Grid3 override_ptv_dose(const Grid3& dose, const Grid3& ptv, double prescription = 60.0);

/// Trilinear resampling through physical coordinates, clamp-to-edge.
Grid3 resample(const Grid3& src, const Geometry& target);

/// Resample then threshold at 0.5.
Grid3 resample_mask(const Grid3& mask, const Geometry& target);

/// One binary channel per name, in the given order.
std::vector<Grid3> one_hot(const StructureSet& structures, const std::vector<std::string>& order);

/// Default channel order: the five OARs followed by the PTV.
std::vector<std::string> default_channel_order();

/// Inclusive voxel window per axis.
struct CropWindow {
  Index3 begin{0, 0, 0};
  Index3 end{0, 0, 0};  // inclusive

  Index3 extent() const noexcept {
    return {end[0] - begin[0] + 1, end[1] - begin[1] + 1, end[2] - begin[2] + 1};
  }
  bool operator==(const CropWindow&) const = default;
};

/// Inclusive bounding box of all voxels inside any mask.
CropWindow union_bounding_box(const StructureSet& structures);

/// Window of `crop_dims` centered on `box`, clamped to `volume_dims`. Throws when
/// the box does not fit inside the window, listing the overflow per axis.
CropWindow center_crop_window(const CropWindow& box, const Index3& volume_dims,
                              const Index3& crop_dims);

Grid3 crop(const Grid3& src, const CropWindow& window);

/// Geometry covering the same physical field of view as `g` with `dims` voxels.
Geometry regrid(const Geometry& g, const Index3& dims);

/// Crops every volume of the case around the structures and resamples to
/// `out_dims`. Masks are re-binarized at 0.5.
CaseBundle crop_resample(const CaseBundle& c, const Index3& crop_dims, const Index3& out_dims);

struct PreprocessOptions {
  Index3 crop_dims{0, 0, 0};  // zeros: whole volume
  Index3 out_dims{64, 64, 64};
  bool ptv_override = false;
  double dose_hi = 70.0;
};

/// Full chain for a raw case: dose resampled to the CT, clipped, PTV-mean
/// normalized (optionally overridden inside the PTV), then cropped and
/// resampled together with the CT, masks and beam channel. The CT is returned
/// still in HU; call clip_rescale_ct for the network input.
CaseBundle preprocess_case(const CaseBundle& raw, const PreprocessOptions& opts);

/// Dose target chain only (resample, clip, normalize, optional override).
Grid3 prepare_dose(const Grid3& dose, const Geometry& ct_geometry, const Grid3& ptv,
                   const PreprocessOptions& opts, double prescription,
                   const std::string& case_id);

}  // namespace dosepred
