#include "dosepred/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dosepred/error.hpp"

namespace dosepred {

Grid3 clip_rescale_ct(const Grid3& ct) {
  ct.require_finite("clip_rescale_ct");
  Grid3 out(ct.geometry());
  constexpr double range = kHuMax - kHuMin;
  for (std::size_t i = 0; i < ct.size(); ++i) {
    out[i] = (std::clamp(ct[i], kHuMin, kHuMax) - kHuMin) / range;
  }
  return out;
}

Grid3 clip_dose(const Grid3& dose, double lo, double hi) {
  if (!(hi > lo)) {
    std::ostringstream os;
    os << "clip_dose: upper bound " << hi << " must exceed lower bound " << lo;
    fail_validation(os.str());
  }
  dose.require_finite("clip_dose");
  Grid3 out(dose.geometry());
  for (std::size_t i = 0; i < dose.size(); ++i) out[i] = std::clamp(dose[i], lo, hi);
  return out;
}

NormalizedDose normalize_ptv_mean(const Grid3& dose, const Grid3& ptv, double prescription,
                                  const std::string& case_id) {
  const std::string who = case_id.empty() ? std::string("normalize_ptv_mean")
                                          : "normalize_ptv_mean(case " + case_id + ")";
  require_same_geometry(dose, ptv, who);
  if (count_inside(ptv) == 0) fail_validation(who + ": empty PTV");
  const double mean = masked_mean(dose, ptv);
  if (!(mean > 0.0)) fail_validation(who + ": mean PTV dose is not positive");
  NormalizedDose out{Grid3(dose.geometry()), prescription / mean};
  for (std::size_t i = 0; i < dose.size(); ++i) out.dose[i] = dose[i] * out.scale;
  return out;
}

Grid3 override_ptv_dose(const Grid3& dose, const Grid3& ptv, double prescription) {
  require_same_geometry(dose, ptv, "override_ptv_dose");
  Grid3 out = dose;
  for (std::size_t i = 0; i < dose.size(); ++i) {
    if (ptv[i] > 0.5) out[i] = prescription;
  }
  return out;
}

namespace {

struct AxisTaps {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> t;
};

AxisTaps axis_taps(const Geometry& src, const Geometry& dst, int axis) {
  const int n_src = src.dims[axis];
  const int n_dst = dst.dims[axis];
  AxisTaps taps;
  taps.lo.resize(n_dst);
  taps.hi.resize(n_dst);
  taps.t.resize(n_dst);
  for (int i = 0; i < n_dst; ++i) {
    const double p = dst.origin[axis] + i * dst.spacing[axis];
    double c = (p - src.origin[axis]) / src.spacing[axis];
    const double r = std::round(c);
    if (std::abs(c - r) < 1e-9) c = r;
    c = std::clamp(c, 0.0, static_cast<double>(n_src - 1));
    int i0 = static_cast<int>(std::floor(c));
    if (i0 > n_src - 2) i0 = std::max(n_src - 2, 0);
    taps.lo[i] = i0;
    taps.hi[i] = std::min(i0 + 1, n_src - 1);
    taps.t[i] = c - i0;
  }
  return taps;
}

}  // namespace

Grid3 resample(const Grid3& src, const Geometry& target) {
  for (int a = 0; a < 3; ++a) {
    if (target.dims[a] < 1) fail_validation("resample: degenerate target dims " + describe(target));
  }
  target.validate();
  if (src.geometry() == target) return src;
  const AxisTaps tx = axis_taps(src.geometry(), target, 0);
  const AxisTaps ty = axis_taps(src.geometry(), target, 1);
  const AxisTaps tz = axis_taps(src.geometry(), target, 2);
  Grid3 out(target);
  for (int z = 0; z < target.dims[2]; ++z) {
    const double wz = tz.t[z];
    for (int y = 0; y < target.dims[1]; ++y) {
      const double wy = ty.t[y];
      for (int x = 0; x < target.dims[0]; ++x) {
        const double wx = tx.t[x];
        const auto v = [&](int xi, int yi, int zi) { return src(xi, yi, zi); };
        const double c00 = v(tx.lo[x], ty.lo[y], tz.lo[z]) * (1.0 - wx) + v(tx.hi[x], ty.lo[y], tz.lo[z]) * wx;
        const double c10 = v(tx.lo[x], ty.hi[y], tz.lo[z]) * (1.0 - wx) + v(tx.hi[x], ty.hi[y], tz.lo[z]) * wx;
        const double c01 = v(tx.lo[x], ty.lo[y], tz.hi[z]) * (1.0 - wx) + v(tx.hi[x], ty.lo[y], tz.hi[z]) * wx;
        const double c11 = v(tx.lo[x], ty.hi[y], tz.hi[z]) * (1.0 - wx) + v(tx.hi[x], ty.hi[y], tz.hi[z]) * wx;
        const double c0 = c00 * (1.0 - wy) + c10 * wy;
        const double c1 = c01 * (1.0 - wy) + c11 * wy;
        out(x, y, z) = c0 * (1.0 - wz) + c1 * wz;
      }
    }
  }
  return out;
}

Grid3 resample_mask(const Grid3& mask, const Geometry& target) {
  Grid3 out = resample(mask, target);
  for (double& v : out.values()) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

std::vector<std::string> default_channel_order() {
  std::vector<std::string> order(kOarNames.begin(), kOarNames.end());
  order.emplace_back(kPtv);
  return order;
}

std::vector<Grid3> one_hot(const StructureSet& structures, const std::vector<std::string>& order) {
  std::vector<Grid3> channels;
  channels.reserve(order.size());
  for (const auto& name : order) {
    if (!structures.contains(name)) fail_validation("one_hot: missing structure '" + name + "'");
    Grid3 ch(structures.geometry());
    const Grid3& m = structures.mask(name);
    for (std::size_t i = 0; i < m.size(); ++i) ch[i] = m[i] > 0.5 ? 1.0 : 0.0;
    channels.push_back(std::move(ch));
  }
  return channels;
}

CropWindow union_bounding_box(const StructureSet& structures) {
  const Index3 dims = structures.geometry().dims;
  CropWindow box{{dims[0], dims[1], dims[2]}, {-1, -1, -1}};
  for (const auto& [name, m] : structures.entries()) {
    for (int z = 0; z < dims[2]; ++z) {
      for (int y = 0; y < dims[1]; ++y) {
        for (int x = 0; x < dims[0]; ++x) {
          if (m(x, y, z) <= 0.5) continue;
          const Index3 p{x, y, z};
          for (int a = 0; a < 3; ++a) {
            box.begin[a] = std::min(box.begin[a], p[a]);
            box.end[a] = std::max(box.end[a], p[a]);
          }
        }
      }
    }
  }
  if (box.end[0] < 0) fail_validation("crop: structure set has no voxels");
  return box;
}

CropWindow center_crop_window(const CropWindow& box, const Index3& volume_dims,
                              const Index3& crop_dims) {
  std::ostringstream overflow;
  bool too_big = false;
  for (int a = 0; a < 3; ++a) {
    if (crop_dims[a] < 1 || crop_dims[a] > volume_dims[a]) {
      fail_validation("crop: window " + std::to_string(crop_dims[a]) + " on axis " +
                      std::to_string(a) + " does not fit volume extent " +
                      std::to_string(volume_dims[a]));
    }
    const int ext = box.end[a] - box.begin[a] + 1;
    if (ext > crop_dims[a]) {
      too_big = true;
      overflow << " axis " << "xyz"[a] << ": structures span " << ext << " > window "
               << crop_dims[a] << " (overflow " << ext - crop_dims[a] << ")";
    }
  }
  if (too_big) fail_validation("crop: mask union larger than crop window;" + overflow.str());

  CropWindow w;
  for (int a = 0; a < 3; ++a) {
    const int center = (box.begin[a] + box.end[a]) / 2;
    int begin = center - crop_dims[a] / 2;
    if (begin > box.begin[a]) begin = box.begin[a];
    if (begin + crop_dims[a] - 1 < box.end[a]) begin = box.end[a] - crop_dims[a] + 1;
    begin = std::clamp(begin, 0, volume_dims[a] - crop_dims[a]);
    w.begin[a] = begin;
    w.end[a] = begin + crop_dims[a] - 1;
  }
  return w;
}

Grid3 crop(const Grid3& src, const CropWindow& window) {
  const Geometry& g = src.geometry();
  for (int a = 0; a < 3; ++a) {
    if (window.begin[a] < 0 || window.end[a] >= g.dims[a] || window.end[a] < window.begin[a])
      fail_validation("crop: window outside volume " + describe(g));
  }
  Geometry out_g = g;
  out_g.dims = window.extent();
  out_g.origin = g.position(window.begin[0], window.begin[1], window.begin[2]);
  Grid3 out(out_g);
  for (int z = 0; z < out_g.dims[2]; ++z) {
    for (int y = 0; y < out_g.dims[1]; ++y) {
      for (int x = 0; x < out_g.dims[0]; ++x) {
        out(x, y, z) = src(x + window.begin[0], y + window.begin[1], z + window.begin[2]);
      }
    }
  }
  return out;
}

Geometry regrid(const Geometry& g, const Index3& dims) {
  Geometry out;
  out.dims = dims;
  const Vec3 lo = g.lower_corner();
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) fail_validation("regrid: degenerate target dims");
    out.spacing[a] = g.spacing[a] * g.dims[a] / dims[a];
    out.origin[a] = lo[a] + 0.5 * out.spacing[a];
  }
  if (dims == g.dims) return g;
  return out;
}

CaseBundle crop_resample(const CaseBundle& c, const Index3& crop_dims, const Index3& out_dims) {
  const Geometry& g = c.ct.geometry();
  const Index3 window_dims = crop_dims == Index3{0, 0, 0} ? g.dims : crop_dims;
  const CropWindow window =
      center_crop_window(union_bounding_box(c.structures), g.dims, window_dims);

  CaseBundle out;
  out.meta = c.meta;
  out.beams = c.beams;
  Grid3 ct = crop(c.ct, window);
  const Geometry target = regrid(ct.geometry(), out_dims);
  out.ct = resample(ct, target);
  out.reference_dose = resample(crop(c.reference_dose, window), target);
  if (c.beam_channel) out.beam_channel = resample(crop(*c.beam_channel, window), target);
  out.structures = StructureSet(target);
  for (const auto& [name, m] : c.structures.entries()) {
    const Grid3 soft = resample(crop(m, window), target);
    Grid3 mask(target);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = soft[i] >= 0.5 ? 1.0 : 0.0;
    // A structure thinner than the output voxels keeps its most covered voxel.
    if (count_inside(mask) == 0 && count_inside(m) > 0) {
      const auto v = soft.values();
      mask[static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin())] = 1.0;
    }
    out.structures.set(name, std::move(mask));
  }
  return out;
}

Grid3 prepare_dose(const Grid3& dose, const Geometry& ct_geometry, const Grid3& ptv,
                   const PreprocessOptions& opts, double prescription,
                   const std::string& case_id) {
  Grid3 d = resample(dose, ct_geometry);
  d = clip_dose(d, 0.0, opts.dose_hi);
  d = normalize_ptv_mean(d, ptv, prescription, case_id).dose;
  if (opts.ptv_override) d = override_ptv_dose(d, ptv, prescription);
  return d;
}

CaseBundle preprocess_case(const CaseBundle& raw, const PreprocessOptions& opts) {
  raw.structures.validate();
  CaseBundle staged = raw;
  staged.reference_dose = prepare_dose(raw.reference_dose, raw.ct.geometry(),
                                       raw.structures.mask(kPtv), opts,
                                       raw.meta.prescription_gy, raw.meta.case_id);
  if (staged.beam_channel) staged.beam_channel = resample(*staged.beam_channel, raw.ct.geometry());
  staged.validate();
  return crop_resample(staged, opts.crop_dims, opts.out_dims);
}

}  // namespace dosepred
