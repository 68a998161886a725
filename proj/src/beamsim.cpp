#include "dosepred/beamsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dosepred/error.hpp"

namespace dosepred {

double hu_to_density(double hu) noexcept {
  const double rho = hu <= 0.0 ? 1.0 + hu / 1000.0 : 1.0 + 0.5 * hu / 1000.0;
  return std::clamp(rho, 0.0, 2.0);
}

Grid3 hu_to_density(const Grid3& ct) {
  Grid3 out(ct.geometry());
  for (std::size_t i = 0; i < ct.size(); ++i) out[i] = hu_to_density(ct[i]);
  return out;
}

namespace {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Liang-Barsky clip of p0 + t (p1 - p0), t in [0, 1], against an axis-aligned box.
bool clip_segment(const Vec3& p0, const Vec3& p1, const Vec3& lo, const Vec3& hi, double& t0,
                  double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double d = p1[a] - p0[a];
    if (d == 0.0) {
      if (p0[a] < lo[a] || p0[a] > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - p0[a]) / d;
    double tb = (hi[a] - p0[a]) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return false;
  }
  return true;
}

/// Aperture fluence sampled on a regular grid over the isocenter plane.
struct FluenceMap {
  double u0 = 0.0;
  double v0 = 0.0;
  double h = 1.0;
  int nu = 0;
  int nv = 0;
  std::vector<double> f;

  double at(double u, double v) const noexcept {
    const double cu = (u - u0) / h;
    const double cv = (v - v0) / h;
    if (cu < 0.0 || cv < 0.0 || cu > nu - 1 || cv > nv - 1) return 0.0;
    const int i0 = std::min(static_cast<int>(cu), nu - 2);
    const int j0 = std::min(static_cast<int>(cv), nv - 2);
    const double tu = cu - i0;
    const double tv = cv - j0;
    const auto F = [&](int i, int j) { return f[static_cast<std::size_t>(j) * nu + i]; };
    return (F(i0, j0) * (1.0 - tu) + F(i0 + 1, j0) * tu) * (1.0 - tv) +
           (F(i0, j0 + 1) * (1.0 - tu) + F(i0 + 1, j0 + 1) * tu) * tv;
  }
};

std::vector<double> gaussian_kernel(double sigma_cells) {
  const int r = static_cast<int>(std::ceil(6.0 * sigma_cells));
  std::vector<double> k(2 * r + 1);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * (i * i) / (sigma_cells * sigma_cells));
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& w : k) w /= s;
  return k;
}

FluenceMap build_fluence(const Grid3& ptv, const BeamFrame& frame, const BeamSpec& spec,
                         const BeamKernelParams& params) {
  const Geometry& g = ptv.geometry();
  struct Footprint {
    double u, v, hu, hv;
  };
  std::vector<Footprint> feet;
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  const double half_lat =
      0.5 * (std::abs(frame.lateral[0]) * g.spacing[0] + std::abs(frame.lateral[1]) * g.spacing[1]);
  for (int z = 0; z < g.dims[2]; ++z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        if (ptv(x, y, z) <= 0.5) continue;
        double u, v, along;
        frame.project(g.position(x, y, z), u, v, along);
        const double mag = frame.sad / along;
        const Footprint fp{u, v, half_lat * mag, 0.5 * g.spacing[2] * mag};
        umin = std::min(umin, u - fp.hu);
        umax = std::max(umax, u + fp.hu);
        vmin = std::min(vmin, v - fp.hv);
        vmax = std::max(vmax, v + fp.hv);
        feet.push_back(fp);
      }
    }
  }
  if (feet.empty()) fail_validation("beam_dose: empty PTV");

  FluenceMap map;
  const double min_spacing = std::min({g.spacing[0], g.spacing[1], g.spacing[2]});
  map.h = std::min(1.0, min_spacing / 2.0);
  const double pad = spec.margin_mm + 7.0 * params.penumbra_mm + 2.0 * map.h;
  map.u0 = umin - pad;
  map.v0 = vmin - pad;
  map.nu = static_cast<int>(std::ceil((umax - umin + 2.0 * pad) / map.h)) + 1;
  map.nv = static_cast<int>(std::ceil((vmax - vmin + 2.0 * pad) / map.h)) + 1;
  const auto idx = [&](int i, int j) { return static_cast<std::size_t>(j) * map.nu + i; };

  std::vector<unsigned char> open(static_cast<std::size_t>(map.nu) * map.nv, 0);
  for (const auto& fp : feet) {
    const int i0 = std::max(0, static_cast<int>(std::ceil((fp.u - fp.hu - map.u0) / map.h)));
    const int i1 = std::min(map.nu - 1, static_cast<int>(std::floor((fp.u + fp.hu - map.u0) / map.h)));
    const int j0 = std::max(0, static_cast<int>(std::ceil((fp.v - fp.hv - map.v0) / map.h)));
    const int j1 = std::min(map.nv - 1, static_cast<int>(std::floor((fp.v + fp.hv - map.v0) / map.h)));
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) open[idx(i, j)] = 1;
    }
  }

  // Dilate by the margin: stamp a disk from every open cell on the boundary.
  std::vector<unsigned char> dilated = open;
  const int r = static_cast<int>(std::floor(spec.margin_mm / map.h));
  if (r > 0) {
    std::vector<std::pair<int, int>> disk;
    for (int dj = -r; dj <= r; ++dj) {
      for (int di = -r; di <= r; ++di) {
        if ((di * di + dj * dj) * map.h * map.h <= spec.margin_mm * spec.margin_mm)
          disk.emplace_back(di, dj);
      }
    }
    for (int j = 1; j < map.nv - 1; ++j) {
      for (int i = 1; i < map.nu - 1; ++i) {
        if (!open[idx(i, j)]) continue;
        if (open[idx(i - 1, j)] && open[idx(i + 1, j)] && open[idx(i, j - 1)] && open[idx(i, j + 1)])
          continue;
        for (const auto& [di, dj] : disk) {
          const int ii = i + di;
          const int jj = j + dj;
          if (ii >= 0 && jj >= 0 && ii < map.nu && jj < map.nv) dilated[idx(ii, jj)] = 1;
        }
      }
    }
  }

  // Fluence convolution: separable Gaussian blur of the aperture indicator.
  const std::vector<double> k = gaussian_kernel(params.penumbra_mm / map.h);
  const int kr = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(open.size(), 0.0);
  for (int j = 0; j < map.nv; ++j) {
    for (int i = 0; i < map.nu; ++i) {
      double s = 0.0;
      for (int t = -kr; t <= kr; ++t) {
        const int ii = i + t;
        if (ii >= 0 && ii < map.nu && dilated[idx(ii, j)]) s += k[t + kr];
      }
      tmp[idx(i, j)] = s;
    }
  }
  map.f.assign(open.size(), 0.0);
  for (int j = 0; j < map.nv; ++j) {
    for (int i = 0; i < map.nu; ++i) {
      double s = 0.0;
      for (int t = -kr; t <= kr; ++t) {
        const int jj = j + t;
        if (jj >= 0 && jj < map.nv) s += k[t + kr] * tmp[idx(i, jj)];
      }
      map.f[idx(i, j)] = s;
    }
  }
  return map;
}

}  // namespace

double radiological_depth(const Grid3& density, const Vec3& source, const Vec3& point) {
  const Geometry& g = density.geometry();
  double t0 = 0.0;
  double t1 = 0.0;
  if (!clip_segment(source, point, g.lower_corner(), g.upper_corner(), t0, t1)) return 0.0;
  const Vec3 d{point[0] - source[0], point[1] - source[1], point[2] - source[2]};
  const double length = std::sqrt(dot(d, d)) * (t1 - t0);
  if (length <= 0.0) return 0.0;
  const double step = 0.5 * std::min({g.spacing[0], g.spacing[1], g.spacing[2]});
  const int n = std::max(1, static_cast<int>(std::ceil(length / step)));
  const double dt = (t1 - t0) / n;
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const double t = t0 + (k + 0.5) * dt;
    sum += density.sample({source[0] + t * d[0], source[1] + t * d[1], source[2] + t * d[2]});
  }
  return sum * length / n;
}

Vec3 mask_centroid(const Grid3& mask) {
  const Geometry& g = mask.geometry();
  Vec3 c{0.0, 0.0, 0.0};
  std::size_t n = 0;
  for (int z = 0; z < g.dims[2]; ++z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        if (mask(x, y, z) <= 0.5) continue;
        const Vec3 p = g.position(x, y, z);
        for (int a = 0; a < 3; ++a) c[a] += p[a];
        ++n;
      }
    }
  }
  if (n == 0) fail_validation("mask_centroid: empty mask");
  for (double& v : c) v /= static_cast<double>(n);
  return c;
}

BeamFrame BeamFrame::make(const BeamSpec& spec, double angle_deg) {
  const double th = angle_deg * std::numbers::pi / 180.0;
  BeamFrame f;
  f.sad = spec.sad_mm;
  f.axis = {-std::sin(th), std::cos(th), 0.0};
  f.lateral = {std::cos(th), std::sin(th), 0.0};
  f.source = {spec.isocenter[0] - spec.sad_mm * f.axis[0], spec.isocenter[1] - spec.sad_mm * f.axis[1],
              spec.isocenter[2]};
  return f;
}

void BeamFrame::project(const Vec3& p, double& u, double& v, double& along) const noexcept {
  const Vec3 r{p[0] - source[0], p[1] - source[1], p[2] - source[2]};
  along = dot(r, axis);
  const double mag = sad / along;
  u = dot(r, lateral) * mag;
  v = r[2] * mag;
}

double depth_dose(double d, const BeamKernelParams& params) noexcept {
  if (d <= 0.0) return 0.0;
  if (d < params.buildup_mm) return d / params.buildup_mm;
  return std::exp(-params.mu_eff * (d - params.buildup_mm));
}

Grid3 single_beam_dose(const Grid3& density, const Grid3& ptv, const BeamSpec& spec,
                       double angle_deg, const BeamKernelParams& params) {
  require_same_geometry(density, ptv, "single_beam_dose");
  const BeamFrame frame = BeamFrame::make(spec, angle_deg);
  const FluenceMap fluence = build_fluence(ptv, frame, spec, params);
  const Geometry& g = density.geometry();
  Grid3 out(g);
  for (int z = 0; z < g.dims[2]; ++z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const Vec3 p = g.position(x, y, z);
        double u, v, along;
        frame.project(p, u, v, along);
        if (along <= 0.0) continue;
        const double phi = fluence.at(u, v);
        if (phi < 1e-12) continue;
        const double inv_sq = (frame.sad / along) * (frame.sad / along);
        out(x, y, z) = phi * depth_dose(radiological_depth(density, frame.source, p), params) * inv_sq;
      }
    }
  }
  return out;
}

std::vector<Grid3> beam_doses(const Grid3& ct, const Grid3& ptv, const BeamSpec& spec,
                              const BeamKernelParams& params) {
  spec.validate();
  params.validate();
  require_same_geometry(ct, ptv, "beam_dose");
  if (count_inside(ptv) == 0) fail_validation("beam_dose: empty PTV");
  const Grid3 density = hu_to_density(ct);
  std::vector<double> angles = spec.angles_deg;
  std::sort(angles.begin(), angles.end());
  std::vector<Grid3> doses;
  doses.reserve(angles.size());
  for (double a : angles) doses.push_back(single_beam_dose(density, ptv, spec, a, params));
  return doses;
}

Grid3 sum_beams(const std::vector<Grid3>& doses) {
  if (doses.empty()) fail_validation("sum_beams: no beams");
  Grid3 total(doses.front().geometry());
  for (const Grid3& d : doses) {
    require_same_geometry(total, d, "sum_beams");
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += d[i];
  }
  const double peak = *std::max_element(total.values().begin(), total.values().end());
  if (!(peak > 0.0)) fail_numeric("beam_dose: no dose deposited");
  for (double& v : total.values()) v /= peak;
  return total;
}

Grid3 beam_dose(const Grid3& ct, const Grid3& ptv, const BeamSpec& spec,
                const BeamKernelParams& params) {
  return sum_beams(beam_doses(ct, ptv, spec, params));
}

}  // namespace dosepred
