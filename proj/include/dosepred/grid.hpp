#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dosepred {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int, 3>;

/// Voxel lattice placement. `origin` is the physical position (mm) of the
/// center of voxel (0,0,0); voxel (i,j,k) sits at origin + (i,j,k) * spacing.
struct Geometry {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const noexcept {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int x, int y, int z) const noexcept {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
  }
  Index3 unravel(std::size_t i) const noexcept;
  Vec3 position(int x, int y, int z) const noexcept {
    return {origin[0] + x * spacing[0], origin[1] + y * spacing[1],
            origin[2] + z * spacing[2]};
  }
  /// Continuous voxel coordinate of a physical point.
  Vec3 to_index(const Vec3& p) const noexcept {
    return {(p[0] - origin[0]) / spacing[0], (p[1] - origin[1]) / spacing[1],
            (p[2] - origin[2]) / spacing[2]};
  }
  /// Physical bounding box of the voxel footprints (lower and upper faces).
  Vec3 lower_corner() const noexcept;
  Vec3 upper_corner() const noexcept;

  /// Throws a validation error unless dims >= 1 and spacing > 0 (and finite).
  void validate() const;

  bool operator==(const Geometry&) const = default;
};

std::string describe(const Geometry& g);

/// Dense scalar field on a Geometry, x-fastest storage.
class Grid3 {
 public:
  Grid3() : values_(1, 0.0) {}
  explicit Grid3(const Geometry& geometry, double fill = 0.0);
  /// Validates geometry, value count and finiteness.
  Grid3(const Geometry& geometry, std::vector<double> values);

  const Geometry& geometry() const noexcept { return geometry_; }
  const Index3& dims() const noexcept { return geometry_.dims; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator()(int x, int y, int z) const noexcept {
    return values_[geometry_.index(x, y, z)];
  }
  double& operator()(int x, int y, int z) noexcept {
    return values_[geometry_.index(x, y, z)];
  }

  /// Trilinear lookup at a continuous voxel coordinate; positions outside the
  /// lattice clamp to the boundary voxel.
  double sample_index(const Vec3& c) const noexcept;
  double sample(const Vec3& physical) const noexcept {
    return sample_index(geometry_.to_index(physical));
  }

  /// Throws a validation error naming the first non-finite voxel.
  void require_finite(const std::string& what) const;

  bool operator==(const Grid3&) const = default;

 private:
  Geometry geometry_;
  std::vector<double> values_;
};

/// Number of voxels with value > 0.5.
std::size_t count_inside(const Grid3& mask);
bool is_binary(const Grid3& mask);
void require_same_geometry(const Grid3& a, const Grid3& b,
                           const std::string& what);

/// Deterministic pairwise (cascade) summation.
double pairwise_sum(std::span<const double> xs);

/// Mean of `values` over voxels where mask > 0.5, pairwise summed.
double masked_mean(const Grid3& values, const Grid3& mask);

// .g3 volume files: one line of minified JSON header, then binary32 LE data.
void write_g3(const std::filesystem::path& path, const Grid3& grid);
Grid3 read_g3(const std::filesystem::path& path);
std::string g3_header(const Geometry& g);

}  // namespace dosepred
