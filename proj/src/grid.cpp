#include "dosepred/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dosepred/error.hpp"

namespace dosepred {

Index3 Geometry::unravel(std::size_t i) const noexcept {
  const auto nx = static_cast<std::size_t>(dims[0]);
  const auto ny = static_cast<std::size_t>(dims[1]);
  return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny),
          static_cast<int>(i / (nx * ny))};
}

Vec3 Geometry::lower_corner() const noexcept {
  return {origin[0] - 0.5 * spacing[0], origin[1] - 0.5 * spacing[1],
          origin[2] - 0.5 * spacing[2]};
}

Vec3 Geometry::upper_corner() const noexcept {
  return {origin[0] + (dims[0] - 0.5) * spacing[0],
          origin[1] + (dims[1] - 0.5) * spacing[1],
          origin[2] + (dims[2] - 0.5) * spacing[2]};
}

void Geometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) fail_validation("geometry: dims must be >= 1, got " + describe(*this));
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      fail_validation("geometry: spacing must be positive, got " + describe(*this));
    if (!std::isfinite(origin[a]))
      fail_validation("geometry: origin must be finite, got " + describe(*this));
  }
}

std::string describe(const Geometry& g) {
  std::ostringstream os;
  os << g.dims[0] << "x" << g.dims[1] << "x" << g.dims[2] << " @ (" << g.spacing[0]
     << ", " << g.spacing[1] << ", " << g.spacing[2] << ") mm, origin (" << g.origin[0]
     << ", " << g.origin[1] << ", " << g.origin[2] << ")";
  return os.str();
}

Grid3::Grid3(const Geometry& geometry, double fill) : geometry_(geometry) {
  geometry_.validate();
  values_.assign(geometry_.voxel_count(), fill);
}

Grid3::Grid3(const Geometry& geometry, std::vector<double> values)
    : geometry_(geometry), values_(std::move(values)) {
  geometry_.validate();
  if (values_.size() != geometry_.voxel_count()) {
    fail_validation("grid: expected " + std::to_string(geometry_.voxel_count()) +
                    " values, got " + std::to_string(values_.size()));
  }
  require_finite("grid");
}

double Grid3::sample_index(const Vec3& c) const noexcept {
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
  std::array<double, 3> t{};
  for (int a = 0; a < 3; ++a) {
    const int n = geometry_.dims[a];
    const double x = std::clamp(c[a], 0.0, static_cast<double>(n - 1));
    int i0 = static_cast<int>(std::floor(x));
    if (i0 > n - 2) i0 = std::max(n - 2, 0);
    lo[a] = i0;
    hi[a] = std::min(i0 + 1, n - 1);
    t[a] = x - i0;
  }
  const auto v = [&](int x, int y, int z) { return (*this)(x, y, z); };
  const double c00 = v(lo[0], lo[1], lo[2]) * (1.0 - t[0]) + v(hi[0], lo[1], lo[2]) * t[0];
  const double c10 = v(lo[0], hi[1], lo[2]) * (1.0 - t[0]) + v(hi[0], hi[1], lo[2]) * t[0];
  const double c01 = v(lo[0], lo[1], hi[2]) * (1.0 - t[0]) + v(hi[0], lo[1], hi[2]) * t[0];
  const double c11 = v(lo[0], hi[1], hi[2]) * (1.0 - t[0]) + v(hi[0], hi[1], hi[2]) * t[0];
  const double c0 = c00 * (1.0 - t[1]) + c10 * t[1];
  const double c1 = c01 * (1.0 - t[1]) + c11 * t[1];
  return c0 * (1.0 - t[2]) + c1 * t[2];
}

void Grid3::require_finite(const std::string& what) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      const auto ijk = geometry_.unravel(i);
      fail_validation(what + ": non-finite value at voxel " + std::to_string(i) + " (" +
                      std::to_string(ijk[0]) + ", " + std::to_string(ijk[1]) + ", " +
                      std::to_string(ijk[2]) + ")");
    }
  }
}

std::size_t count_inside(const Grid3& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.values().begin(), mask.values().end(), [](double v) { return v > 0.5; }));
}

bool is_binary(const Grid3& mask) {
  return std::all_of(mask.values().begin(), mask.values().end(),
                     [](double v) { return v == 0.0 || v == 1.0; });
}

void require_same_geometry(const Grid3& a, const Grid3& b, const std::string& what) {
  if (!(a.geometry() == b.geometry())) {
    fail_validation(what + ": geometry mismatch " + describe(a.geometry()) + " vs " +
                    describe(b.geometry()));
  }
}

double pairwise_sum(std::span<const double> xs) {
  constexpr std::size_t block = 32;
  if (xs.size() <= block) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

double masked_mean(const Grid3& values, const Grid3& mask) {
  require_same_geometry(values, mask, "masked_mean");
  std::vector<double> picked;
  picked.reserve(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > 0.5) picked.push_back(values[i]);
  }
  if (picked.empty()) fail_validation("masked_mean: empty mask");
  return pairwise_sum(picked) / static_cast<double>(picked.size());
}

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFF) << 24) | ((v & 0xFF00) << 8) | ((v >> 8) & 0xFF00) | (v >> 24);
  }
  return v;
}

template <typename T>
std::array<T, 3> read_triple(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
    fail_io(std::string("g3 header: missing or malformed '") + key + "'");
  return {j[key][0].get<T>(), j[key][1].get<T>(), j[key][2].get<T>()};
}

}  // namespace

std::string g3_header(const Geometry& g) {
  nlohmann::ordered_json h;
  h["dims"] = {g.dims[0], g.dims[1], g.dims[2]};
  h["spacing"] = {g.spacing[0], g.spacing[1], g.spacing[2]};
  h["origin"] = {g.origin[0], g.origin[1], g.origin[2]};
  h["dtype"] = "f32le";
  return h.dump();
}

void write_g3(const std::filesystem::path& path, const Grid3& grid) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_io("cannot open for writing: " + path.string());
  const std::string header = g3_header(grid.geometry()) + "\n";
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::vector<std::uint32_t> words(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    words[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(grid[i])));
  }
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (!out) fail_io("write failed: " + path.string());
}

Grid3 read_g3(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io("cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail_io("g3: missing header in " + path.string());
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail_io("g3: bad header in " + path.string() + ": " + e.what());
  }
  Geometry g;
  try {
    if (h.value("dtype", std::string{}) != "f32le")
      fail_io("g3: unsupported dtype in " + path.string());
    g.dims = read_triple<int>(h, "dims");
    g.spacing = read_triple<double>(h, "spacing");
    g.origin = read_triple<double>(h, "origin");
  } catch (const nlohmann::json::exception& e) {
    fail_io("g3: bad header in " + path.string() + ": " + e.what());
  }
  g.validate();
  std::vector<std::uint32_t> words(g.voxel_count());
  in.read(reinterpret_cast<char*>(words.data()),
          static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
  if (in.gcount() != static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)))
    fail_io("g3: truncated voxel data in " + path.string());
  if (in.peek() != std::char_traits<char>::eof())
    fail_io("g3: trailing bytes after voxel data in " + path.string());
  std::vector<double> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    values[i] = std::bit_cast<float>(to_le(words[i]));
  }
  return Grid3(g, std::move(values));
}

}  // namespace dosepred
