#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dosepred {

/// Channel-major volume stack: data[((c * d + z) * h + y) * w + x].
template <typename T>
struct Tensor {
  int c = 0;
  int d = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int channels, int depth, int height, int width, T fill = T(0))
      : c(channels), d(depth), h(height), w(width),
        data(static_cast<std::size_t>(channels) * depth * height * width, fill) {}

  std::size_t spatial() const noexcept { return static_cast<std::size_t>(d) * h * w; }
  std::size_t size() const noexcept { return data.size(); }

  std::span<T> channel(int ci) noexcept {
    return {data.data() + static_cast<std::size_t>(ci) * spatial(), spatial()};
  }
  std::span<const T> channel(int ci) const noexcept {
    return {data.data() + static_cast<std::size_t>(ci) * spatial(), spatial()};
  }
  T* row(int ci, int z, int y) noexcept {
    return data.data() + ((static_cast<std::size_t>(ci) * d + z) * h + y) * w;
  }
  const T* row(int ci, int z, int y) const noexcept {
    return data.data() + ((static_cast<std::size_t>(ci) * d + z) * h + y) * w;
  }
  T& at(int ci, int z, int y, int x) noexcept { return row(ci, z, y)[x]; }
  T at(int ci, int z, int y, int x) const noexcept { return row(ci, z, y)[x]; }

  bool same_shape(const Tensor& o) const noexcept {
    return c == o.c && d == o.d && h == o.h && w == o.w;
  }
  bool operator==(const Tensor&) const = default;
};

}  // namespace dosepred
