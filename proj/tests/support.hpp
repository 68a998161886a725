#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "dosepred/grid.hpp"

namespace testing {

inline dosepred::Geometry cube(int n, double spacing = 1.0) {
  return {{n, n, n}, {spacing, spacing, spacing}, {0.0, 0.0, 0.0}};
}

inline dosepred::Grid3 random_grid(const dosepred::Geometry& g, std::mt19937_64& rng, double lo,
                                   double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  dosepred::Grid3 out(g);
  for (double& v : out.values()) v = u(rng);
  return out;
}

// Scratch directory removed at scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dosepred_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
