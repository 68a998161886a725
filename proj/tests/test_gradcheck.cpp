#include <doctest.h>

#include "dosepred/gradcheck.hpp"

using namespace dosepred;

TEST_CASE("loss gradients agree with finite differences") {
  const auto results = gradcheck_losses();
  CHECK(results.size() >= 2);
  for (const auto& r : results) {
    INFO(r.name << " error " << r.error);
    CHECK(r.passed);
    CHECK(r.error < r.tolerance);
  }
}

TEST_CASE("network gradients agree with finite differences") {
  const auto results = gradcheck_net3d();
  for (const auto& r : results) {
    INFO(r.name << " error " << r.error);
    CHECK(r.passed);
  }
}
