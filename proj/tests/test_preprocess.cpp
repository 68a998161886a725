#include <doctest.h>

#include <cmath>

#include "dosepred/error.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/preprocess.hpp"
#include "support.hpp"

using namespace dosepred;

TEST_CASE("ct clip and rescale endpoints") {
  Grid3 ct(testing::cube(2));
  ct[0] = -1000.0;
  ct[1] = 3071.0;
  ct[2] = 1035.5;
  ct[3] = -5000.0;
  ct[4] = 9000.0;
  const Grid3 r = clip_rescale_ct(ct);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 1.0);
  CHECK(r[2] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r[3] == 0.0);
  CHECK(r[4] == 1.0);

  std::mt19937_64 rng(1);
  const Grid3 any = clip_rescale_ct(testing::random_grid(testing::cube(6), rng, -1e5, 1e5));
  for (double v : any.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("dose clipping") {
  Grid3 d(testing::cube(1));
  d[0] = 80.0;
  CHECK(clip_dose(d)[0] == 70.0);
  d[0] = -3.0;
  CHECK(clip_dose(d)[0] == 0.0);
  d[0] = 42.0;
  CHECK(clip_dose(d)[0] == 42.0);
}

TEST_CASE("ptv mean normalization") {
  Grid3 dose(testing::cube(4)), ptv(testing::cube(4));
  std::mt19937_64 rng(5);
  dose = testing::random_grid(testing::cube(4), rng, 10.0, 50.0);
  for (std::size_t i = 0; i < ptv.size(); i += 3) ptv[i] = 1.0;
  const NormalizedDose n = normalize_ptv_mean(dose, ptv);
  CHECK(masked_mean(n.dose, ptv) == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(n.scale == doctest::Approx(60.0 / masked_mean(dose, ptv)).epsilon(1e-14));

  Grid3 thirty(testing::cube(4), 30.0);
  CHECK(normalize_ptv_mean(thirty, ptv).scale == doctest::Approx(2.0));
  const Grid3 uniform(testing::cube(4), 20.0);
  const NormalizedDose scaled = normalize_ptv_mean(uniform, ptv);
  for (double v : scaled.dose.values()) CHECK(v == doctest::Approx(60.0));
  const Grid3 sixty(testing::cube(4), 60.0);
  CHECK(normalize_ptv_mean(sixty, ptv).dose == sixty);

  CHECK_THROWS_AS(normalize_ptv_mean(dose, Grid3(testing::cube(4))), Error);
  CHECK_THROWS_AS(normalize_ptv_mean(Grid3(testing::cube(4)), ptv), Error);
}

TEST_CASE("ptv dose override") {
  Grid3 dose(testing::cube(2), 48.0), ptv(testing::cube(2));
  ptv[3] = 1.0;
  const Grid3 o = override_ptv_dose(dose, ptv);
  CHECK(o[3] == 60.0);
  CHECK(o[2] == 48.0);
  const Grid3 zero(testing::cube(2));
  const Grid3 full(testing::cube(2), 1.0);
  const Grid3 overridden = override_ptv_dose(zero, full);
  for (double v : overridden.values()) CHECK(v == 60.0);
}

TEST_CASE("resampling: identity, constants and affine fields") {
  std::mt19937_64 rng(9);
  const Geometry src_g{{9, 8, 7}, {2.0, 2.5, 3.0}, {-5.0, 1.0, 10.0}};
  const Grid3 r = testing::random_grid(src_g, rng, -1.0, 1.0);
  CHECK(resample(r, src_g) == r);

  const Geometry other{{5, 6, 11}, {3.1, 2.0, 1.7}, {-4.0, 3.0, 9.0}};
  const Grid3 c(src_g, 7.25);
  const Grid3 resampled = resample(c, other);
  for (double v : resampled.values()) CHECK(v == doctest::Approx(7.25).epsilon(1e-14));

  Grid3 f(src_g);
  auto affine = [](const Vec3& p) { return 2.0 * p[0] + 3.0 * p[1] - p[2]; };
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Index3 v = src_g.unravel(i);
    f[i] = affine(src_g.position(v[0], v[1], v[2]));
  }
  // Target strictly inside the source extent.
  const Geometry inner{{6, 5, 4}, {2.3, 2.9, 3.3}, {-3.0, 2.5, 12.0}};
  const Grid3 out = resample(f, inner);
  double worst = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Index3 v = inner.unravel(i);
    worst = std::max(worst, std::abs(out[i] - affine(inner.position(v[0], v[1], v[2]))));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("one-hot channels are independent masks") {
  StructureSet s(testing::cube(2));
  Grid3 ptv(testing::cube(2)), lung(testing::cube(2)), heart(testing::cube(2));
  ptv[0] = lung[0] = 1.0;
  heart[1] = 1.0;
  s.set("ptv", ptv);
  s.set("lung_l", lung);
  s.set("heart", heart);
  const auto ch = one_hot(s, {"heart", "lung_l", "ptv"});
  REQUIRE(ch.size() == 3);
  CHECK(ch[0][1] == 1.0);
  CHECK(ch[1][1] == 0.0);
  CHECK(ch[2][1] == 0.0);
  CHECK(ch[1][0] == 1.0);
  CHECK(ch[2][0] == 1.0);
  CHECK(ch[0][0] == 0.0);
  for (const auto& g : ch) CHECK(g[7] == 0.0);
  CHECK_THROWS_AS(one_hot(s, {"cord"}), Error);
  CHECK(default_channel_order() ==
        std::vector<std::string>{"esophagus", "cord", "heart", "lung_l", "lung_r", "ptv"});
}

TEST_CASE("crop window centers on the structures and clamps to the volume") {
  const CropWindow box{{190, 170, 54}, {210, 190, 74}};
  const CropWindow w = center_crop_window(box, {512, 512, 128}, {300, 300, 128});
  CHECK(w.begin == Index3{50, 30, 0});
  CHECK(w.end == Index3{349, 329, 127});

  const CropWindow edge = center_crop_window({{0, 500, 3}, {10, 510, 5}}, {512, 512, 128},
                                             {300, 300, 64});
  CHECK(edge.begin == Index3{0, 212, 0});
  CHECK(edge.end == Index3{299, 511, 63});

  CHECK_THROWS_AS(center_crop_window({{0, 0, 0}, {400, 10, 10}}, {512, 512, 128},
                                     {300, 300, 128}),
                  Error);
}

namespace {

CaseBundle small_case() {
  const Geometry g = testing::cube(12, 2.0);
  CaseBundle c;
  c.ct = Grid3(g, 0.0);
  c.reference_dose = Grid3(g, 0.0);
  for (std::size_t i = 0; i < c.ct.size(); ++i) {
    c.ct[i] = static_cast<double>(i % 97) * 10.0 - 300.0;
    c.reference_dose[i] = static_cast<double>(i % 61);
  }
  c.structures = StructureSet(g);
  Grid3 ptv(g);
  for (int z = 4; z < 8; ++z)
    for (int y = 5; y < 7; ++y)
      for (int x = 3; x < 9; ++x) ptv(x, y, z) = 1.0;
  c.structures.set("ptv", ptv);
  c.beams.angles_deg = {0.0, 180.0};
  c.meta.case_id = "t";
  return c;
}

}  // namespace

TEST_CASE("crop_resample degenerates to identity and to a pure crop") {
  const CaseBundle c = small_case();
  const CaseBundle same = crop_resample(c, {12, 12, 12}, {12, 12, 12});
  CHECK(same.ct == c.ct);
  CHECK(same.reference_dose == c.reference_dose);
  CHECK(same.structures.mask("ptv") == c.structures.mask("ptv"));

  const CaseBundle cropped = crop_resample(c, {8, 8, 8}, {8, 8, 8});
  CHECK(cropped.ct.dims() == Index3{8, 8, 8});
  CHECK(count_inside(cropped.structures.mask("ptv")) == count_inside(c.structures.mask("ptv")));
  // Same physical position carries the same value.
  const Geometry& g = cropped.ct.geometry();
  const Vec3 p = g.position(3, 3, 3);
  const Vec3 src = c.ct.geometry().to_index(p);
  CHECK(cropped.ct(3, 3, 3) ==
        c.ct(static_cast<int>(std::lround(src[0])), static_cast<int>(std::lround(src[1])),
             static_cast<int>(std::lround(src[2]))));
}

TEST_CASE("thin structures survive downsampling") {
  CaseBundle c = small_case();
  Grid3 cord(c.ct.geometry());
  cord(6, 6, 2) = 1.0;
  c.structures.set("cord", cord);
  const CaseBundle out = crop_resample(c, {12, 12, 12}, {4, 4, 4});
  CHECK(count_inside(out.structures.mask("cord")) >= 1);
  CHECK(is_binary(out.structures.mask("cord")));
}

TEST_CASE("preprocess_case produces a normalized dose on the output grid") {
  const CaseBundle c = small_case();
  PreprocessOptions opts;
  opts.out_dims = {8, 8, 8};
  const CaseBundle p = preprocess_case(c, opts);
  CHECK(p.reference_dose.geometry() == p.ct.geometry());
  CHECK(p.ct.dims() == Index3{8, 8, 8});
  for (double v : p.reference_dose.values()) CHECK(v >= 0.0);

  opts.ptv_override = true;
  opts.out_dims = {12, 12, 12};  // no interpolation across the PTV edge
  const CaseBundle o = preprocess_case(c, opts);
  const Grid3& ptv = o.structures.mask("ptv");
  for (std::size_t i = 0; i < ptv.size(); ++i)
    if (ptv[i] > 0.5) CHECK(o.reference_dose[i] == doctest::Approx(60.0).epsilon(1e-9));
}
