#include <doctest.h>

#include <cmath>
#include <set>

#include "dosepred/beamsim.hpp"
#include "dosepred/case_io.hpp"
#include "dosepred/error.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/rng.hpp"
#include "support.hpp"

using namespace dosepred;

namespace {

const PhantomConfig& small_config() {
  static const PhantomConfig cfg = PhantomConfig::with_dims(32, 21);
  return cfg;
}

}  // namespace

TEST_CASE("derived seeds separate streams and indices") {
  CHECK(derive_seed(1, "shuffle", 0) != derive_seed(1, "dropout", 0));
  CHECK(derive_seed(1, "shuffle", 0) != derive_seed(1, "shuffle", 1));
  CHECK(derive_seed(1, "shuffle", 0) != derive_seed(2, "shuffle", 0));
  CHECK(derive_seed(5, "init") == derive_seed(5, "init"));
}

TEST_CASE("generated cases are deterministic and complete") {
  const CaseBundle a = generate_case(small_config(), 0);
  const CaseBundle b = generate_case(small_config(), 0);
  CHECK(a == b);
  const CaseBundle c = generate_case(small_config(), 1);
  CHECK_FALSE(a.structures.mask("ptv") == c.structures.mask("ptv"));
  for (const CaseBundle* k : {&a, &c}) {
    CHECK(k->structures.size() == 6);
    CHECK(count_inside(k->structures.mask("ptv")) > 0);
    CHECK(k->beam_channel.has_value());
    CHECK(masked_mean(k->reference_dose, k->structures.mask("ptv")) ==
          doctest::Approx(60.0).epsilon(1e-6));
    for (double v : k->reference_dose.values()) CHECK(v >= 0.0);
    k->validate();
  }
}

TEST_CASE("reference plan normalization and single-beam degeneracy") {
  const CaseBundle c = generate_case(small_config(), 2);
  const ReferencePlan p = make_reference_plan(c.ct, c.structures, c.beams, small_config().kernel);
  CHECK(masked_mean(p.dose, c.structures.mask("ptv")) == doctest::Approx(60.0).epsilon(1e-6));
  CHECK(p.weights.size() == c.beams.angles_deg.size());

  BeamSpec one = c.beams;
  one.angles_deg = {c.beams.angles_deg.front()};
  const auto doses = beam_doses(c.ct, c.structures.mask("ptv"), one, small_config().kernel);
  const ReferencePlan q = weight_beams(doses, c.structures);
  double ratio = -1.0;
  for (std::size_t i = 0; i < q.dose.size(); ++i) {
    if (doses[0][i] < 1e-6) continue;
    const double r = q.dose[i] / doses[0][i];
    if (ratio < 0) ratio = r;
    CHECK(r == doctest::Approx(ratio).epsilon(1e-9));
  }
}

TEST_CASE("plan perturbation: identity, determinism and spread") {
  const CaseBundle c = generate_case(small_config(), 3);
  const Grid3& ptv = c.structures.mask("ptv");
  PerturbSpec none;
  none.weight_jitter = 0.0;
  none.norm_jitter = 0.0;
  none.blur_sigma_mm = {0.0, 0.0};
  CHECK(perturb_plan(c.reference_dose, ptv, none, "x") == c.reference_dose);

  PerturbSpec spec;
  CHECK(perturb_plan(c.reference_dose, ptv, spec, "x") ==
        perturb_plan(c.reference_dose, ptv, spec, "x"));

  // Only the PTV-mean jitter: 20 cases, std close to 5% of 60 Gy.
  PerturbSpec norm = none;
  norm.norm_jitter = 0.05;
  std::vector<double> means;
  for (int i = 0; i < 20; ++i) {
    const Grid3 p = perturb_plan(c.reference_dose, ptv, norm, "case" + std::to_string(i));
    means.push_back(masked_mean(p, ptv));
  }
  double mu = 0.0, ss = 0.0;
  for (double m : means) mu += m;
  mu /= means.size();
  for (double m : means) ss += (m - mu) * (m - mu);
  const double sd = std::sqrt(ss / (means.size() - 1));
  CHECK(sd > 1.5);
  CHECK(sd < 4.5);
}

TEST_CASE("gaussian blur preserves constants") {
  const Grid3 c(testing::cube(6, 2.0), 3.5);
  const Grid3 blurred = gaussian_blur(c, 4.0);
  for (double v : blurred.values()) CHECK(v == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(gaussian_blur(c, 0.0) == c);
}

TEST_CASE("dataset split is a seeded partition") {
  const DatasetSplit s = split_dataset(50, 10, 4);
  CHECK(s.train.size() == 40);
  CHECK(s.test.size() == 10);
  std::set<int> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 50);
  CHECK(split_dataset(50, 10, 4) == s);
  CHECK_FALSE(split_dataset(50, 10, 5) == s);
  CHECK_THROWS_AS(split_dataset(5, 6, 1), Error);
}

TEST_CASE("case directories round trip") {
  testing::TempDir tmp;
  const CaseBundle c = generate_case(small_config(), 4);
  const auto dir = case_dir(tmp.path(), c.meta.case_id);
  write_case(dir, c);
  const CaseBundle r = read_case(dir, PlanKind::consistent);
  CHECK(r.structures.names() == c.structures.names());
  CHECK(r.beams == c.beams);
  CHECK(r.meta == c.meta);
  // Stored as binary32.
  for (std::size_t i = 0; i < c.ct.size(); ++i)
    CHECK(r.ct[i] == static_cast<double>(static_cast<float>(c.ct[i])));
  CHECK(list_cases(tmp.path()).size() == 1);
  CHECK_THROWS_AS(read_case(dir, PlanKind::perturbed), Error);
}
