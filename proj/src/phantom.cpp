#include "dosepred/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <Eigen/Dense>

#include "dosepred/beamsim.hpp"
#include "dosepred/error.hpp"
#include "dosepred/preprocess.hpp"
#include "dosepred/rng.hpp"

namespace dosepred {

namespace {

constexpr double kHuAir = -1000.0;
constexpr double kHuWater = 0.0;
constexpr double kHuLung = -700.0;
constexpr double kHuHeart = 40.0;
constexpr double kHuEsophagus = 20.0;
constexpr double kHuCord = 300.0;
constexpr double kHuTumor = 30.0;

constexpr int kMaxAttempts = 25;

double draw(Rng& rng, const Range& r) { return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi); }

void require_range(const Range& r, const char* name, bool allow_zero = false) {
  const bool ok = allow_zero ? (r.lo >= 0.0 && r.hi >= r.lo) : (r.lo > 0.0 && r.hi > r.lo);
  if (!ok) fail_validation(std::string("phantom config: degenerate range '") + name + "'");
}

struct Ellipsoid {
  Vec3 c{};
  Vec3 r{};
  bool contains(const Vec3& p) const noexcept {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = (p[a] - c[a]) / r[a];
      s += d * d;
    }
    return s <= 1.0;
  }
};

// Infinite cylinder along z.
struct Tube {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;
  bool contains(const Vec3& p) const noexcept {
    const double dx = p[0] - cx;
    const double dy = p[1] - cy;
    return dx * dx + dy * dy <= r * r;
  }
};

std::string case_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

bool try_build(const PhantomConfig& cfg, Rng& rng, CaseBundle& out) {
  Geometry g;
  g.dims = cfg.dims;
  g.spacing = cfg.spacing;
  for (int a = 0; a < 3; ++a) g.origin[a] = -0.5 * (g.dims[a] - 1) * g.spacing[a];

  const double body_a = draw(rng, cfg.body_semi_x);
  const double body_b = draw(rng, cfg.body_semi_y);
  const double body_y = uniform(rng, -10.0, 10.0);
  const Ellipsoid body{{0.0, body_y, 0.0}, {body_a, body_b, 1e9}};

  Ellipsoid lungs[2];  // 0: right (-x), 1: left (+x)
  for (int s = 0; s < 2; ++s) {
    const double side = s == 0 ? -1.0 : 1.0;
    const double cx = side * (0.42 * body_a + uniform(rng, -8.0, 8.0));
    const double cy = body_y - 0.05 * body_b + uniform(rng, -8.0, 8.0);
    const double cz = uniform(rng, -15.0, 15.0);
    const double ax = std::min(draw(rng, cfg.lung_semi_x), 0.9 * body_a - std::abs(cx));
    const double ay = std::min(draw(rng, cfg.lung_semi_y), 0.85 * body_b);
    const double az = draw(rng, cfg.lung_semi_z);
    if (ax <= 0.0) return false;
    lungs[s] = Ellipsoid{{cx, cy, cz}, {ax, ay, az}};
  }
  const double hr = draw(rng, cfg.heart_radius);
  const Ellipsoid heart{{0.1 * body_a + uniform(rng, -5.0, 5.0), body_y - 0.35 * body_b,
                         uniform(rng, -40.0, -10.0)},
                        {hr, 0.85 * hr, 0.9 * hr}};
  const Tube cord{uniform(rng, -3.0, 3.0), body_y + 0.62 * body_b, draw(rng, cfg.cord_radius)};
  const Tube esophagus{uniform(rng, -8.0, 2.0), body_y + 0.3 * body_b,
                       draw(rng, cfg.esophagus_radius)};

  const int ptv_side = uniform(rng, 0.0, 1.0) < 0.5 ? 0 : 1;
  const Ellipsoid& host = lungs[ptv_side];
  const double pr = draw(rng, cfg.ptv_radius);
  Vec3 pc{};
  for (int a = 0; a < 3; ++a) pc[a] = host.c[a] + cfg.ptv_placement * uniform(rng, -1.0, 1.0) * host.r[a];
  const Ellipsoid ptv_ball{pc, {pr, pr, pr}};

  Grid3 ct(g, kHuAir);
  Grid3 m_ptv(g), m_eso(g), m_cord(g), m_heart(g), m_lung_l(g), m_lung_r(g);
  for (int z = 0; z < g.dims[2]; ++z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const Vec3 p = g.position(x, y, z);
        if (!body.contains(p)) continue;
        const std::size_t i = g.index(x, y, z);
        double hu = kHuWater;
        const bool in_heart = heart.contains(p);
        const bool in_cord = cord.contains(p);
        const bool in_eso = esophagus.contains(p) && !in_cord;
        const bool solid = in_heart || in_cord || in_eso;
        if (!solid && lungs[0].contains(p)) {
          m_lung_r[i] = 1.0;
          hu = kHuLung;
        }
        if (!solid && lungs[1].contains(p)) {
          m_lung_l[i] = 1.0;
          hu = kHuLung;
        }
        if (in_heart) {
          m_heart[i] = 1.0;
          hu = kHuHeart;
        }
        if (in_eso) {
          m_eso[i] = 1.0;
          hu = kHuEsophagus;
        }
        if (in_cord) {
          m_cord[i] = 1.0;
          hu = kHuCord;
        }
        if (ptv_ball.contains(p)) {
          m_ptv[i] = 1.0;
          if (!in_cord) hu = kHuTumor;
        }
        ct[i] = hu;
      }
    }
  }

  StructureSet ss(g);
  ss.set("ptv", std::move(m_ptv));
  ss.set("esophagus", std::move(m_eso));
  ss.set("cord", std::move(m_cord));
  ss.set("heart", std::move(m_heart));
  ss.set("lung_l", std::move(m_lung_l));
  ss.set("lung_r", std::move(m_lung_r));
  for (const auto& [name, m] : ss.entries()) {
    if (count_inside(m) == 0) return false;
  }

  BeamSpec beams;
  const int n_beams = cfg.beams_min + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                           cfg.beams_max - cfg.beams_min + 1));
  const double step = 360.0 / n_beams;
  const double offset = uniform(rng, 0.0, step);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int k = 0; k < n_beams; ++k) {
    double a = offset + k * step + cfg.angle_jitter_deg * jitter(rng);
    a = std::fmod(a, 360.0);
    if (a < 0.0) a += 360.0;
    if (a >= 360.0) a = 0.0;
    beams.angles_deg.push_back(a);
  }
  std::sort(beams.angles_deg.begin(), beams.angles_deg.end());
  beams.isocenter = mask_centroid(ss.mask(kPtv));

  out.ct = std::move(ct);
  out.structures = std::move(ss);
  out.beams = std::move(beams);
  return true;
}

}  // namespace

PhantomConfig PhantomConfig::with_dims(int n, std::uint64_t seed) {
  PhantomConfig cfg;
  cfg.seed = seed;
  cfg.dims = {n, n, n};
  cfg.spacing = {448.0 / n, 448.0 / n, 320.0 / n};
  return cfg;
}

void PhantomConfig::validate() const {
  Geometry{dims, spacing, {}}.validate();
  require_range(body_semi_x, "body_semi_x");
  require_range(body_semi_y, "body_semi_y");
  require_range(lung_semi_x, "lung_semi_x");
  require_range(lung_semi_y, "lung_semi_y");
  require_range(lung_semi_z, "lung_semi_z");
  require_range(heart_radius, "heart_radius");
  require_range(cord_radius, "cord_radius");
  require_range(esophagus_radius, "esophagus_radius");
  require_range(ptv_radius, "ptv_radius");
  if (beams_min < 5 || beams_max > 7 || beams_min > beams_max)
    fail_validation("phantom config: beam count range must lie within [5, 7]");
  if (!(ptv_placement >= 0.0 && ptv_placement <= 1.0))
    fail_validation("phantom config: ptv_placement must lie in [0, 1]");
  if (!(angle_jitter_deg >= 0.0)) fail_validation("phantom config: negative angle jitter");
  kernel.validate();
}

void PerturbSpec::validate() const {
  if (!(weight_jitter >= 0.0) || !(norm_jitter >= 0.0))
    fail_validation("perturb spec: jitter magnitudes must be >= 0");
  require_range(blur_sigma_mm, "blur_sigma_mm", true);
}

CaseBundle generate_case(const PhantomConfig& cfg, int index) {
  cfg.validate();
  if (index < 0) fail_validation("generate_case: negative case index");
  Rng rng(derive_seed(cfg.seed, "phantom", static_cast<std::uint64_t>(index)));
  CaseBundle c;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) ok = try_build(cfg, rng, c);
  if (!ok) {
    fail_validation("generate_case: geometry sampling failed for case " + case_name(index) +
                    " after " + std::to_string(kMaxAttempts) + " attempts");
  }
  c.meta.case_id = case_name(index);
  c.meta.plan = PlanKind::consistent;
  c.meta.prescription_gy = kPrescriptionGy;
  const auto doses = beam_doses(c.ct, c.structures.mask(kPtv), c.beams, cfg.kernel);
  c.reference_dose = weight_beams(doses, c.structures).dose;
  c.beam_channel = sum_beams(doses);
  return c;
}

ReferencePlan weight_beams(const std::vector<Grid3>& doses, const StructureSet& structures,
                           double prescription) {
  if (doses.empty()) fail_validation("weight_beams: no beams");
  const Grid3& ptv = structures.mask(kPtv);
  const auto n = static_cast<Eigen::Index>(doses.size());

  std::vector<double> ptv_mean(doses.size());
  for (std::size_t k = 0; k < doses.size(); ++k) ptv_mean[k] = masked_mean(doses[k], ptv);

  std::vector<std::string> oars;
  for (auto name : kOarNames) {
    if (structures.contains(name) && count_inside(structures.mask(name)) > 0) oars.emplace_back(name);
  }

  constexpr double oar_weight = 1.0;
  constexpr double ridge = 0.05;
  double p2 = 0.0;
  double psum = 0.0;
  for (double p : ptv_mean) {
    p2 += p * p;
    psum += p;
  }
  const double uniform_w = psum > 0.0 ? prescription / psum : 1.0;

  const Eigen::Index rows = 1 + static_cast<Eigen::Index>(oars.size()) + n;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
  for (Eigen::Index k = 0; k < n; ++k) A(0, k) = ptv_mean[static_cast<std::size_t>(k)];
  b(0) = prescription;
  for (std::size_t s = 0; s < oars.size(); ++s) {
    const Grid3& m = structures.mask(oars[s]);
    for (Eigen::Index k = 0; k < n; ++k) {
      A(1 + static_cast<Eigen::Index>(s), k) =
          std::sqrt(oar_weight) * masked_mean(doses[static_cast<std::size_t>(k)], m);
    }
  }
  const double mu = std::sqrt(ridge * p2 / static_cast<double>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    A(1 + static_cast<Eigen::Index>(oars.size()) + k, k) = mu;
    b(1 + static_cast<Eigen::Index>(oars.size()) + k) = mu * uniform_w;
  }

  ReferencePlan plan;
  const Eigen::MatrixXd normal = A.transpose() * A;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  Eigen::VectorXd w;
  bool singular = ldlt.info() != Eigen::Success || !(psum > 0.0);
  if (!singular) {
    w = ldlt.solve(A.transpose() * b);
    singular = ldlt.info() != Eigen::Success || !w.allFinite();
  }
  plan.weights.resize(doses.size());
  if (singular) {
    plan.fallback = true;
    std::fill(plan.weights.begin(), plan.weights.end(), 1.0);
  } else {
    for (Eigen::Index k = 0; k < n; ++k)
      plan.weights[static_cast<std::size_t>(k)] = std::max(w(k), 0.05 * uniform_w);
  }

  Grid3 total(doses.front().geometry());
  for (std::size_t k = 0; k < doses.size(); ++k) {
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += plan.weights[k] * doses[k][i];
  }
  NormalizedDose nd = normalize_ptv_mean(total, ptv, prescription);
  plan.dose = std::move(nd.dose);
  plan.scale = nd.scale;
  return plan;
}

ReferencePlan make_reference_plan(const Grid3& ct, const StructureSet& structures,
                                  const BeamSpec& beams, const BeamKernelParams& kernel) {
  structures.validate();
  return weight_beams(beam_doses(ct, structures.mask(kPtv), beams, kernel), structures);
}

Grid3 gaussian_blur(const Grid3& src, double sigma_mm) {
  if (!(sigma_mm > 0.0)) return src;
  const Geometry& g = src.geometry();
  Grid3 cur = src;
  for (int axis = 0; axis < 3; ++axis) {
    const double s = sigma_mm / g.spacing[axis];
    const int r = static_cast<int>(std::ceil(4.0 * s));
    if (r == 0) continue;
    std::vector<double> k(2 * r + 1);
    double ksum = 0.0;
    for (int t = -r; t <= r; ++t) ksum += k[t + r] = std::exp(-0.5 * t * t / (s * s));
    for (double& w : k) w /= ksum;
    Grid3 next(g);
    const int n = g.dims[axis];
    for (int z = 0; z < g.dims[2]; ++z) {
      for (int y = 0; y < g.dims[1]; ++y) {
        for (int x = 0; x < g.dims[0]; ++x) {
          Index3 p{x, y, z};
          const int c = p[axis];
          double acc = 0.0;
          for (int t = -r; t <= r; ++t) {
            p[axis] = std::clamp(c + t, 0, n - 1);
            acc += k[t + r] * cur(p[0], p[1], p[2]);
          }
          next(x, y, z) = acc;
        }
      }
    }
    cur = std::move(next);
  }
  return cur;
}

Grid3 perturb_plan(const Grid3& dose, const Grid3& ptv, const PerturbSpec& spec,
                   std::string_view case_id, double prescription) {
  spec.validate();
  require_same_geometry(dose, ptv, "perturb_plan");
  dose.require_finite("perturb_plan");
  if (spec.is_identity()) return dose;

  Rng rng(derive_seed(spec.seed, "perturb", fnv1a(case_id)));
  const double sigma = draw(rng, spec.blur_sigma_mm);
  constexpr int sectors = 8;
  std::normal_distribution<double> normal(0.0, 1.0);
  double eps[sectors];
  for (double& e : eps) e = spec.weight_jitter * normal(rng);
  const double eta = spec.norm_jitter * normal(rng);

  Grid3 out = gaussian_blur(dose, sigma);

  const Vec3 c = mask_centroid(ptv);
  const Geometry& g = dose.geometry();
  for (int z = 0; z < g.dims[2]; ++z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const Vec3 p = g.position(x, y, z);
        const double phi = std::atan2(p[1] - c[1], p[0] - c[0]);
        const double s = (phi + std::numbers::pi) / (2.0 * std::numbers::pi) * sectors;
        const double fl = std::floor(s);
        const int k0 = static_cast<int>(fl) % sectors;
        const int k1 = (k0 + 1) % sectors;
        const double t = s - fl;
        const double m = std::max(0.0, 1.0 + (1.0 - t) * eps[k0] + t * eps[k1]);
        out(x, y, z) *= m;
      }
    }
  }
  const double mean = masked_mean(out, ptv);
  if (!(mean > 0.0)) fail_numeric("perturb_plan: PTV mean vanished for case " + std::string(case_id));
  const double scale = prescription * (1.0 + eta) / mean;
  for (double& v : out.values()) v *= scale;
  return out;
}

DatasetSplit split_dataset(int n_cases, int n_test, std::uint64_t seed) {
  if (n_cases < 1 || n_test < 0 || n_test >= n_cases)
    fail_validation("split_dataset: need 0 <= n_test < n_cases");
  std::vector<int> ids(static_cast<std::size_t>(n_cases));
  for (int i = 0; i < n_cases; ++i) ids[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::size_t j = rng() % (i + 1);
    std::swap(ids[i], ids[j]);
  }
  DatasetSplit split;
  split.test.assign(ids.begin(), ids.begin() + n_test);
  split.train.assign(ids.begin() + n_test, ids.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

}  // namespace dosepred
