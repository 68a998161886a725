// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <limits>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dosepred/adam.hpp"
#include "dosepred/beamsim.hpp"
#include "dosepred/dvh.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/preprocess.hpp"
#include "dosepred/rng.hpp"
#include "dosepred/score.hpp"
#include "dosepred/trainer.hpp"

using namespace dosepred;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

Geometry cube(int n, double spacing = 1.0) {
  return {{n, n, n}, {spacing, spacing, spacing}, {0.0, 0.0, 0.0}};
}

Grid3 random_grid(const Geometry& g, Rng& rng, double lo, double hi) {
  Grid3 out(g);
  for (double& v : out.values()) v = uniform(rng, lo, hi);
  return out;
}

Grid3 random_mask(const Geometry& g, Rng& rng, double p) {
  Grid3 m(g);
  std::bernoulli_distribution in(p);
  for (double& v : m.values()) v = in(rng) ? 1.0 : 0.0;
  m[rng() % m.size()] = 1.0;
  return m;
}

// max |a - n| / max |n|
double normwise_error(std::span<const double> a, std::span<const double> n) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max(scale, std::abs(n[i]));
  }
  return scale > 0.0 ? diff / scale : diff;
}

std::vector<double> central_differences(Grid3 x, const std::function<double(const Grid3&)>& f,
                                        double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity

Outcome gradient_fidelity() {
  const double h = 1e-3;
  double worst_mae = 0.0, worst_dvh = 0.0;
  for (int k = 0; k < 10; ++k) {
    Rng rng(derive_seed(101, "acceptance-grad", static_cast<std::uint64_t>(k)));
    const Geometry g = cube(8, 2.0);
    Grid3 real = random_grid(g, rng, 0.0, 70.0);
    Grid3 pred(g);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double off = uniform(rng, 0.05, 4.0);  // away from |x| kinks (h = 1e-3)
      pred[i] = real[i] + (rng() & 1 ? off : -off);
    }
    StructureSet s(g);
    s.set("ptv", random_mask(g, rng, 0.3));
    s.set("cord", random_mask(g, rng, 0.1));
    s.set("lung_r", random_mask(g, rng, 0.5));
    DvhConfig cfg = DvhConfig::standard();
    cfg.structures = {"ptv", "cord", "lung_r"};

    const Grid3 ga = mae_grad(pred, real);
    worst_mae = std::max(
        worst_mae, normwise_error(ga.values(), central_differences(
                                                   pred, [&](const Grid3& p) { return mae_loss(p, real); }, h)));
    const Grid3 gd = dvh_loss_grad(pred, real, s, cfg);
    worst_dvh = std::max(
        worst_dvh,
        normwise_error(gd.values(), central_differences(
                                        pred, [&](const Grid3& p) { return dvh_loss(p, real, s, cfg); }, h)));
  }

  // Whole network in binary32: frozen dropout masks, coordinate-wise central
  // differences on a sample of every parameter tensor.
  NetConfig nc;
  nc.in_channels = 3;
  nc.base_width = 2;
  nc.depth = 2;
  nc.input_size = 8;
  nc.dropout = 0.5;
  nc.dropout_levels = 1;
  UNet3D<float> net(nc, 5);
  Rng rng(derive_seed(101, "acceptance-net"));
  for (auto& p : net.parameters()) {
    const bool weight = p.name.ends_with(".weight");
    for (float& v : p.value) v = static_cast<float>(weight ? uniform(rng, -0.5, 0.5) : uniform(rng, -0.1, 0.1));
  }
  Tensor<float> x(3, 8, 8, 8), probe(1, 8, 8, 8);
  for (float& v : x.data) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  for (float& v : probe.data) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  const std::uint64_t dropout_seed = 77;
  const auto loss = [&] {
    const Tensor<float> y = net.forward(x, Mode::train, dropout_seed);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y.data[i]) * probe.data[i];
    return acc / 60.0;
  };
  net.zero_grad();
  net.forward(x, Mode::train, dropout_seed);
  Tensor<float> gy = probe;
  for (float& v : gy.data) v /= 60.0f;
  net.backward(gy);

  std::vector<double> analytic, numeric;
  // Small enough that a step rarely crosses a ReLU kink, large enough for
  // binary32 round-off; a power of two keeps v0 +- hf exact for |v0| < 1.
  const float hf = 1.0f / 8192.0f;
  for (auto& p : net.parameters()) {
    const std::size_t n = p.value.size();
    for (int pick = 0; pick < std::min<int>(8, static_cast<int>(n)); ++pick) {
      const std::size_t i = n <= 8 ? static_cast<std::size_t>(pick) : rng() % n;
      const float v0 = p.value[i];
      p.value[i] = v0 + hf;
      const double fp = loss();
      p.value[i] = v0 - hf;
      const double fm = loss();
      p.value[i] = v0;
      analytic.push_back(p.grad[i]);
      numeric.push_back((fp - fm) / (2.0 * static_cast<double>(hf)));
    }
  }
  const double net_err = normwise_error(analytic, numeric);

  Outcome o;
  o.pass = worst_mae < 1e-4 && worst_dvh < 1e-4 && net_err < 1e-2;
  o.detail = "mae " + num(worst_mae) + ", dvh " + num(worst_dvh) + " (< 1e-4); network binary32 " +
             num(net_err) + " over " + std::to_string(analytic.size()) + " coordinates (< 1e-2)";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Soft DVH converges to the exact DVH

Outcome soft_dvh_convergence() {
  // Sparse thresholds so every dose can sit at least 3 Gy (3 beta for the
  // widest beta) from all of them.
  const std::vector<double> thresholds{5, 15, 25, 35, 45, 55, 65};
  const std::vector<double> betas{1.0, 0.1, 0.01};
  bool monotone = true;
  double final_gap = 0.0;
  for (int k = 0; k < 10; ++k) {
    Rng rng(derive_seed(102, "acceptance-beta", static_cast<std::uint64_t>(k)));
    const Geometry g = cube(10);
    Grid3 dose(g);
    for (double& v : dose.values()) {
      double d;
      do {
        d = uniform(rng, 0.0, 70.0);
      } while (std::any_of(thresholds.begin(), thresholds.end(),
                           [&](double t) { return std::abs(d - t) < 3.0 * betas.front(); }));
      v = d;
    }
    const Grid3 mask = random_mask(g, rng, 0.4);
    const DvhCurve exact = exact_dvh(dose, mask, "s", thresholds);
    double prev = std::numeric_limits<double>::infinity();
    for (double beta : betas) {
      const DvhCurve soft = soft_dvh(dose, mask, "s", thresholds, beta);
      double gap = 0.0;
      for (std::size_t t = 0; t < thresholds.size(); ++t)
        gap = std::max(gap, std::abs(soft.fractions[t] - exact.fractions[t]));
      if (gap > prev) monotone = false;
      prev = gap;
    }
    final_gap = std::max(final_gap, prev);
  }
  return {monotone && final_gap < 1e-3,
          std::string("sup gap non-increasing: ") + (monotone ? "yes" : "no") +
              ", worst gap at beta 0.01: " + num(final_gap) + " (< 1e-3)"};
}

// ---------------------------------------------------------------------------
// 3. Oracle equivalence

Outcome oracle_equivalence() {
  Rng rng(derive_seed(103, "acceptance-oracle"));
  int dav_mismatch = 0;
  for (int k = 0; k < 100; ++k) {
    const int n = 1 + static_cast<int>(rng() % 21);  // up to 21^3 = 9261 voxels
    const Geometry g = cube(n);
    const Grid3 dose = random_grid(g, rng, 0.0, 70.0);
    const Grid3 mask = random_mask(g, rng, uniform(rng, 0.01, 1.0));
    std::vector<double> inside;
    for (std::size_t i = 0; i < dose.size(); ++i)
      if (mask[i] > 0.5) inside.push_back(dose[i]);
    std::sort(inside.begin(), inside.end(), std::greater<>());
    for (double x : {1.0, 2.0, 50.0, 95.0, 98.0, 99.0, 100.0, uniform(rng, 0.01, 100.0)}) {
      const auto rank = static_cast<std::size_t>(
          std::max(1.0, std::ceil(x / 100.0 * static_cast<double>(inside.size()) - 1e-9)));
      if (dose_at_volume(dose, mask, x) != inside[std::min(rank, inside.size()) - 1]) ++dav_mismatch;
    }
  }

  bool bitwise = true;
  double dvh_err = 0.0;
  for (int k = 0; k < 10; ++k) {
    const Geometry g = cube(12, 3.0);
    const Grid3 a = random_grid(g, rng, 0.0, 70.0);
    const Grid3 b = random_grid(g, rng, 0.0, 70.0);
    const double ds = dose_score(a, b);
    const double mae = mae_loss(a, b);
    bitwise = bitwise && std::memcmp(&ds, &mae, sizeof ds) == 0;

    StructureSet s(g);
    for (auto name : kStructureNames) s.set(name, random_mask(g, rng, 0.2));
    std::vector<double> errors;
    for (auto oar : kOarNames)
      errors.push_back(std::abs(masked_mean(b, s.mask(oar)) - masked_mean(a, s.mask(oar))));
    for (double x : {1.0, 95.0, 99.0})
      errors.push_back(std::abs(dose_at_volume(b, s.mask("ptv"), x) - dose_at_volume(a, s.mask("ptv"), x)));
    const double oracle = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
    dvh_err = std::max(dvh_err, std::abs(dvh_score(a, b, s) - oracle));
  }
  return {dav_mismatch == 0 && bitwise && dvh_err < 1e-10,
          "dose_at_volume mismatches " + std::to_string(dav_mismatch) + "/800, dose_score == mae_loss bitwise: " +
              (bitwise ? "yes" : "no") + ", dvh_score oracle gap " + num(dvh_err) + " (< 1e-10)"};
}

// ---------------------------------------------------------------------------
// 4. Preprocessing exactness

Outcome preprocessing_exactness() {
  std::vector<std::string> failures;
  Grid3 ct(cube(2));
  ct[0] = -1000.0;
  ct[1] = 3071.0;
  ct[2] = 1035.5;
  ct[3] = -2000.0;
  ct[4] = 5000.0;
  const Grid3 r = clip_rescale_ct(ct);
  if (!(r[0] == 0.0 && r[1] == 1.0 && std::abs(r[2] - 0.5) < 1e-15 && r[3] == 0.0 && r[4] == 1.0))
    failures.push_back("ct rescale");

  Rng rng(derive_seed(104, "acceptance-prep"));
  double norm_err = 0.0;
  for (int k = 0; k < 10; ++k) {
    const Geometry g = cube(9, 2.0);
    const Grid3 dose = random_grid(g, rng, 0.0, 70.0);
    const Grid3 ptv = random_mask(g, rng, 0.2);
    const NormalizedDose n = normalize_ptv_mean(dose, ptv);
    norm_err = std::max(norm_err, std::abs(masked_mean(n.dose, ptv) - 60.0) / 60.0);
    const Grid3 o = override_ptv_dose(dose, ptv);
    for (std::size_t i = 0; i < o.size(); ++i)
      if (o[i] != (ptv[i] > 0.5 ? 60.0 : dose[i])) {
        failures.push_back("ptv override");
        break;
      }
  }
  if (norm_err >= 1e-6) failures.push_back("ptv normalization");

  const Geometry src{{11, 9, 8}, {2.0, 3.0, 2.5}, {-10.0, 5.0, 0.0}};
  const auto f = [](const Vec3& p) { return 2.0 * p[0] + 3.0 * p[1] - p[2]; };
  Grid3 field(src);
  for (std::size_t i = 0; i < field.size(); ++i) {
    const Index3 v = src.unravel(i);
    field[i] = f(src.position(v[0], v[1], v[2]));
  }
  const Geometry dst{{7, 6, 9}, {2.7, 3.3, 1.9}, {-8.0, 7.0, 1.0}};
  const Grid3 res = resample(field, dst);
  double res_err = 0.0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    const Index3 v = dst.unravel(i);
    res_err = std::max(res_err, std::abs(res[i] - f(dst.position(v[0], v[1], v[2]))));
  }
  if (res_err >= 1e-5) failures.push_back("affine resampling");

  std::string detail = "ptv mean rel err " + num(norm_err) + ", affine resampling err " + num(res_err);
  for (const auto& s : failures) detail += "; failed: " + s;
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------------------
// 5. Beam physics

Outcome beam_physics() {
  // Two-layer slab along x: rho 0 for 40 mm then rho 1 for 60 mm.
  Grid3 slab(Geometry{{130, 1, 1}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}});
  for (int x = 0; x < 130; ++x) slab(x, 0, 0) = x < 50 ? 0.0 : 1.0;
  const double depth = radiological_depth(slab, {9.5, 0.0, 0.0}, {109.5, 0.0, 0.0});
  const double slab_err = std::abs(depth - 60.0) / 60.0;

  // Single beam through water with a very distant source (no inverse-square falloff).
  const Geometry wg{{81, 160, 21}, {1.0, 1.0, 1.0}, {-40.0, 0.0, -10.0}};
  Grid3 water(wg, 1.0), ptv(wg);
  for (int z = 5; z <= 15; ++z)
    for (int y = 70; y <= 90; ++y)
      for (int x = 30; x <= 50; ++x) ptv(x, y, z) = 1.0;
  BeamSpec spec;
  spec.angles_deg = {0.0};
  spec.isocenter = {0.0, 80.0, 0.0};
  spec.sad_mm = 1e6;
  const BeamKernelParams kp;
  const Grid3 d = single_beam_dose(water, ptv, spec, 0.0, kp);
  const double ratio = d(40, 99, 10) / d(40, 49, 10);  // depths 99.5 and 49.5 mm
  const double expected = std::exp(-kp.mu_eff * 50.0);
  const double ratio_err = std::abs(ratio - expected) / expected;

  // Rotation consistency on a water cylinder with a central spherical target.
  const int n = 33;
  const Geometry g{{n, n, 9}, {4.0, 4.0, 4.0}, {-64.0, -64.0, -16.0}};
  Grid3 ct(g, -1000.0), target(g);
  for (int z = 0; z < 9; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Vec3 p = g.position(x, y, z);
        const double rad = std::hypot(p[0], p[1]);
        if (rad <= 60.0) ct(x, y, z) = 0.0;
        if (std::hypot(rad, p[2]) <= 12.0) target(x, y, z) = 1.0;
      }
  BeamSpec a;
  a.angles_deg = {0.0, 40.0, 100.0, 200.0, 290.0};
  BeamSpec b = a;
  for (double& t : b.angles_deg) t = std::fmod(t + 90.0, 360.0);
  const Grid3 da = beam_dose(ct, target, a);
  const Grid3 db = beam_dose(ct, target, b);
  const int c = n / 2;
  double mae = 0.0;
  for (int z = 0; z < 9; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) mae += std::abs(db(c - (y - c), c + (x - c), z) - da(x, y, z));
  mae /= static_cast<double>(g.voxel_count());  // both peaks are 1

  return {slab_err < 0.01 && ratio_err < 0.02 && mae < 0.02,
          "slab depth " + num(depth) + " mm (err " + num(100 * slab_err) + "%), depth-dose ratio " + num(ratio) +
              " vs " + num(expected) + " (err " + num(100 * ratio_err) + "%), rotation MAE " + num(100 * mae) +
              "% of max"};
}

// ---------------------------------------------------------------------------
// Shared phantom pipeline for 6 and 7

constexpr std::uint64_t kMasterSeed = 2024;
const Index3 kCrop{40, 40, 64};

struct PreparedCase {
  CaseBundle consistent;
  CaseBundle perturbed;
};

PreparedCase prepare(const CaseBundle& raw, int size, std::uint64_t perturb_seed) {
  PreprocessOptions po;
  po.crop_dims = kCrop;
  po.out_dims = {size, size, size};
  PreparedCase out;
  out.consistent = preprocess_case(raw, po);
  CaseBundle noisy = raw;
  PerturbSpec ps;
  ps.seed = perturb_seed;
  noisy.reference_dose = perturb_plan(raw.reference_dose, raw.structures.mask(kPtv), ps, raw.meta.case_id);
  noisy.meta.plan = PlanKind::perturbed;
  out.perturbed = preprocess_case(noisy, po);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 6. Training smoke

struct OverfitSettings {
  int epochs = 200;
  double lr = 2e-4;
  double threshold_gy = 1.5;
};

Outcome training_smoke(const fs::path& work, const OverfitSettings& st) {
  const auto t0 = std::chrono::steady_clock::now();
  const PhantomConfig pc = PhantomConfig::with_dims(64, derive_seed(kMasterSeed, "phantom"));
  const CaseBundle raw = generate_case(pc, 0);
  PreprocessOptions po;
  po.crop_dims = kCrop;
  po.out_dims = {64, 64, 64};
  const Sample sample = make_sample(preprocess_case(raw, po), InputVariant::ct_contours_beam);

  NetConfig nc;
  nc.in_channels = 8;
  nc.base_width = 16;
  nc.depth = 3;
  nc.input_size = 64;
  TrainConfig tc;
  tc.epochs = st.epochs;
  tc.constant_epochs = st.epochs / 2;
  tc.lr = st.lr;
  tc.seed = kMasterSeed;

  const std::vector<Sample> data{sample};
  TrainOptions first;
  first.out_dir = work / "overfit_a";
  first.on_epoch = [&](const EpochSummary& e) {
    if ((e.epoch + 1) % 20 == 0)
      std::cerr << "  overfit epoch " << e.epoch + 1 << " train mae " << num(e.mean_mae) << " ("
                << num(seconds_since(t0), 3) << " s)\n";
  };
  TrainResult a = train(data, nc, tc, first);
  const Grid3 pred = predict(a.net, sample.input, sample.target.geometry());
  const double score = dose_score(pred, sample.target);

  TrainOptions second;
  second.out_dir = work / "overfit_b";
  train(data, nc, tc, second);
  const bool identical = slurp(first.out_dir / "model.ckpt") == slurp(second.out_dir / "model.ckpt");

  return {score < st.threshold_gy && identical,
          "training dose score " + num(score) + " Gy after " + std::to_string(st.epochs) + " epochs (< " +
              num(st.threshold_gy) + "), same-seed checkpoints identical: " + (identical ? "yes" : "no") + ", " +
              num(seconds_since(t0), 3) + " s"};
}

// ---------------------------------------------------------------------------
// 7. Trend reproduction

struct TrendSettings {
  int cases = 50;
  int test = 10;
  int size = 32;
  int width = 8;
  int depth = 3;
  int epochs = 120;
  double lr = 2e-4;
};

struct ArmResult {
  std::string name;
  double dose = 0.0;
  double dvh = 0.0;
  double seconds = 0.0;
};

Outcome trend_reproduction(const fs::path& work, const TrendSettings& st) {
  const auto t0 = std::chrono::steady_clock::now();
  const PhantomConfig pc = PhantomConfig::with_dims(64, derive_seed(kMasterSeed, "phantom"));
  const std::uint64_t perturb_seed = derive_seed(kMasterSeed, "perturb");
  std::vector<PreparedCase> cases;
  for (int i = 0; i < st.cases; ++i) cases.push_back(prepare(generate_case(pc, i), st.size, perturb_seed));
  const DatasetSplit split = split_dataset(st.cases, st.test, derive_seed(kMasterSeed, "split"));
  std::cerr << "  trend data ready (" << num(seconds_since(t0), 3) << " s)\n";

  const auto samples = [&](const std::vector<int>& idx, bool perturbed, InputVariant v) {
    std::vector<Sample> out;
    for (int i : idx) out.push_back(make_sample(perturbed ? cases[i].perturbed : cases[i].consistent, v));
    return out;
  };

  NetConfig nc;
  nc.base_width = st.width;
  nc.depth = st.depth;
  nc.input_size = st.size;

  const auto run_arm = [&](const std::string& name, InputVariant v, bool perturbed, LossKind loss) {
    const auto ta = std::chrono::steady_clock::now();
    const auto train_set = samples(split.train, perturbed, v);
    const auto test_set = samples(split.test, false, v);  // scored against consistent plans
    NetConfig arm_net = nc;
    arm_net.in_channels = input_channels(v);
    TrainConfig tc;
    tc.epochs = st.epochs;
    tc.constant_epochs = st.epochs / 2;
    tc.lr = st.lr;
    tc.loss = loss;
    tc.variant = v;
    tc.seed = kMasterSeed;
    TrainOptions opts;
    opts.out_dir = work / ("trend_" + name);
    TrainResult r = train(train_set, arm_net, tc, opts);
    ArmResult a{name, 0.0, 0.0, 0.0};
    for (const auto& s : test_set) {
      const Grid3 pred = predict(r.net, s.input, s.target.geometry());
      a.dose += dose_score(pred, s.target) / static_cast<double>(test_set.size());
      a.dvh += dvh_score(pred, s.target, s.structures) / static_cast<double>(test_set.size());
    }
    a.seconds = seconds_since(ta);
    std::cerr << "  arm " << name << ": test dose " << num(a.dose) << " Gy, dvh " << num(a.dvh) << " Gy ("
              << num(a.seconds, 3) << " s)\n";
    return a;
  };

  const ArmResult base = run_arm("beam_mae_consistent", InputVariant::ct_contours_beam, false, LossKind::mae);
  const ArmResult nobeam = run_arm("nobeam_mae_consistent", InputVariant::ct_contours, false, LossKind::mae);
  const ArmResult noisy = run_arm("beam_mae_perturbed", InputVariant::ct_contours_beam, true, LossKind::mae);
  const ArmResult dvh = run_arm("beam_maedvh_consistent", InputVariant::ct_contours_beam, false, LossKind::mae_dvh);

  nlohmann::ordered_json j;
  j["settings"] = {{"cases", st.cases}, {"test", st.test},   {"size", st.size}, {"width", st.width},
                   {"depth", st.depth}, {"epochs", st.epochs}, {"lr", st.lr}};
  for (const ArmResult* a : {&base, &nobeam, &noisy, &dvh})
    j["arms"][a->name] = {{"dose_score", a->dose}, {"dvh_score", a->dvh}, {"seconds", a->seconds}};
  std::ofstream(work / "trends.json") << j.dump(2) << '\n';

  const bool ta = base.dose < nobeam.dose;
  const bool tb = base.dvh < noisy.dvh;
  const bool tc = dvh.dvh <= 1.05 * base.dvh;
  return {ta && tb && tc,
          std::string("(a) beam ") + num(base.dose) + " < no beam " + num(nobeam.dose) + " Gy dose: " +
              (ta ? "yes" : "no") + "; (b) consistent " + num(base.dvh) + " < perturbed " + num(noisy.dvh) +
              " Gy dvh: " + (tb ? "yes" : "no") + "; (c) mae+dvh " + num(dvh.dvh) + " vs mae " + num(base.dvh) +
              " Gy dvh (" + num(100.0 * (dvh.dvh / base.dvh - 1.0), 3) + "%, <= +5%): " + (tc ? "yes" : "no") +
              "; " + num(seconds_since(t0), 3) + " s"};
}

// ---------------------------------------------------------------------------
// 8. Schedule and optimizer

Outcome schedule_and_optimizer() {
  const TrainConfig cfg;
  const double l0 = lr_at(0, cfg), l150 = lr_at(150, cfg), l199 = lr_at(199, cfg);
  const bool sched = std::abs(l0 - 2e-4) < 1e-15 && std::abs(l150 - 1e-4) < 1e-15 && std::abs(l199 - 2e-6) < 1e-15;

  // One step from w = 1 with g = 2, lr = 0.1: m^ = 2, v^ = 4, w' = 1 - 0.1 * 2 / (2 + eps).
  std::vector<double> w{1.0}, g{2.0};
  std::vector<ParamRef<double>> params{{"w", w, g}};
  auto state = AdamState<double>::zeros_like(params);
  adam_step(params, state, 0.1, cfg.adam());
  const double hand = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
  const double adam_err = std::abs(w[0] - hand);
  return {sched && adam_err < 1e-9,
          "lr " + num(l0) + " / " + num(l150) + " / " + num(l199) + " at epochs 0/150/199, adam step " +
              num(w[0], 12) + " (err " + num(adam_err) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the dose prediction pipeline"};
  fs::path work = "acceptance_work";
  std::vector<int> only;
  OverfitSettings overfit;
  TrendSettings trend;
  app.add_option("--work", work, "Directory for training artifacts");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 8));
  app.add_option("--overfit-epochs", overfit.epochs, "Epochs of the single-case overfit run");
  app.add_option("--overfit-lr", overfit.lr, "Learning rate of the overfit run");
  app.add_option("--trend-epochs", trend.epochs, "Epochs per trend arm");
  app.add_option("--trend-lr", trend.lr, "Learning rate of the trend arms");
  app.add_option("--trend-size", trend.size, "Network input size of the trend arms");
  app.add_option("--trend-width", trend.width, "Base width of the trend arms");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"soft DVH convergence", soft_dvh_convergence},
      {"oracle equivalence", oracle_equivalence},
      {"preprocessing exactness", preprocessing_exactness},
      {"beam physics sanity", beam_physics},
      {"training smoke", [&] { return training_smoke(work, overfit); }},
      {"trend reproduction", [&] { return trend_reproduction(work, trend); }},
      {"schedule and optimizer", schedule_and_optimizer},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[k].first << ": " << o.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
