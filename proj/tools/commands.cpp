#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "dosepred/beamsim.hpp"
#include "dosepred/case_io.hpp"
#include "dosepred/checkpoint.hpp"
#include "dosepred/error.hpp"
#include "dosepred/gradcheck.hpp"
#include "dosepred/phantom.hpp"
#include "dosepred/preprocess.hpp"
#include "dosepred/rng.hpp"
#include "dosepred/score.hpp"
#include "dosepred/trainer.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;

namespace dosepred::cli {

namespace {

template <typename F>
void guarded(OutputGuard& guard, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    guard.fail(e.what());
    throw;
  }
  guard.commit();
}

void require_dir(const fs::path& p, const std::string& what) {
  if (p.empty()) fail_validation(what + " is required");
  if (!fs::is_directory(p)) fail_io(what + " " + p.string() + " is not a directory");
}

bool has_plan(const fs::path& dir, PlanKind plan) {
  return fs::exists(dir / ("dose_" + std::string(to_string(plan)) + ".g3"));
}

void write_g3_atomic(const fs::path& file, const Grid3& g) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  fs::path tmp = file;
  tmp += ".tmp";
  write_g3(tmp, g);
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) fail_io("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace

int run_phantom(const PhantomArgs& a) {
  if (a.n < 1) fail_validation("--n must be >= 1");
  if (a.out.empty()) fail_validation("--out is required");
  const PhantomConfig cfg = PhantomConfig::with_dims(a.dims, a.seed);
  cfg.validate();
  PerturbSpec perturb;
  perturb.seed = derive_seed(a.seed, "perturb");
  OutputGuard guard(a.out);
  guarded(guard, [&] {
    RunManifest m;
    m.subcommand = "phantom";
    m.seed = a.seed;
    m.config = {{"n", a.n}, {"dims", a.dims}, {"seed", a.seed}, {"perturb_seed", perturb.seed}};
    for (int i = 0; i < a.n; ++i) {
      const CaseBundle c = generate_case(cfg, i);
      const fs::path dir = case_dir(a.out, c.meta.case_id);
      write_case(dir, c, {{"generator", "phantom"}, {"seed", a.seed}, {"index", i}});
      write_plan_dose(dir, PlanKind::perturbed,
                      perturb_plan(c.reference_dose, c.structures.mask(kPtv), perturb,
                                   c.meta.case_id));
      m.outputs.push_back(dir);
      std::cerr << "phantom: wrote " << dir.string() << '\n';
    }
    m.write(a.out);
  });
  return 0;
}

int run_preprocess(const PreprocessArgs& a) {
  require_dir(a.cases, "--cases");
  const InputVariant variant = parse_input_variant(a.variant);
  if (a.size < 2) fail_validation("--size must be >= 2");
  if (a.crop.size() != 1 && a.crop.size() != 3) fail_validation("--crop takes 1 or 3 values");
  Index3 crop;
  for (int k = 0; k < 3; ++k) crop[k] = a.crop[a.crop.size() == 1 ? 0 : k];
  const bool whole = std::all_of(crop.begin(), crop.end(), [](int c) { return c == 0; });
  if (!whole && std::any_of(crop.begin(), crop.end(), [](int c) { return c < 1; }))
    fail_validation("--crop values must be positive (or a single 0)");
  fs::path out = a.out;
  if (out.empty()) {
    out = a.cases;
    out += "_prep" + std::to_string(a.size);
  }
  const auto dirs = list_cases(a.cases);
  if (dirs.empty()) fail_validation("no case_* directories in " + a.cases.string());
  PreprocessOptions opts;
  opts.out_dims = {a.size, a.size, a.size};
  opts.crop_dims = whole ? Index3{0, 0, 0} : crop;
  opts.ptv_override = a.ptv_override;

  OutputGuard guard(out);
  guarded(guard, [&] {
    RunManifest m;
    m.subcommand = "preprocess";
    m.config = {{"variant", to_string(variant)}, {"size", a.size}, {"crop", opts.crop_dims},
                {"ptv_override", a.ptv_override}, {"dose_clip_gy", opts.dose_hi}};
    m.inputs.push_back(a.cases);
    for (const auto& dir : dirs) {
      CaseBundle raw = read_case(dir, PlanKind::consistent);
      if (!raw.beam_channel && variant == InputVariant::ct_contours_beam)
        raw.beam_channel = beam_dose(raw.ct, raw.structures.mask(kPtv), raw.beams);
      const CaseBundle pre = preprocess_case(raw, opts);
      const fs::path dst = case_dir(out, pre.meta.case_id);
      write_case(dst, pre,
                 {{"preprocessed", true}, {"variant", to_string(variant)}, {"size", a.size}});
      if (has_plan(dir, PlanKind::perturbed)) {
        CaseBundle raw_p = raw;
        raw_p.reference_dose = read_g3(dir / "dose_perturbed.g3");
        raw_p.meta.plan = PlanKind::perturbed;
        write_plan_dose(dst, PlanKind::perturbed, preprocess_case(raw_p, opts).reference_dose);
      }
      m.outputs.push_back(dst);
      std::cerr << "preprocess: wrote " << dst.string() << '\n';
    }
    m.write(out);
  });
  return 0;
}

int run_beamdose(const BeamdoseArgs& a) {
  require_dir(a.case_dir, "--case");
  const PlanKind plan = has_plan(a.case_dir, PlanKind::consistent) ? PlanKind::consistent
                                                                   : PlanKind::perturbed;
  const CaseBundle c = read_case(a.case_dir, plan);
  const Grid3 beam = beam_dose(c.ct, c.structures.mask(kPtv), c.beams);
  write_g3_atomic(a.case_dir / "beam.g3", beam);
  std::cerr << "beamdose: wrote " << (a.case_dir / "beam.g3").string() << '\n';
  return 0;
}

int run_train(const TrainArgs& a) {
  require_dir(a.cases, "--cases");
  if (a.out.empty()) fail_validation("--out is required");
  nlohmann::json file_cfg = nlohmann::json::object();
  if (!a.config.empty()) file_cfg = read_json(a.config);
  if (!file_cfg.is_object()) fail_validation("config file must hold a JSON object");
  nlohmann::json net_json = nlohmann::json::object();
  if (file_cfg.contains("net")) {
    net_json = file_cfg["net"];
    file_cfg.erase("net");
  }
  int validation = a.validation;
  if (file_cfg.contains("validation_cases")) {
    validation = file_cfg["validation_cases"].get<int>();
    file_cfg.erase("validation_cases");
    if (a.validation > 0) validation = a.validation;
  }
  if (a.loss) file_cfg["loss"] = *a.loss;
  if (a.variant) file_cfg["variant"] = *a.variant;
  if (a.seed) file_cfg["seed"] = *a.seed;
  if (a.epochs) {
    file_cfg["epochs"] = *a.epochs;
    if (!file_cfg.contains("constant_epochs")) file_cfg["constant_epochs"] = (*a.epochs + 1) / 2;
  }
  const TrainConfig cfg = train_config_from_json(file_cfg);
  const PlanKind plan = parse_plan_kind(a.plan);

  const auto dirs = list_cases(a.cases);
  if (dirs.empty()) fail_validation("no case_* directories in " + a.cases.string());
  if (validation < 0 || validation >= static_cast<int>(dirs.size()))
    fail_validation("--validation must leave at least one training case");
  const DatasetSplit split =
      split_dataset(static_cast<int>(dirs.size()), validation, derive_seed(cfg.seed, "split"));
  std::vector<Sample> train_set, val_set;
  for (int i : split.train)
    train_set.push_back(make_sample(read_case(dirs[static_cast<std::size_t>(i)], plan), cfg.variant));
  // Validation is always measured against the consistent plans.
  for (int i : split.test)
    val_set.push_back(
        make_sample(read_case(dirs[static_cast<std::size_t>(i)], PlanKind::consistent), cfg.variant));
  validate_dataset(train_set);

  NetConfig net = net_json.empty() ? NetConfig{} : net_config_from_json(net_json);
  const int channels = input_channels(cfg.variant);
  if (net_json.contains("in_channels") && net.in_channels != channels)
    fail_validation("net.in_channels = " + std::to_string(net.in_channels) + " but variant " +
                    std::string(to_string(cfg.variant)) + " provides " + std::to_string(channels));
  const int size = train_set.front().target.dims()[0];
  if (net_json.contains("input_size") && net.input_size != size)
    fail_validation("net.input_size = " + std::to_string(net.input_size) +
                    " but the cases are " + std::to_string(size) + "^3");
  net.in_channels = channels;
  net.input_size = size;
  net.validate();

  OutputGuard guard(a.out);
  guarded(guard, [&] {
    RunManifest m;
    m.subcommand = "train";
    m.seed = cfg.seed;
    m.config = {{"train", to_json(cfg)}, {"net", to_json(net)}, {"plan", to_string(plan)},
                {"validation_cases", validation}};
    m.inputs.push_back(a.cases);
    if (!a.config.empty()) m.inputs.push_back(a.config);
    if (!a.resume.empty()) m.inputs.push_back(a.resume);

    nlohmann::ordered_json sj;
    sj["train"] = nlohmann::ordered_json::array();
    sj["validation"] = nlohmann::ordered_json::array();
    for (const auto& s : train_set) sj["train"].push_back(s.case_id);
    for (const auto& s : val_set) sj["validation"].push_back(s.case_id);
    write_json(a.out / "split.json", sj);

    TrainOptions opts;
    opts.out_dir = a.out;
    opts.resume = a.resume;
    opts.validation = val_set.empty() ? nullptr : &val_set;
    opts.on_epoch = [](const EpochSummary& e) {
      std::fprintf(stderr, "epoch %d  mae %.4f  total %.4f", e.epoch, e.mean_mae, e.mean_total);
      if (e.val_dose_score)
        std::fprintf(stderr, "  val dose %.4f  val dvh %.4f", *e.val_dose_score, *e.val_dvh_score);
      std::fprintf(stderr, "\n");
    };
    train(train_set, net, cfg, opts);
    m.outputs = {a.out / "model.ckpt", a.out / "loss.csv"};
    m.write(a.out);
  });
  return 0;
}

int run_predict(const PredictArgs& a) {
  if (a.model.empty()) fail_validation("--model is required");
  if (a.out.empty()) fail_validation("--out is required");
  if (a.case_dir.empty() == a.cases.empty()) fail_validation("give exactly one of --case or --cases");
  const Checkpoint ck = load_checkpoint(a.model);
  UNet3D<float> net(ck.net);
  restore_model(ck, net);
  InputVariant variant;
  if (ck.net.in_channels == input_channels(InputVariant::ct_contours)) {
    variant = InputVariant::ct_contours;
  } else if (ck.net.in_channels == input_channels(InputVariant::ct_contours_beam)) {
    variant = InputVariant::ct_contours_beam;
  } else {
    fail_validation("model expects " + std::to_string(ck.net.in_channels) +
                    " input channels, which matches no input variant");
  }

  const auto predict_one = [&](const fs::path& dir) {
    const PlanKind plan = has_plan(dir, PlanKind::consistent) ? PlanKind::consistent
                                                              : PlanKind::perturbed;
    const CaseBundle c = read_case(dir, plan);
    if (c.ct.dims() != Index3{ck.net.input_size, ck.net.input_size, ck.net.input_size})
      fail_validation("case " + c.meta.case_id + " is " + describe(c.ct.geometry()) +
                      ", model expects " + std::to_string(ck.net.input_size) + "^3");
    return std::pair{c.meta.case_id, predict(net, make_input(c, variant), c.ct.geometry())};
  };

  if (!a.case_dir.empty()) {
    require_dir(a.case_dir, "--case");
    try {
      write_g3_atomic(a.out, predict_one(a.case_dir).second);
    } catch (const std::exception& e) {
      fs::path marker = a.out;
      marker += ".FAILED";
      std::ofstream(marker) << e.what() << '\n';
      throw;
    }
    return 0;
  }
  require_dir(a.cases, "--cases");
  const auto dirs = list_cases(a.cases);
  if (dirs.empty()) fail_validation("no case_* directories in " + a.cases.string());
  OutputGuard guard(a.out);
  guarded(guard, [&] {
    RunManifest m;
    m.subcommand = "predict";
    m.config = {{"model", a.model.string()}, {"variant", to_string(variant)},
                {"net", to_json(ck.net)}, {"model_header", ck.header}};
    m.inputs = {a.model, a.cases};
    for (const auto& dir : dirs) {
      auto [id, pred] = predict_one(dir);
      const fs::path f = case_dir(a.out, id) / "prediction.g3";
      write_g3_atomic(f, pred);
      m.outputs.push_back(f);
    }
    m.write(a.out);
  });
  return 0;
}

int run_score(const ScoreArgs& a) {
  require_dir(a.pred, "--pred");
  require_dir(a.real, "--real");
  if (a.out.empty()) fail_validation("--out is required");
  const PlanKind plan = parse_plan_kind(a.plan);
  const auto dirs = list_cases(a.real);
  if (dirs.empty()) fail_validation("no case_* directories in " + a.real.string());

  ScoreOptions opts;
  opts.body_only = a.body_only;
  ScoreReport report;
  report.config = {{"pred", a.pred.string()}, {"real", a.real.string()},
                   {"plan", to_string(plan)}, {"body_only", a.body_only}};
  if (fs::exists(a.pred / "manifest.json")) {
    const auto pm = read_json(a.pred / "manifest.json");
    if (pm.contains("config")) report.config["prediction"] = pm["config"];
  }
  for (const auto& dir : dirs) {
    const CaseBundle real = read_case(dir, plan);
    const std::string id = real.meta.case_id;
    const fs::path pd = case_dir(a.pred, id);
    fs::path pf;
    for (const fs::path& cand :
         {pd / "prediction.g3", pd / ("dose_" + std::string(to_string(plan)) + ".g3")}) {
      if (fs::exists(cand)) {
        pf = cand;
        break;
      }
    }
    if (pf.empty()) fail_io("no prediction for case " + id + " under " + pd.string());
    const Grid3 pred = read_g3(pf);
    report.cases.push_back(score_case(id, pred, real.reference_dose, real.structures, &real.ct, opts));
  }

  OutputGuard guard(a.out);
  guarded(guard, [&] {
    aggregate_and_emit(report, a.out);
    RunManifest m;
    m.subcommand = "score";
    m.config = report.config;
    m.inputs = {a.pred, a.real};
    m.outputs = {a.out / "report.csv", a.out / "report.json"};
    m.write(a.out);
  });
  const auto j = report_json(report);
  std::printf("dose score %.4f +- %.4f Gy   dvh score %.4f +- %.4f Gy   (%zu cases)\n",
              j["aggregate"]["dose_score"]["mean"].get<double>(),
              j["aggregate"]["dose_score"]["std"].get<double>(),
              j["aggregate"]["dvh_score"]["mean"].get<double>(),
              j["aggregate"]["dvh_score"]["std"].get<double>(), report.cases.size());
  return 0;
}

int run_gradcheck(const GradcheckArgs& a) {
  if (a.module != "dvh" && a.module != "net3d" && a.module != "all")
    fail_validation("--module must be dvh, net3d or all");
  std::vector<GradcheckResult> results;
  if (a.module != "net3d")
    for (auto& r : gradcheck_losses()) results.push_back(r);
  if (a.module != "dvh")
    for (auto& r : gradcheck_net3d()) results.push_back(r);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %-36s err %.3e  tol %.0e\n", r.passed ? "ok" : "FAIL", r.name.c_str(),
                r.error, r.tolerance);
    ok = ok && r.passed;
  }
  if (!ok) fail_numeric("gradient check failed");
  std::printf("all %zu gradient checks passed\n", results.size());
  return 0;
}

}  // namespace dosepred::cli
