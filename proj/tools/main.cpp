#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "dosepred/error.hpp"

using namespace dosepred;
using namespace dosepred::cli;

int main(int argc, char** argv) {
  CLI::App app{"dosepred: 3D dose prediction for lung radiotherapy"};
  app.set_version_flag("--version", DOSEPRED_VERSION);
  app.require_subcommand(1);

  PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "Generate synthetic thorax cases with consistent and perturbed plans");
  phantom->add_option("--n", ph.n, "Number of cases")->capture_default_str();
  phantom->add_option("--seed", ph.seed, "Master seed")->capture_default_str();
  phantom->add_option("--dims", ph.dims, "Voxels per axis")->capture_default_str();
  phantom->add_option("--out", ph.out, "Output directory")->required();

  PreprocessArgs pp;
  auto* preprocess = app.add_subcommand("preprocess", "Resample, clip, normalize and crop cases into model-ready volumes");
  preprocess->add_option("--cases", pp.cases, "Directory of raw case_* directories")->required();
  preprocess->add_option("--variant", pp.variant, "Input variant: ct_contours or ct_contours_beam")->capture_default_str();
  preprocess->add_option("--size", pp.size, "Output voxels per axis")->capture_default_str();
  preprocess->add_option("--crop", pp.crop, "Crop window around the structures: one size for all axes or x y z; 0 keeps the whole volume")->expected(1, 3)->capture_default_str();
  preprocess->add_flag("--ptv-override", pp.ptv_override, "Set the dose inside the PTV to the prescription");
  preprocess->add_option("--out", pp.out, "Output directory (default: <cases>_prep<size>)");

  BeamdoseArgs bd;
  auto* beamdose = app.add_subcommand("beamdose", "Compute the beam-configuration channel of one case");
  beamdose->add_option("--case", bd.case_dir, "Case directory")->required();

  TrainArgs tr;
  std::string loss, variant;
  std::uint64_t seed = 0;
  int epochs = 0;
  auto* trainc = app.add_subcommand("train", "Train the dose prediction network");
  trainc->add_option("--cases", tr.cases, "Directory of preprocessed case_* directories")->required();
  trainc->add_option("--loss", loss, "Loss: mae or mae_dvh (overrides the config file)");
  trainc->add_option("--plan", tr.plan, "Training targets: consistent or perturbed")->capture_default_str();
  trainc->add_option("--variant", variant, "Input variant: ct_contours or ct_contours_beam (overrides the config file)");
  trainc->add_option("--config", tr.config, "JSON training config; an optional \"net\" object sets the architecture");
  trainc->add_option("--seed", seed, "Master seed (overrides the config file)");
  trainc->add_option("--epochs", epochs, "Total epochs (overrides the config file)");
  trainc->add_option("--validation", tr.validation, "Cases held out for per-epoch validation logging")->capture_default_str();
  trainc->add_option("--resume", tr.resume, "Checkpoint to continue from");
  trainc->add_option("--out", tr.out, "Output directory")->required();

  PredictArgs pr;
  auto* predictc = app.add_subcommand("predict", "Predict doses with a trained model (eval mode)");
  predictc->add_option("--model", pr.model, "Checkpoint file")->required();
  predictc->add_option("--case", pr.case_dir, "Single preprocessed case directory");
  predictc->add_option("--cases", pr.cases, "Directory of preprocessed case_* directories");
  predictc->add_option("--out", pr.out, "Output .g3 file (--case) or directory (--cases)")->required();

  ScoreArgs sc;
  auto* scorec = app.add_subcommand("score", "Dose score, DVH score and clinical metric report");
  scorec->add_option("--pred", sc.pred, "Prediction directory")->required();
  scorec->add_option("--real", sc.real, "Reference case directory")->required();
  scorec->add_option("--out", sc.out, "Report directory")->required();
  scorec->add_option("--plan", sc.plan, "Reference plan: consistent or perturbed")->capture_default_str();
  scorec->add_flag("--body-only", sc.body_only, "Restrict the dose score to the body outline");

  GradcheckArgs gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference and adjoint gradient checks");
  gradcheck->add_option("--module", gc.module, "dvh, net3d or all")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorKind::validation);
  }

  try {
    if (*phantom) return run_phantom(ph);
    if (*preprocess) return run_preprocess(pp);
    if (*beamdose) return run_beamdose(bd);
    if (*trainc) {
      if (!loss.empty()) tr.loss = loss;
      if (!variant.empty()) tr.variant = variant;
      if (trainc->count("--seed")) tr.seed = seed;
      if (trainc->count("--epochs")) tr.epochs = epochs;
      return run_train(tr);
    }
    if (*predictc) return run_predict(pr);
    if (*scorec) return run_score(sc);
    if (*gradcheck) return run_gradcheck(gc);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(ErrorKind::io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(ErrorKind::validation);
  }
  return 0;
}
