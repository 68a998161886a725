#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosepred/adam.hpp"
#include "dosepred/case.hpp"
#include "dosepred/dvh.hpp"
#include "dosepred/unet.hpp"

namespace dosepred {

enum class LossKind { mae, mae_dvh };
enum class InputVariant { ct_contours, ct_contours_beam };

std::string_view to_string(LossKind k);
std::string_view to_string(InputVariant v);
LossKind parse_loss_kind(std::string_view s);
InputVariant parse_input_variant(std::string_view s);

/// Channels fed to the network: CT, five OARs, PTV [, beam].
int input_channels(InputVariant v);

struct TrainConfig {
  int epochs = 200;
  int constant_epochs = 100;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossKind loss = LossKind::mae;
  double dvh_weight = 10.0;
  std::uint64_t seed = 0;
  InputVariant variant = InputVariant::ct_contours_beam;
  int checkpoint_every = 0;  // epochs; 0 = final checkpoint only

  void validate() const;
  AdamSettings adam() const { return {beta1, beta2, eps}; }
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::ordered_json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Constant for the first `constant_epochs`, then linear decay towards 0.
double lr_at(int epoch, const TrainConfig& cfg);

/// One model-ready case.
struct Sample {
  std::string case_id;
  Tensor<float> input;
  Grid3 target;
  StructureSet structures;
};

/// Builds the input stack of a preprocessed case (CT still in HU).
Tensor<float> make_input(const CaseBundle& c, InputVariant variant);

Sample make_sample(const CaseBundle& preprocessed, InputVariant variant);

/// Checks that every sample shares one cubic geometry and channel count.
void validate_dataset(const std::vector<Sample>& samples);

/// Eval-mode prediction on the sample grid.
Grid3 predict(UNet3D<float>& net, const Tensor<float>& input, const Geometry& geometry);

struct StepLog {
  int epoch = 0;
  std::string case_id;
  double mae = 0.0;
  double dvh = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EpochSummary {
  int epoch = 0;
  double mean_mae = 0.0;
  double mean_total = 0.0;
  std::optional<double> val_dose_score;
  std::optional<double> val_dvh_score;
};

struct TrainOptions {
  std::filesystem::path out_dir;   // empty: keep everything in memory
  std::filesystem::path resume;    // checkpoint to continue from
  int stop_after = -1;             // stop once this many epochs are done (-1: run to the end)
  const std::vector<Sample>* validation = nullptr;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct TrainResult {
  UNet3D<float> net;
  AdamState<float> adam;
  int epochs_done = 0;
  std::vector<StepLog> log;
  std::vector<EpochSummary> epochs;
};

/// Batch size 1, per-epoch seeded shuffle, Adam with the two-phase schedule.
/// Writes loss.csv, checkpoint_eNNNN.ckpt every `checkpoint_every` epochs and
/// model.ckpt at the end when `out_dir` is set.
TrainResult train(const std::vector<Sample>& data, const NetConfig& net_cfg,
                  const TrainConfig& cfg, const TrainOptions& opts = {});

/// Per-sample loss and prediction gradient for the configured objective.
struct Objective {
  double mae = 0.0;
  double dvh = 0.0;
  double total = 0.0;
  Grid3 grad;
};
Objective evaluate_objective(const Grid3& pred, const Sample& s, const TrainConfig& cfg,
                             const DvhConfig& dvh_cfg);

void write_loss_csv(const std::filesystem::path& file, const std::vector<StepLog>& log);

}  // namespace dosepred
