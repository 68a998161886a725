#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "dosepred/case.hpp"
#include "dosepred/grid.hpp"

namespace dosepred {

/// Threshold grid and sigmoid width for the soft dose-volume histogram.
struct DvhConfig {
  std::vector<double> thresholds;  // Gy, strictly ascending
  double beta = 1.0;               // Gy
  std::vector<std::string> structures;

  /// 0.5, 1.5, ..., 69.5 Gy with beta = 1 Gy over the PTV and all OARs.
  static DvhConfig standard();
  void validate() const;
};

struct DvhCurve {
  std::string structure;
  std::vector<double> thresholds;
  std::vector<double> fractions;
};

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

/// Fraction of masked voxels with dose >= threshold.
double exact_volume_at_dose(const Grid3& dose, const Grid3& mask, double threshold,
                            const std::string& structure = "mask");

/// Sigmoid relaxation of exact_volume_at_dose.
double soft_volume_at_dose(const Grid3& dose, const Grid3& mask, double threshold, double beta,
                           const std::string& structure = "mask");

DvhCurve exact_dvh(const Grid3& dose, const Grid3& mask, const std::string& structure,
                   const std::vector<double>& thresholds);
DvhCurve soft_dvh(const Grid3& dose, const Grid3& mask, const std::string& structure,
                  const std::vector<double>& thresholds, double beta);

/// Mean over structures and thresholds of the squared soft-DVH difference.
double dvh_loss(const Grid3& pred, const Grid3& real, const StructureSet& structures,
                const DvhConfig& cfg);

/// Analytic gradient of dvh_loss with respect to `pred`; `real` is constant.
Grid3 dvh_loss_grad(const Grid3& pred, const Grid3& real, const StructureSet& structures,
                    const DvhConfig& cfg);

struct LossAndGrad {
  double loss = 0.0;
  Grid3 grad;
};

/// Loss and gradient in one pass (shares the soft curves).
LossAndGrad dvh_loss_and_grad(const Grid3& pred, const Grid3& real,
                              const StructureSet& structures, const DvhConfig& cfg);

/// Mean absolute voxel difference.
double mae_loss(const Grid3& pred, const Grid3& real);
/// sign(pred - real) / N, with sign(0) = 0.
Grid3 mae_grad(const Grid3& pred, const Grid3& real);

/// Dose received by the hottest `percent` of the masked voxels: the
/// ceil(percent / 100 * n)-th largest masked value.
double dose_at_volume(const Grid3& dose, const Grid3& mask, double percent,
                      const std::string& structure = "mask");

/// 100 * exact_volume_at_dose.
double volume_at_dose_pct(const Grid3& dose, const Grid3& mask, double threshold_gy,
                          const std::string& structure = "mask");

/// CSV with header `structure,threshold_gy,fraction`.
void write_dvh_csv(const std::filesystem::path& file, const std::vector<DvhCurve>& curves);

}  // namespace dosepred

