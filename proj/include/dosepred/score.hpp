#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosepred/case.hpp"
#include "dosepred/grid.hpp"

namespace dosepred {

/// Mean absolute voxel error over the whole grid, or over `body` when given.
double dose_score(const Grid3& pred, const Grid3& real, const Grid3* body = nullptr);

/// Voxels with CT above `threshold_hu`.
Grid3 body_mask(const Grid3& ct_hu, double threshold_hu = -900.0);

struct DvhCriterion {
  std::string structure;
  std::string metric;  // "mean", "D1", "D95", "D99"
  double real = 0.0;
  double pred = 0.0;
  double error = 0.0;  // |real - pred|
};

/// Mean dose of every present (non-empty) OAR plus PTV D1/D95/D99.
std::vector<DvhCriterion> dvh_criteria(const Grid3& pred, const Grid3& real,
                                       const StructureSet& structures);
/// Unweighted mean of the criterion errors.
double dvh_score(const Grid3& pred, const Grid3& real, const StructureSet& structures);

struct ClinicalMetric {
  std::string structure;
  std::string metric;  // e.g. "D95", "V20", "Dmean"
  std::string unit;    // "%Rx" for dose metrics, "%vol" for volume metrics
  bool present = false;
  double real = 0.0;
  double pred = 0.0;
  double error = 0.0;
};

/// PTV D99/D98/D95/D5, esophagus D2/V40/V50, heart V35, cord D2 and each lung
/// Dmean/V5/V20. Dose metrics are percent of `prescription_gy`; volume
/// metrics are percent of the structure. Rows of absent structures have
/// present = false.
std::vector<ClinicalMetric> clinical_table(const Grid3& pred, const Grid3& real,
                                           const StructureSet& structures,
                                           double prescription_gy = 60.0);

struct CaseScore {
  std::string case_id;
  double dose_score = 0.0;
  double dvh_score = 0.0;
  std::vector<DvhCriterion> dvh;
  std::vector<ClinicalMetric> clinical;
};

struct ScoreOptions {
  bool body_only = false;
  double prescription_gy = 60.0;
};

/// `ct_hu` is only used when opts.body_only is set.
CaseScore score_case(const std::string& case_id, const Grid3& pred, const Grid3& real,
                     const StructureSet& structures, const Grid3* ct_hu = nullptr,
                     const ScoreOptions& opts = {});

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
};

Summary summarize(const std::vector<double>& values);

struct ScoreReport {
  std::vector<CaseScore> cases;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

/// Writes report.csv (one row per case) and report.json (cases, aggregates,
/// config) into `out_dir`, ordered by case id.
void aggregate_and_emit(const ScoreReport& report, const std::filesystem::path& out_dir);

nlohmann::ordered_json report_json(const ScoreReport& report);

}  // namespace dosepred
