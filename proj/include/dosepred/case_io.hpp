#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "dosepred/case.hpp"

namespace dosepred {

// Case directory layout:
//   case_<id>/ct.g3
//   case_<id>/masks/<name>.g3
//   case_<id>/beams.json          {"angles_deg":[...], "iso_mm":[x,y,z], ...}
//   case_<id>/dose_consistent.g3
//   case_<id>/dose_perturbed.g3
//   case_<id>/beam.g3             (optional beam channel)
//   case_<id>/meta.json

std::filesystem::path case_dir(const std::filesystem::path& root, const std::string& case_id);

nlohmann::ordered_json beams_to_json(const BeamSpec& beams);
BeamSpec beams_from_json(const nlohmann::json& j);

BeamSpec read_beams(const std::filesystem::path& file);
void write_beams(const std::filesystem::path& file, const BeamSpec& beams);

nlohmann::json read_json(const std::filesystem::path& file);
void write_json(const std::filesystem::path& file, const nlohmann::ordered_json& j);

/// Writes CT, masks, beams, meta, the reference dose as dose_<plan>.g3 and
/// the beam channel when present. `extra_meta` keys are merged into meta.json.
void write_case(const std::filesystem::path& dir, const CaseBundle& c,
                const nlohmann::ordered_json& extra_meta = nlohmann::ordered_json::object());

void write_plan_dose(const std::filesystem::path& dir, PlanKind plan, const Grid3& dose);

/// Loads a case with `plan` as reference dose. Does not require the dose to
/// share the CT geometry (raw cases may differ until preprocessed).
CaseBundle read_case(const std::filesystem::path& dir, PlanKind plan);

nlohmann::json read_case_meta(const std::filesystem::path& dir);

/// Sorted `case_*` subdirectories of `root`.
std::vector<std::filesystem::path> list_cases(const std::filesystem::path& root);

}  // namespace dosepred
