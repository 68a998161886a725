#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dosepred/beam_spec.hpp"
#include "dosepred/grid.hpp"

namespace dosepred {

inline constexpr std::string_view kPtv = "ptv";
/// OAR channel order used everywhere (one-hot stacks, reports).
inline constexpr std::array<std::string_view, 5> kOarNames = {"esophagus", "cord", "heart",
                                                              "lung_l", "lung_r"};
inline constexpr std::array<std::string_view, 6> kStructureNames = {
    "ptv", "esophagus", "cord", "heart", "lung_l", "lung_r"};

bool is_known_structure(std::string_view name);

/// Named binary masks sharing one geometry. Iteration follows kStructureNames.
class StructureSet {
 public:
  StructureSet() = default;
  explicit StructureSet(const Geometry& geometry);

  /// Adds or replaces a mask. The mask must be binary and on this geometry.
  void set(std::string_view name, Grid3 mask);

  bool contains(std::string_view name) const;
  const Grid3& mask(std::string_view name) const;
  const Geometry& geometry() const noexcept { return geometry_; }
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return masks_.size(); }

  const std::vector<std::pair<std::string, Grid3>>& entries() const noexcept { return masks_; }

  /// PTV present and non-empty.
  void validate() const;

  bool operator==(const StructureSet&) const = default;

 private:
  Geometry geometry_;
  std::vector<std::pair<std::string, Grid3>> masks_;
};

enum class PlanKind { consistent, perturbed };

std::string_view to_string(PlanKind kind);
PlanKind parse_plan_kind(std::string_view s);

struct CaseMeta {
  std::string case_id;
  PlanKind plan = PlanKind::consistent;
  double prescription_gy = 60.0;

  bool operator==(const CaseMeta&) const = default;
};

/// One patient-equivalent unit.
struct CaseBundle {
  Grid3 ct;
  StructureSet structures;
  BeamSpec beams;
  Grid3 reference_dose;
  std::optional<Grid3> beam_channel;
  CaseMeta meta;

  void validate() const;
  bool operator==(const CaseBundle&) const = default;
};

}  // namespace dosepred
