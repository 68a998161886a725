#include "dosepred/case.hpp"

#include <algorithm>
#include <cmath>

#include "dosepred/error.hpp"

namespace dosepred {

namespace {

std::size_t canonical_rank(std::string_view name) {
  const auto it = std::find(kStructureNames.begin(), kStructureNames.end(), name);
  return static_cast<std::size_t>(it - kStructureNames.begin());
}

}  // namespace

bool is_known_structure(std::string_view name) {
  return canonical_rank(name) < kStructureNames.size();
}

StructureSet::StructureSet(const Geometry& geometry) : geometry_(geometry) {
  geometry_.validate();
}

void StructureSet::set(std::string_view name, Grid3 mask) {
  if (!is_known_structure(name)) fail_validation("unknown structure '" + std::string(name) + "'");
  if (!(mask.geometry() == geometry_)) {
    fail_validation("structure '" + std::string(name) + "': mask geometry " +
                    describe(mask.geometry()) + " differs from " + describe(geometry_));
  }
  if (!is_binary(mask)) fail_validation("structure '" + std::string(name) + "': mask not binary");
  for (auto& [n, m] : masks_) {
    if (n == name) {
      m = std::move(mask);
      return;
    }
  }
  masks_.emplace_back(std::string(name), std::move(mask));
  std::sort(masks_.begin(), masks_.end(), [](const auto& a, const auto& b) {
    return canonical_rank(a.first) < canonical_rank(b.first);
  });
}

bool StructureSet::contains(std::string_view name) const {
  return std::any_of(masks_.begin(), masks_.end(), [&](const auto& e) { return e.first == name; });
}

const Grid3& StructureSet::mask(std::string_view name) const {
  for (const auto& [n, m] : masks_) {
    if (n == name) return m;
  }
  fail_validation("missing structure '" + std::string(name) + "'");
}

std::vector<std::string> StructureSet::names() const {
  std::vector<std::string> out;
  out.reserve(masks_.size());
  for (const auto& e : masks_) out.push_back(e.first);
  return out;
}

void StructureSet::validate() const {
  if (!contains(kPtv)) fail_validation("structure set has no PTV");
  if (count_inside(mask(kPtv)) == 0) fail_validation("PTV mask is empty");
}

std::string_view to_string(PlanKind kind) {
  return kind == PlanKind::consistent ? "consistent" : "perturbed";
}

PlanKind parse_plan_kind(std::string_view s) {
  if (s == "consistent") return PlanKind::consistent;
  if (s == "perturbed") return PlanKind::perturbed;
  fail_validation("unknown plan kind '" + std::string(s) + "' (expected consistent|perturbed)");
}

void BeamSpec::validate() const {
  if (angles_deg.empty() || angles_deg.size() > 9)
    fail_validation("beams: need 1..9 gantry angles, got " + std::to_string(angles_deg.size()));
  for (double a : angles_deg) {
    if (!(a >= 0.0 && a < 360.0)) fail_validation("beams: angle out of [0, 360): " + std::to_string(a));
  }
  for (double c : isocenter) {
    if (!std::isfinite(c)) fail_validation("beams: non-finite isocenter");
  }
  if (!(sad_mm > 0.0)) fail_validation("beams: source-axis distance must be positive");
  if (!(margin_mm >= 0.0)) fail_validation("beams: aperture margin must be >= 0");
}

void BeamKernelParams::validate() const {
  if (!(mu_eff > 0.0) || !(penumbra_mm > 0.0) || !(buildup_mm > 0.0))
    fail_validation("beam kernel parameters must all be positive");
}

void CaseBundle::validate() const {
  structures.validate();
  if (!(structures.geometry() == ct.geometry()))
    fail_validation("case " + meta.case_id + ": structure geometry differs from CT");
  if (!(reference_dose.geometry() == ct.geometry()))
    fail_validation("case " + meta.case_id + ": reference dose geometry differs from CT");
  if (beam_channel && !(beam_channel->geometry() == ct.geometry()))
    fail_validation("case " + meta.case_id + ": beam channel geometry differs from CT");
  if (!(meta.prescription_gy > 0.0))
    fail_validation("case " + meta.case_id + ": prescription must be positive");
  beams.validate();
}

}  // namespace dosepred
