#include "dosepred/case_io.hpp"

#include <algorithm>
#include <fstream>

#include "dosepred/error.hpp"

namespace fs = std::filesystem;

namespace dosepred {

fs::path case_dir(const fs::path& root, const std::string& case_id) {
  return root / ("case_" + case_id);
}

nlohmann::ordered_json beams_to_json(const BeamSpec& beams) {
  nlohmann::ordered_json j;
  j["angles_deg"] = beams.angles_deg;
  j["iso_mm"] = {beams.isocenter[0], beams.isocenter[1], beams.isocenter[2]};
  j["sad_mm"] = beams.sad_mm;
  j["margin_mm"] = beams.margin_mm;
  return j;
}

BeamSpec beams_from_json(const nlohmann::json& j) {
  BeamSpec b;
  try {
    b.angles_deg = j.at("angles_deg").get<std::vector<double>>();
    const auto iso = j.at("iso_mm").get<std::vector<double>>();
    if (iso.size() != 3) fail_validation("beams.json: iso_mm must have 3 entries");
    b.isocenter = {iso[0], iso[1], iso[2]};
    b.sad_mm = j.value("sad_mm", b.sad_mm);
    b.margin_mm = j.value("margin_mm", b.margin_mm);
  } catch (const nlohmann::json::exception& e) {
    fail_validation(std::string("beams.json: ") + e.what());
  }
  b.validate();
  return b;
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) fail_io("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail_io("malformed JSON in " + file.string() + ": " + e.what());
  }
}

void write_json(const fs::path& file, const nlohmann::ordered_json& j) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) fail_io("cannot open for writing: " + file.string());
  out << j.dump(2) << "\n";
  if (!out) fail_io("write failed: " + file.string());
}

BeamSpec read_beams(const fs::path& file) { return beams_from_json(read_json(file)); }

void write_beams(const fs::path& file, const BeamSpec& beams) {
  write_json(file, beams_to_json(beams));
}

void write_plan_dose(const fs::path& dir, PlanKind plan, const Grid3& dose) {
  write_g3(dir / ("dose_" + std::string(to_string(plan)) + ".g3"), dose);
}

void write_case(const fs::path& dir, const CaseBundle& c, const nlohmann::ordered_json& extra_meta) {
  std::error_code ec;
  fs::create_directories(dir / "masks", ec);
  if (ec) fail_io("cannot create " + (dir / "masks").string() + ": " + ec.message());
  write_g3(dir / "ct.g3", c.ct);
  for (const auto& [name, m] : c.structures.entries()) write_g3(dir / "masks" / (name + ".g3"), m);
  write_beams(dir / "beams.json", c.beams);
  write_plan_dose(dir, c.meta.plan, c.reference_dose);
  if (c.beam_channel) write_g3(dir / "beam.g3", *c.beam_channel);
  nlohmann::ordered_json meta;
  meta["case_id"] = c.meta.case_id;
  meta["prescription_gy"] = c.meta.prescription_gy;
  for (const auto& [k, v] : extra_meta.items()) meta[k] = v;
  write_json(dir / "meta.json", meta);
}

nlohmann::json read_case_meta(const fs::path& dir) { return read_json(dir / "meta.json"); }

CaseBundle read_case(const fs::path& dir, PlanKind plan) {
  if (!fs::is_directory(dir)) fail_io("not a case directory: " + dir.string());
  CaseBundle c;
  const nlohmann::json meta = read_case_meta(dir);
  c.meta.case_id = meta.value("case_id", dir.filename().string());
  c.meta.prescription_gy = meta.value("prescription_gy", 60.0);
  c.meta.plan = plan;
  c.ct = read_g3(dir / "ct.g3");
  c.structures = StructureSet(c.ct.geometry());
  for (auto name : kStructureNames) {
    const fs::path f = dir / "masks" / (std::string(name) + ".g3");
    if (fs::exists(f)) c.structures.set(name, read_g3(f));
  }
  c.structures.validate();
  c.beams = read_beams(dir / "beams.json");
  const fs::path dose = dir / ("dose_" + std::string(to_string(plan)) + ".g3");
  if (!fs::exists(dose)) fail_io("missing " + dose.string());
  c.reference_dose = read_g3(dose);
  if (fs::exists(dir / "beam.g3")) c.beam_channel = read_g3(dir / "beam.g3");
  return c;
}

std::vector<fs::path> list_cases(const fs::path& root) {
  if (!fs::is_directory(root)) fail_io("not a directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("case_", 0) == 0)
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace dosepred
