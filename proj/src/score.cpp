#include "dosepred/score.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dosepred/dvh.hpp"
#include "dosepred/error.hpp"

namespace dosepred {

double dose_score(const Grid3& pred, const Grid3& real, const Grid3* body) {
  if (!body) return mae_loss(pred, real);
  require_same_geometry(pred, real, "dose score");
  require_same_geometry(pred, *body, "dose score body mask");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if ((*body)[i] > 0.5) diffs.push_back(std::abs(pred[i] - real[i]));
  }
  if (diffs.empty()) fail_validation("dose score: empty body mask");
  return pairwise_sum(diffs) / static_cast<double>(diffs.size());
}

Grid3 body_mask(const Grid3& ct_hu, double threshold_hu) {
  Grid3 m(ct_hu.geometry());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = ct_hu[i] > threshold_hu ? 1.0 : 0.0;
  return m;
}

namespace {

bool present(const StructureSet& s, std::string_view name) {
  return s.contains(name) && count_inside(s.mask(name)) > 0;
}

DvhCriterion criterion(std::string structure, std::string metric, double real, double pred) {
  return {std::move(structure), std::move(metric), real, pred, std::abs(real - pred)};
}

}  // namespace

std::vector<DvhCriterion> dvh_criteria(const Grid3& pred, const Grid3& real,
                                       const StructureSet& structures) {
  require_same_geometry(pred, real, "dvh score");
  if (!present(structures, kPtv)) fail_validation("dvh score: missing structure 'ptv'");
  std::vector<DvhCriterion> out;
  for (auto name : kOarNames) {
    if (!present(structures, name)) continue;
    const Grid3& m = structures.mask(name);
    out.push_back(criterion(std::string(name), "mean", masked_mean(real, m), masked_mean(pred, m)));
  }
  const Grid3& ptv = structures.mask(kPtv);
  for (double x : {1.0, 95.0, 99.0}) {
    out.push_back(criterion("ptv", "D" + std::to_string(static_cast<int>(x)),
                            dose_at_volume(real, ptv, x, "ptv"),
                            dose_at_volume(pred, ptv, x, "ptv")));
  }
  return out;
}

double dvh_score(const Grid3& pred, const Grid3& real, const StructureSet& structures) {
  const auto crit = dvh_criteria(pred, real, structures);
  double sum = 0.0;
  for (const auto& c : crit) sum += c.error;
  return sum / static_cast<double>(crit.size());
}

std::vector<ClinicalMetric> clinical_table(const Grid3& pred, const Grid3& real,
                                           const StructureSet& structures,
                                           double prescription_gy) {
  require_same_geometry(pred, real, "clinical table");
  if (!(prescription_gy > 0.0)) fail_validation("clinical table: prescription must be positive");
  struct Row {
    const char* structure;
    const char* metric;
  };
  static const Row rows[] = {
      {"ptv", "D99"},       {"ptv", "D98"},       {"ptv", "D95"},      {"ptv", "D5"},
      {"esophagus", "D2"},  {"esophagus", "V40"}, {"esophagus", "V50"}, {"heart", "V35"},
      {"cord", "D2"},       {"lung_l", "Dmean"},  {"lung_l", "V5"},     {"lung_l", "V20"},
      {"lung_r", "Dmean"},  {"lung_r", "V5"},     {"lung_r", "V20"},
  };
  std::vector<ClinicalMetric> out;
  for (const Row& r : rows) {
    ClinicalMetric m;
    m.structure = r.structure;
    m.metric = r.metric;
    const std::string metric = r.metric;
    const bool is_volume = metric[0] == 'V';
    m.unit = is_volume ? "%vol" : "%Rx";
    if (!present(structures, m.structure)) {
      out.push_back(std::move(m));
      continue;
    }
    const Grid3& mask = structures.mask(m.structure);
    m.present = true;
    if (metric == "Dmean") {
      m.real = 100.0 * masked_mean(real, mask) / prescription_gy;
      m.pred = 100.0 * masked_mean(pred, mask) / prescription_gy;
    } else if (metric[0] == 'D') {
      const double x = std::stod(metric.substr(1));
      m.real = 100.0 * dose_at_volume(real, mask, x, m.structure) / prescription_gy;
      m.pred = 100.0 * dose_at_volume(pred, mask, x, m.structure) / prescription_gy;
    } else {
      const double gy = std::stod(metric.substr(1));
      m.real = volume_at_dose_pct(real, mask, gy, m.structure);
      m.pred = volume_at_dose_pct(pred, mask, gy, m.structure);
    }
    m.error = std::abs(m.real - m.pred);
    out.push_back(std::move(m));
  }
  return out;
}

CaseScore score_case(const std::string& case_id, const Grid3& pred, const Grid3& real,
                     const StructureSet& structures, const Grid3* ct_hu,
                     const ScoreOptions& opts) {
  CaseScore s;
  s.case_id = case_id;
  if (opts.body_only) {
    if (!ct_hu) fail_validation("score: body-only scoring needs the CT of case " + case_id);
    const Grid3 body = body_mask(*ct_hu);
    s.dose_score = dose_score(pred, real, &body);
  } else {
    s.dose_score = dose_score(pred, real);
  }
  s.dvh = dvh_criteria(pred, real, structures);
  double sum = 0.0;
  for (const auto& c : s.dvh) sum += c.error;
  s.dvh_score = sum / static_cast<double>(s.dvh.size());
  s.clinical = clinical_table(pred, real, structures, opts.prescription_gy);
  return s;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n));
  return s;
}

namespace {

std::vector<const CaseScore*> sorted_cases(const ScoreReport& report) {
  std::vector<const CaseScore*> cases;
  for (const auto& c : report.cases) cases.push_back(&c);
  std::stable_sort(cases.begin(), cases.end(),
                   [](const CaseScore* a, const CaseScore* b) { return a->case_id < b->case_id; });
  return cases;
}

nlohmann::ordered_json summary_json(const Summary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
}

std::string fmt(double v) {  // round-trips through strtod
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

nlohmann::ordered_json report_json(const ScoreReport& report) {
  if (report.cases.empty()) fail_validation("score report: no cases");
  const auto cases = sorted_cases(report);
  nlohmann::ordered_json j;
  j["config"] = report.config;
  auto arr = nlohmann::ordered_json::array();
  std::vector<double> dose, dvh;
  std::map<std::string, std::vector<double>> clinical;
  std::vector<std::string> clinical_order;
  for (const CaseScore* c : cases) {
    nlohmann::ordered_json cj;
    cj["case_id"] = c->case_id;
    cj["dose_score"] = c->dose_score;
    cj["dvh_score"] = c->dvh_score;
    auto crit = nlohmann::ordered_json::array();
    for (const auto& d : c->dvh)
      crit.push_back({{"structure", d.structure}, {"metric", d.metric}, {"real", d.real},
                      {"pred", d.pred}, {"error", d.error}});
    cj["dvh_criteria"] = crit;
    auto clin = nlohmann::ordered_json::array();
    for (const auto& m : c->clinical) {
      nlohmann::ordered_json mj{{"structure", m.structure}, {"metric", m.metric},
                                {"unit", m.unit}, {"present", m.present}};
      if (m.present) {
        mj["real"] = m.real;
        mj["pred"] = m.pred;
        mj["error"] = m.error;
        const std::string key = m.structure + "." + m.metric;
        if (!clinical.count(key)) clinical_order.push_back(key);
        clinical[key].push_back(m.error);
      }
      clin.push_back(std::move(mj));
    }
    cj["clinical"] = clin;
    arr.push_back(std::move(cj));
    dose.push_back(c->dose_score);
    dvh.push_back(c->dvh_score);
  }
  j["cases"] = arr;
  nlohmann::ordered_json agg;
  agg["dose_score"] = summary_json(summarize(dose));
  agg["dvh_score"] = summary_json(summarize(dvh));
  nlohmann::ordered_json clin_agg = nlohmann::ordered_json::object();
  for (const auto& key : clinical_order) clin_agg[key] = summary_json(summarize(clinical[key]));
  agg["clinical"] = clin_agg;
  j["aggregate"] = agg;
  return j;
}

void aggregate_and_emit(const ScoreReport& report, const std::filesystem::path& out_dir) {
  const auto j = report_json(report);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail_io("cannot create " + out_dir.string() + ": " + ec.message());

  const auto csv_path = out_dir / "report.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) fail_io("cannot open " + csv_path.string() + " for writing");
  csv << "case_id,dose_score,dvh_score\n";
  for (const CaseScore* c : sorted_cases(report))
    csv << c->case_id << ',' << fmt(c->dose_score) << ',' << fmt(c->dvh_score) << '\n';
  if (!csv) fail_io("write failed: " + csv_path.string());
  csv.close();

  const auto json_path = out_dir / "report.json";
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) fail_io("cannot open " + json_path.string() + " for writing");
  js << j.dump(2) << '\n';
  if (!js) fail_io("write failed: " + json_path.string());
}

}  // namespace dosepred
