#include "dosepred/dvh.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>

#include "dosepred/error.hpp"

namespace dosepred {

DvhConfig DvhConfig::standard() {
  DvhConfig cfg;
  for (int t = 0; t < 70; ++t) cfg.thresholds.push_back(t + 0.5);
  cfg.beta = 1.0;
  for (auto name : kStructureNames) cfg.structures.emplace_back(name);
  return cfg;
}

void DvhConfig::validate() const {
  if (thresholds.empty()) fail_validation("dvh config: need at least one threshold");
  for (std::size_t t = 1; t < thresholds.size(); ++t) {
    if (!(thresholds[t] > thresholds[t - 1]))
      fail_validation("dvh config: thresholds must be strictly ascending");
  }
  if (!(beta > 0.0)) fail_validation("dvh config: beta must be positive");
  if (structures.empty()) fail_validation("dvh config: no structures selected");
}

namespace {

std::vector<std::size_t> masked_indices(const Grid3& dose, const Grid3& mask,
                                        const std::string& structure) {
  require_same_geometry(dose, mask, structure);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] > 0.5) idx.push_back(i);
  }
  if (idx.empty()) fail_validation("empty mask for structure '" + structure + "'");
  return idx;
}

double soft_fraction(const Grid3& dose, const std::vector<std::size_t>& idx, double threshold,
                     double beta, std::vector<double>& scratch) {
  scratch.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) scratch[k] = sigmoid((dose[idx[k]] - threshold) / beta);
  return pairwise_sum(scratch) / static_cast<double>(idx.size());
}

struct StructureTerms {
  std::vector<std::size_t> idx;
  std::vector<double> v_pred;
  std::vector<double> v_real;
};

std::vector<StructureTerms> soft_terms(const Grid3& pred, const Grid3& real,
                                       const StructureSet& structures, const DvhConfig& cfg) {
  cfg.validate();
  require_same_geometry(pred, real, "dvh_loss");
  std::vector<StructureTerms> terms;
  std::vector<double> scratch;
  for (const auto& name : cfg.structures) {
    StructureTerms st;
    st.idx = masked_indices(pred, structures.mask(name), name);
    st.v_pred.resize(cfg.thresholds.size());
    st.v_real.resize(cfg.thresholds.size());
    for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
      st.v_pred[t] = soft_fraction(pred, st.idx, cfg.thresholds[t], cfg.beta, scratch);
      st.v_real[t] = soft_fraction(real, st.idx, cfg.thresholds[t], cfg.beta, scratch);
    }
    terms.push_back(std::move(st));
  }
  return terms;
}

double loss_from_terms(const std::vector<StructureTerms>& terms, std::size_t n_t) {
  std::vector<double> per_structure;
  std::vector<double> sq(n_t);
  for (const auto& st : terms) {
    for (std::size_t t = 0; t < n_t; ++t) {
      const double d = st.v_real[t] - st.v_pred[t];
      sq[t] = d * d;
    }
    per_structure.push_back(pairwise_sum(sq));
  }
  return pairwise_sum(per_structure) / static_cast<double>(terms.size()) / static_cast<double>(n_t);
}

Grid3 grad_from_terms(const Grid3& pred, const std::vector<StructureTerms>& terms,
                      const DvhConfig& cfg) {
  Grid3 g(pred.geometry());
  const std::size_t n_t = cfg.thresholds.size();
  const double norm = 1.0 / (static_cast<double>(terms.size()) * static_cast<double>(n_t));
  std::vector<double> coef(n_t);
  for (const auto& st : terms) {
    const double inv = 1.0 / (cfg.beta * static_cast<double>(st.idx.size()));
    for (std::size_t t = 0; t < n_t; ++t) coef[t] = 2.0 * (st.v_pred[t] - st.v_real[t]) * norm * inv;
    for (std::size_t i : st.idx) {
      double acc = 0.0;
      for (std::size_t t = 0; t < n_t; ++t) {
        const double s = sigmoid((pred[i] - cfg.thresholds[t]) / cfg.beta);
        acc += coef[t] * s * (1.0 - s);
      }
      g[i] += acc;
    }
  }
  return g;
}

}  // namespace

double exact_volume_at_dose(const Grid3& dose, const Grid3& mask, double threshold,
                            const std::string& structure) {
  const auto idx = masked_indices(dose, mask, structure);
  std::size_t hit = 0;
  for (std::size_t i : idx) hit += dose[i] >= threshold ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(idx.size());
}

double soft_volume_at_dose(const Grid3& dose, const Grid3& mask, double threshold, double beta,
                           const std::string& structure) {
  if (!(beta > 0.0)) fail_validation("soft_volume_at_dose: beta must be positive");
  const auto idx = masked_indices(dose, mask, structure);
  std::vector<double> scratch;
  return soft_fraction(dose, idx, threshold, beta, scratch);
}

DvhCurve exact_dvh(const Grid3& dose, const Grid3& mask, const std::string& structure,
                   const std::vector<double>& thresholds) {
  const auto idx = masked_indices(dose, mask, structure);
  std::vector<double> sorted;
  sorted.reserve(idx.size());
  for (std::size_t i : idx) sorted.push_back(dose[i]);
  std::sort(sorted.begin(), sorted.end());
  DvhCurve c{structure, thresholds, {}};
  for (double t : thresholds) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    c.fractions.push_back(static_cast<double>(sorted.size() - static_cast<std::size_t>(below)) /
                          static_cast<double>(sorted.size()));
  }
  return c;
}

DvhCurve soft_dvh(const Grid3& dose, const Grid3& mask, const std::string& structure,
                  const std::vector<double>& thresholds, double beta) {
  if (!(beta > 0.0)) fail_validation("soft_dvh: beta must be positive");
  const auto idx = masked_indices(dose, mask, structure);
  std::vector<double> scratch;
  DvhCurve c{structure, thresholds, {}};
  for (double t : thresholds) c.fractions.push_back(soft_fraction(dose, idx, t, beta, scratch));
  return c;
}

double dvh_loss(const Grid3& pred, const Grid3& real, const StructureSet& structures,
                const DvhConfig& cfg) {
  return loss_from_terms(soft_terms(pred, real, structures, cfg), cfg.thresholds.size());
}

Grid3 dvh_loss_grad(const Grid3& pred, const Grid3& real, const StructureSet& structures,
                    const DvhConfig& cfg) {
  return grad_from_terms(pred, soft_terms(pred, real, structures, cfg), cfg);
}

LossAndGrad dvh_loss_and_grad(const Grid3& pred, const Grid3& real,
                              const StructureSet& structures, const DvhConfig& cfg) {
  const auto terms = soft_terms(pred, real, structures, cfg);
  return {loss_from_terms(terms, cfg.thresholds.size()), grad_from_terms(pred, terms, cfg)};
}

double mae_loss(const Grid3& pred, const Grid3& real) {
  require_same_geometry(pred, real, "mae_loss");
  std::vector<double> diff(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) diff[i] = std::abs(pred[i] - real[i]);
  return pairwise_sum(diff) / static_cast<double>(pred.size());
}

Grid3 mae_grad(const Grid3& pred, const Grid3& real) {
  require_same_geometry(pred, real, "mae_grad");
  Grid3 g(pred.geometry());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - real[i];
    g[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
  }
  return g;
}

double dose_at_volume(const Grid3& dose, const Grid3& mask, double percent,
                      const std::string& structure) {
  if (!(percent > 0.0 && percent <= 100.0))
    fail_validation("dose_at_volume: percent must lie in (0, 100], got " + std::to_string(percent));
  const auto idx = masked_indices(dose, mask, structure);
  std::vector<double> v;
  v.reserve(idx.size());
  for (std::size_t i : idx) v.push_back(dose[i]);
  const auto n = static_cast<double>(v.size());
  // Smallest k with k * 100 >= percent * n.
  auto k = static_cast<std::size_t>(std::ceil(percent * n / 100.0));
  while (k > 1 && static_cast<double>(k - 1) * 100.0 >= percent * n) --k;
  while (static_cast<double>(k) * 100.0 < percent * n) ++k;
  k = std::clamp<std::size_t>(k, 1, v.size());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end(),
                   std::greater<>());
  return v[k - 1];
}

double volume_at_dose_pct(const Grid3& dose, const Grid3& mask, double threshold_gy,
                          const std::string& structure) {
  return 100.0 * exact_volume_at_dose(dose, mask, threshold_gy, structure);
}

void write_dvh_csv(const std::filesystem::path& file, const std::vector<DvhCurve>& curves) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) fail_io("cannot open for writing: " + file.string());
  out << "structure,threshold_gy,fraction\n" << std::setprecision(17);
  for (const auto& c : curves) {
    for (std::size_t t = 0; t < c.thresholds.size(); ++t)
      out << c.structure << "," << c.thresholds[t] << "," << c.fractions[t] << "\n";
  }
  if (!out) fail_io("write failed: " + file.string());
}

}  // namespace dosepred
