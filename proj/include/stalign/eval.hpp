#pragma once

#include <string>
#include <vector>

#include "stalign/common.hpp"

namespace stalign {

inline const std::vector<std::string> kDefaultMarkers = {
    "ATP2B4", "RASGRF2", "LAMP5", "B3GALT2"};

struct EvalReport {
  Vec per_gene_corr;
  std::vector<std::string> gene_names;
  double mg_mean = 0.0;
  bool mg_available = false;
  std::vector<std::string> markers_used;
  std::vector<std::string> markers_missing;
  double hvg50_mean = 0.0;
  double heg50_mean = 0.0;
  Index count_above_0_3 = 0;
  double ag = 0.0;
};

// Per-gene Pearson across spots.
Vec gene_correlations(const Mat& pred, const Mat& truth);

// MG / HVG-50 / HEG-50 / Cor>0.3 / AG summaries. HVG and HEG rankings come
// from the truth matrix, ties broken by gene name.
EvalReport summarize(const Vec& per_gene_corr, const Mat& truth,
                     const std::vector<std::string>& gene_names,
                     const std::vector<std::string>& markers = kDefaultMarkers);

std::string report_to_json(const EvalReport& report);

// Scatter of colored circles (blue -> red over [min, max]); byte output is
// deterministic given inputs.
void emit_spatial_map(const Mat& coords, const Vec& values,
                      const std::string& path);

// Aligned text table: MG | HVG | HEG | Cor>0.3 | AG, 4 decimals.
std::string ablation_table(
    const std::vector<std::pair<std::string, EvalReport>>& reports);

}  // namespace stalign
