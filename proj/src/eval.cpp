#include "stalign/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stalign/linalg.hpp"

namespace stalign {

Vec gene_correlations(const Mat& pred, const Mat& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw DataError("gene_correlations: shape mismatch");
  if (pred.rows() < 2) throw DataError("gene_correlations: need >= 2 spots");
  Vec corr(pred.cols());
  for (Index j = 0; j < pred.cols(); ++j)
    corr(j) = pearson(pred.col(j), truth.col(j));
  return corr;
}

namespace {

// Indices of the top-m genes by score, ties broken by gene name.
std::vector<Index> top_by(const Vec& score,
                          const std::vector<std::string>& names, Index m) {
  std::vector<Index> order(static_cast<std::size_t>(score.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    if (score(a) != score(b)) return score(a) > score(b);
    return names[static_cast<std::size_t>(a)] <
           names[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(std::min<Index>(m, score.size())));
  return order;
}

double mean_at(const Vec& corr, const std::vector<Index>& idx) {
  if (idx.empty()) return 0.0;
  double s = 0.0;
  for (const Index i : idx) s += corr(i);
  return s / static_cast<double>(idx.size());
}

}  // namespace

EvalReport summarize(const Vec& per_gene_corr, const Mat& truth,
                     const std::vector<std::string>& gene_names,
                     const std::vector<std::string>& markers) {
  if (per_gene_corr.size() != truth.cols() ||
      static_cast<Index>(gene_names.size()) != truth.cols())
    throw DataError("summarize: gene count mismatch");

  EvalReport report;
  report.per_gene_corr = per_gene_corr;
  report.gene_names = gene_names;

  const Vec means = truth.colwise().mean();
  Vec variances(truth.cols());
  for (Index j = 0; j < truth.cols(); ++j)
    variances(j) =
        (truth.col(j).array() - means(j)).square().sum() /
        static_cast<double>(std::max<Index>(1, truth.rows() - 1));

  report.hvg50_mean =
      mean_at(per_gene_corr, top_by(variances, gene_names, 50));
  report.heg50_mean = mean_at(per_gene_corr, top_by(means, gene_names, 50));

  std::vector<Index> marker_idx;
  for (const auto& m : markers) {
    const auto it = std::find(gene_names.begin(), gene_names.end(), m);
    if (it == gene_names.end()) {
      report.markers_missing.push_back(m);
    } else {
      report.markers_used.push_back(m);
      marker_idx.push_back(static_cast<Index>(it - gene_names.begin()));
    }
  }
  report.mg_available = !marker_idx.empty();
  report.mg_mean = mean_at(per_gene_corr, marker_idx);

  report.count_above_0_3 =
      (per_gene_corr.array() > 0.3).count();
  report.ag = per_gene_corr.mean();
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["per_gene_corr"] = std::vector<double>(
      report.per_gene_corr.data(),
      report.per_gene_corr.data() + report.per_gene_corr.size());
  j["gene_names"] = report.gene_names;
  j["mg_mean"] = report.mg_available ? nlohmann::json(report.mg_mean)
                                     : nlohmann::json(nullptr);
  j["hvg50_mean"] = report.hvg50_mean;
  j["heg50_mean"] = report.heg50_mean;
  j["count_above_0_3"] = report.count_above_0_3;
  j["ag"] = report.ag;
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& m : report.markers_missing)
    warnings.push_back("marker gene not found: " + m);
  j["warnings"] = warnings;
  j["markers_used"] = report.markers_used;
  return j.dump(2);
}

void emit_spatial_map(const Mat& coords, const Vec& values,
                      const std::string& path) {
  if (coords.rows() != values.size() || coords.cols() != 2)
    throw DataError("emit_spatial_map: coords/values mismatch");
  if (!values.allFinite()) throw DataError("emit_spatial_map: non-finite values");

  const double vmin = values.minCoeff(), vmax = values.maxCoeff();
  const double xmin = coords.col(0).minCoeff(), xmax = coords.col(0).maxCoeff();
  const double ymin = coords.col(1).minCoeff(), ymax = coords.col(1).maxCoeff();
  const double span_x = std::max(1e-9, xmax - xmin);
  const double span_y = std::max(1e-9, ymax - ymin);
  const double w = 640.0, h = 640.0, margin = 40.0;

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" "
         "height=\"680\" viewBox=\"0 0 720 680\">\n";
  for (Index i = 0; i < coords.rows(); ++i) {
    // degenerate range: midpoint color
    const double t = vmax > vmin ? (values(i) - vmin) / (vmax - vmin) : 0.5;
    const int r = static_cast<int>(std::lround(255.0 * t));
    const int b = static_cast<int>(std::lround(255.0 * (1.0 - t)));
    const double cx = margin + (coords(i, 0) - xmin) / span_x * (w - 2 * margin);
    const double cy = margin + (coords(i, 1) - ymin) / span_y * (h - 2 * margin);
    svg << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy)
        << "\" r=\"4\" fill=\"rgb(" << r << ",0," << b << ")\"/>\n";
  }
  // legend: blue = min, red = max
  svg << "<rect x=\"650\" y=\"40\" width=\"20\" height=\"560\" "
         "fill=\"url(#grad)\"/>\n"
      << "<defs><linearGradient id=\"grad\" x1=\"0\" y1=\"1\" x2=\"0\" "
         "y2=\"0\"><stop offset=\"0\" stop-color=\"rgb(0,0,255)\"/><stop "
         "offset=\"1\" stop-color=\"rgb(255,0,0)\"/></linearGradient></defs>\n"
      << "<text x=\"648\" y=\"625\" font-size=\"12\">" << fmt(vmin)
      << "</text>\n"
      << "<text x=\"648\" y=\"30\" font-size=\"12\">" << fmt(vmax)
      << "</text>\n</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << svg.str();
  if (!out) throw DataError("write failed: " + path);
}

std::string ablation_table(
    const std::vector<std::pair<std::string, EvalReport>>& reports) {
  if (reports.empty()) throw ParamError("ablation_table: need >= 1 report");
  std::size_t name_w = 5;
  for (const auto& [name, rep] : reports) name_w = std::max(name_w, name.size());

  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%8.4f", v);
    return std::string(buf);
  };

  std::ostringstream out;
  out << std::string(name_w, ' ') << " |       MG |      HVG |      HEG "
      << "|  Cor>0.3 |       AG\n";
  for (const auto& [name, rep] : reports) {
    out << name << std::string(name_w - name.size(), ' ') << " | "
        << cell(rep.mg_mean) << " | " << cell(rep.hvg50_mean) << " | "
        << cell(rep.heg50_mean) << " | ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%8lld",
                  static_cast<long long>(rep.count_above_0_3));
    out << buf << " | " << cell(rep.ag) << '\n';
  }
  return out.str();
}

}  // namespace stalign
