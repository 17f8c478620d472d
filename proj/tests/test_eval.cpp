#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "stalign/eval.hpp"
#include "stalign/rng.hpp"

using namespace stalign;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("gene_correlations: perfect prediction gives all ones") {
  Rng rng(1);
  const Mat truth = rng.uniform_matrix(10, 5, 0.0, 4.0);
  const Vec corr = gene_correlations(truth, truth);
  for (Index j = 0; j < 5; ++j)
    CHECK(corr(j) == doctest::Approx(1.0).epsilon(1e-12));
  const Vec anti = gene_correlations((-truth).eval(), truth);
  for (Index j = 0; j < 5; ++j)
    CHECK(anti(j) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_AS((void)gene_correlations(truth, truth.topRows(3)), DataError);
}

TEST_CASE("gene_correlations: constant prediction column gives zero") {
  Rng rng(2);
  Mat pred = rng.normal_matrix(8, 3);
  const Mat truth = rng.normal_matrix(8, 3);
  pred.col(1).setConstant(2.0);
  const Vec corr = gene_correlations(pred, truth);
  CHECK(corr(1) == 0.0);
}

TEST_CASE("summarize: markers present, AG and Cor>0.3 counts") {
  const std::vector<std::string> names = {"ATP2B4", "RASGRF2", "GX", "GY"};
  Vec corr(4);
  corr << 0.8, 0.4, 0.2, -0.1;
  Rng rng(3);
  const Mat truth = rng.uniform_matrix(10, 4, 0.0, 3.0);
  const EvalReport rep = summarize(corr, truth, names);
  CHECK(rep.mg_available);
  CHECK(rep.markers_used == std::vector<std::string>{"ATP2B4", "RASGRF2"});
  CHECK(rep.markers_missing == std::vector<std::string>{"LAMP5", "B3GALT2"});
  CHECK(rep.mg_mean == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(rep.ag == doctest::Approx(corr.mean()).epsilon(1e-12));
  CHECK(rep.count_above_0_3 == 2);
}

TEST_CASE("summarize: no markers found leaves MG unavailable") {
  const std::vector<std::string> names = {"GA", "GB"};
  Vec corr(2);
  corr << 0.5, 0.6;
  const Mat truth = Mat::Ones(4, 2);
  const EvalReport rep = summarize(corr, truth, names);
  CHECK_FALSE(rep.mg_available);
  CHECK(rep.markers_missing.size() == 4);
  const std::string json = report_to_json(rep);
  CHECK(json.find("\"mg_mean\": null") != std::string::npos);
  CHECK(json.find("marker gene not found: ATP2B4") != std::string::npos);
}

TEST_CASE("summarize: HVG/HEG selection matches a manual sort oracle") {
  Rng rng(5);
  const Index g = 60, n = 30;
  const Mat truth = rng.uniform_matrix(n, g, 0.0, 6.0);
  const Vec corr = rng.uniform_matrix(g, 1, -1.0, 1.0).col(0);
  std::vector<std::string> names;
  for (Index j = 0; j < g; ++j) names.push_back("G" + std::to_string(j));

  const EvalReport rep = summarize(corr, truth, names, {});

  const Vec means = truth.colwise().mean();
  Vec vars(g);
  for (Index j = 0; j < g; ++j)
    vars(j) = (truth.col(j).array() - means(j)).square().sum() /
              static_cast<double>(n - 1);

  auto top50_mean = [&](const Vec& score) {
    std::vector<Index> order(static_cast<std::size_t>(g));
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
      if (score(a) != score(b)) return score(a) > score(b);
      return names[static_cast<std::size_t>(a)] <
             names[static_cast<std::size_t>(b)];
    });
    double s = 0.0;
    for (Index r = 0; r < 50; ++r) s += corr(order[static_cast<std::size_t>(r)]);
    return s / 50.0;
  };
  CHECK(rep.hvg50_mean == doctest::Approx(top50_mean(vars)).epsilon(1e-12));
  CHECK(rep.heg50_mean == doctest::Approx(top50_mean(means)).epsilon(1e-12));
}

TEST_CASE("summarize: fewer genes than 50 uses all of them") {
  Rng rng(6);
  const Mat truth = rng.uniform_matrix(8, 5, 0.0, 2.0);
  const Vec corr = rng.uniform_matrix(5, 1, 0.0, 1.0).col(0);
  std::vector<std::string> names = {"A", "B", "C", "D", "E"};
  const EvalReport rep = summarize(corr, truth, names, {});
  CHECK(rep.hvg50_mean == doctest::Approx(corr.mean()).epsilon(1e-12));
  CHECK(rep.heg50_mean == doctest::Approx(corr.mean()).epsilon(1e-12));
}

TEST_CASE("emit_spatial_map: deterministic bytes, legend carries the range") {
  Rng rng(7);
  const Mat coords = rng.uniform_matrix(12, 2, 0.0, 5.0);
  const Vec values = rng.uniform_matrix(12, 1, -1.0, 2.0).col(0);
  const std::string p1 = tmp_path("stalign_map1.svg");
  const std::string p2 = tmp_path("stalign_map2.svg");
  emit_spatial_map(coords, values, p1);
  emit_spatial_map(coords, values, p2);
  const std::string a = slurp(p1);
  CHECK(a == slurp(p2));
  CHECK(a.find("<svg") == 0);
  CHECK(a.find("rgb(") != std::string::npos);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", values.maxCoeff());
  CHECK(a.find(buf) != std::string::npos);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("emit_spatial_map: constant values and a single spot") {
  const std::string path = tmp_path("stalign_map_const.svg");
  Mat coords(3, 2);
  coords << 0, 0, 1, 0, 0, 1;
  emit_spatial_map(coords, Vec::Constant(3, 2.0), path);
  const std::string svg = slurp(path);
  // Degenerate range: midpoint color for every spot.
  CHECK(svg.find("rgb(128,0,128)") != std::string::npos);
  CHECK(svg.find("rgb(255,0,0)\"/>\n<circle") == std::string::npos);

  Mat one(1, 2);
  one << 3, 4;
  emit_spatial_map(one, Vec::Constant(1, 1.0), path);
  CHECK(slurp(path).find("<circle") != std::string::npos);

  Vec bad(3);
  bad << 1.0, std::nan(""), 2.0;
  CHECK_THROWS_AS(emit_spatial_map(coords, bad, path), DataError);
  std::remove(path.c_str());
}

TEST_CASE("ablation_table: values parse back at 4 decimals") {
  EvalReport a;
  a.mg_mean = 0.12345;
  a.mg_available = true;
  a.hvg50_mean = 0.5;
  a.heg50_mean = -0.25;
  a.count_above_0_3 = 17;
  a.ag = 0.3343;
  EvalReport b;
  b.hvg50_mean = 1.0;
  b.ag = -0.0001;

  const std::string table =
      ablation_table({{"Baseline", a}, {"ModelA", b}});
  CHECK(table.find("MG") != std::string::npos);
  CHECK(table.find("HVG") != std::string::npos);
  CHECK(table.find("HEG") != std::string::npos);
  CHECK(table.find("Cor>0.3") != std::string::npos);
  CHECK(table.find("AG") != std::string::npos);
  CHECK(table.find("Baseline") != std::string::npos);
  CHECK(table.find("0.1235") != std::string::npos);  // rounded, not truncated
  CHECK(table.find("-0.2500") != std::string::npos);
  CHECK(table.find("17") != std::string::npos);
  CHECK(table.find("0.3343") != std::string::npos);
  CHECK(table.find("-0.0001") != std::string::npos);

  // Every row has the same number of column separators.
  std::istringstream lines(table);
  std::string line;
  while (std::getline(lines, line))
    CHECK(std::count(line.begin(), line.end(), '|') == 5);
  CHECK_THROWS_AS((void)ablation_table({}), ParamError);
}
