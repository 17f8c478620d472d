#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "stalign/data.hpp"
#include "stalign/rng.hpp"

using namespace stalign;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("matrix csv: exact round trip") {
  Rng rng(6);
  const Mat m = rng.normal_matrix(4, 3);
  const std::vector<std::string> rows = {"a", "b", "c", "d"};
  const std::vector<std::string> cols = {"G1", "G2", "G3"};
  const std::string path = tmp_path("stalign_rt.csv");
  write_matrix_csv(path, m, rows, cols);
  auto [loaded, row_ids, col_names] = read_matrix_csv(path);
  CHECK(row_ids == rows);
  CHECK(col_names == cols);
  CHECK((loaded - m).cwiseAbs().maxCoeff() == 0.0);  // %.17g is lossless
  std::remove(path.c_str());
}

TEST_CASE("matrix csv: parse errors name the offending cell") {
  const std::string path = tmp_path("stalign_bad.csv");
  {
    std::ofstream out(path);
    out << "spot_id,G1,G2\ns0,1.0,oops\n";
  }
  CHECK_THROWS_WITH_AS((void)read_matrix_csv(path),
                       doctest::Contains("row 0"), DataError);
  {
    std::ofstream out(path);
    out << "spot_id,G1,G2\ns0,1.0\n";
  }
  CHECK_THROWS_AS((void)read_matrix_csv(path), DataError);
  std::remove(path.c_str());
  CHECK_THROWS_AS((void)read_matrix_csv(tmp_path("stalign_absent.csv")),
                  DataError);
}

TEST_CASE("load_slide: companion files are realigned by spot_id") {
  const std::string dir = tmp_path("stalign_slide");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/expression.csv");
    out << "spot_id,G1,G2\ns0,1,2\ns1,3,4\n";
  }
  {
    std::ofstream out(dir + "/coords.csv");  // reversed order
    out << "spot_id,x,y\ns1,10,11\ns0,20,21\n";
  }
  const SlideDataset slide =
      load_slide(dir + "/expression.csv", dir + "/coords.csv");
  CHECK(slide.spot_ids == std::vector<std::string>{"s0", "s1"});
  CHECK(slide.coords(0, 0) == 20.0);
  CHECK(slide.coords(1, 0) == 10.0);
  CHECK(slide.image_features.cols() == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_slide: missing coordinate spot is an error naming the id") {
  const std::string dir = tmp_path("stalign_slide_miss");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir + "/expression.csv");
    out << "spot_id,G1\ns0,1\nsX,2\n";
  }
  {
    std::ofstream out(dir + "/coords.csv");
    out << "spot_id,x,y\ns0,0,0\n";
  }
  CHECK_THROWS_WITH_AS(
      (void)load_slide(dir + "/expression.csv", dir + "/coords.csv"),
      doctest::Contains("sX"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("save_slide/load_slide round trip with features") {
  SyntheticConfig cfg;
  cfg.n_spots = 25;
  cfg.n_genes = 10;
  cfg.f_img = 4;
  cfg.seed = 2;
  const SlideDataset slide = generate_synthetic(cfg);
  const std::string dir = tmp_path("stalign_slide_rt");
  save_slide(slide, dir);
  const SlideDataset loaded =
      load_slide(dir + "/expression.csv", dir + "/coords.csv",
                 dir + "/features.csv");
  CHECK(loaded.spot_ids == slide.spot_ids);
  CHECK(loaded.gene_names == slide.gene_names);
  CHECK((loaded.expression - slide.expression).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.coords - slide.coords).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.image_features - slide.image_features).cwiseAbs().maxCoeff() ==
        0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("preprocess: gene selection matches a manual variance ranking") {
  SlideDataset slide;
  slide.slide_id = "t";
  slide.gene_names = {"GA", "GB", "GC", "GD"};
  slide.spot_ids = {"s0", "s1", "s2", "s3"};
  slide.expression.resize(4, 4);
  // Equal row totals keep normalization a no-op, so column variances can
  // be ranked by hand: GA is constant, GB swings 1<->9, GC and GD both
  // swing 5<->9 and tie (broken by name, so GC wins the second slot).
  slide.expression << 1, 9, 5, 5,  //
      1, 1, 9, 9,                  //
      1, 9, 5, 5,                  //
      1, 1, 9, 9;
  slide.coords.resize(4, 2);
  slide.coords << 0, 0, 1, 0, 0, 1, 1, 1;

  auto [model, processed] = preprocess({slide}, 1, 2, false);
  CHECK(model.selected_genes == std::vector<std::string>{"GB", "GC"});
  CHECK(model.median_total == doctest::Approx(20.0));

  REQUIRE(processed.size() == 1);
  // log1p(0) stays exactly 0 and t_alpha is the log-normalized matrix
  // when PCA is off.
  SlideDataset zero = slide;
  zero.expression.col(0).setZero();
  auto [m2, p2] = preprocess({zero}, 1, 4, false);
  const Index ga = [&] {
    for (Index j = 0; j < 4; ++j)
      if (m2.selected_genes[static_cast<std::size_t>(j)] == "GA") return j;
    return Index(-1);
  }();
  REQUIRE(ga >= 0);
  CHECK(p2[0].expression_norm.col(ga).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p2[0].t_alpha - p2[0].expression_norm).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("preprocess: normalization scales rows to the median total") {
  SlideDataset slide;
  slide.slide_id = "t";
  slide.gene_names = {"GA", "GB"};
  slide.spot_ids = {"s0", "s1", "s2"};
  slide.expression.resize(3, 2);
  slide.expression << 2, 2,  // total 4
      5, 5,                  // total 10 (median)
      10, 10;                // total 20
  slide.coords.resize(3, 2);
  slide.coords << 0, 0, 1, 0, 2, 0;
  auto [model, processed] = preprocess({slide}, 1, 2, false);
  CHECK(model.median_total == doctest::Approx(10.0));
  // Row 0 scales by 10/4: each entry log1p(5).
  CHECK(processed[0].expression_norm(0, 0) ==
        doctest::Approx(std::log1p(5.0)).epsilon(1e-12));
  CHECK(processed[0].expression_norm(1, 0) ==
        doctest::Approx(std::log1p(5.0)).epsilon(1e-12));
  CHECK(processed[0].expression_norm(2, 0) ==
        doctest::Approx(std::log1p(5.0)).epsilon(1e-12));
}

TEST_CASE("apply_preprocess: missing selected gene is an error") {
  SlideDataset train;
  train.slide_id = "t";
  train.gene_names = {"GA", "GB"};
  train.spot_ids = {"s0", "s1"};
  train.expression.resize(2, 2);
  train.expression << 1, 2, 3, 4;
  train.coords.resize(2, 2);
  train.coords << 0, 0, 1, 0;
  auto [model, processed] = preprocess({train}, 1, 2, false);

  SlideDataset query = train;
  query.gene_names = {"GA", "GX"};
  CHECK_THROWS_WITH_AS((void)apply_preprocess(model, query),
                       doctest::Contains("GB"), DataError);
}

TEST_CASE("preprocess: PCA path respects the requested dimension") {
  SyntheticConfig cfg;
  cfg.n_spots = 36;
  cfg.n_genes = 20;
  cfg.seed = 5;
  const SlideDataset slide = generate_synthetic(cfg);
  auto [model, processed] = preprocess({slide}, 6, 20, true);
  CHECK(processed[0].t_alpha.cols() == 6);
  CHECK(processed[0].t_alpha.rows() == 36);
  CHECK(model.use_pca);
}

TEST_CASE("generate_synthetic: deterministic, nonnegative integer counts") {
  SyntheticConfig cfg;
  cfg.n_spots = 30;
  cfg.n_genes = 12;
  cfg.f_img = 5;
  cfg.seed = 9;
  const SlideDataset a = generate_synthetic(cfg);
  const SlideDataset b = generate_synthetic(cfg);
  CHECK((a.expression - b.expression).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.image_features - b.image_features).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.expression.minCoeff() >= 0.0);
  for (Index i = 0; i < a.expression.rows(); ++i)
    for (Index j = 0; j < a.expression.cols(); ++j)
      CHECK(a.expression(i, j) == std::round(a.expression(i, j)));

  // A different slice redraws the field but keeps the gene panel.
  cfg.slice = 1;
  const SlideDataset c = generate_synthetic(cfg);
  CHECK(c.gene_names == a.gene_names);
  CHECK((c.expression - a.expression).cwiseAbs().maxCoeff() > 0.0);

  cfg.grid = GridKind::hex;
  const SlideDataset h = generate_synthetic(cfg);
  CHECK(h.coords(1, 0) == 1.0);
  // Odd rows are offset by half a spacing.
  const Index side = static_cast<Index>(
      std::ceil(std::sqrt(static_cast<double>(cfg.n_spots))));
  CHECK(h.coords(side, 0) == doctest::Approx(0.5));
}

TEST_CASE("generate_synthetic: latent field is spatially autocorrelated") {
  SyntheticConfig cfg;
  cfg.n_spots = 400;
  cfg.n_genes = 20;
  cfg.seed = 3;
  const SlideDataset slide = generate_synthetic(cfg);
  const SpotGraph g = build_radius_adjacency(slide.coords, 1.5);

  // Moran's I on each latent dimension, averaged.
  double mean_i = 0.0;
  for (Index d = 0; d < slide.latents.cols(); ++d) {
    const Vec x = slide.latents.col(d);
    const Vec c = x.array() - x.mean();
    const double w_sum = g.adjacency.sum();
    const double num = c.transpose() * g.adjacency * c;
    const double moran =
        (static_cast<double>(x.size()) / w_sum) * num / c.squaredNorm();
    mean_i += moran / static_cast<double>(slide.latents.cols());
  }
  CHECK(mean_i > 0.2);
}

TEST_CASE("generate_synthetic: image features carry expression signal") {
  SyntheticConfig cfg;
  cfg.n_spots = 400;
  cfg.n_genes = 30;
  cfg.f_img = 10;
  cfg.seed = 11;
  const SlideDataset slide = generate_synthetic(cfg);

  // Ridge regression from image features to each latent dimension; the
  // fitted correlation should be clearly above chance.
  const Mat X = slide.image_features.rowwise() -
                slide.image_features.colwise().mean();
  const Mat gram =
      X.transpose() * X + 1e-3 * Mat::Identity(X.cols(), X.cols());
  double mean_r = 0.0;
  for (Index d = 0; d < slide.latents.cols(); ++d) {
    const Vec y = slide.latents.col(d).array() - slide.latents.col(d).mean();
    const Vec beta = gram.ldlt().solve(X.transpose() * y);
    const Vec yhat = X * beta;
    const double r = yhat.dot(y) / (yhat.norm() * y.norm());
    mean_r += r / static_cast<double>(slide.latents.cols());
  }
  CHECK(mean_r > 0.3);
}
