#include <doctest.h>

#include <algorithm>
#include <set>

#include "stalign/rng.hpp"
#include "stalign/spatial_graph.hpp"

using namespace stalign;

TEST_CASE("radius adjacency: collinear points") {
  Mat coords(3, 2);
  coords << 0, 0, 1, 0, 2, 0;
  const SpotGraph g = build_radius_adjacency(coords, 1.5);
  CHECK(g.adjacency(0, 1) == 1.0);
  CHECK(g.adjacency(1, 2) == 1.0);
  CHECK(g.adjacency(0, 2) == 0.0);
  CHECK(g.adjacency.diagonal().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("radius adjacency: no edges gives identity propagation") {
  Mat coords(3, 2);
  coords << 0, 0, 5, 0, 0, 5;
  const SpotGraph g = build_radius_adjacency(coords, 1.0);
  CHECK(g.adjacency.cwiseAbs().maxCoeff() == 0.0);
  CHECK((g.propagation - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("radius adjacency: two connected points, propagation all 0.5") {
  Mat coords(2, 2);
  coords << 0, 0, 1, 0;
  const SpotGraph g = build_radius_adjacency(coords, 2.0);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j)
      CHECK(g.propagation(i, j) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("radius adjacency: ties at exactly R are non-edges") {
  Mat coords(2, 2);
  coords << 0, 0, 1, 0;
  CHECK(build_radius_adjacency(coords, 1.0).adjacency(0, 1) == 0.0);
}

TEST_CASE("propagation: symmetric with spectral radius <= 1") {
  Rng rng(31);
  const Mat coords = rng.uniform_matrix(20, 2, 0.0, 5.0);
  const SpotGraph g = build_radius_adjacency(coords, 1.5);
  CHECK((g.propagation - g.propagation.transpose()).cwiseAbs().maxCoeff() <
        1e-12);
  Eigen::SelfAdjointEigenSolver<Mat> es(g.propagation);
  CHECK(es.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-9);
}

TEST_CASE("relabeling spots permutes adjacency and propagation") {
  Rng rng(17);
  const Mat coords = rng.uniform_matrix(12, 2, 0.0, 4.0);
  const SpotGraph g = build_radius_adjacency(coords, 1.3);
  const auto perm = Rng(55).permutation(12);
  Mat P = Mat::Zero(12, 12);
  for (Index i = 0; i < 12; ++i) P(i, perm[static_cast<std::size_t>(i)]) = 1.0;
  const SpotGraph gp = build_radius_adjacency(P * coords, 1.3);
  CHECK((gp.adjacency - P * g.adjacency * P.transpose()).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((gp.propagation - P * g.propagation * P.transpose())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("default_radius") {
  Mat grid(4, 2);
  grid << 0, 0, 1, 0, 0, 1, 1, 1;
  CHECK(default_radius(grid) == doctest::Approx(1.5).epsilon(1e-15));

  Mat line(3, 2);
  line << 0, 0, 2, 0, 5, 0;  // pairwise distances 2, 3, 5
  CHECK(default_radius(line) == doctest::Approx(3.0).epsilon(1e-15));

  Mat single(1, 2);
  single << 0, 0;
  CHECK_THROWS_AS((void)default_radius(single), ParamError);
}

TEST_CASE("default_radius matches brute-force min-pair oracle") {
  Rng rng(23);
  const Mat coords = rng.uniform_matrix(50, 2, 0.0, 10.0);
  double dmin = 1e300;
  for (Index i = 0; i < 50; ++i)
    for (Index j = 0; j < 50; ++j)
      if (i != j) dmin = std::min(dmin, (coords.row(i) - coords.row(j)).norm());
  CHECK(default_radius(coords) == doctest::Approx(1.5 * dmin).epsilon(1e-12));
}

TEST_CASE("shuffle_rows: permutation, determinism, n=1") {
  Rng rng(3);
  const Mat X = rng.normal_matrix(7, 3);
  const Mat S1 = shuffle_rows(X, 99);
  const Mat S2 = shuffle_rows(X, 99);
  CHECK((S1 - S2).cwiseAbs().maxCoeff() == 0.0);

  // same multiset of rows
  std::multiset<double> a, b;
  for (Index i = 0; i < 7; ++i) {
    a.insert(X.row(i).sum());
    b.insert(S1.row(i).sum());
  }
  CHECK(a == b);

  const Mat one = rng.normal_matrix(1, 3);
  CHECK((shuffle_rows(one, 4) - one).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shuffle_rows: consecutive seeds differ often enough") {
  Rng rng(8);
  const Mat X = rng.normal_matrix(6, 2);
  int differing = 0;
  for (std::uint64_t seed = 100; seed < 105; ++seed)
    if ((shuffle_rows(X, seed) - X).cwiseAbs().maxCoeff() > 0) ++differing;
  CHECK(differing >= 2);
}
