#include "stalign/spatial_graph.hpp"

#include <cmath>
#include <limits>

#include "stalign/rng.hpp"

namespace stalign {

SpotGraph build_radius_adjacency(const Mat& coords, double radius) {
  if (!(radius > 0)) throw ParamError("build_radius_adjacency: R must be > 0");
  if (coords.rows() < 1 || coords.cols() != 2)
    throw ParamError("build_radius_adjacency: coords must be n x 2, n >= 1");
  require_finite(coords, "coords");

  const Index n = coords.rows();
  SpotGraph g;
  g.coords = coords;
  g.radius = radius;
  g.adjacency = Mat::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double d = (coords.row(i) - coords.row(j)).norm();
      if (d < radius) g.adjacency(i, j) = g.adjacency(j, i) = 1.0;
    }

  const Mat with_loops = g.adjacency + Mat::Identity(n, n);
  const Vec dinv_sqrt =
      with_loops.rowwise().sum().array().sqrt().inverse().matrix();
  g.propagation = dinv_sqrt.asDiagonal() * with_loops * dinv_sqrt.asDiagonal();
  return g;
}

double default_radius(const Mat& coords) {
  if (coords.rows() < 2) throw ParamError("default_radius: need >= 2 spots");
  double dmin = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < coords.rows(); ++i)
    for (Index j = i + 1; j < coords.rows(); ++j)
      dmin = std::min(dmin, (coords.row(i) - coords.row(j)).norm());
  return 1.5 * dmin;
}

Mat shuffle_rows(const Mat& X, std::uint64_t seed) {
  Rng rng(seed);
  const auto perm = rng.permutation(X.rows());
  Mat out(X.rows(), X.cols());
  for (Index i = 0; i < X.rows(); ++i)
    out.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace stalign
