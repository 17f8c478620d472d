#pragma once

#include "stalign/common.hpp"

namespace stalign {

// Radius adjacency over spot coordinates plus the symmetric-normalized
// propagation operator D^{-1/2} (A + I) D^{-1/2} used by the GCN encoders.
struct SpotGraph {
  Mat coords;       // n x 2
  double radius = 0.0;
  Mat adjacency;    // n x n binary, zero diagonal
  Mat propagation;  // n x n
};

// Edge iff Euclidean distance strictly below R (ties at R are non-edges).
SpotGraph build_radius_adjacency(const Mat& coords, double radius);

// 1.5 x minimum pairwise distance: connects nearest neighbors on a
// regular grid.
double default_radius(const Mat& coords);

// Seeded uniform row permutation (DGI negative samples).
Mat shuffle_rows(const Mat& X, std::uint64_t seed);

}  // namespace stalign
