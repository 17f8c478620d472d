#pragma once

#include "stalign/common.hpp"

namespace stalign {

struct PcaModel {
  Vec mean;                // p
  Mat components;          // p x k, orthonormal columns
  Vec explained_variance;  // k, non-increasing

  Mat transform(const Mat& X) const {
    return (X.rowwise() - mean.transpose()) * components;
  }
};

// Fits PCA on X (n x p) and returns the model plus the n x k score matrix.
// Covariance uses the 1/(n-1) convention. Each component column is sign-fixed
// so its largest-magnitude entry is positive.
std::pair<PcaModel, Mat> pca_fit_transform(const Mat& X, Index k);

// Row-wise softmax of M / temperature with max-subtraction.
Mat row_softmax(const Mat& M, double temperature);

// Sample Pearson correlation; 0 when either input has zero variance.
double pearson(const Vec& x, const Vec& y);

// Scales each nonzero row to unit Euclidean norm; zero rows pass through.
Mat l2_normalize_rows(const Mat& M);

}  // namespace stalign
