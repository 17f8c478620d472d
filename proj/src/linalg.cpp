#include "stalign/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

namespace stalign {

int worker_threads() {
  static const int n = [] {
    const char* env = std::getenv("ST_ALIGN_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
  }();
  return n;
}

namespace {

// Flip component columns so the largest-magnitude entry is positive.
void fix_signs(Mat& components) {
  for (Index j = 0; j < components.cols(); ++j) {
    Index imax = 0;
    components.col(j).cwiseAbs().maxCoeff(&imax);
    if (components(imax, j) < 0) components.col(j) = -components.col(j);
  }
}

}  // namespace

std::pair<PcaModel, Mat> pca_fit_transform(const Mat& X, Index k) {
  const Index n = X.rows(), p = X.cols();
  if (n < 2) throw ParamError("pca: need at least 2 rows");
  if (k < 1 || k > std::min(n - 1, p)) throw ParamError("pca: k out of range");
  require_finite(X, "pca input");

  PcaModel model;
  model.mean = X.colwise().mean();
  const Mat Xc = X.rowwise() - model.mean.transpose();

  model.components.resize(p, k);
  model.explained_variance.resize(k);

  if (p <= n) {
    const Mat cov = Xc.transpose() * Xc / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    // eigenvalues come back ascending
    for (Index j = 0; j < k; ++j) {
      model.components.col(j) = es.eigenvectors().col(p - 1 - j);
      model.explained_variance(j) = std::max(0.0, es.eigenvalues()(p - 1 - j));
    }
  } else {
    // Gram-matrix route for wide data: eigenvectors of Xc Xc^T / (n-1) map
    // back to covariance eigenvectors via Xc^T u / ||Xc^T u||.
    const Mat gram = Xc * Xc.transpose() / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Mat> es(gram);
    for (Index j = 0; j < k; ++j) {
      const double lambda = std::max(0.0, es.eigenvalues()(n - 1 - j));
      Vec v = Xc.transpose() * es.eigenvectors().col(n - 1 - j);
      const double norm = v.norm();
      if (norm > 1e-300) v /= norm;
      model.components.col(j) = v;
      model.explained_variance(j) = lambda;
    }
  }
  fix_signs(model.components);
  return {model, Xc * model.components};
}

Mat row_softmax(const Mat& M, double temperature) {
  if (!(temperature > 0)) throw ParamError("row_softmax: temperature must be > 0");
  Mat out(M.rows(), M.cols());
  for (Index i = 0; i < M.rows(); ++i) {
    const Vec row = M.row(i).transpose() / temperature;
    const double mx = row.maxCoeff();
    Vec e = (row.array() - mx).exp();
    out.row(i) = (e / e.sum()).transpose();
  }
  return out;
}

double pearson(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw DataError("pearson: length mismatch");
  if (x.size() < 2) throw DataError("pearson: need at least 2 samples");
  const Vec xc = x.array() - x.mean();
  const Vec yc = y.array() - y.mean();
  const double sx = xc.squaredNorm(), sy = yc.squaredNorm();
  if (sx <= 0.0 || sy <= 0.0) return 0.0;  // zero-variance convention
  return xc.dot(yc) / std::sqrt(sx * sy);
}

Mat l2_normalize_rows(const Mat& M) {
  Mat out = M;
  for (Index i = 0; i < M.rows(); ++i) {
    const double norm = M.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

}  // namespace stalign
