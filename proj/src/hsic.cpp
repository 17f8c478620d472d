#include "stalign/hsic.hpp"

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

namespace stalign {

namespace {

void kernel_rows(const Mat& X, double inv_two_sigma_sq, Index row_begin,
                 Index row_end, Mat& K) {
  for (Index i = row_begin; i < row_end; ++i) {
    K(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      const double d2 = (X.row(i) - X.row(j)).squaredNorm();
      K(i, j) = K(j, i) = std::exp(-d2 * inv_two_sigma_sq);
    }
  }
}

// Centers a symmetric matrix: J K J with J = I - (1/n) 1 1^T.
Mat center(const Mat& K) {
  const Vec row_means = K.rowwise().mean();
  const double total_mean = row_means.mean();
  Mat out = K;
  out.colwise() -= row_means;
  out.rowwise() -= row_means.transpose();
  out.array() += total_mean;
  return out;
}

double hsic_from_kernels(const Mat& KA, const Mat& KB) {
  // Centering both kernels is algebraically redundant (J is idempotent) but
  // makes the estimator exactly 0 when either kernel is constant.
  const double nm1 = static_cast<double>(KA.rows() - 1);
  return center(KA).cwiseProduct(center(KB)).sum() / (nm1 * nm1);
}

}  // namespace

Mat gaussian_kernel(const Mat& X, double sigma) {
  if (!(sigma > 0)) throw ParamError("gaussian_kernel: sigma must be > 0");
  if (X.rows() < 2) throw ParamError("gaussian_kernel: need >= 2 rows");
  const Index n = X.rows();
  Mat K(n, n);
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

  const int workers = std::min<int>(worker_threads(), static_cast<int>(n));
  if (workers <= 1) {
    kernel_rows(X, inv_two_sigma_sq, 0, n, K);
  } else {
    // Row blocks are disjoint, so the parallel fill is bitwise deterministic.
    std::vector<std::thread> pool;
    const Index chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const Index lo = w * chunk, hi = std::min<Index>(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(kernel_rows, std::cref(X), inv_two_sigma_sq, lo, hi,
                        std::ref(K));
    }
    for (auto& t : pool) t.join();
  }
  return K;
}

double median_bandwidth(const Mat& X) {
  if (X.rows() < 2) throw ParamError("median_bandwidth: need >= 2 rows");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(X.rows()) * (X.rows() - 1) / 2);
  for (Index i = 0; i < X.rows(); ++i)
    for (Index j = i + 1; j < X.rows(); ++j) {
      const double d = (X.row(i) - X.row(j)).norm();
      if (d > 0.0) dists.push_back(d);
    }
  if (dists.empty()) return 1.0;
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  if (dists.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(dists.begin(), mid);
  return 0.5 * (lo + hi);
}

double hsic(const Mat& A, const Mat& B, double sigma_a, double sigma_b) {
  if (A.rows() != B.rows()) throw DataError("hsic: row-count mismatch");
  return hsic_from_kernels(gaussian_kernel(A, sigma_a),
                           gaussian_kernel(B, sigma_b));
}

double nhsic(const Mat& A, const Mat& B, double sigma_a, double sigma_b) {
  if (A.rows() != B.rows()) throw DataError("nhsic: row-count mismatch");
  const Mat KA = gaussian_kernel(A, sigma_a);
  const Mat KB = gaussian_kernel(B, sigma_b);
  const double hab = hsic_from_kernels(KA, KB);
  const double haa = hsic_from_kernels(KA, KA);
  const double hbb = hsic_from_kernels(KB, KB);
  return hab / std::sqrt((1.0 + haa) * (1.0 + hbb));
}

namespace {

// Backward through the Gaussian kernel: given dL/dK (any matrix; both
// triangles counted), returns dL/dX.
Mat kernel_backward(const Mat& X, const Mat& K, const Mat& dK, double sigma) {
  const Mat G = 0.5 * (dK + dK.transpose());  // symmetrize upstream
  const Mat W = 2.0 * G.cwiseProduct(K);      // (i,j) and (j,i) contributions
  const Vec row_sums = W.rowwise().sum();
  // dL/dx_i = (-1/sigma^2) sum_j W_ij (x_i - x_j)
  return (-1.0 / (sigma * sigma)) *
         (row_sums.asDiagonal() * X - W * X);
}

}  // namespace

Mat nhsic_grad(const Mat& A, const Mat& B, double sigma_a, double sigma_b,
               WrtInput wrt) {
  if (A.rows() != B.rows()) throw DataError("nhsic_grad: row-count mismatch");
  const Mat& X = (wrt == WrtInput::A) ? A : B;
  const Mat& Y = (wrt == WrtInput::A) ? B : A;
  const double sx = (wrt == WrtInput::A) ? sigma_a : sigma_b;
  const double sy = (wrt == WrtInput::A) ? sigma_b : sigma_a;

  const Mat KX = gaussian_kernel(X, sx);
  const Mat KY = gaussian_kernel(Y, sy);
  const double hxy = hsic_from_kernels(KX, KY);
  const double hxx = hsic_from_kernels(KX, KX);
  const double hyy = hsic_from_kernels(KY, KY);
  const double denom = std::sqrt((1.0 + hxx) * (1.0 + hyy));

  const double nm1 = static_cast<double>(X.rows() - 1);
  const double scale = 1.0 / (nm1 * nm1);
  // nhsic = h_xy / denom; only h_xy and h_xx depend on K_X.
  // dL/dK_X = scale * (J K_Y J / denom - h_xy J K_X J / (denom (1 + h_xx)))
  const Mat dK = scale * (center(KY) / denom -
                          (hxy / (denom * (1.0 + hxx))) * center(KX));
  return kernel_backward(X, KX, dK, sx);
}

}  // namespace stalign
