#pragma once

#include "stalign/common.hpp"

namespace stalign {

// K[i][j] = exp(-||x_i - x_j||^2 / (2 sigma^2)).
Mat gaussian_kernel(const Mat& X, double sigma);

// Median of nonzero pairwise distances; 1.0 if all points coincide.
double median_bandwidth(const Mat& X);

// Tr(K_A J K_B J) / (n-1)^2 with the centering matrix J = I - (1/n) 1 1^T.
double hsic(const Mat& A, const Mat& B, double sigma_a, double sigma_b);

// HSIC(A,B) / sqrt((1 + HSIC(A,A)) (1 + HSIC(B,B))), in [0, 1).
double nhsic(const Mat& A, const Mat& B, double sigma_a, double sigma_b);

enum class WrtInput { A, B };

// d nhsic / d entries of the chosen input, with both bandwidths held fixed.
Mat nhsic_grad(const Mat& A, const Mat& B, double sigma_a, double sigma_b,
               WrtInput wrt);

}  // namespace stalign
