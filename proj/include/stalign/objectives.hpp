#pragma once

#include "stalign/common.hpp"
#include "stalign/encoders.hpp"

namespace stalign {

struct LossWeights {
  double lambda_dgi = 1.0;
  double lambda_hsic = 1.0;
  double beta = 1.0;
  double tau = 1.0;
};

struct LossBreakdown {
  double dgi_gene = 0.0;
  double dgi_image = 0.0;
  double bottleneck = 0.0;
  double alignment = 0.0;
  double total = 0.0;
  LossWeights weights;

  void finalize() {
    total = alignment + weights.lambda_dgi * (dgi_gene + dgi_image) +
            weights.lambda_hsic * bottleneck;
  }
};

// ---- DGI (binary discrimination of true nodes vs shuffled negatives) ----

double dgi_loss(const Mat& Z, const Mat& Zneg, const Vec& h,
                const DiscriminatorParams& disc);

struct DgiGrads {
  Mat z;
  Mat zneg;
  Vec h;
  Mat bilinear;
};

// Returns the loss and fills grads (same scale as dgi_loss).
double dgi_loss_grad(const Mat& Z, const Mat& Zneg, const Vec& h,
                     const DiscriminatorParams& disc, DgiGrads& grads);

// ---- HSIC bottleneck: nhsic(Ta, Tr) - beta * nhsic(Ti, Tr) ----
// Bandwidths are the median heuristic on the batch, held fixed in gradients.

double bottleneck_objective(const Mat& t_alpha, const Mat& t_rho,
                            const Mat& t_iota, double beta);

struct BottleneckGrads {
  Mat t_rho;
  Mat t_iota;
};

double bottleneck_objective_grad(const Mat& t_alpha, const Mat& t_rho,
                                 const Mat& t_iota, double beta,
                                 BottleneckGrads& grads);

// Explicit-bandwidth variants (the trainer freezes bandwidths per batch).
double bottleneck_objective_sigmas(const Mat& t_alpha, const Mat& t_rho,
                                   const Mat& t_iota, double beta,
                                   double sigma_a, double sigma_r,
                                   double sigma_i);

double bottleneck_objective_grad_sigmas(const Mat& t_alpha, const Mat& t_rho,
                                        const Mat& t_iota, double beta,
                                        double sigma_a, double sigma_r,
                                        double sigma_i,
                                        BottleneckGrads& grads);

// ---- Cross-modal alignment (symmetric soft-target cross entropy) ----

double alignment_loss(const Mat& t_iota, const Mat& g_f, double tau);

double alignment_loss_grad(const Mat& t_iota, const Mat& g_f, double tau,
                           Mat& d_t_iota, Mat& d_g_f);

}  // namespace stalign
