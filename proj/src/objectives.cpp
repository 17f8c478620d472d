#include "stalign/objectives.hpp"

#include <cmath>

#include "stalign/hsic.hpp"
#include "stalign/linalg.hpp"

namespace stalign {

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_prob(double p) {
  return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

}  // namespace

double dgi_loss(const Mat& Z, const Mat& Zneg, const Vec& h,
                const DiscriminatorParams& disc) {
  if (Z.rows() != Zneg.rows() || Z.cols() != Zneg.cols() ||
      Z.cols() != h.size() || disc.bilinear.rows() != h.size())
    throw DataError("dgi_loss: shape mismatch");
  const Vec mh = disc.bilinear * h;
  double loss = 0.0;
  for (Index i = 0; i < Z.rows(); ++i) {
    const double p = clamp_prob(sigmoid(Z.row(i).dot(mh)));
    const double q = clamp_prob(sigmoid(Zneg.row(i).dot(mh)));
    loss -= std::log(p) + std::log(1.0 - q);
  }
  return loss;
}

double dgi_loss_grad(const Mat& Z, const Mat& Zneg, const Vec& h,
                     const DiscriminatorParams& disc, DgiGrads& grads) {
  const double loss = dgi_loss(Z, Zneg, h, disc);
  const Vec mh = disc.bilinear * h;
  const Index n = Z.rows();

  // d(-log sigma(s))/ds = sigma(s) - 1; d(-log(1 - sigma(s)))/ds = sigma(s).
  // Clamped probabilities contribute zero gradient.
  Vec c_pos(n), c_neg(n);
  for (Index i = 0; i < n; ++i) {
    const double p = sigmoid(Z.row(i).dot(mh));
    const double q = sigmoid(Zneg.row(i).dot(mh));
    c_pos(i) = (p > kProbClamp && p < 1.0 - kProbClamp) ? p - 1.0 : 0.0;
    c_neg(i) = (q > kProbClamp && q < 1.0 - kProbClamp) ? q : 0.0;
  }
  grads.z = c_pos * mh.transpose();
  grads.zneg = c_neg * mh.transpose();
  const Vec zc = Z.transpose() * c_pos + Zneg.transpose() * c_neg;
  grads.bilinear = zc * h.transpose();
  grads.h = disc.bilinear.transpose() * zc;
  return loss;
}

double bottleneck_objective_sigmas(const Mat& t_alpha, const Mat& t_rho,
                                   const Mat& t_iota, double beta,
                                   double sigma_a, double sigma_r,
                                   double sigma_i) {
  if (t_alpha.rows() != t_rho.rows() || t_rho.rows() != t_iota.rows())
    throw DataError("bottleneck_objective: row-count mismatch");
  return nhsic(t_alpha, t_rho, sigma_a, sigma_r) -
         beta * nhsic(t_iota, t_rho, sigma_i, sigma_r);
}

double bottleneck_objective_grad_sigmas(const Mat& t_alpha, const Mat& t_rho,
                                        const Mat& t_iota, double beta,
                                        double sigma_a, double sigma_r,
                                        double sigma_i,
                                        BottleneckGrads& grads) {
  const double value = bottleneck_objective_sigmas(t_alpha, t_rho, t_iota,
                                                   beta, sigma_a, sigma_r,
                                                   sigma_i);
  grads.t_rho = nhsic_grad(t_alpha, t_rho, sigma_a, sigma_r, WrtInput::B) -
                beta * nhsic_grad(t_iota, t_rho, sigma_i, sigma_r, WrtInput::B);
  grads.t_iota = -beta * nhsic_grad(t_iota, t_rho, sigma_i, sigma_r,
                                    WrtInput::A);
  return value;
}

double bottleneck_objective(const Mat& t_alpha, const Mat& t_rho,
                            const Mat& t_iota, double beta) {
  if (t_alpha.rows() != t_rho.rows() || t_rho.rows() != t_iota.rows())
    throw DataError("bottleneck_objective: row-count mismatch");
  return bottleneck_objective_sigmas(
      t_alpha, t_rho, t_iota, beta, median_bandwidth(t_alpha),
      median_bandwidth(t_rho), median_bandwidth(t_iota));
}

double bottleneck_objective_grad(const Mat& t_alpha, const Mat& t_rho,
                                 const Mat& t_iota, double beta,
                                 BottleneckGrads& grads) {
  if (t_alpha.rows() != t_rho.rows() || t_rho.rows() != t_iota.rows())
    throw DataError("bottleneck_objective: row-count mismatch");
  return bottleneck_objective_grad_sigmas(
      t_alpha, t_rho, t_iota, beta, median_bandwidth(t_alpha),
      median_bandwidth(t_rho), median_bandwidth(t_iota), grads);
}

namespace {

// Sum over rows of -sum_j target_ij * log softmax(logits)_ij.
double soft_ce(const Mat& target, const Mat& logits, double tau) {
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const Vec row = logits.row(i).transpose() / tau;
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    for (Index j = 0; j < logits.cols(); ++j)
      total -= target(i, j) * (row(j) - lse);
  }
  return total;
}

// Backward of p = row_softmax(M, tau) given dL/dp: per row,
// dM = (p .* g - p (p . g)) / tau.
Mat row_softmax_backward(const Mat& p, const Mat& d_p, double tau) {
  Mat d_m(p.rows(), p.cols());
  for (Index i = 0; i < p.rows(); ++i) {
    const Vec pi = p.row(i).transpose();
    const Vec gi = d_p.row(i).transpose();
    d_m.row(i) = ((pi.array() * gi.array()).matrix() - pi * pi.dot(gi))
                     .transpose() / tau;
  }
  return d_m;
}

}  // namespace

double alignment_loss(const Mat& t_iota, const Mat& g_f, double tau) {
  if (!(tau > 0)) throw ParamError("alignment_loss: tau must be > 0");
  if (t_iota.rows() != g_f.rows() || t_iota.cols() != g_f.cols())
    throw DataError("alignment_loss: shape mismatch");
  const Index b = t_iota.rows();
  const Mat sim_cro = t_iota * g_f.transpose();
  const Mat sim_mean = 0.5 * (t_iota * t_iota.transpose() +
                              g_f * g_f.transpose());
  const Mat target = row_softmax(sim_mean, tau);
  const Mat target_t = row_softmax(sim_mean.transpose(), tau);
  const double ce_fwd = soft_ce(target, sim_cro, tau);
  const double ce_bwd = soft_ce(target_t, sim_cro.transpose(), tau);
  return (ce_fwd + ce_bwd) / (2.0 * static_cast<double>(b));
}

double alignment_loss_grad(const Mat& t_iota, const Mat& g_f, double tau,
                           Mat& d_t_iota, Mat& d_g_f) {
  if (!(tau > 0)) throw ParamError("alignment_loss: tau must be > 0");
  if (t_iota.rows() != g_f.rows() || t_iota.cols() != g_f.cols())
    throw DataError("alignment_loss: shape mismatch");
  const Index b = t_iota.rows();
  const double inv = 1.0 / (2.0 * static_cast<double>(b));

  const Mat sim_cro = t_iota * g_f.transpose();
  const Mat sim_mean = 0.5 * (t_iota * t_iota.transpose() +
                              g_f * g_f.transpose());

  const Mat p_fwd = row_softmax(sim_mean, tau);
  const Mat p_bwd = row_softmax(sim_mean.transpose(), tau);
  const Mat q_fwd = row_softmax(sim_cro, tau);
  const Mat q_bwd = row_softmax(sim_cro.transpose(), tau);

  const double loss = [&] {
    double total = 0.0;
    for (Index i = 0; i < b; ++i)
      for (Index j = 0; j < b; ++j)
        total -= p_fwd(i, j) * std::log(q_fwd(i, j)) +
                 p_bwd(i, j) * std::log(q_bwd(i, j));
    return total * inv;
  }();

  // Logit side: d/d sim_cro of -sum target * log softmax = (q - p) / tau.
  Mat d_sim_cro = (q_fwd - p_fwd) / tau + ((q_bwd - p_bwd) / tau).transpose();

  // Target side: d/d target_ij = -log q_ij, then back through row_softmax.
  const Mat log_q_fwd = q_fwd.array().log().matrix();
  const Mat log_q_bwd = q_bwd.array().log().matrix();
  Mat d_sim_mean = row_softmax_backward(p_fwd, -log_q_fwd, tau) +
                   row_softmax_backward(p_bwd, -log_q_bwd, tau).transpose();

  d_sim_cro *= inv;
  d_sim_mean *= inv;

  // sim_mean = (Ti Ti^T + Gf Gf^T)/2 and sim_cro = Ti Gf^T.
  const Mat d_sym = 0.5 * (d_sim_mean + d_sim_mean.transpose());
  d_t_iota = d_sim_cro * g_f + d_sym * t_iota;
  d_g_f = d_sim_cro.transpose() * t_iota + d_sym * g_f;
  return loss;
}

}  // namespace stalign
