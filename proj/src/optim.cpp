#include "stalign/optim.hpp"

#include <cmath>

namespace stalign {

void adamw_step(Vec& params, const Vec& grads, OptState& state,
                const AdamWConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DataError("adamw_step: shape mismatch");
  ++state.step;
  if (cfg.weight_decay > 0.0) params *= 1.0 - cfg.lr * cfg.weight_decay;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v +
            (1.0 - cfg.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Vec m_hat = state.m / bc1;
  const Vec v_hat = state.v / bc2;
  params -= cfg.lr * m_hat.cwiseQuotient(
                         (v_hat.cwiseSqrt().array() + cfg.eps).matrix());
}

}  // namespace stalign
