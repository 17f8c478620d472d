#pragma once

#include "stalign/common.hpp"

namespace stalign {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptState {
  Vec m;  // first moment
  Vec v;  // second moment
  long step = 0;

  explicit OptState(Index n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

// Decoupled weight decay (param *= 1 - lr*wd) followed by the
// bias-corrected Adam update.
void adamw_step(Vec& params, const Vec& grads, OptState& state,
                const AdamWConfig& cfg);

}  // namespace stalign
