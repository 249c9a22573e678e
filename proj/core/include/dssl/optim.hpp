#pragma once

#include "dssl/autograd.hpp"

namespace dssl {

struct SgdConfig {
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

// buf <- momentum·buf + grad + weight_decay·θ; θ <- θ − lr·buf; then grads are cleared.
// Frozen parameters are skipped; a nonzero gradient on one is a ContractError.
void sgd_step(ParamSet& params, const SgdConfig& cfg);

}  // namespace dssl
