#include "dssl/optim.hpp"

#include "dssl/errors.hpp"

namespace dssl {

void sgd_step(ParamSet& params, const SgdConfig& cfg) {
  if (!(cfg.lr >= 0.0)) throw ParameterError("learning rate must be non-negative");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ParameterError("SGD momentum must lie in [0,1)");
  if (!(cfg.weight_decay >= 0.0)) throw ParameterError("weight decay must be non-negative");
  for (auto& [name, p] : params) {
    if (p.frozen) {
      for (double g : p.grad.data()) {
        if (g != 0.0) throw ContractError("gradient written to frozen parameter '" + name + "'");
      }
      continue;
    }
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      p.velocity[i] = cfg.momentum * p.velocity[i] + p.grad[i] + cfg.weight_decay * p.value[i];
      p.value[i] -= cfg.lr * p.velocity[i];
    }
    p.grad.fill(0.0);
  }
}

}  // namespace dssl
