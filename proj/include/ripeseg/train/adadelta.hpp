#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ripeseg/model/checkpoint.hpp"

namespace ripeseg {

struct AdadeltaConfig {
  double rho = 0.95;
  double lr = 1.0;
  double eps = 1e-6;

  void validate() const {
    if (!(rho >= 0 && rho < 1)) throw ConfigError("optim.rho must lie in [0, 1)");
    if (!(lr > 0)) throw ConfigError("optim.lr must be positive");
    if (!(eps > 0)) throw ConfigError("optim.eps must be positive");
  }
};

/// One ADADELTA update of a flat parameter block:
///   E[g^2] <- rho E[g^2] + (1 - rho) g^2
///   dx      = sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
///   E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
///   x      <- x - lr dx
/// Arithmetic runs in double; results are stored back in T.
template <class T>
void adadelta_update(std::span<T> param, std::span<const T> grad, std::span<T> sq_grad, std::span<T> sq_delta,
                     const AdadeltaConfig& cfg) {
  if (grad.size() != param.size() || sq_grad.size() != param.size() || sq_delta.size() != param.size())
    throw ContractError("adadelta: parameter, gradient and state sizes differ");
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double eg = cfg.rho * double(sq_grad[i]) + (1 - cfg.rho) * g * g;
    const double dx = std::sqrt(double(sq_delta[i]) + cfg.eps) / std::sqrt(eg + cfg.eps) * g;
    sq_grad[i] = T(eg);
    sq_delta[i] = T(cfg.rho * double(sq_delta[i]) + (1 - cfg.rho) * dx * dx);
    param[i] = T(double(param[i]) - cfg.lr * dx);
  }
}

/// Optimizer over every learnable tensor of a store. Parameters without a
/// gradient are updated with a zero gradient.
class Adadelta {
 public:
  Adadelta(ParameterStore<float>& store, AdadeltaConfig cfg);

  void step();
  const AdadeltaConfig& config() const noexcept { return cfg_; }

  /// Accumulators as "<param>.sq_grad" / "<param>.sq_delta" entries.
  std::vector<CheckpointEntry> state() const;
  void load_state(std::span<const CheckpointEntry> entries);

 private:
  ParameterStore<float>* store_;
  AdadeltaConfig cfg_;
  std::vector<std::vector<float>> sq_grad_, sq_delta_;
};

}  // namespace ripeseg
