#include "pvgc/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace pvgc {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid train config: " + msg); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr > 0.0) || !(start_lr > 0.0)) fail("learning rates must be positive");
  if (start_lr > lr) fail("start_lr must not exceed lr");
  if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0) || !(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) {
    fail("betas must lie in [0, 1)");
  }
  if (!(adamw.eps > 0.0)) fail("adam eps must be positive");
  if (!(adamw.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(margin.m_plus > margin.m_minus) || margin.m_minus < 0.0 || margin.m_plus > 1.0 || margin.lambda < 0.0) {
    fail("margins need 0 ≤ m_minus < m_plus ≤ 1 and lambda ≥ 0");
  }
}

OptState OptState::fresh(std::span<const Tensor> params) {
  OptState s;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.shape()));
    s.v.push_back(Tensor::zeros(p.shape()));
  }
  return s;
}

void adamw_step(std::span<const Tensor> params, std::span<const Tensor> grads, OptState& state, double lr,
                const AdamWConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ContractError("adamw_step: " + std::to_string(params.size()) + " parameters, " +
                        std::to_string(grads.size()) + " gradients, " + std::to_string(state.m.size()) +
                        " moment slots");
  }
  if (!(lr > 0.0)) throw ContractError("adamw_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
      throw ContractError("adamw_step: parameter " + std::to_string(i) + " has shape " +
                          shape_str(params[i].shape()) + " but gradient " + shape_str(grads[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor param = params[i];
    auto w = param.mutable_values();
    auto m = state.m[i].mutable_values();
    auto v = state.v[i].mutable_values();
    auto g = grads[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] = w[j] * decay - lr * mhat / (std::sqrt(vhat) + config.eps);
    }
    round_to_precision(w);
    round_to_precision(m);
    round_to_precision(v);
  }
}

double lr_at(double epoch, const TrainConfig& config) {
  const double warmup = static_cast<double>(config.effective_warmup());
  const double total = static_cast<double>(config.epochs);
  if (epoch < warmup) return config.start_lr + (config.lr - config.start_lr) * epoch / warmup;
  if (total <= warmup) return config.lr;
  const double t = std::min(1.0, (epoch - warmup) / (total - warmup));
  return config.start_lr + (config.lr - config.start_lr) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

}  // namespace pvgc
