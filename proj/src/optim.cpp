#include "divdis/optim.hpp"

#include <cmath>

#include "divdis/error.hpp"

namespace divdis {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("optimizer: learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("optimizer: momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw Error("optimizer: eps must be positive");
}

std::vector<ad::Tensor> Optimizer::step(std::span<const ad::Tensor> params, std::span<const ad::Tensor> grads) {
  if (params.size() != grads.size()) throw Error("optimizer: parameter and gradient counts differ");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].size(), 0.0);
      if (cfg_.kind == OptimizerConfig::Kind::Adam) v_[i].assign(params[i].size(), 0.0);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

  std::vector<ad::Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) throw ShapeError("optimizer", params[i].shape(), grads[i].shape());
    auto p = params[i].values();
    auto g = grads[i].values();
    auto& m = m_[i];
    std::vector<double> next(p.begin(), p.end());
    if (cfg_.kind == OptimizerConfig::Kind::Sgd) {
      for (std::size_t k = 0; k < next.size(); ++k) {
        m[k] = cfg_.momentum * m[k] + g[k];
        next[k] -= cfg_.lr * m[k];
      }
    } else {
      auto& v = v_[i];
      for (std::size_t k = 0; k < next.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        next[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      }
    }
    out.emplace_back(params[i].shape(), std::move(next));
  }
  return out;
}

}  // namespace divdis
