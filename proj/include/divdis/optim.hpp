#pragma once

#include <span>
#include <vector>

#include "divdis/autodiff.hpp"

namespace divdis {

struct OptimizerConfig {
  enum class Kind { Sgd, Adam };

  Kind kind = Kind::Adam;
  double lr = 1e-3;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Holds per-parameter optimizer state; one instance per training run.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  // Returns updated parameters; `grads` aligns with `params`.
  std::vector<ad::Tensor> step(std::span<const ad::Tensor> params, std::span<const ad::Tensor> grads);

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace divdis
