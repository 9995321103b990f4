#pragma once

// Diversify-stage objective: per-head cross-entropy on labeled source data,
// pairwise mutual information between head predictions on unlabeled target
// data, and a per-head KL pull of the target marginal toward a label prior.

#include <optional>
#include <span>
#include <vector>

#include "divdis/autodiff.hpp"

namespace divdis {

struct LossWeights {
  double mi = 10.0;   // weight on the sum over unordered head pairs
  double reg = 10.0;  // weight on the sum over heads
  bool auto_scale = false;

  void validate() const;
};

struct PriorSpec {
  enum class Mode { Fixed, SourceMarginal };

  Mode mode = Mode::Fixed;
  std::vector<double> fixed;  // length C; empty means uniform

  static PriorSpec uniform() { return {}; }
  void validate(std::size_t classes) const;
  // The fixed prior expanded to C entries.
  std::vector<double> fixed_for(std::size_t classes) const;
};

// Mean over rows of -log p[label]. Labels must lie in [0, C).
ad::Tensor xent(const ad::Tensor& probs, std::span<const int> labels);

// KL(p || q) for two probability tensors of equal shape, with clamped logs.
ad::Tensor kl_divergence(const ad::Tensor& p, const ad::Tensor& q);

// KL between the batch-mean joint of two heads' predictions and the product
// of their batch-mean marginals. The joint is P_i^T P_j / B.
ad::Tensor mi_pair(const ad::Tensor& probs_i, const ad::Tensor& probs_j);

// KL(batch-mean of probs || prior). In source-marginal mode the prior is the
// batch mean of `source_probs`, gradient-detached.
ad::Tensor reg(const ad::Tensor& probs, const PriorSpec& prior, const ad::Tensor* source_probs = nullptr);

struct LossBreakdown {
  double xent = 0.0;  // sum over heads
  double mi = 0.0;    // sum over unordered pairs
  double reg = 0.0;   // sum over heads
};

struct Objective {
  ad::Tensor total;
  LossBreakdown terms;
};

// sum_i xent_i + mi_weight * sum_{i<j} mi_pair + reg_weight * sum_i reg_i.
// Terms whose weight is zero are reported in the breakdown but kept out of
// `total`, so they contribute no gradient at all.
Objective objective(std::span<const ad::Tensor> source_probs, std::span<const int> source_labels,
                    std::span<const ad::Tensor> target_probs, const LossWeights& weights, const PriorSpec& prior);

// Rescales base weights for N heads: the pair weight by 4 / N^2 and the head
// weight by 2 / N, so N = 2 returns the base weights unchanged.
LossWeights auto_scaled_weights(double base_mi, double base_reg, std::size_t heads);

// The weights objective() should use for `heads` heads, honouring auto_scale.
LossWeights effective_weights(const LossWeights& w, std::size_t heads);

}  // namespace divdis
