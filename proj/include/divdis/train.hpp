#pragma once

// Stage one: mini-batch training of all heads on the combined objective,
// one labeled source batch and one unlabeled target batch per step. Also
// the plain cross-entropy (ERM) baseline trainer.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "divdis/data.hpp"
#include "divdis/error.hpp"
#include "divdis/losses.hpp"
#include "divdis/model.hpp"
#include "divdis/optim.hpp"

namespace divdis {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_source = 128;
  std::size_t batch_target = 128;
  OptimizerConfig optimizer;
  LossWeights weights;
  PriorSpec prior;
  std::uint64_t seed = 0;
  std::size_t record_every = 10;

  void validate() const;
};

struct CurveRow {
  std::size_t step = 0;
  LossBreakdown loss;
  std::vector<double> head_accuracy;  // on target_eval
  std::optional<double> erm_accuracy;
};

struct LearningCurve {
  std::vector<CurveRow> rows;

  // step,xent,mi,reg,acc_head_0..acc_head_{N-1}[,acc_erm]
  void write_csv(std::ostream& os) const;
};

struct TrainResult {
  MultiHeadClassifier model;
  LearningCurve curve;
};

// Everything a step saw, handed to an optional observer before the update.
struct StepInfo {
  std::size_t step;
  const MultiHeadClassifier& model;  // parameters before this step's update
  std::span<const std::size_t> source_rows;
  std::span<const std::size_t> target_rows;
  const LossBreakdown& loss;
};
using StepObserver = std::function<void(const StepInfo&)>;

// Raised when a loss term goes non-finite or past the divergence guard.
// Terms not computed before the failure are NaN.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, LossBreakdown loss, const std::string& cause = {});

  std::size_t step() const noexcept { return step_; }
  const LossBreakdown& loss() const noexcept { return loss_; }

 private:
  std::size_t step_;
  LossBreakdown loss_;
};

inline constexpr double kDivergenceLimit = 1e6;

TrainResult diversify(MultiHeadClassifier model, const TaskBundle& bundle, const TrainConfig& cfg,
                      const StepObserver& observer = {});

// Cross-entropy on source only. Source batches are drawn exactly as in
// diversify() with the same seed.
TrainResult erm(MultiHeadClassifier model, const LabeledSet& source, const TrainConfig& cfg,
                const LabeledSet* eval = nullptr);

// Row indices of the source (or target) batch used at `step`.
std::vector<std::size_t> sample_source_batch(const TrainConfig& cfg, std::size_t step, std::size_t rows);
std::vector<std::size_t> sample_target_batch(const TrainConfig& cfg, std::size_t step, std::size_t rows);

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows);

// Fraction of argmax predictions matching labels.
double accuracy(std::span<const int> predicted, std::span<const int> labels);
std::vector<double> head_accuracies(const MultiHeadClassifier& model, const LabeledSet& set);

}  // namespace divdis
