#include "divdis/train.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "divdis/error.hpp"
#include "divdis/format.hpp"
#include "divdis/rng.hpp"

namespace divdis {

namespace {

std::vector<std::size_t> sample_with_replacement(std::uint64_t stream_seed, std::size_t step, std::size_t rows,
                                                 std::size_t count) {
  if (rows == 0) throw Error("training: cannot sample a batch from an empty set");
  Rng rng(derive_seed(stream_seed, step));
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = static_cast<std::size_t>(rng.index(rows));
  return out;
}

std::vector<ad::Tensor> watch_all(ad::Tape& tape, const std::vector<ad::Tensor>& params) {
  std::vector<ad::Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(tape.watch(p));
  return out;
}

// Also checks the weighted total, so a mis-set weight trips it too.
void guard(std::size_t step, const LossBreakdown& loss, double total) {
  for (double v : {loss.xent, loss.mi, loss.reg, total}) {
    if (!std::isfinite(v) || std::abs(v) > kDivergenceLimit) throw TrainingError(step, loss);
  }
}

// Non-finite values inside the step surface as a TrainingError for that step.
template <class F>
auto guarded(std::size_t step, F&& f) {
  try {
    return f();
  } catch (const NonFiniteError& e) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    throw TrainingError(step, LossBreakdown{nan, nan, nan}, e.what());
  }
}

bool should_record(const TrainConfig& cfg, std::size_t step) {
  return step % cfg.record_every == 0 || step + 1 == cfg.steps;
}

void apply_update(MultiHeadClassifier& model, Optimizer& opt, const std::vector<ad::Tensor>& watched,
                  const ad::Tape& tape, const ad::Tensor& loss) {
  const ad::Gradients grads = tape.backward(loss);
  std::vector<ad::Tensor> g;
  g.reserve(watched.size());
  for (const auto& w : watched) g.push_back(grads.of(w));
  model.set_parameters(opt.step(watched, g));
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw Error("train: steps must be >= 1");
  if (batch_source < 1 || batch_target < 1) throw Error("train: batch sizes must be >= 1");
  if (record_every < 1) throw Error("train: record_every must be >= 1");
  optimizer.validate();
  weights.validate();
}

TrainingError::TrainingError(std::size_t step, LossBreakdown loss, const std::string& cause)
    : Error("training diverged at step " + std::to_string(step) + " (xent=" + std::to_string(loss.xent) +
            ", mi=" + std::to_string(loss.mi) + ", reg=" + std::to_string(loss.reg) + ")" +
            (cause.empty() ? "" : ": " + cause)),
      step_(step),
      loss_(loss) {}

void LearningCurve::write_csv(std::ostream& os) const {
  const std::size_t heads = rows.empty() ? 0 : rows.front().head_accuracy.size();
  bool with_erm = false;
  for (const auto& r : rows) with_erm = with_erm || r.erm_accuracy.has_value();
  os << "step,xent,mi,reg";
  for (std::size_t h = 0; h < heads; ++h) os << ",acc_head_" << h;
  if (with_erm) os << ",acc_erm";
  os << '\n';
  for (const auto& r : rows) {
    os << r.step << ',' << Num{r.loss.xent} << ',' << Num{r.loss.mi} << ',' << Num{r.loss.reg};
    for (double a : r.head_accuracy) os << ',' << Num{a};
    if (with_erm) {
      os << ',';
      if (r.erm_accuracy) os << Num{*r.erm_accuracy};
    }
    os << '\n';
  }
}

std::vector<std::size_t> sample_source_batch(const TrainConfig& cfg, std::size_t step, std::size_t rows) {
  return sample_with_replacement(derive_seed(cfg.seed, "source_batches"), step, rows, cfg.batch_source);
}

std::vector<std::size_t> sample_target_batch(const TrainConfig& cfg, std::size_t step, std::size_t rows) {
  return sample_with_replacement(derive_seed(cfg.seed, "target_batches"), step, rows, cfg.batch_target);
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.cols();
  auto v = x.values();
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw Error("gather_rows: row index out of range");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d, out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return Matrix::matrix(rows.size(), d, std::move(out));
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw Error("accuracy: length mismatch");
  if (labels.empty()) throw Error("accuracy: empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<double> head_accuracies(const MultiHeadClassifier& model, const LabeledSet& set) {
  std::vector<double> out;
  for (const auto& pred : model.predict_labels(set.x)) out.push_back(accuracy(pred, set.y));
  return out;
}

TrainResult diversify(MultiHeadClassifier model, const TaskBundle& bundle, const TrainConfig& cfg,
                      const StepObserver& observer) {
  cfg.validate();
  if (model.input_dim() != bundle.dims()) throw Error("diversify: model input dim does not match the task");
  cfg.prior.validate(model.num_classes());
  const LossWeights weights = effective_weights(cfg.weights, model.num_heads());
  Optimizer opt(cfg.optimizer);
  LearningCurve curve;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto src_rows = sample_source_batch(cfg, step, bundle.source.size());
    const auto tgt_rows = sample_target_batch(cfg, step, bundle.target_unlabeled.size());
    const Matrix xs = gather_rows(bundle.source.x, src_rows);
    const Matrix xt = gather_rows(bundle.target_unlabeled.x(), tgt_rows);
    std::vector<int> ys(src_rows.size());
    for (std::size_t i = 0; i < src_rows.size(); ++i) ys[i] = bundle.source.y[src_rows[i]];

    ad::Tape tape;
    const auto watched = watch_all(tape, model.parameters());
    const Objective obj = guarded(step, [&] {
      const auto src_probs = model.forward(xs, watched);
      const auto tgt_probs = model.forward(xt, watched);
      return objective(src_probs, ys, tgt_probs, weights, cfg.prior);
    });
    guard(step, obj.terms, obj.total.item());

    if (should_record(cfg, step)) {
      curve.rows.push_back(CurveRow{step, obj.terms, head_accuracies(model, bundle.target_eval), std::nullopt});
    }
    if (observer) observer(StepInfo{step, model, src_rows, tgt_rows, obj.terms});
    guarded(step, [&] { apply_update(model, opt, watched, tape, obj.total); });
  }
  return TrainResult{std::move(model), std::move(curve)};
}

TrainResult erm(MultiHeadClassifier model, const LabeledSet& source, const TrainConfig& cfg, const LabeledSet* eval) {
  cfg.validate();
  if (model.input_dim() != source.dims()) throw Error("erm: model input dim does not match the data");
  Optimizer opt(cfg.optimizer);
  LearningCurve curve;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto rows = sample_source_batch(cfg, step, source.size());
    const Matrix xs = gather_rows(source.x, rows);
    std::vector<int> ys(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) ys[i] = source.y[rows[i]];

    ad::Tape tape;
    const auto watched = watch_all(tape, model.parameters());
    const ad::Tensor total = guarded(step, [&] {
      const auto probs = model.forward(xs, watched);
      ad::Tensor t = xent(probs[0], ys);
      for (std::size_t h = 1; h < probs.size(); ++h) t = ad::add(t, xent(probs[h], ys));
      return t;
    });
    const LossBreakdown terms{total.item(), 0.0, 0.0};
    guard(step, terms, terms.xent);

    if (should_record(cfg, step)) {
      curve.rows.push_back(
          CurveRow{step, terms, eval ? head_accuracies(model, *eval) : std::vector<double>{}, std::nullopt});
    }
    guarded(step, [&] { apply_update(model, opt, watched, tape, total); });
  }
  return TrainResult{std::move(model), std::move(curve)};
}

}  // namespace divdis
