#include "divdis/losses.hpp"

#include <cmath>
#include <string>

#include "divdis/error.hpp"

namespace divdis {

void LossWeights::validate() const {
  if (!std::isfinite(mi) || mi < 0.0) throw Error("loss weights: mutual-information weight must be finite and >= 0");
  if (!std::isfinite(reg) || reg < 0.0) throw Error("loss weights: regularizer weight must be finite and >= 0");
}

void PriorSpec::validate(std::size_t classes) const {
  if (mode == Mode::SourceMarginal) return;
  if (fixed.empty()) return;
  if (fixed.size() != classes) {
    throw Error("prior: expected " + std::to_string(classes) + " entries, got " + std::to_string(fixed.size()));
  }
  double s = 0.0;
  for (double p : fixed) {
    if (!std::isfinite(p) || p < 0.0) throw Error("prior: entries must be finite and >= 0");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error("prior: entries must sum to 1");
}

std::vector<double> PriorSpec::fixed_for(std::size_t classes) const {
  validate(classes);
  if (fixed.empty()) return std::vector<double>(classes, 1.0 / static_cast<double>(classes));
  return fixed;
}

ad::Tensor xent(const ad::Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.rows() != labels.size()) {
    throw ShapeError("xent", probs.shape(), {labels.size()});
  }
  if (labels.empty()) throw Error("xent: empty batch");
  const std::size_t c = probs.cols();
  std::vector<double> onehot(probs.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw Error("xent: label " + std::to_string(labels[i]) + " out of range for " + std::to_string(c) + " classes");
    }
    onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  const ad::Tensor picked = ad::mul(ad::log(probs), ad::Tensor(probs.shape(), std::move(onehot)));
  return ad::scale(ad::sum(picked), -1.0 / static_cast<double>(labels.size()));
}

ad::Tensor kl_divergence(const ad::Tensor& p, const ad::Tensor& q) {
  if (p.shape() != q.shape()) throw ShapeError("kl_divergence", p.shape(), q.shape());
  return ad::sum(ad::mul(p, ad::sub(ad::log(p), ad::log(q))));
}

ad::Tensor mi_pair(const ad::Tensor& probs_i, const ad::Tensor& probs_j) {
  if (probs_i.rank() != 2 || probs_j.rank() != 2 || probs_i.rows() != probs_j.rows()) {
    throw ShapeError("mi_pair", probs_i.shape(), probs_j.shape());
  }
  const std::size_t batch = probs_i.rows();
  if (batch == 0) throw Error("mi_pair: empty batch");
  const ad::Tensor joint = ad::scale(ad::matmul(ad::transpose(probs_i), probs_j), 1.0 / static_cast<double>(batch));
  const ad::Tensor product = ad::outer(ad::mean_rows(probs_i), ad::mean_rows(probs_j));
  return kl_divergence(joint, product);
}

ad::Tensor reg(const ad::Tensor& probs, const PriorSpec& prior, const ad::Tensor* source_probs) {
  if (probs.rank() != 2) throw ShapeError("reg", probs.shape(), {});
  const std::size_t c = probs.cols();
  ad::Tensor target;
  if (prior.mode == PriorSpec::Mode::SourceMarginal) {
    if (source_probs == nullptr) throw Error("reg: source-marginal prior needs source predictions");
    if (source_probs->rank() != 2 || source_probs->cols() != c) {
      throw ShapeError("reg", probs.shape(), source_probs->shape());
    }
    target = ad::mean_rows(source_probs->detached());
  } else {
    target = ad::Tensor::vector(prior.fixed_for(c));
  }
  return kl_divergence(ad::mean_rows(probs), target);
}

Objective objective(std::span<const ad::Tensor> source_probs, std::span<const int> source_labels,
                    std::span<const ad::Tensor> target_probs, const LossWeights& weights, const PriorSpec& prior) {
  if (source_probs.empty()) throw Error("objective: need at least one head");
  if (source_probs.size() != target_probs.size()) throw Error("objective: head count differs between batches");
  weights.validate();

  Objective out;
  const std::size_t n = source_probs.size();
  ad::Tensor total = xent(source_probs[0], source_labels);
  out.terms.xent = total.item();
  for (std::size_t i = 1; i < n; ++i) {
    const ad::Tensor t = xent(source_probs[i], source_labels);
    out.terms.xent += t.item();
    total = ad::add(total, t);
  }

  if (n > 1) {
    ad::Tensor mi_sum;
    bool first = true;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const ad::Tensor t = mi_pair(target_probs[i], target_probs[j]);
        mi_sum = first ? t : ad::add(mi_sum, t);
        first = false;
      }
    }
    out.terms.mi = mi_sum.item();
    if (weights.mi != 0.0) total = ad::add(total, ad::scale(mi_sum, weights.mi));
  }

  ad::Tensor reg_sum;
  for (std::size_t i = 0; i < n; ++i) {
    const ad::Tensor t = reg(target_probs[i], prior, &source_probs[i]);
    reg_sum = i == 0 ? t : ad::add(reg_sum, t);
  }
  out.terms.reg = reg_sum.item();
  if (weights.reg != 0.0) total = ad::add(total, ad::scale(reg_sum, weights.reg));

  out.total = total;
  return out;
}

LossWeights auto_scaled_weights(double base_mi, double base_reg, std::size_t heads) {
  if (heads < 1) throw Error("auto_scaled_weights: need at least one head");
  const double n = static_cast<double>(heads);
  return LossWeights{base_mi * 4.0 / (n * n), base_reg * 2.0 / n, true};
}

LossWeights effective_weights(const LossWeights& w, std::size_t heads) {
  return w.auto_scale ? auto_scaled_weights(w.mi, w.reg, heads) : w;
}

}  // namespace divdis
