#pragma once

// Test-only oracles and generators. Nothing here calls into the code paths
// it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "divdis/autodiff.hpp"
#include "divdis/losses.hpp"
#include "divdis/model.hpp"
#include "divdis/rng.hpp"

namespace divdis::testing {

// Rows drawn from a softmax of N(0, spread^2) logits.
inline ad::Tensor random_probs(Rng& rng, std::size_t rows, std::size_t cols, double spread = 2.0) {
  std::vector<double> v(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      v[r * cols + c] = std::exp(spread * rng.normal());
      z += v[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= z;
  }
  return ad::Tensor::matrix(rows, cols, std::move(v));
}

inline ad::Tensor random_tensor(Rng& rng, ad::Shape shape, double scale = 1.0) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return ad::Tensor(std::move(shape), std::move(v));
}

inline double clamped_log(double x) { return std::log(std::max(x, ad::kLogClamp)); }

// Mutual information between two heads by explicit per-sample loops:
// joint(a, b) = mean_s p[s][a] q[s][b], marginals are column means.
inline double naive_mi(const ad::Tensor& p, const ad::Tensor& q) {
  const std::size_t batch = p.rows(), cp = p.cols(), cq = q.cols();
  std::vector<double> joint(cp * cq, 0.0), mp(cp, 0.0), mq(cq, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t a = 0; a < cp; ++a) {
      mp[a] += p.at(s, a) / static_cast<double>(batch);
      for (std::size_t b = 0; b < cq; ++b) joint[a * cq + b] += p.at(s, a) * q.at(s, b) / static_cast<double>(batch);
    }
    for (std::size_t b = 0; b < cq; ++b) mq[b] += q.at(s, b) / static_cast<double>(batch);
  }
  double mi = 0.0;
  for (std::size_t a = 0; a < cp; ++a) {
    for (std::size_t b = 0; b < cq; ++b) {
      const double j = joint[a * cq + b];
      mi += j * (clamped_log(j) - clamped_log(mp[a] * mq[b]));
    }
  }
  return mi;
}

// |a - n| / max(|a|, |n|, floor). The floor keeps components that are
// zero up to rounding from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences of f with respect to every entry of every tensor in
// `point`. Returns one gradient vector per tensor.
inline std::vector<std::vector<double>> central_differences(
    const std::vector<ad::Tensor>& point, const std::function<double(const std::vector<ad::Tensor>&)>& f,
    double h = 1e-5) {
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < point.size(); ++t) {
    std::vector<double> g(point[t].size());
    for (std::size_t i = 0; i < point[t].size(); ++i) {
      auto shifted = [&](double delta) {
        std::vector<double> v(point[t].values().begin(), point[t].values().end());
        v[i] += delta;
        std::vector<ad::Tensor> p = point;
        p[t] = ad::Tensor(point[t].shape(), std::move(v));
        return f(p);
      };
      g[i] = (shifted(h) - shifted(-h)) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Binary linear heads with logits (0, k * dir . x), so class 1 wins where
// dir . x > 0. All heads share the input width of the first direction.
inline MultiHeadClassifier linear_heads(const std::vector<std::vector<double>>& dirs, double k = 1.0) {
  std::vector<Affine> heads;
  for (const auto& d : dirs) {
    std::vector<double> w(2 * d.size(), 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) w[2 * i + 1] = k * d[i];
    heads.push_back(Affine{ad::Tensor::matrix(d.size(), 2, std::move(w)), ad::Tensor::zeros({2})});
  }
  return MultiHeadClassifier({}, std::move(heads));
}

// Builds a random small model, batch pair, weights and prior, then returns
// the largest relative error between the autodiff gradient of the full
// objective and central differences of a hand composition of its terms.
// The source-marginal prior carries no gradient, so the numeric side holds
// it fixed per head at its unperturbed value.
inline double objective_gradient_error(Rng& rng) {
  const std::size_t dims = 2 + rng.index(2), heads = 1 + rng.index(3), classes = 2 + rng.index(2);
  const std::vector<std::size_t> hidden = rng.bernoulli(0.5) ? std::vector<std::size_t>{} : std::vector<std::size_t>{4};
  const auto model = MultiHeadClassifier::init(dims, hidden, heads, classes, InitSpec{rng.next()});
  const std::size_t bs = 3 + rng.index(5), bt = 3 + rng.index(5);
  const ad::Tensor xs = random_tensor(rng, {bs, dims}), xt = random_tensor(rng, {bt, dims});
  std::vector<int> ys(bs);
  for (int& y : ys) y = static_cast<int>(rng.index(classes));
  const LossWeights w{rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0)};
  const PriorSpec prior = rng.bernoulli(0.5) ? PriorSpec::uniform() : PriorSpec{PriorSpec::Mode::SourceMarginal, {}};

  ad::Tape tape;
  std::vector<ad::Tensor> watched;
  for (const auto& p : model.parameters()) watched.push_back(tape.watch(p));
  const auto grads = tape.backward(objective(model.forward(xs, watched), ys, model.forward(xt, watched), w, prior).total);

  std::vector<ad::Tensor> priors;
  for (const auto& sp : model.forward(xs)) {
    priors.push_back(prior.mode == PriorSpec::Mode::Fixed ? ad::Tensor::vector(prior.fixed_for(classes))
                                                          : ad::mean_rows(sp));
  }
  auto composed = [&](const std::vector<ad::Tensor>& p) {
    const auto sp = model.forward(xs, p), tp = model.forward(xt, p);
    double total = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      total += xent(sp[h], ys).item() + w.reg * kl_divergence(ad::mean_rows(tp[h]), priors[h]).item();
      for (std::size_t g = h + 1; g < heads; ++g) total += w.mi * naive_mi(tp[h], tp[g]);
    }
    return total;
  };
  const auto numeric = central_differences(model.parameters(), composed);
  double worst = 0.0;
  for (std::size_t t = 0; t < watched.size(); ++t) {
    const ad::Tensor g = grads.of(watched[t]);
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, relative_error(g[i], numeric[t][i]));
  }
  return worst;
}

}  // namespace divdis::testing
