#include "divdis/disambiguate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>

#include "divdis/error.hpp"
#include "divdis/kernels.hpp"
#include "divdis/rng.hpp"
#include "divdis/train.hpp"

namespace divdis {

std::vector<double> active_scores(const MultiHeadClassifier& model, const UnlabeledSet& target) {
  if (model.num_heads() < 2) throw Error("active_scores: nothing to disambiguate with a single head");
  const auto probs = model.predict(target.x());
  std::vector<std::span<const double>> views;
  for (const auto& p : probs) views.push_back(p.values());
  return kernels::pairwise_l1_scores(views, target.size(), model.num_classes());
}

SelectionReport select_from_queries(const MultiHeadClassifier& model, const UnlabeledSet& target,
                                    std::vector<std::size_t> indices, LabelOracle& oracle, std::string strategy) {
  if (indices.empty()) throw Error("selection: no points to query");
  SelectionReport r;
  r.strategy = std::move(strategy);
  r.m = indices.size();
  r.labels = oracle.query(indices);
  r.queried = std::move(indices);

  const Matrix xq = gather_rows(target.x(), r.queried);
  for (const auto& pred : model.predict_labels(xq)) r.head_accuracy.push_back(accuracy(pred, r.labels));

  const double best = *std::max_element(r.head_accuracy.begin(), r.head_accuracy.end());
  std::vector<std::size_t> tied;
  for (std::size_t h = 0; h < r.head_accuracy.size(); ++h) {
    if (r.head_accuracy[h] == best) tied.push_back(h);
  }
  r.chosen = tied.front();
  if (tied.size() > 1) {
    r.tie_note = std::to_string(tied.size()) + " heads tied at accuracy " + std::to_string(best) +
                 "; chose lowest index " + std::to_string(r.chosen);
  }
  return r;
}

SelectionReport select_active(const MultiHeadClassifier& model, const UnlabeledSet& target, std::size_t m,
                              LabelOracle& oracle) {
  if (m < 1 || m > target.size()) throw Error("select_active: m must lie in [1, |target|]");
  const auto scores = active_scores(model, target);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(m);
  return select_from_queries(model, target, std::move(order), oracle, "active");
}

SelectionReport select_random(const MultiHeadClassifier& model, const UnlabeledSet& target, std::size_t m,
                              std::uint64_t seed, LabelOracle& oracle) {
  if (m < 1 || m > target.size()) throw Error("select_random: m must lie in [1, |target|]");
  std::vector<std::size_t> pool(target.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "random_query"));
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  return select_from_queries(model, target, std::move(pool), oracle, "random");
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("pearson: need two equal-length series of >= 2 points");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

AttributionProfile attribution(const MultiHeadClassifier& model, const Matrix& x) {
  if (x.rank() != 2 || x.rows() < 2) throw Error("attribution: need at least two rows");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<std::vector<double>> columns(d, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) columns[j][i] = x.at(i, j);

  AttributionProfile out;
  for (std::size_t j = 0; j < d; ++j) {
    const auto [lo, hi] = std::minmax_element(columns[j].begin(), columns[j].end());
    if (*lo == *hi) out.warnings.push_back("input dimension " + std::to_string(j) + " is constant");
  }
  const auto probs = model.predict(x);
  for (std::size_t h = 0; h < probs.size(); ++h) {
    std::vector<double> p1(n);
    for (std::size_t i = 0; i < n; ++i) p1[i] = probs[h].at(i, 1);
    std::vector<double> prof(d);
    for (std::size_t j = 0; j < d; ++j) prof[j] = std::abs(pearson(columns[j], p1));
    const double total = std::accumulate(prof.begin(), prof.end(), 0.0);
    const bool degenerate = !(total > 0.0);
    if (degenerate) {
      std::fill(prof.begin(), prof.end(), 0.0);
      out.warnings.push_back("head " + std::to_string(h) + " output does not vary with any input");
    } else {
      for (double& v : prof) v /= total;
    }
    out.heads.push_back(std::move(prof));
    out.degenerate.push_back(degenerate);
  }
  return out;
}

LabelBound label_bound(std::size_t heads, double delta, double gap) {
  if (heads < 2) throw Error("label_bound: need at least two heads");
  if (!(delta > 0.0 && delta < 1.0)) throw Error("label_bound: delta must lie in (0, 1)");
  if (!(gap > 0.0 && gap <= 1.0)) throw Error("label_bound: gap must lie in (0, 1]");
  const double m = 2.0 * (std::log(2.0 * static_cast<double>(heads)) - std::log(delta)) / (gap * gap);
  return LabelBound{m, static_cast<std::size_t>(std::ceil(m))};
}

MonteCarloResult simulate_selection(std::size_t heads, double gap, std::size_t samples, std::size_t trials,
                                    std::uint64_t seed) {
  if (heads < 2) throw Error("simulate_selection: need at least two heads");
  if (!(gap > 0.0 && gap <= 1.0)) throw Error("simulate_selection: gap must lie in (0, 1]");
  if (trials == 0) throw Error("simulate_selection: need at least one trial");
  std::vector<double> risks(heads, 0.5 + gap / 2.0);
  risks[0] = 0.5 - gap / 2.0;
  const std::uint64_t failures = kernels::count_selection_failures(risks, samples, trials, seed);
  return MonteCarloResult{samples, trials, failures, static_cast<double>(failures) / static_cast<double>(trials)};
}

}  // namespace divdis
