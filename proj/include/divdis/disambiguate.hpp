#pragma once

// Stage two: pick one head using few target labels (active or random
// querying), or by inspecting which input dimensions each head depends on.

#include <cstdint>
#include <string>
#include <vector>

#include "divdis/data.hpp"
#include "divdis/model.hpp"

namespace divdis {

struct SelectionReport {
  std::string strategy;
  std::size_t m = 0;
  std::vector<std::size_t> queried;
  std::vector<int> labels;
  std::vector<double> head_accuracy;  // on the queried points
  std::size_t chosen = 0;
  std::string tie_note;  // empty unless several heads shared the best accuracy
};

// Per-point disagreement: sum over ordered head pairs (i != j) of the L1
// distance between their probability vectors. Requires N >= 2.
std::vector<double> active_scores(const MultiHeadClassifier& model, const UnlabeledSet& target);

// Queries the m highest-scoring points (ties to the lower index).
SelectionReport select_active(const MultiHeadClassifier& model, const UnlabeledSet& target, std::size_t m,
                              LabelOracle& oracle);

// Queries m points drawn uniformly without replacement.
SelectionReport select_random(const MultiHeadClassifier& model, const UnlabeledSet& target, std::size_t m,
                              std::uint64_t seed, LabelOracle& oracle);

// Labels the given points and picks the most accurate head (lowest index on ties).
SelectionReport select_from_queries(const MultiHeadClassifier& model, const UnlabeledSet& target,
                                    std::vector<std::size_t> indices, LabelOracle& oracle, std::string strategy);

struct AttributionProfile {
  // Per head: |Pearson r| between each input dimension and P(class 1),
  // normalised to sum to one. All zeros when `degenerate`.
  std::vector<std::vector<double>> heads;
  std::vector<bool> degenerate;
  std::vector<std::string> warnings;
};

AttributionProfile attribution(const MultiHeadClassifier& model, const Matrix& x);

// Pearson correlation; 0 when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

struct LabelBound {
  double m;
  std::size_t m_ceil;
};

// Labels needed to pick the best of N heads with probability >= 1 - delta
// when the best two risks differ by gap: 2 (ln 2N - ln delta) / gap^2.
LabelBound label_bound(std::size_t heads, double delta, double gap);

struct MonteCarloResult {
  std::size_t samples;
  std::size_t trials;
  std::uint64_t failures;
  double failure_rate;
};

// Simulates selection with `samples` labels per trial. The best head has
// risk 0.5 - gap/2 and every other head 0.5 + gap/2, the highest-variance
// placement of a given gap.
MonteCarloResult simulate_selection(std::size_t heads, double gap, std::size_t samples, std::size_t trials,
                                    std::uint64_t seed);

}  // namespace divdis
