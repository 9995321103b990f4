#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divdis/data.hpp"
#include "divdis/model.hpp"

namespace divdis {

struct HeadEval {
  double average = 0.0;
  std::map<int, double> group_accuracy;
  double worst_group = 0.0;
};

struct EvalReport {
  std::vector<HeadEval> heads;
  std::optional<std::size_t> chosen;
  std::vector<std::string> warnings;

  const HeadEval& chosen_head() const { return heads.at(chosen.value()); }
  std::size_t best_head() const;  // highest average, lowest index on ties
};

// `expected_groups`, when non-zero, names groups 0..k-1 that should be
// present; absent ones are skipped with a warning.
EvalReport evaluate(const MultiHeadClassifier& model, const LabeledSet& set,
                    std::optional<std::size_t> chosen = std::nullopt, std::size_t expected_groups = 0);
EvalReport evaluate_predictions(std::span<const std::vector<int>> predictions, const LabeledSet& set,
                                std::optional<std::size_t> chosen = std::nullopt, std::size_t expected_groups = 0);

inline constexpr double kCoverageWindowDeg = 5.0;

struct CoverageReport {
  std::vector<std::optional<double>> angles;  // per head; empty when degenerate
  double covered_degrees = 0.0;               // of the (0, 90) sector
  double fraction = 0.0;                      // covered_degrees / 90
  std::vector<std::string> notes;
};

// Boundary angles of linear binary heads on 2D input and how much of the
// (0, 90) degree sector lies within the window of some angle, measured on
// 1-degree bins.
CoverageReport boundary_coverage(const MultiHeadClassifier& model);
CoverageReport angle_coverage(std::span<const double> angles, double window_deg = kCoverageWindowDeg);

// Mean over unordered pairs of the L1 distance between profiles.
double diversity_stat(std::span<const std::vector<double>> profiles);

// Spearman rank correlation with average ranks for ties. NaN when a column is constant.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace divdis
