#include "divdis/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "divdis/disambiguate.hpp"
#include "divdis/error.hpp"
#include "divdis/train.hpp"

namespace divdis {

namespace {

double angle_distance(double a, double b) {
  const double d = std::fmod(std::abs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::size_t EvalReport::best_head() const {
  std::size_t best = 0;
  for (std::size_t h = 1; h < heads.size(); ++h) {
    if (heads[h].average > heads[best].average) best = h;
  }
  return best;
}

EvalReport evaluate_predictions(std::span<const std::vector<int>> predictions, const LabeledSet& set,
                                std::optional<std::size_t> chosen, std::size_t expected_groups) {
  if (set.size() == 0) throw Error("evaluate: empty evaluation set");
  if (set.groups.size() != set.size()) throw Error("evaluate: group annotations missing");
  if (chosen && *chosen >= predictions.size()) throw Error("evaluate: chosen head out of range");
  EvalReport report;
  report.chosen = chosen;

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < set.size(); ++i) members[set.groups[i]].push_back(i);
  for (std::size_t g = 0; g < expected_groups; ++g) {
    if (!members.count(static_cast<int>(g))) {
      report.warnings.push_back("group " + std::to_string(g) + " has no members; excluded");
    }
  }

  for (const auto& pred : predictions) {
    if (pred.size() != set.size()) throw Error("evaluate: prediction count differs from set size");
    HeadEval h;
    h.average = accuracy(pred, set.y);
    h.worst_group = std::numeric_limits<double>::infinity();
    for (const auto& [g, rows] : members) {
      std::size_t hit = 0;
      for (std::size_t i : rows) hit += pred[i] == set.y[i];
      const double acc = static_cast<double>(hit) / static_cast<double>(rows.size());
      h.group_accuracy[g] = acc;
      h.worst_group = std::min(h.worst_group, acc);
    }
    report.heads.push_back(std::move(h));
  }
  return report;
}

EvalReport evaluate(const MultiHeadClassifier& model, const LabeledSet& set, std::optional<std::size_t> chosen,
                    std::size_t expected_groups) {
  const auto preds = model.predict_labels(set.x);
  return evaluate_predictions(preds, set, chosen, expected_groups);
}

CoverageReport angle_coverage(std::span<const double> angles, double window_deg) {
  CoverageReport r;
  for (double a : angles) r.angles.emplace_back(a);
  for (int bin = 0; bin < 90; ++bin) {
    const double center = bin + 0.5;
    for (double a : angles) {
      if (angle_distance(center, a) <= window_deg) {
        r.covered_degrees += 1.0;
        break;
      }
    }
  }
  r.fraction = r.covered_degrees / 90.0;
  return r;
}

CoverageReport boundary_coverage(const MultiHeadClassifier& model) {
  std::vector<double> valid;
  std::vector<std::optional<double>> per_head;
  std::vector<std::string> notes;
  for (std::size_t h = 0; h < model.num_heads(); ++h) {
    try {
      const double a = model.boundary_angle(h);
      valid.push_back(a);
      per_head.emplace_back(a);
    } catch (const Error& e) {
      if (!model.identity_backbone() || model.input_dim() != 2 || model.num_classes() != 2) throw;
      per_head.emplace_back(std::nullopt);
      notes.push_back("head " + std::to_string(h) + " skipped: " + e.what());
    }
  }
  CoverageReport r = angle_coverage(valid);
  r.angles = std::move(per_head);
  r.notes = std::move(notes);
  return r;
}

double diversity_stat(std::span<const std::vector<double>> profiles) {
  if (profiles.size() < 2) throw Error("diversity_stat: need at least two profiles");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    for (std::size_t j = i + 1; j < profiles.size(); ++j) {
      if (profiles[i].size() != profiles[j].size()) throw Error("diversity_stat: profile lengths differ");
      double d = 0.0;
      for (std::size_t k = 0; k < profiles[i].size(); ++k) d += std::abs(profiles[i][k] - profiles[j][k]);
      total += d;
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("spearman: need two equal-length columns of >= 2 values");
  auto constant = [](std::span<const double> v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
  };
  if (constant(a) || constant(b)) return std::numeric_limits<double>::quiet_NaN();
  return pearson(ranks(a), ranks(b));
}

}  // namespace divdis
