#pragma once

// Seeded generators for synthetic underspecified tasks. Each bundle holds a
// labeled source set, an unlabeled target set whose labels are reachable
// only through a LabelOracle, and labeled held-out evaluation sets.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "divdis/model.hpp"

namespace divdis {

struct LabeledSet {
  Matrix x;
  std::vector<int> y;
  std::vector<int> groups;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t dims() const { return x.cols(); }
  void validate(std::size_t classes) const;
  // Rows at the given indices, in that order.
  LabeledSet subset(std::span<const std::size_t> rows) const;
};

class LabelOracle;

// Target features with ground-truth labels that training code cannot read.
class UnlabeledSet {
 public:
  UnlabeledSet() = default;
  UnlabeledSet(Matrix x, std::vector<int> hidden_y);

  const Matrix& x() const noexcept { return x_; }
  std::size_t size() const noexcept { return hidden_y_.size(); }
  std::size_t dims() const { return x_.cols(); }

 private:
  friend class LabelOracle;

  Matrix x_;
  std::vector<int> hidden_y_;
};

// Reveals hidden target labels and counts every label handed out.
class LabelOracle {
 public:
  explicit LabelOracle(const UnlabeledSet& set) : set_(&set) {}

  std::vector<int> query(std::span<const std::size_t> indices);
  std::size_t labels_used() const noexcept { return used_; }

 private:
  const UnlabeledSet* set_;
  std::size_t used_ = 0;
};

struct TaskDescriptor {
  std::string generator;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  std::string to_string() const;
};

struct TaskBundle {
  LabeledSet source;
  UnlabeledSet target_unlabeled;
  LabeledSet target_eval;
  // Held-out draw from the source distribution, for tuning without target labels.
  LabeledSet source_eval;
  TaskDescriptor descriptor;
  std::size_t classes = 2;

  std::size_t dims() const { return source.dims(); }
};

struct SplitSizes {
  std::size_t source = 1024;
  std::size_t target = 1024;
  std::size_t eval = 2048;
};

// Source: class 0 ~ U([-1,0]x[0,1]), class 1 ~ U([0,1]x[-1,0]). Target: class 0 ~
// U([-1,0]x[-1,1]), class 1 ~ U([0,1]x[-1,1]). Groups are quadrant ids.
TaskBundle gen_quadrants2d(const SplitSizes& sizes, std::uint64_t seed);

// Adds x3, source-predictive like x2 and uniform on target.
TaskBundle gen_quadrants3d(const SplitSizes& sizes, std::uint64_t seed);

// quadrants2d with N(0, sigma^2) added to x1 of source points only.
TaskBundle gen_noisy2d(const SplitSizes& sizes, double sigma, std::uint64_t seed);

struct CorrelatedPairParams {
  double mix_ratio = 0.0;
  double margin_simple = 4.0;
  double margin_complex = 1.0;
};

// Two 2D Gaussian-cluster blocks: a wide-margin "simple" block (dims 0-1)
// and a narrow-margin "complex" block (dims 2-3). Source rows agree on both
// blocks except for a `mix_ratio` fraction drawn from the target
// distribution, where the blocks are independent and the label follows the
// complex block. Groups are 2 * simple_cluster + complex_cluster.
TaskBundle gen_correlated_pair(const SplitSizes& sizes, const CorrelatedPairParams& params, std::uint64_t seed);

// Quadrant id used for 2D groups: 0 = (+,+), 1 = (-,+), 2 = (-,-), 3 = (+,-).
int quadrant(double x1, double x2);

// CSV with header x1..xd,y,group.
void write_labeled_csv(std::ostream& os, const LabeledSet& set);
LabeledSet read_labeled_csv(std::istream& is);
// CSV with header x1..xd; appends a y column only when `with_hidden_labels`.
void write_unlabeled_csv(std::ostream& os, const UnlabeledSet& set, bool with_hidden_labels);

}  // namespace divdis
