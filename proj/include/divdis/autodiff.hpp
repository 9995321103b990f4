#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors.
//
// A Tensor owns an immutable value buffer and, when it participates in a
// gradient computation, a link to a node on a Tape. Ops record themselves on
// the tape of their inputs whenever any input is linked; otherwise they just
// compute values. Tapes are built fresh for every forward pass and must
// outlive every Tensor linked to them.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace divdis::ad {

using Shape = std::vector<std::size_t>;

// Lower clamp applied to every log argument.
inline constexpr double kLogClamp = 1e-12;

class Tape;

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_->size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const noexcept { return *values_; }
  double operator[](std::size_t i) const { return (*values_)[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  // Same values, no tape link.
  Tensor detached() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<double>> values_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

class Gradients;

// Accumulates gradients into per-node buffers during the backward sweep.
class GradSink {
 public:
  std::span<double> at(std::size_t node);

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<std::vector<double>>& buffers)
      : tape_(tape), buffers_(buffers) {}

  const Tape& tape_;
  std::vector<std::vector<double>>& buffers_;
};

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

class Tape {
 public:
  using Backward = std::function<void(std::span<const double> grad_out, GradSink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf (parameter) whose gradient backward() reports.
  Tensor watch(const Tensor& value);

  // Records an op node. `backward` receives dLoss/dOutput and pushes
  // contributions into the sink for its inputs.
  Tensor record(Shape shape, std::vector<double> values, Backward backward);

  // Reverse sweep from a scalar loss recorded on this tape.
  Gradients backward(const Tensor& loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t node_size(std::size_t node) const { return nodes_[node].size; }

 private:
  struct Node {
    std::size_t size;
    Backward backward;  // empty for leaves
  };

  std::vector<Node> nodes_;
};

// Gradients of a loss w.r.t. the leaves watched on a tape.
class Gradients {
 public:
  // Zero-filled when the leaf does not reach the loss.
  Tensor of(const Tensor& leaf) const;

  // Nodes reached by the backward sweep, in the order they were visited.
  const std::vector<std::size_t>& visit_order() const noexcept { return visited_; }

 private:
  friend class Tape;

  const Tape* tape_ = nullptr;
  std::unordered_map<std::size_t, std::vector<double>> leaf_grads_;
  std::vector<std::size_t> visited_;
};

// Elementwise with broadcasting of a scalar or (for rank-2 lhs) a row vector.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise product; b may also be a scalar.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
// Along the last axis, max-subtracted.
Tensor softmax(const Tensor& a);
// log(max(x, kLogClamp)); gradient is zero where the clamp is active.
Tensor log(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Column means of a rank-2 tensor: [B, C] -> [C].
Tensor mean_rows(const Tensor& a);
// a[m] (x) b[n] -> [m, n].
Tensor outer(const Tensor& a, const Tensor& b);
// Repeats a[C] into [rows, C].
Tensor broadcast_rows(const Tensor& a, std::size_t rows);

}  // namespace divdis::ad
