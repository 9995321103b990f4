#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "divdis/autodiff.hpp"

namespace divdis {

using Matrix = ad::Tensor;

struct InitSpec {
  std::uint64_t seed = 0;
  // Multiplies the fan-in standard deviation sqrt(2 / fan_in).
  double weight_scale = 1.0;
  // Optional per-head seeds; when empty, head h uses a stream derived from `seed`.
  std::vector<std::uint64_t> head_seeds;
};

// weight is [in, out]; y = x * weight + bias.
struct Affine {
  ad::Tensor weight;
  ad::Tensor bias;

  std::size_t in() const { return weight.shape()[0]; }
  std::size_t out() const { return weight.shape()[1]; }
};

// Shared ReLU backbone followed by N affine+softmax heads.
class MultiHeadClassifier {
 public:
  static MultiHeadClassifier init(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t heads,
                                  std::size_t classes, const InitSpec& spec);

  MultiHeadClassifier(std::vector<Affine> backbone, std::vector<Affine> heads);

  std::size_t input_dim() const;
  std::size_t feature_dim() const;
  std::size_t num_heads() const noexcept { return heads_.size(); }
  std::size_t num_classes() const;
  bool identity_backbone() const noexcept { return backbone_.empty(); }

  const std::vector<Affine>& backbone() const noexcept { return backbone_; }
  const std::vector<Affine>& heads() const noexcept { return heads_; }

  // Flat parameter list: backbone layers (weight, bias), then heads (weight, bias).
  std::vector<ad::Tensor> parameters() const;
  std::vector<std::string> parameter_keys() const;
  // Replaces values in parameters() order; shapes must match.
  void set_parameters(std::span<const ad::Tensor> values);

  // Per-head probabilities. `params` (same layout as parameters()) lets a
  // caller route the forward pass through tape-watched copies.
  std::vector<ad::Tensor> forward(const ad::Tensor& x, std::span<const ad::Tensor> params) const;
  std::vector<ad::Tensor> forward(const ad::Tensor& x) const;

  // Untaped probabilities, one batch x C matrix per head.
  std::vector<Matrix> predict(const Matrix& x) const;
  // Argmax per row per head; ties go to the lowest class index.
  std::vector<std::vector<int>> predict_labels(const Matrix& x) const;

  // Decision-boundary angle of a linear binary head on raw 2D input.
  double boundary_angle(std::size_t head) const;

  void save(std::ostream& os) const;
  static MultiHeadClassifier load(std::istream& is);

 private:
  std::vector<Affine> backbone_;
  std::vector<Affine> heads_;
};

// Angle in degrees in [0, 180) of the line w1*x + w2*y + b = 0, where
// (w1, w2) are the class-1 minus class-0 logit weights.
double boundary_angle(double w1, double w2);

std::vector<int> argmax_rows(const Matrix& probs);

}  // namespace divdis
