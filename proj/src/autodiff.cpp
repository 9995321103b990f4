#include "divdis/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "divdis/error.hpp"
#include "divdis/kernels.hpp"

namespace divdis {

ShapeError::ShapeError(std::string op, std::vector<std::size_t> lhs, std::vector<std::size_t> rhs)
    : Error(op + ": incompatible shapes " + format_shape(lhs) + " and " + format_shape(rhs)),
      op_(std::move(op)),
      lhs_(std::move(lhs)),
      rhs_(std::move(rhs)) {}

std::string format_shape(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error([&] {
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += "\n  - " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

}  // namespace divdis

namespace divdis::ad {

namespace {

std::size_t extent(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NonFiniteError(std::string(op) + ": produced a non-finite value");
  }
}

Tape* common_tape(const char* op, const Tensor& a, const Tensor* b = nullptr) {
  Tape* t = a.tape();
  if (b != nullptr && b->tape() != nullptr) {
    if (t != nullptr && t != b->tape()) throw Error(std::string(op) + ": operands live on different tapes");
    t = b->tape();
  }
  return t;
}

std::size_t node_of(const Tensor& t) { return t.requires_grad() ? t.node() : kNoNode; }

// Wraps a forward result, recording it on `tape` when non-null.
Tensor emit(const char* op, Tape* tape, Shape shape, std::vector<double> values, Tape::Backward bw) {
  require_finite(op, values);
  if (tape == nullptr) return Tensor(std::move(shape), std::move(values));
  return tape->record(std::move(shape), std::move(values), std::move(bw));
}

bool is_scalar(const Tensor& t) { return t.size() == 1 && t.rank() <= 1; }

enum class Broadcast { Same, Scalar, Row };

Broadcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (is_scalar(b)) return Broadcast::Scalar;
  if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.shape()[1]) return Broadcast::Row;
  throw ShapeError(op, a.shape(), b.shape());
}

// Reduces a gradient w.r.t. the broadcast operand back to its own shape.
void reduce_into(Broadcast mode, std::span<const double> g, std::span<double> out, std::size_t cols,
                 double factor) {
  switch (mode) {
    case Broadcast::Same:
      for (std::size_t i = 0; i < g.size(); ++i) out[i] += factor * g[i];
      break;
    case Broadcast::Scalar: {
      double s = 0.0;
      for (double x : g) s += x;
      out[0] += factor * s;
      break;
    }
    case Broadcast::Row:
      for (std::size_t i = 0; i < g.size(); ++i) out[i % cols] += factor * g[i];
      break;
  }
}

double broadcast_at(Broadcast mode, std::span<const double> b, std::size_t i, std::size_t cols) {
  switch (mode) {
    case Broadcast::Same:
      return b[i];
    case Broadcast::Scalar:
      return b[0];
    case Broadcast::Row:
      return b[i % cols];
  }
  return 0.0;
}

Tensor add_or_sub(const char* op, const Tensor& a, const Tensor& b, double sign) {
  const Broadcast mode = classify(op, a, b);
  const std::size_t cols = a.rank() == 2 ? a.shape()[1] : 1;
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * broadcast_at(mode, bv, i, cols);
  const std::size_t na = node_of(a), nb = node_of(b);
  return emit(op, common_tape(op, a, &b), a.shape(), std::move(out),
              [na, nb, mode, cols, sign](std::span<const double> g, GradSink& sink) {
                if (na != kNoNode) reduce_into(Broadcast::Same, g, sink.at(na), cols, 1.0);
                if (nb != kNoNode) reduce_into(mode, g, sink.at(nb), cols, sign);
              });
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : shape_{0}, values_(std::make_shared<const std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (extent(shape_) != values.size()) {
    throw Error("Tensor: shape " + format_shape(shape_) + " does not hold " + std::to_string(values.size()) +
                " values");
  }
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = extent(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows", shape_, {});
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols", shape_, {});
  return shape_[1];
}

double Tensor::at(std::size_t r, std::size_t c) const { return (*values_)[r * cols() + c]; }

double Tensor::item() const {
  if (size() != 1) throw Error("item: tensor of shape " + format_shape(shape_) + " is not a scalar");
  return (*values_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  return t;
}

// ---------------------------------------------------------------- Tape

std::span<double> GradSink::at(std::size_t node) {
  auto& buf = buffers_[node];
  if (buf.empty()) buf.assign(tape_.node_size(node), 0.0);
  return buf;
}

Tensor Tape::watch(const Tensor& value) {
  Tensor t = value.detached();
  t.tape_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{value.size(), {}});
  return t;
}

Tensor Tape::record(Shape shape, std::vector<double> values, Backward backward) {
  Tensor t(std::move(shape), std::move(values));
  t.tape_ = this;
  t.node_ = nodes_.size();
  nodes_.push_back(Node{t.size(), std::move(backward)});
  return t;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape() != this) throw Error("backward: loss is not recorded on this tape");
  if (loss.size() != 1) throw ShapeError("backward (loss must be scalar)", loss.shape(), {});

  std::vector<std::vector<double>> buffers(nodes_.size());
  buffers[loss.node()].assign(1, 1.0);
  GradSink sink(*this, buffers);

  Gradients out;
  out.tape_ = this;
  for (std::size_t n = loss.node() + 1; n-- > 0;) {
    if (buffers[n].empty()) continue;
    out.visited_.push_back(n);
    const Node& node = nodes_[n];
    if (node.backward) {
      node.backward(buffers[n], sink);
      std::vector<double>().swap(buffers[n]);
    } else {
      out.leaf_grads_.emplace(n, std::move(buffers[n]));
    }
  }
  return out;
}

Tensor Gradients::of(const Tensor& leaf) const {
  if (leaf.tape() != tape_) throw Error("Gradients::of: tensor was not watched on this tape");
  auto it = leaf_grads_.find(leaf.node());
  if (it == leaf_grads_.end()) return Tensor::zeros(leaf.shape());
  return Tensor(leaf.shape(), it->second);
}

// ---------------------------------------------------------------- ops

Tensor add(const Tensor& a, const Tensor& b) { return add_or_sub("add", a, b, 1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add_or_sub("sub", a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast mode = classify("mul", a, b);
  if (mode == Broadcast::Row) throw ShapeError("mul", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * broadcast_at(mode, bv, i, 1);
  const std::size_t na = node_of(a), nb = node_of(b);
  Tensor ac = a.detached(), bc = b.detached();
  return emit("mul", common_tape("mul", a, &b), a.shape(), std::move(out),
              [na, nb, mode, ac, bc](std::span<const double> g, GradSink& sink) {
                auto av = ac.values();
                auto bv = bc.values();
                if (na != kNoNode) {
                  auto ga = sink.at(na);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * broadcast_at(mode, bv, i, 1);
                }
                if (nb != kNoNode) {
                  auto gb = sink.at(nb);
                  if (mode == Broadcast::Same) {
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                  } else {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av[i];
                    gb[0] += s;
                  }
                }
              });
}

Tensor scale(const Tensor& a, double k) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x *= k;
  const std::size_t na = node_of(a);
  return emit("scale", a.tape(), a.shape(), std::move(out), [na, k](std::span<const double> g, GradSink& sink) {
    auto ga = sink.at(na);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  kernels::gemm(a.values(), b.values(), out, {m, n, k});
  const std::size_t na = node_of(a), nb = node_of(b);
  Tensor ac = a.detached(), bc = b.detached();
  return emit("matmul", common_tape("matmul", a, &b), {m, n}, std::move(out),
              [na, nb, ac, bc, m, n, k](std::span<const double> g, GradSink& sink) {
                if (na != kNoNode) {
                  // dA = G * B^T
                  std::vector<double> tmp(m * k);
                  kernels::gemm(g, bc.values(), tmp, {m, k, n, kernels::Trans::No, kernels::Trans::Yes});
                  auto ga = sink.at(na);
                  for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
                }
                if (nb != kNoNode) {
                  // dB = A^T * G
                  std::vector<double> tmp(k * n);
                  kernels::gemm(ac.values(), g, tmp, {k, n, m, kernels::Trans::Yes, kernels::Trans::No});
                  auto gb = sink.at(nb);
                  for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
                }
              });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose", a.shape(), {});
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto av = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  const std::size_t na = node_of(a);
  return emit("transpose", a.tape(), {c, r}, std::move(out), [na, r, c](std::span<const double> g, GradSink& sink) {
    auto ga = sink.at(na);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& x : out) x = x > 0.0 ? x : 0.0;
  const std::size_t na = node_of(a);
  Tensor ac = a.detached();
  return emit("relu", a.tape(), a.shape(), std::move(out), [na, ac](std::span<const double> g, GradSink& sink) {
    auto ga = sink.at(na);
    auto av = ac.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
    }
  });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() < 1 || a.shape().back() == 0) throw ShapeError("softmax", a.shape(), {});
  const std::size_t c = a.shape().back();
  const std::size_t rows = a.size() / c;
  auto av = a.values();
  for (double x : av) {
    if (!std::isfinite(x)) throw NonFiniteError("softmax: non-finite input");
  }
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = av.data() + r * c;
    double* o = out.data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  const std::size_t na = node_of(a);
  auto probs = std::make_shared<const std::vector<double>>(out);
  return emit("softmax", a.tape(), a.shape(), std::move(out),
              [na, probs, rows, c](std::span<const double> g, GradSink& sink) {
                auto ga = sink.at(na);
                const auto& p = *probs;
                for (std::size_t r = 0; r < rows; ++r) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * p[r * c + j];
                  for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += p[r * c + j] * (g[r * c + j] - dot);
                }
              });
}

Tensor log(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(av[i], kLogClamp));
  const std::size_t na = node_of(a);
  Tensor ac = a.detached();
  return emit("log", a.tape(), a.shape(), std::move(out), [na, ac](std::span<const double> g, GradSink& sink) {
    auto ga = sink.at(na);
    auto av = ac.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] >= kLogClamp) ga[i] += g[i] / av[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  const std::size_t na = node_of(a);
  return emit("sum", a.tape(), {}, {s}, [na](std::span<const double> g, GradSink& sink) {
    auto ga = sink.at(na);
    for (double& x : ga) x += g[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean (empty)", a.shape(), {});
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor mean_rows(const Tensor& a) {
  if (a.rank() != 2 || a.shape()[0] == 0) throw ShapeError("mean_rows", a.shape(), {});
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  auto av = a.values();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
  const double inv = 1.0 / static_cast<double>(r);
  for (double& x : out) x *= inv;
  const std::size_t na = node_of(a);
  return emit("mean_rows", a.tape(), {c}, std::move(out), [na, r, c, inv](std::span<const double> g, GradSink& sink) {
    auto ga = sink.at(na);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += inv * g[j];
  });
}

Tensor outer(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) throw ShapeError("outer", a.shape(), b.shape());
  const std::size_t m = a.size(), n = b.size();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i] * bv[j];
  const std::size_t na = node_of(a), nb = node_of(b);
  Tensor ac = a.detached(), bc = b.detached();
  return emit("outer", common_tape("outer", a, &b), {m, n}, std::move(out),
              [na, nb, ac, bc, m, n](std::span<const double> g, GradSink& sink) {
                auto av = ac.values();
                auto bv = bc.values();
                if (na != kNoNode) {
                  auto ga = sink.at(na);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) ga[i] += g[i * n + j] * bv[j];
                }
                if (nb != kNoNode) {
                  auto gb = sink.at(nb);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j] * av[i];
                }
              });
}

Tensor broadcast_rows(const Tensor& a, std::size_t rows) {
  if (a.rank() != 1) throw ShapeError("broadcast_rows", a.shape(), {rows});
  const std::size_t c = a.size();
  std::vector<double> out;
  out.reserve(rows * c);
  for (std::size_t i = 0; i < rows; ++i) out.insert(out.end(), a.values().begin(), a.values().end());
  const std::size_t na = node_of(a);
  return emit("broadcast_rows", a.tape(), {rows, c}, std::move(out),
              [na, rows, c](std::span<const double> g, GradSink& sink) {
                auto ga = sink.at(na);
                for (std::size_t i = 0; i < rows; ++i)
                  for (std::size_t j = 0; j < c; ++j) ga[j] += g[i * c + j];
              });
}

}  // namespace divdis::ad
