#include "divdis/model.hpp"

#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>

#include "divdis/error.hpp"
#include "divdis/format.hpp"
#include "divdis/rng.hpp"

namespace divdis {

namespace {

constexpr const char* kCheckpointTag = "divdis-checkpoint";
constexpr int kCheckpointVersion = 1;

Affine init_affine(Rng& rng, std::size_t in, std::size_t out, double weight_scale) {
  if (in == 0 || out == 0) throw Error("init: zero-width layer");
  const double stddev = weight_scale * std::sqrt(2.0 / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& x : w) x = stddev * rng.normal();
  return Affine{Matrix::matrix(in, out, std::move(w)), ad::Tensor::zeros({out})};
}

ad::Tensor affine(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
  return ad::add(ad::matmul(x, w), b);
}

}  // namespace

MultiHeadClassifier MultiHeadClassifier::init(std::size_t input_dim, std::span<const std::size_t> hidden,
                                              std::size_t heads, std::size_t classes, const InitSpec& spec) {
  if (heads < 1) throw Error("init: need at least one head");
  if (classes < 2) throw Error("init: need at least two classes");
  if (input_dim == 0) throw Error("init: zero-width layer (input)");
  if (!spec.head_seeds.empty() && spec.head_seeds.size() != heads) {
    throw Error("init: head_seeds must list one seed per head");
  }
  std::vector<Affine> backbone;
  Rng body_rng(derive_seed(spec.seed, "backbone"));
  std::size_t width = input_dim;
  for (std::size_t h : hidden) {
    backbone.push_back(init_affine(body_rng, width, h, spec.weight_scale));
    width = h;
  }
  std::vector<Affine> out;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::uint64_t seed =
        spec.head_seeds.empty() ? derive_seed(derive_seed(spec.seed, "head"), h) : spec.head_seeds[h];
    Rng rng(seed);
    out.push_back(init_affine(rng, width, classes, spec.weight_scale));
  }
  return MultiHeadClassifier(std::move(backbone), std::move(out));
}

MultiHeadClassifier::MultiHeadClassifier(std::vector<Affine> backbone, std::vector<Affine> heads)
    : backbone_(std::move(backbone)), heads_(std::move(heads)) {
  if (heads_.empty()) throw Error("MultiHeadClassifier: no heads");
  auto check = [](const Affine& a) {
    if (a.weight.rank() != 2 || a.bias.rank() != 1 || a.bias.size() != a.weight.shape()[1]) {
      throw ShapeError("MultiHeadClassifier (affine)", a.weight.shape(), a.bias.shape());
    }
  };
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    check(backbone_[i]);
    if (i > 0 && backbone_[i].in() != backbone_[i - 1].out()) {
      throw ShapeError("MultiHeadClassifier (backbone chain)", backbone_[i - 1].weight.shape(),
                       backbone_[i].weight.shape());
    }
  }
  for (const auto& h : heads_) {
    check(h);
    if (h.in() != heads_[0].in() || h.out() != heads_[0].out()) {
      throw ShapeError("MultiHeadClassifier (heads)", heads_[0].weight.shape(), h.weight.shape());
    }
  }
  if (!backbone_.empty() && heads_[0].in() != backbone_.back().out()) {
    throw ShapeError("MultiHeadClassifier (head input)", backbone_.back().weight.shape(), heads_[0].weight.shape());
  }
  if (heads_[0].out() < 2) throw Error("MultiHeadClassifier: need at least two classes");
}

std::size_t MultiHeadClassifier::input_dim() const {
  return backbone_.empty() ? heads_[0].in() : backbone_[0].in();
}

std::size_t MultiHeadClassifier::feature_dim() const { return heads_[0].in(); }

std::size_t MultiHeadClassifier::num_classes() const { return heads_[0].out(); }

std::vector<ad::Tensor> MultiHeadClassifier::parameters() const {
  std::vector<ad::Tensor> p;
  for (const auto& l : backbone_) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  for (const auto& h : heads_) {
    p.push_back(h.weight);
    p.push_back(h.bias);
  }
  return p;
}

std::vector<std::string> MultiHeadClassifier::parameter_keys() const {
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    keys.push_back("backbone." + std::to_string(i) + ".weight");
    keys.push_back("backbone." + std::to_string(i) + ".bias");
  }
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    keys.push_back("head." + std::to_string(i) + ".weight");
    keys.push_back("head." + std::to_string(i) + ".bias");
  }
  return keys;
}

void MultiHeadClassifier::set_parameters(std::span<const ad::Tensor> values) {
  const std::size_t expected = 2 * (backbone_.size() + heads_.size());
  if (values.size() != expected) throw Error("set_parameters: wrong parameter count");
  std::size_t k = 0;
  auto assign = [&](ad::Tensor& dst) {
    if (dst.shape() != values[k].shape()) throw ShapeError("set_parameters", dst.shape(), values[k].shape());
    dst = values[k++].detached();
  };
  for (auto& l : backbone_) {
    assign(l.weight);
    assign(l.bias);
  }
  for (auto& h : heads_) {
    assign(h.weight);
    assign(h.bias);
  }
}

std::vector<ad::Tensor> MultiHeadClassifier::forward(const ad::Tensor& x, std::span<const ad::Tensor> params) const {
  if (x.rank() != 2 || x.shape()[1] != input_dim()) {
    throw ShapeError("forward", x.shape(), {x.rank() == 2 ? x.shape()[0] : 0, input_dim()});
  }
  if (params.size() != 2 * (backbone_.size() + heads_.size())) throw Error("forward: wrong parameter count");
  ad::Tensor h = x;
  std::size_t k = 0;
  for (std::size_t i = 0; i < backbone_.size(); ++i, k += 2) h = ad::relu(affine(h, params[k], params[k + 1]));
  std::vector<ad::Tensor> out;
  out.reserve(heads_.size());
  for (std::size_t i = 0; i < heads_.size(); ++i, k += 2) {
    out.push_back(ad::softmax(affine(h, params[k], params[k + 1])));
  }
  return out;
}

std::vector<ad::Tensor> MultiHeadClassifier::forward(const ad::Tensor& x) const { return forward(x, parameters()); }

std::vector<Matrix> MultiHeadClassifier::predict(const Matrix& x) const { return forward(x.detached()); }

std::vector<std::vector<int>> MultiHeadClassifier::predict_labels(const Matrix& x) const {
  std::vector<std::vector<int>> out;
  for (const auto& p : predict(x)) out.push_back(argmax_rows(p));
  return out;
}

double MultiHeadClassifier::boundary_angle(std::size_t head) const {
  if (!backbone_.empty() || input_dim() != 2 || num_classes() != 2) {
    throw Error("boundary_angle: requires a linear binary head on 2D input");
  }
  const auto& w = heads_.at(head).weight;
  return divdis::boundary_angle(w.at(0, 1) - w.at(0, 0), w.at(1, 1) - w.at(1, 0));
}

double boundary_angle(double w1, double w2) {
  if (w1 == 0.0 && w2 == 0.0) throw Error("boundary_angle: no boundary (zero weight difference)");
  // Direction of the line is (w2, -w1).
  double deg = std::atan2(-w1, w2) * 180.0 / std::numbers::pi;
  deg = std::fmod(deg, 180.0);
  if (deg < 0.0) deg += 180.0;
  if (deg >= 180.0) deg -= 180.0;
  return deg;
}

std::vector<int> argmax_rows(const Matrix& probs) {
  const std::size_t r = probs.rows(), c = probs.cols();
  std::vector<int> out(r);
  auto v = probs.values();
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (v[i * c + j] > v[i * c + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

// Checkpoint layout (text):
//   divdis-checkpoint 1
//   <tensor count>
//   <key> <rank> <extent>... then the row-major values on one line
void MultiHeadClassifier::save(std::ostream& os) const {
  const auto keys = parameter_keys();
  const auto params = parameters();
  os << kCheckpointTag << ' ' << kCheckpointVersion << '\n' << keys.size() << '\n';
  for (std::size_t i = 0; i < keys.size(); ++i) {
    os << keys[i] << ' ' << params[i].rank();
    for (std::size_t e : params[i].shape()) os << ' ' << e;
    os << '\n';
    for (std::size_t j = 0; j < params[i].size(); ++j) os << (j ? " " : "") << Num{params[i][j]};
    os << '\n';
  }
}

MultiHeadClassifier MultiHeadClassifier::load(std::istream& is) {
  std::string tag;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> tag >> version) || tag != kCheckpointTag) throw Error("checkpoint: missing format tag");
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  if (!(is >> count)) throw Error("checkpoint: missing tensor count");

  std::map<std::string, ad::Tensor> tensors;
  for (std::size_t i = 0; i < count; ++i) {
    std::string key;
    std::size_t rank = 0;
    if (!(is >> key >> rank)) throw Error("checkpoint: truncated header");
    ad::Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      if (!(is >> e)) throw Error("checkpoint: truncated shape for " + key);
      n *= e;
    }
    std::vector<double> v(n);
    for (auto& x : v) {
      if (!(is >> x)) throw Error("checkpoint: truncated values for " + key);
    }
    tensors.emplace(key, ad::Tensor(std::move(shape), std::move(v)));
  }

  auto take = [&](const std::string& key) {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw Error("checkpoint: missing tensor " + key);
    ad::Tensor t = it->second;
    tensors.erase(it);
    return t;
  };
  std::vector<Affine> backbone, heads;
  for (std::size_t i = 0; tensors.count("backbone." + std::to_string(i) + ".weight"); ++i) {
    const std::string p = "backbone." + std::to_string(i);
    backbone.push_back(Affine{take(p + ".weight"), take(p + ".bias")});
  }
  for (std::size_t i = 0; tensors.count("head." + std::to_string(i) + ".weight"); ++i) {
    const std::string p = "head." + std::to_string(i);
    heads.push_back(Affine{take(p + ".weight"), take(p + ".bias")});
  }
  if (!tensors.empty()) throw Error("checkpoint: unexpected tensor " + tensors.begin()->first);
  return MultiHeadClassifier(std::move(backbone), std::move(heads));
}

}  // namespace divdis
