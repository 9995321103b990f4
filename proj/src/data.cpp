#include "divdis/data.hpp"

#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "divdis/error.hpp"
#include "divdis/format.hpp"
#include "divdis/rng.hpp"

namespace divdis {

namespace {

struct Box {
  double lo[3];
  double hi[3];
};

struct RowSink {
  std::size_t dims;
  std::vector<double> x;
  std::vector<int> y;
  std::vector<int> groups;

  void push(std::span<const double> row, int label, int group) {
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(label);
    groups.push_back(group);
  }

  LabeledSet labeled() && {
    const std::size_t n = y.size();
    return LabeledSet{Matrix::matrix(n, dims, std::move(x)), std::move(y), std::move(groups)};
  }
};

// Class of row i in a balanced split: even rows class 0, odd rows class 1.
// With an odd count class 0 gets the extra row.
int balanced_label(std::size_t i) { return static_cast<int>(i % 2); }

void require_counts(const SplitSizes& s) {
  if (s.source < 1 || s.target < 1 || s.eval < 1) throw Error("generator: split sizes must be >= 1");
}

RowSink sample_boxes(Rng& rng, std::size_t n, std::size_t dims, const Box& class0, const Box& class1) {
  RowSink sink{dims, {}, {}, {}};
  std::vector<double> row(dims);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = balanced_label(i);
    const Box& b = label == 0 ? class0 : class1;
    for (std::size_t d = 0; d < dims; ++d) row[d] = rng.uniform(b.lo[d], b.hi[d]);
    int group = quadrant(row[0], row[1]);
    if (dims == 3) group = (row[0] < 0.0 ? 1 : 0) | (row[1] < 0.0 ? 2 : 0) | (row[2] < 0.0 ? 4 : 0);
    sink.push(row, label, group);
  }
  return sink;
}

TaskBundle quadrants(const SplitSizes& sizes, std::uint64_t seed, std::size_t dims) {
  require_counts(sizes);
  const Box src0{{-1, 0, 0}, {0, 1, 1}};
  const Box src1{{0, -1, -1}, {1, 0, 0}};
  const Box tgt0{{-1, -1, -1}, {0, 1, 1}};
  const Box tgt1{{0, -1, -1}, {1, 1, 1}};

  Rng source_rng(derive_seed(seed, "source"));
  Rng target_rng(derive_seed(seed, "target"));
  Rng eval_rng(derive_seed(seed, "target_eval"));
  Rng source_eval_rng(derive_seed(seed, "source_eval"));

  TaskBundle b;
  b.source = sample_boxes(source_rng, sizes.source, dims, src0, src1).labeled();
  LabeledSet target = sample_boxes(target_rng, sizes.target, dims, tgt0, tgt1).labeled();
  b.target_unlabeled = UnlabeledSet(target.x, target.y);
  b.target_eval = sample_boxes(eval_rng, sizes.eval, dims, tgt0, tgt1).labeled();
  b.source_eval = sample_boxes(source_eval_rng, sizes.eval, dims, src0, src1).labeled();
  b.classes = 2;
  b.descriptor = TaskDescriptor{dims == 2 ? "quadrants2d" : "quadrants3d",
                                {{"n_source", static_cast<double>(sizes.source)},
                                 {"n_target", static_cast<double>(sizes.target)},
                                 {"n_eval", static_cast<double>(sizes.eval)}},
                                seed};
  return b;
}

LabeledSet add_x1_noise(const LabeledSet& set, double sigma, Rng& rng) {
  std::vector<double> x(set.x.values().begin(), set.x.values().end());
  const std::size_t d = set.dims();
  for (std::size_t i = 0; i < set.size(); ++i) x[i * d] += sigma * rng.normal();
  return LabeledSet{Matrix::matrix(set.size(), d, std::move(x)), set.y, set.groups};
}

// One correlated-pair row. When `coupled`, both clusters follow the label;
// otherwise each cluster is a fair coin and the label is the complex cluster.
void correlated_row(Rng& rng, const CorrelatedPairParams& p, bool coupled, int coupled_label, RowSink& sink) {
  int simple_c, complex_c, label;
  if (coupled) {
    simple_c = complex_c = label = coupled_label;
  } else {
    simple_c = rng.bernoulli(0.5) ? 1 : 0;
    complex_c = rng.bernoulli(0.5) ? 1 : 0;
    label = complex_c;
  }
  const double s_center = (simple_c == 1 ? 0.5 : -0.5) * p.margin_simple;
  const double c_center = (complex_c == 1 ? 0.5 : -0.5) * p.margin_complex;
  const double row[4] = {s_center + rng.normal(), rng.normal(), c_center + rng.normal(), rng.normal()};
  sink.push(row, label, 2 * simple_c + complex_c);
}

RowSink correlated_split(Rng& rng, std::size_t n, const CorrelatedPairParams& p, double mix_ratio) {
  RowSink sink{4, {}, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const bool decorrelated = rng.uniform() < mix_ratio;
    correlated_row(rng, p, !decorrelated, balanced_label(i), sink);
  }
  return sink;
}

}  // namespace

void LabeledSet::validate(std::size_t classes) const {
  if (x.rank() != 2 || x.rows() != y.size() || groups.size() != y.size()) {
    throw Error("LabeledSet: row counts differ between features, labels and groups");
  }
  for (int label : y) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) throw Error("LabeledSet: label out of range");
  }
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> rows) const {
  const std::size_t d = dims();
  std::vector<double> xs;
  xs.reserve(rows.size() * d);
  std::vector<int> ys, gs;
  ys.reserve(rows.size());
  gs.reserve(rows.size());
  auto v = x.values();
  for (std::size_t r : rows) {
    if (r >= size()) throw Error("LabeledSet::subset: row index out of range");
    xs.insert(xs.end(), v.begin() + static_cast<std::ptrdiff_t>(r * d), v.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
    ys.push_back(y[r]);
    gs.push_back(groups[r]);
  }
  return LabeledSet{Matrix::matrix(rows.size(), d, std::move(xs)), std::move(ys), std::move(gs)};
}

UnlabeledSet::UnlabeledSet(Matrix x, std::vector<int> hidden_y) : x_(x.detached()), hidden_y_(std::move(hidden_y)) {
  if (x_.rank() != 2 || x_.rows() != hidden_y_.size()) throw Error("UnlabeledSet: row count mismatch");
}

std::vector<int> LabelOracle::query(std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= set_->hidden_y_.size()) {
      throw Error("oracle: index " + std::to_string(i) + " out of range for " +
                  std::to_string(set_->hidden_y_.size()) + " target points");
    }
    out.push_back(set_->hidden_y_[i]);
  }
  used_ += indices.size();
  return out;
}

std::string TaskDescriptor::to_string() const {
  std::string s = generator + "(";
  bool first = true;
  for (const auto& [k, v] : params) {
    s += (first ? "" : ",") + k + "=" + shortest(v);
    first = false;
  }
  return s + ";seed=" + std::to_string(seed) + ")";
}

int quadrant(double x1, double x2) {
  if (x2 >= 0.0) return x1 >= 0.0 ? 0 : 1;
  return x1 < 0.0 ? 2 : 3;
}

TaskBundle gen_quadrants2d(const SplitSizes& sizes, std::uint64_t seed) { return quadrants(sizes, seed, 2); }

TaskBundle gen_quadrants3d(const SplitSizes& sizes, std::uint64_t seed) { return quadrants(sizes, seed, 3); }

TaskBundle gen_noisy2d(const SplitSizes& sizes, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error("gen_noisy2d: sigma must be finite and >= 0");
  TaskBundle b = quadrants(sizes, seed, 2);
  if (sigma > 0.0) {
    Rng noise_rng(derive_seed(seed, "x1_noise"));
    b.source = add_x1_noise(b.source, sigma, noise_rng);
    Rng eval_noise_rng(derive_seed(seed, "x1_noise_eval"));
    b.source_eval = add_x1_noise(b.source_eval, sigma, eval_noise_rng);
  }
  b.descriptor.generator = "noisy2d";
  b.descriptor.params["sigma"] = sigma;
  return b;
}

TaskBundle gen_correlated_pair(const SplitSizes& sizes, const CorrelatedPairParams& params, std::uint64_t seed) {
  require_counts(sizes);
  if (!(params.mix_ratio >= 0.0 && params.mix_ratio <= 1.0)) {
    throw Error("gen_correlated_pair: mix_ratio must lie in [0, 1]");
  }
  if (!(params.margin_simple > 0.0) || !(params.margin_complex > 0.0)) {
    throw Error("gen_correlated_pair: margins must be positive");
  }
  Rng source_rng(derive_seed(seed, "source"));
  Rng target_rng(derive_seed(seed, "target"));
  Rng eval_rng(derive_seed(seed, "target_eval"));
  Rng source_eval_rng(derive_seed(seed, "source_eval"));

  TaskBundle b;
  b.source = correlated_split(source_rng, sizes.source, params, params.mix_ratio).labeled();
  LabeledSet target = correlated_split(target_rng, sizes.target, params, 1.0).labeled();
  b.target_unlabeled = UnlabeledSet(target.x, target.y);
  b.target_eval = correlated_split(eval_rng, sizes.eval, params, 1.0).labeled();
  b.source_eval = correlated_split(source_eval_rng, sizes.eval, params, params.mix_ratio).labeled();
  b.classes = 2;
  b.descriptor = TaskDescriptor{"correlated_pair",
                                {{"n_source", static_cast<double>(sizes.source)},
                                 {"n_target", static_cast<double>(sizes.target)},
                                 {"n_eval", static_cast<double>(sizes.eval)},
                                 {"mix_ratio", params.mix_ratio},
                                 {"margin_simple", params.margin_simple},
                                 {"margin_complex", params.margin_complex}},
                                seed};
  return b;
}

void write_labeled_csv(std::ostream& os, const LabeledSet& set) {
  const std::size_t d = set.dims();
  for (std::size_t j = 0; j < d; ++j) os << 'x' << j + 1 << ',';
  os << "y,group\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) os << Num{set.x.at(i, j)} << ',';
    os << set.y[i] << ',' << set.groups[i] << '\n';
  }
}

void write_unlabeled_csv(std::ostream& os, const UnlabeledSet& set, bool with_hidden_labels) {
  const std::size_t d = set.dims();
  std::vector<int> labels;
  if (with_hidden_labels) {
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    LabelOracle oracle(set);
    labels = oracle.query(all);
  }
  for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << 'x' << j + 1;
  if (with_hidden_labels) os << ",y";
  os << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) os << (j ? "," : "") << Num{set.x().at(i, j)};
    if (with_hidden_labels) os << ',' << labels[i];
    os << '\n';
  }
}

LabeledSet read_labeled_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("csv: missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 3 || header[header.size() - 2] != "y" || header.back() != "group") {
    throw Error("csv: header must be x1..xd,y,group");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "x" + std::to_string(j + 1)) throw Error("csv: unexpected column '" + header[j] + "'");
  }
  std::vector<double> x;
  std::vector<int> y, groups;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 2) throw Error("csv: line " + std::to_string(line_no) + " has wrong column count");
    try {
      for (std::size_t j = 0; j < d; ++j) x.push_back(std::stod(cells[j]));
      y.push_back(std::stoi(cells[d]));
      groups.push_back(std::stoi(cells[d + 1]));
    } catch (const std::logic_error&) {
      throw Error("csv: line " + std::to_string(line_no) + " is not numeric");
    }
  }
  const std::size_t n = y.size();
  return LabeledSet{Matrix::matrix(n, d, std::move(x)), std::move(y), std::move(groups)};
}

}  // namespace divdis
