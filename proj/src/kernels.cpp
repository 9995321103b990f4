#include "divdis/kernels.hpp"

#include <cmath>

#include "divdis/error.hpp"
#include "divdis/rng.hpp"

namespace divdis::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelGemmWork = 1 << 16;
constexpr std::size_t kParallelRows = 512;

void check_gemm(std::span<const double> a, std::span<const double> b, std::span<double> c,
                const GemmDims& d) {
  if (a.size() != d.m * d.k || b.size() != d.k * d.n || c.size() != d.m * d.n) {
    throw Error("gemm: buffer sizes do not match dimensions");
  }
}

inline double a_at(std::span<const double> a, const GemmDims& d, std::size_t i, std::size_t p) {
  return d.trans_a == Trans::No ? a[i * d.k + p] : a[p * d.m + i];
}

inline double b_at(std::span<const double> b, const GemmDims& d, std::size_t p, std::size_t j) {
  return d.trans_b == Trans::No ? b[p * d.n + j] : b[j * d.k + p];
}

inline void gemm_row(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     const GemmDims& d, std::size_t i) {
  double* row = c.data() + i * d.n;
  for (std::size_t j = 0; j < d.n; ++j) row[j] = 0.0;
  // i-p-j order keeps B row access contiguous; each c(i, j) still sums p ascending.
  for (std::size_t p = 0; p < d.k; ++p) {
    const double aip = a_at(a, d, i, p);
    if (d.trans_b == Trans::No) {
      const double* brow = b.data() + p * d.n;
      for (std::size_t j = 0; j < d.n; ++j) row[j] += aip * brow[j];
    } else {
      for (std::size_t j = 0; j < d.n; ++j) row[j] += aip * b[j * d.k + p];
    }
  }
}

inline double row_score(std::span<const std::span<const double>> heads, std::size_t classes,
                        std::size_t r) {
  double s = 0.0;
  const std::size_t n = heads.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double* pi = heads[i].data() + r * classes;
      const double* pj = heads[j].data() + r * classes;
      for (std::size_t c = 0; c < classes; ++c) s += std::abs(pi[c] - pj[c]);
    }
  }
  return s;
}

void check_heads(std::span<const std::span<const double>> heads, std::size_t batch,
                 std::size_t classes) {
  for (const auto& h : heads) {
    if (h.size() != batch * classes) throw Error("pairwise_l1_scores: head buffer size mismatch");
  }
}

bool trial_fails(std::span<const double> risks, std::size_t samples, std::uint64_t seed,
                 std::uint64_t trial, std::vector<std::size_t>& correct) {
  Rng rng(derive_seed(seed, trial));
  std::fill(correct.begin(), correct.end(), 0);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t h = 0; h < risks.size(); ++h) {
      if (rng.uniform() >= risks[h]) ++correct[h];
    }
  }
  for (std::size_t h = 1; h < risks.size(); ++h) {
    if (correct[h] >= correct[0]) return true;
  }
  return false;
}

}  // namespace

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d) {
  check_gemm(a, b, c, d);
  for (std::size_t i = 0; i < d.m; ++i) {
    for (std::size_t j = 0; j < d.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d.k; ++p) acc += a_at(a, d, i, p) * b_at(b, d, p, j);
      c[i * d.n + j] = acc;
    }
  }
}

std::vector<double> pairwise_l1_scores(std::span<const std::span<const double>> heads,
                                       std::size_t batch, std::size_t classes) {
  check_heads(heads, batch, classes);
  std::vector<double> out(batch);
  for (std::size_t r = 0; r < batch; ++r) out[r] = row_score(heads, classes, r);
  return out;
}

std::uint64_t count_selection_failures(std::span<const double> risks, std::size_t samples,
                                       std::size_t trials, std::uint64_t seed) {
  std::vector<std::size_t> correct(risks.size());
  std::uint64_t failures = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    if (trial_fails(risks, samples, seed, t, correct)) ++failures;
  }
  return failures;
}

}  // namespace serial

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims d) {
  check_gemm(a, b, c, d);
  const bool parallel = d.m * d.n * d.k >= kParallelGemmWork;
  const auto rows = static_cast<std::ptrdiff_t>(d.m);
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_row(a, b, c, d, static_cast<std::size_t>(i));
}

std::vector<double> pairwise_l1_scores(std::span<const std::span<const double>> heads,
                                       std::size_t batch, std::size_t classes) {
  check_heads(heads, batch, classes);
  std::vector<double> out(batch);
  const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) if (batch >= kParallelRows)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    out[static_cast<std::size_t>(r)] = row_score(heads, classes, static_cast<std::size_t>(r));
  }
  return out;
}

std::uint64_t count_selection_failures(std::span<const double> risks, std::size_t samples,
                                       std::size_t trials, std::uint64_t seed) {
  std::uint64_t failures = 0;
  const auto n = static_cast<std::ptrdiff_t>(trials);
#pragma omp parallel reduction(+ : failures)
  {
    std::vector<std::size_t> correct(risks.size());
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      if (trial_fails(risks, samples, seed, static_cast<std::uint64_t>(t), correct)) ++failures;
    }
  }
  return failures;
}

}  // namespace divdis::kernels
