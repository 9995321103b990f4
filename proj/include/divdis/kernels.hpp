#pragma once

// Dense numeric kernels used on the hot paths. Each kernel exists twice:
// an OpenMP version used by the library, and a plain serial reference in
// `kernels::serial` kept for tests and benchmarks. Both accumulate every
// output element in the same order, so their results are bit-identical.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace divdis::kernels {

enum class Trans { No, Yes };

struct GemmDims {
  std::size_t m;  // rows of op(A) and C
  std::size_t n;  // cols of op(B) and C
  std::size_t k;  // shared extent
  Trans trans_a = Trans::No;
  Trans trans_b = Trans::No;
};

// C = op(A) * op(B), all row-major. C is overwritten.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims);

// Per-row sum over ordered head pairs (i != j) of the L1 distance between
// probability rows. `heads[h]` is a batch x classes row-major matrix.
std::vector<double> pairwise_l1_scores(std::span<const std::span<const double>> heads,
                                       std::size_t batch, std::size_t classes);

// Monte-Carlo head selection: each trial draws `samples` labels, head h is
// correct on each independently with probability 1 - risks[h]. A trial
// fails unless head 0 attains strictly the highest empirical accuracy.
// Trial t draws from its own stream derived from (seed, t).
std::uint64_t count_selection_failures(std::span<const double> risks, std::size_t samples,
                                       std::size_t trials, std::uint64_t seed);

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmDims dims);

std::vector<double> pairwise_l1_scores(std::span<const std::span<const double>> heads,
                                       std::size_t batch, std::size_t classes);

std::uint64_t count_selection_failures(std::span<const double> risks, std::size_t samples,
                                       std::size_t trials, std::uint64_t seed);

}  // namespace serial

}  // namespace divdis::kernels
