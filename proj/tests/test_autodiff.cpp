#include <cmath>
#include <cstring>

#include "doctest.h"

#include "divdis/autodiff.hpp"
#include "divdis/error.hpp"
#include "support.hpp"

using namespace divdis;
using divdis::ad::Tensor;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// sum(op(inputs) * weights) so every output entry reaches the loss with a
// distinct coefficient.
using Op = std::function<Tensor(const std::vector<Tensor>&)>;

double worst_fd_error(const std::vector<Tensor>& inputs, const Op& op, Rng& rng) {
  const Tensor probe = op(inputs);
  const Tensor weights = testing::random_tensor(rng, probe.shape());
  auto loss_of = [&](const std::vector<Tensor>& in) { return ad::sum(ad::mul(op(in), weights)); };

  ad::Tape tape;
  std::vector<Tensor> watched;
  for (const auto& t : inputs) watched.push_back(tape.watch(t));
  const auto grads = tape.backward(loss_of(watched));
  const auto numeric = testing::central_differences(inputs, [&](const std::vector<Tensor>& in) { return loss_of(in).item(); });

  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor g = grads.of(watched[t]);
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, testing::relative_error(g[i], numeric[t][i]));
  }
  return worst;
}

// Values kept away from relu's kink and log's clamp so central differences stay valid.
Tensor away_from_zero(Rng& rng, ad::Shape shape) {
  Tensor t = testing::random_tensor(rng, std::move(shape));
  std::vector<double> v = vals(t);
  for (auto& x : v) x = (x < 0 ? -1.0 : 1.0) * (0.1 + std::abs(x));
  return Tensor(t.shape(), std::move(v));
}

Tensor positive(Rng& rng, ad::Shape shape) {
  Tensor t = testing::random_tensor(rng, std::move(shape));
  std::vector<double> v = vals(t);
  for (auto& x : v) x = 0.1 + std::abs(x);
  return Tensor(t.shape(), std::move(v));
}

}  // namespace

TEST_CASE("forward values match the definitions") {
  CHECK(vals(ad::relu(Tensor::vector({-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  const Tensor s = ad::softmax(Tensor::matrix(1, 2, {0, 0}));
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  const Tensor m = ad::matmul(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::matrix(2, 2, {3, 4, 5, 6}));
  CHECK(vals(m) == std::vector<double>{3, 4, 5, 6});
  CHECK(ad::log(Tensor::vector({0.0}))[0] == doctest::Approx(std::log(ad::kLogClamp)));
  CHECK(vals(ad::outer(Tensor::vector({1, 2}), Tensor::vector({3, 4, 5}))) == std::vector<double>{3, 4, 5, 6, 8, 10});
  CHECK(vals(ad::mean_rows(Tensor::matrix(2, 2, {1, 2, 3, 6}))) == std::vector<double>{2, 4});
  CHECK(vals(ad::broadcast_rows(Tensor::vector({1, 2}), 2)) == std::vector<double>{1, 2, 1, 2});
  CHECK(vals(ad::add(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::vector({10, 20}))) == std::vector<double>{11, 22, 13, 24});
  CHECK(vals(ad::transpose(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}))) == std::vector<double>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("softmax is stable for large logits") {
  const Tensor s = ad::softmax(Tensor::matrix(1, 3, {1000.0, 1000.0, -1000.0}));
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  CHECK(s[2] == 0.0);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  try {
    ad::matmul(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)), Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.op() == "matmul");
    CHECK(e.lhs() == ad::Shape{2, 3});
    CHECK(e.rhs() == ad::Shape{2, 3});
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), Error);
}

TEST_CASE("forward ops refuse to produce non-finite values") {
  CHECK_THROWS_AS(ad::scale(Tensor::vector({1e300}), 1e300), NonFiniteError);
  CHECK_THROWS_AS(ad::mul(Tensor::vector({1e200}), Tensor::vector({1e200})), NonFiniteError);
}

TEST_CASE("backward on hand-checked losses") {
  SUBCASE("sum of squares") {
    ad::Tape tape;
    const Tensor w = tape.watch(Tensor::vector({1, 2}));
    const auto g = tape.backward(ad::sum(ad::mul(w, w)));
    CHECK(vals(g.of(w)) == std::vector<double>{2, 4});
  }
  SUBCASE("mean of relu") {
    ad::Tape tape;
    const Tensor w = tape.watch(Tensor::vector({-1, 3}));
    const auto g = tape.backward(ad::mean(ad::relu(w)));
    CHECK(vals(g.of(w)) == std::vector<double>{0, 0.5});
  }
  SUBCASE("clamped log has zero gradient") {
    ad::Tape tape;
    const Tensor w = tape.watch(Tensor::vector({0.0, 0.5}));
    const auto g = tape.backward(ad::sum(ad::log(w)));
    CHECK(g.of(w)[0] == 0.0);
    CHECK(g.of(w)[1] == doctest::Approx(2.0));
  }
}

TEST_CASE("backward preconditions") {
  ad::Tape tape;
  const Tensor w = tape.watch(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(ad::scale(w, 2.0)), Error);

  ad::Tape other;
  const Tensor v = other.watch(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(ad::sum(v)), Error);
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), Error);
}

TEST_CASE("unreachable parameters get zero gradient") {
  ad::Tape tape;
  const Tensor a = tape.watch(Tensor::vector({1, 2}));
  const Tensor b = tape.watch(Tensor::vector({3, 4, 5}));
  const auto g = tape.backward(ad::sum(a));
  CHECK(vals(g.of(b)) == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward visits every reached node once, outputs before inputs") {
  ad::Tape tape;
  const Tensor w = tape.watch(Tensor::matrix(2, 2, {1, -2, 3, 4}));
  const Tensor h = ad::relu(ad::matmul(w, w));
  const Tensor loss = ad::sum(ad::mul(h, ad::softmax(h)));
  const auto g = tape.backward(loss);
  const auto& order = g.visit_order();
  REQUIRE(!order.empty());
  CHECK(order.front() == loss.node());
  for (std::size_t i = 1; i < order.size(); ++i) CHECK(order[i] < order[i - 1]);
}

TEST_CASE("randomized finite-difference checks per op") {
  Rng rng(7);
  struct Case {
    const char* name;
    std::function<std::vector<Tensor>(Rng&)> inputs;
    Op op;
  };
  const std::vector<Case> cases = {
      {"add", [](Rng& r) { return std::vector{testing::random_tensor(r, {3, 4}), testing::random_tensor(r, {3, 4})}; },
       [](const auto& in) { return ad::add(in[0], in[1]); }},
      {"add row broadcast", [](Rng& r) { return std::vector{testing::random_tensor(r, {3, 4}), testing::random_tensor(r, {4})}; },
       [](const auto& in) { return ad::add(in[0], in[1]); }},
      {"sub scalar", [](Rng& r) { return std::vector{testing::random_tensor(r, {3, 2}), testing::random_tensor(r, {})}; },
       [](const auto& in) { return ad::sub(in[0], in[1]); }},
      {"mul", [](Rng& r) { return std::vector{testing::random_tensor(r, {2, 5}), testing::random_tensor(r, {2, 5})}; },
       [](const auto& in) { return ad::mul(in[0], in[1]); }},
      {"scale", [](Rng& r) { return std::vector{testing::random_tensor(r, {4})}; },
       [](const auto& in) { return ad::scale(in[0], -1.7); }},
      {"matmul", [](Rng& r) { return std::vector{testing::random_tensor(r, {3, 4}), testing::random_tensor(r, {4, 2})}; },
       [](const auto& in) { return ad::matmul(in[0], in[1]); }},
      {"transpose", [](Rng& r) { return std::vector{testing::random_tensor(r, {3, 4})}; },
       [](const auto& in) { return ad::transpose(in[0]); }},
      {"relu", [](Rng& r) { return std::vector{away_from_zero(r, {3, 3})}; },
       [](const auto& in) { return ad::relu(in[0]); }},
      {"softmax", [](Rng& r) { return std::vector{testing::random_tensor(r, {4, 3})}; },
       [](const auto& in) { return ad::softmax(in[0]); }},
      {"log", [](Rng& r) { return std::vector{positive(r, {5})}; }, [](const auto& in) { return ad::log(in[0]); }},
      {"sum", [](Rng& r) { return std::vector{testing::random_tensor(r, {2, 3})}; },
       [](const auto& in) { return ad::sum(in[0]); }},
      {"mean", [](Rng& r) { return std::vector{testing::random_tensor(r, {2, 3})}; },
       [](const auto& in) { return ad::mean(in[0]); }},
      {"mean_rows", [](Rng& r) { return std::vector{testing::random_tensor(r, {5, 3})}; },
       [](const auto& in) { return ad::mean_rows(in[0]); }},
      {"outer", [](Rng& r) { return std::vector{testing::random_tensor(r, {3}), testing::random_tensor(r, {4})}; },
       [](const auto& in) { return ad::outer(in[0], in[1]); }},
      {"broadcast_rows", [](Rng& r) { return std::vector{testing::random_tensor(r, {3})}; },
       [](const auto& in) { return ad::broadcast_rows(in[0], 4); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, worst_fd_error(c.inputs(rng), c.op, rng));
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w0 = testing::random_tensor(rng, {3, 3});
    const double a = rng.normal(), b = rng.normal();
    auto l1 = [](const Tensor& w) { return ad::sum(ad::softmax(ad::matmul(w, w))); };
    auto l2 = [](const Tensor& w) { return ad::mean(ad::mul(w, ad::relu(w))); };

    ad::Tape t1, t2, t3;
    const Tensor w1 = t1.watch(w0), w2 = t2.watch(w0), w3 = t3.watch(w0);
    const auto g1 = t1.backward(l1(w1)).of(w1);
    const auto g2 = t2.backward(l2(w2)).of(w2);
    const auto g3 = t3.backward(ad::add(ad::scale(l1(w3), a), ad::scale(l2(w3), b))).of(w3);
    for (std::size_t i = 0; i < g3.size(); ++i) CHECK(std::abs(g3[i] - (a * g1[i] + b * g2[i])) <= 1e-10);
  }
}

TEST_CASE("seeded forward and backward are bit-identical across runs") {
  auto run = [] {
    Rng rng(3);
    const Tensor x = testing::random_tensor(rng, {8, 4});
    const Tensor w = testing::random_tensor(rng, {4, 3});
    ad::Tape tape;
    const Tensor ww = tape.watch(w);
    const Tensor loss = ad::sum(ad::log(ad::softmax(ad::matmul(x, ww))));
    return vals(tape.backward(loss).of(ww));
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("detached tensors keep values and drop the tape") {
  ad::Tape tape;
  const Tensor w = tape.watch(Tensor::vector({1, 2}));
  CHECK(w.requires_grad());
  const Tensor d = w.detached();
  CHECK_FALSE(d.requires_grad());
  CHECK(vals(d) == vals(w));
  const auto g = tape.backward(ad::sum(ad::mul(w, ad::add(w.detached(), Tensor::scalar(0.0)))));
  CHECK(vals(g.of(w)) == std::vector<double>{1, 2});
}
