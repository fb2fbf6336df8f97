#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "sepvit/finite_diff.hpp"
#include "sepvit/ops.hpp"
#include "sepvit/rng.hpp"

using namespace sepvit;
using test_helpers::gradcheck;
using test_helpers::random_tensor;

namespace {

// Naive triple-loop reference multiply.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    }
  }
  return c;
}

// Seven nested loops, padding handled by bounds checks.
std::vector<double> conv_oracle(const std::vector<double>& x, const std::vector<double>& w,
                                const std::vector<double>& bias, std::size_t b, std::size_t cin,
                                std::size_t h, std::size_t wid, std::size_t cout, std::size_t kh,
                                std::size_t kw, std::size_t stride, std::size_t pad,
                                std::size_t groups) {
  const std::size_t cig = cin / groups;
  const std::size_t cog = cout / groups;
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wid + 2 * pad - kw) / stride + 1;
  std::vector<double> out(b * cout * ho * wo, 0.0);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < cig; ++ic)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wid))
                  continue;
                const std::size_t ch = (oc / cog) * cig + ic;
                acc += x[((bi * cin + ch) * h + iy) * wid + ix] *
                       w[((oc * cig + ic) * kh + ky) * kw + kx];
              }
          out[((bi * cout + oc) * ho + oy) * wo + ox] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("rng: identical seeds give identical sequences, forks differ") {
  Rng a(123456), b(123456);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng base(99);
  Rng f1 = base.fork(1), f2 = base.fork(2);
  CHECK(f1.next_u64() != f2.next_u64());
  const double u = Rng(7).uniform();
  CHECK(u >= 0.0);
  CHECK(u < 1.0);
}

TEST_CASE("matmul: identity and dot product") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from_data({2, 2}, {3, 4, 5, 6});
  auto c = matmul(a, b);
  CHECK(c.values() == std::vector<double>{3, 4, 5, 6});

  auto row = Tensor<double>::from_data({1, 2}, {1, 2});
  auto col = Tensor<double>::from_data({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul: random case vs triple-loop oracle") {
  Rng rng(17);
  auto a = random_tensor(rng, {4, 5});
  auto b = random_tensor(rng, {5, 6});
  auto c = matmul(a, b);
  auto ref = matmul_oracle(a.values(), b.values(), 4, 5, 6);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(c.data()[i] - ref[i]) < 1e-12);
}

TEST_CASE("matmul: batched against per-slice oracle") {
  Rng rng(18);
  auto a = random_tensor(rng, {2, 3, 4, 5});
  auto b = random_tensor(rng, {2, 3, 5, 2});
  auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 4, 2});
  for (std::size_t s = 0; s < 6; ++s) {
    std::vector<double> as(a.data() + s * 20, a.data() + (s + 1) * 20);
    std::vector<double> bs(b.data() + s * 10, b.data() + (s + 1) * 10);
    auto ref = matmul_oracle(as, bs, 4, 5, 2);
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::fabs(c.data()[s * 8 + i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("matmul: associativity within tolerance") {
  Rng rng(19);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_tensor(rng, {4, 4});
    auto b = random_tensor(rng, {4, 4});
    auto c = random_tensor(rng, {4, 4});
    auto left = matmul(matmul(a, b), c);
    auto right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i)
      CHECK(std::fabs(left.data()[i] - right.data()[i]) < 1e-8);
  }
}

TEST_CASE("matmul: shape errors name both operands") {
  auto a = Tensor<double>::from_data({2, 3}, std::vector<double>(6, 1.0));
  auto b = Tensor<double>::from_data({2, 2}, std::vector<double>(4, 1.0));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[2, 2]") != std::string::npos);
  }
}

TEST_CASE("softmax: symmetry, overflow safety, scalar oracle") {
  auto flat = softmax_last(Tensor<double>::from_data({3}, {0, 0, 0}));
  for (double v : flat.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto big = softmax_last(Tensor<double>::from_data({2}, {1000, 1000}));
  CHECK(big.data()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(big.data()[1] == doctest::Approx(0.5).epsilon(1e-15));

  auto x = Tensor<double>::from_data({3}, {1, 2, 3});
  auto s = softmax_last(x);
  double denom = 0;
  for (double v : {1.0, 2.0, 3.0}) denom += std::exp(v - 3.0);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::fabs(s.data()[i] - std::exp(static_cast<double>(i + 1) - 3.0) / denom) < 1e-12);
  }
}

TEST_CASE("softmax: slices sum to one with entries in [0,1]") {
  Rng rng(23);
  for (int seed = 0; seed < 10; ++seed) {
    auto x = random_tensor(rng, {3, 4, 7}, -30.0, 30.0);
    auto s = softmax_last(x);
    for (std::size_t r = 0; r < 12; ++r) {
      double sum = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = s.data()[r * 7 + j];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
  }
  auto bad = Tensor<double>::from_data({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(softmax_last(bad), NumericError);
}

TEST_CASE("layer_norm: degenerate and oracle cases") {
  auto gamma1 = Tensor<double>::from_data({3}, {1, 1, 1});
  auto beta0 = Tensor<double>::from_data({3}, {0, 0, 0});
  auto coll = layer_norm(Tensor<double>::from_data({3}, {1, 1, 1}), gamma1, beta0);
  for (double v : coll.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));

  auto gamma2 = Tensor<double>::from_data({2}, {1, 1});
  auto beta2 = Tensor<double>::from_data({2}, {0, 0});
  auto normed = layer_norm(Tensor<double>::from_data({2}, {-1, 1}), gamma2, beta2, 1e-12);
  CHECK(std::fabs(normed.data()[0] + 1.0) < 1e-9);
  CHECK(std::fabs(normed.data()[1] - 1.0) < 1e-9);

  // x = [1,2,3], gamma = 2, beta = 1: direct mean/variance evaluation.
  auto x = Tensor<double>::from_data({3}, {1, 2, 3});
  auto g = Tensor<double>::from_data({3}, {2, 2, 2});
  auto b = Tensor<double>::from_data({3}, {1, 1, 1});
  auto y = layer_norm(x, g, b, 1e-5);
  const double inv = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  const double expect[3] = {2 * (-1.0 * inv) + 1, 1.0, 2 * (1.0 * inv) + 1};
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(y.data()[i] - expect[i]) < 1e-9);

  CHECK_THROWS_AS(layer_norm(x, g, b, 0.0), ParamError);
  CHECK_THROWS_AS(layer_norm(x, g, b, -1.0), ParamError);
}

TEST_CASE("gelu: zero, saturation, series oracle") {
  CHECK(gelu(Tensor<double>::scalar(0)).item() == 0.0);
  CHECK(std::fabs(gelu(Tensor<double>::scalar(10)).item() - 10.0) < 1e-6);

  Rng rng(31);
  std::vector<double> xs = {1.0, -1.0, 0.5, -2.5, 3.0};
  for (int i = 0; i < 5; ++i) xs.push_back(rng.uniform(-3, 3));
  for (double v : xs) {
    const double expect = v * 0.5 * (1.0 + test_helpers::erf_series(v * 0.7071067811865475244));
    CHECK(std::fabs(gelu(Tensor<double>::scalar(v)).item() - expect) < 1e-9);
  }
}

TEST_CASE("conv2d: identity kernel") {
  Rng rng(41);
  auto x = random_tensor(rng, {1, 1, 5, 5});
  auto w = Tensor<double>::from_data({1, 1, 1, 1}, {1.0});
  auto y = conv2d(x, w, 1, 0, 1);
  CHECK(y.values() == x.values());
}

TEST_CASE("conv2d: box-sum counts on all-ones input") {
  auto x = Tensor<double>::from_data({1, 1, 4, 4}, std::vector<double>(16, 1.0));
  auto w = Tensor<double>::from_data({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  auto y = conv2d(x, w, 1, 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  CHECK(y.data()[0] == 4.0);                    // corner
  CHECK(y.data()[3] == 4.0);
  CHECK(y.data()[15] == 4.0);
  CHECK(y.data()[1] == 6.0);                    // edge
  CHECK(y.data()[5] == 9.0);                    // interior
  CHECK(y.data()[10] == 9.0);
}

TEST_CASE("conv2d: strided padded case vs 7-loop oracle") {
  Rng rng(43);
  auto x = random_tensor(rng, {2, 3, 8, 8});
  auto w = random_tensor(rng, {4, 3, 3, 3});
  auto bias = random_tensor(rng, {4});
  auto y = conv2d(x, w, bias, 2, 1, 1);
  REQUIRE(y.shape() == Shape{2, 4, 4, 4});
  auto ref = conv_oracle(x.values(), w.values(), bias.values(), 2, 3, 8, 8, 4, 3, 3, 2, 1, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y.data()[i] - ref[i]) < 1e-10);
}

TEST_CASE("conv2d: depthwise equals per-channel cross-correlation") {
  Rng rng(44);
  auto x = random_tensor(rng, {2, 5, 6, 6});
  auto w = random_tensor(rng, {5, 1, 3, 3});
  auto y = conv2d(x, w, 1, 1, 5);
  auto ref = conv_oracle(x.values(), w.values(), {}, 2, 5, 6, 6, 5, 3, 3, 1, 1, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::fabs(y.data()[i] - ref[i]) < 1e-10);

  // Same thing channel by channel through the single-channel path.
  for (std::size_t ch = 0; ch < 5; ++ch) {
    std::vector<double> xc, wc;
    for (std::size_t bi = 0; bi < 2; ++bi)
      xc.insert(xc.end(), x.data() + (bi * 5 + ch) * 36, x.data() + (bi * 5 + ch + 1) * 36);
    wc.assign(w.data() + ch * 9, w.data() + (ch + 1) * 9);
    auto yc = conv2d(Tensor<double>::from_data({2, 1, 6, 6}, xc),
                     Tensor<double>::from_data({1, 1, 3, 3}, wc), 1, 1, 1);
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t i = 0; i < 36; ++i)
        CHECK(yc.data()[bi * 36 + i] == y.data()[(bi * 5 + ch) * 36 + i]);
  }
}

TEST_CASE("conv2d: floor output arithmetic and error cases") {
  // (8 + 2 - 3) / 2 + 1 floors to 4.
  Rng rng(45);
  auto x = random_tensor(rng, {1, 1, 8, 8});
  auto w = random_tensor(rng, {1, 1, 3, 3});
  CHECK(conv2d(x, w, 2, 1, 1).shape() == Shape{1, 1, 4, 4});
  // Kernel exceeding the padded input is rejected.
  auto big = random_tensor(rng, {1, 1, 9, 9});
  CHECK_THROWS_AS(conv2d(x, big, 1, 0, 1), ShapeError);
  // Group mismatch.
  CHECK_THROWS_AS(conv2d(x, w, 1, 1, 3), ShapeError);
}

TEST_CASE("backward: sum gives ones, fan-out accumulates") {
  Rng rng(51);
  auto x = random_tensor(rng, {2, 3});
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    auto loss = sum_all(x, &tape);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  x.zero_grad();
  {
    Tape<double> tape;
    auto y = add(x, x, &tape);
    auto loss = sum_all(y, &tape);
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 2.0);
  }
  // Non-scalar loss is a contract error.
  Tape<double> tape;
  auto y = add(x, x, &tape);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("finite_diff_grad: analytic cases") {
  auto x = Tensor<double>::from_data({2}, {1, 2});
  auto grad = finite_diff_grad(
      [](const Tensor<double>& t) {
        double s = 0;
        for (double v : t.values()) s += v * v;
        return s;
      },
      x, 1e-5);
  CHECK(std::fabs(grad.data()[0] - 2.0) < 1e-6);
  CHECK(std::fabs(grad.data()[1] - 4.0) < 1e-6);

  auto zero = finite_diff_grad([](const Tensor<double>&) { return 3.5; }, x, 1e-5);
  for (double g : zero.values()) CHECK(std::fabs(g) < 1e-9);

  CHECK_THROWS_AS(finite_diff_grad([](const Tensor<double>&) { return 0.0; }, x, 0.0), ParamError);
}

TEST_CASE("gradients: every primitive matches finite differences over 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 7919);

    // matmul: loss = sum(x · B), checking the left operand...
    auto b = random_tensor(rng, {4, 3});
    CHECK(gradcheck([&](const Tensor<double>& t,
                        Tape<double>* tape) { return sum_all(matmul(t, b, tape), tape); },
                    random_tensor(rng, {2, 5, 4})) < 1e-6);
    // ...and the right operand (shared weight, summed over the batch).
    auto a = random_tensor(rng, {2, 3, 4});
    CHECK(gradcheck([&](const Tensor<double>& t,
                        Tape<double>* tape) { return sum_all(matmul(a, t, tape), tape); },
                    random_tensor(rng, {4, 3})) < 1e-6);

    CHECK(gradcheck([](const Tensor<double>& t,
                       Tape<double>* tape) { return sum_all(gelu(t, tape), tape); },
                    random_tensor(rng, {3, 4})) < 1e-6);

    // Weighted sums make softmax/norm gradients non-degenerate.
    auto wsm = random_tensor(rng, {5, 2});
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(matmul(softmax_last(t, tape), wsm, tape), tape);
              },
              random_tensor(rng, {2, 5})) < 1e-6);

    auto gamma = random_tensor(rng, {6}, 0.5, 1.5);
    auto beta = random_tensor(rng, {6});
    auto wln = random_tensor(rng, {6, 2});
    auto xln = random_tensor(rng, {4, 6});
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(matmul(layer_norm(t, gamma, beta, 1e-5, tape), wln, tape), tape);
              },
              random_tensor(rng, {4, 6})) < 1e-6);
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(matmul(layer_norm(xln, t, beta, 1e-5, tape), wln, tape), tape);
              },
              random_tensor(rng, {6}, 0.5, 1.5)) < 1e-6);
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(matmul(layer_norm(xln, gamma, t, 1e-5, tape), wln, tape), tape);
              },
              random_tensor(rng, {6})) < 1e-6);

    CHECK(gradcheck([](const Tensor<double>& t,
                       Tape<double>* tape) { return sum_all(permute(t, {2, 0, 1}, tape), tape); },
                    random_tensor(rng, {2, 3, 4})) < 1e-6);
    CHECK(gradcheck([](const Tensor<double>& t,
                       Tape<double>* tape) { return sum_all(reshape(t, {6, 2}, tape), tape); },
                    random_tensor(rng, {3, 4})) < 1e-6);
    CHECK(gradcheck([](const Tensor<double>& t,
                       Tape<double>* tape) { return sum_all(mean_hw(t, tape), tape); },
                    random_tensor(rng, {2, 3, 3, 4})) < 1e-6);

    auto bias = random_tensor(rng, {4});
    CHECK(gradcheck([&](const Tensor<double>& t,
                        Tape<double>* tape) { return sum_all(add_bias(t, bias, tape), tape); },
                    random_tensor(rng, {3, 4})) < 1e-6);
    auto xb = random_tensor(rng, {3, 4});
    CHECK(gradcheck([&](const Tensor<double>& t, Tape<double>* tape) {
            return sum_all(gelu(add_bias(xb, t, tape), tape), tape);
          },
                    random_tensor(rng, {4})) < 1e-6);

    // conv2d: input, weight and bias paths, dense and depthwise.
    auto cw = random_tensor(rng, {4, 2, 3, 3});
    auto cb = random_tensor(rng, {4});
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(gelu(conv2d(t, cw, cb, 2, 1, 1, tape), tape), tape);
              },
              random_tensor(rng, {2, 2, 6, 6})) < 1e-6);
    auto cx = random_tensor(rng, {2, 2, 6, 6});
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(gelu(conv2d(cx, t, cb, 2, 1, 1, tape), tape), tape);
              },
              random_tensor(rng, {4, 2, 3, 3})) < 1e-6);
    auto dw = random_tensor(rng, {2, 1, 3, 3});
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(gelu(conv2d(t, dw, 1, 1, 2, tape), tape), tape);
              },
              random_tensor(rng, {1, 2, 5, 5})) < 1e-6);

    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return sum_all(scale_rows(t, {0.5, 2.0}, tape), tape);
              },
              random_tensor(rng, {2, 3})) < 1e-6);
    CHECK(gradcheck([](const Tensor<double>& t,
                       Tape<double>* tape) { return scale(sum_all(t, tape), 1.5, tape); },
                    random_tensor(rng, {5})) < 1e-6);

    std::vector<int> labels = {1, 0, 2};
    CHECK(gradcheck(
              [&](const Tensor<double>& t, Tape<double>* tape) {
                return cross_entropy_logits(t, labels, tape);
              },
              random_tensor(rng, {3, 4})) < 1e-6);
  }
}

TEST_CASE("gradients: autodiff agrees with finite differences through gelu composite") {
  auto x = Tensor<double>::from_data({1}, {0.5});
  CHECK(gradcheck([](const Tensor<double>& t,
                     Tape<double>* tape) { return sum_all(gelu(t, tape), tape); },
                  x) < 1e-6);
}

TEST_CASE("tape: cleared and re-recorded per step, grads accumulate until zeroed") {
  auto x = Tensor<double>::from_data({2}, {1, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    auto loss = sum_all(x, &tape);
    tape.backward(loss);
  }
  tape.clear();
  CHECK(tape.node_count() == 0);
  {
    auto loss = sum_all(x, &tape);
    tape.backward(loss);
  }
  // Two recorded steps without zero_grad in between: sums accumulate.
  for (double g : x.grad()) CHECK(g == 2.0);
  x.zero_grad();
  CHECK(!x.has_grad());
}
