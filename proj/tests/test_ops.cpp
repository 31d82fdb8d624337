#include <cmath>
#include <vector>

#include "doctest.h"
#include "dslab/ops.hpp"
#include "dslab/rng.hpp"
#include "dslab/tensor.hpp"

using namespace dslab;

namespace {

// Straightforward triple-loop convolution, independent of the im2col path.
std::vector<double> naive_conv(const std::vector<double>& x, std::size_t N,
                               std::size_t Ci, std::size_t H, std::size_t W,
                               const std::vector<double>& w, std::size_t Co,
                               std::size_t kh, std::size_t kw,
                               const std::vector<double>* bias, int stride,
                               int pad, std::size_t& Ho, std::size_t& Wo) {
  Ho = (H + 2 * pad - kh) / stride + 1;
  Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(N * Co * Ho * Wo, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t ki = 0; ki < kh; ++ki)
              for (std::size_t kj = 0; kj < kw; ++kj) {
                long ih = static_cast<long>(oh) * stride + static_cast<long>(ki) - pad;
                long iw = static_cast<long>(ow) * stride + static_cast<long>(kj) - pad;
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(H) ||
                    iw >= static_cast<long>(W))
                  continue;
                acc += x[((n * Ci + ci) * H + ih) * W + iw] *
                       w[((co * Ci + ci) * kh + ki) * kw + kj];
              }
          y[((n * Co + co) * Ho + oh) * Wo + ow] = acc;
        }
  return y;
}

}  // namespace

TEST_SUITE("ops") {

TEST_CASE("matmul values") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor y = matmul(a, b);
  CHECK(y[0] == doctest::Approx(58));
  CHECK(y[1] == doctest::Approx(64));
  CHECK(y[2] == doctest::Approx(139));
  CHECK(y[3] == doctest::Approx(154));
  CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("linear values and zero-weight behavior") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  Tensor w({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor b({3}, {0.5, -0.5, 0.0});
  Tensor y = linear(x, w, b);
  CHECK(y.shape() == Shape{2, 3});
  CHECK(y[0] == doctest::Approx(1.5));
  CHECK(y[1] == doctest::Approx(1.5));
  CHECK(y[2] == doctest::Approx(3.0));
  CHECK(y[3] == doctest::Approx(3.5));
  CHECK(y[4] == doctest::Approx(3.5));
  CHECK(y[5] == doctest::Approx(7.0));

  // Zeroed heads output exactly zero regardless of input.
  Tensor wz({3, 2});
  Tensor bz({3});
  Tensor yz = linear(x, wz, bz);
  for (std::size_t i = 0; i < yz.numel(); ++i) CHECK(yz[i] == 0.0);

  Tensor ynb = linear(x, w, Tensor());
  CHECK(ynb[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(linear(x, Tensor({3, 5}), b), Error);
}

TEST_CASE("conv2d hand-computed 2x2 kernel") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor y = conv2d(x, w, Tensor(), 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y[0] == doctest::Approx(6));
  CHECK(y[1] == doctest::Approx(8));
  CHECK(y[2] == doctest::Approx(12));
  CHECK(y[3] == doctest::Approx(14));
}

TEST_CASE("conv2d centered identity kernel reproduces input") {
  Rng rng(7);
  Tensor x({2, 2, 4, 4});
  for (double& v : x.values()) v = rng.uniform(-1, 1);
  Tensor w({2, 2, 3, 3});
  // channel-preserving: out c taps in c at the kernel center
  for (std::size_t c = 0; c < 2; ++c) w[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
  Tensor y = conv2d(x, w, Tensor(), 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d matches a naive reference over assorted geometries") {
  struct Cfg {
    std::size_t N, Ci, H, W, Co, k;
    int stride, pad;
    bool bias;
  };
  const Cfg cfgs[] = {
      {2, 3, 5, 6, 4, 3, 1, 1, true},  {2, 3, 7, 7, 4, 3, 2, 1, true},
      {1, 4, 4, 4, 8, 1, 2, 0, false}, {2, 2, 8, 8, 3, 5, 1, 2, true},
      {1, 1, 6, 6, 2, 2, 1, 0, false},
  };
  Rng rng(42);
  for (const Cfg& c : cfgs) {
    CAPTURE(c.k);
    CAPTURE(c.stride);
    Tensor x({c.N, c.Ci, c.H, c.W});
    for (double& v : x.values()) v = rng.uniform(-1, 1);
    Tensor w({c.Co, c.Ci, c.k, c.k});
    for (double& v : w.values()) v = rng.uniform(-1, 1);
    Tensor b;
    std::vector<double> bias_vals;
    if (c.bias) {
      b = Tensor({c.Co});
      for (double& v : b.values()) v = rng.uniform(-1, 1);
      bias_vals = b.values();
    }
    std::size_t Ho = 0, Wo = 0;
    auto ref = naive_conv(x.values(), c.N, c.Ci, c.H, c.W, w.values(), c.Co,
                          c.k, c.k, c.bias ? &bias_vals : nullptr, c.stride,
                          c.pad, Ho, Wo);
    Tensor y = conv2d(x, w, b, c.stride, c.pad);
    REQUIRE(y.shape() == Shape{c.N, c.Co, Ho, Wo});
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x({1, 3, 8, 8});
  Tensor w({4, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor(), 3, 1), Error);
  CHECK_THROWS_AS(conv2d(x, Tensor({4, 2, 3, 3}), Tensor(), 1, 1), Error);
  CHECK_THROWS_AS(conv2d(x, w, Tensor({5}), 1, 1), Error);
  CHECK_THROWS_AS(conv2d(x, Tensor({4, 3, 9, 9}), Tensor(), 1, 0), Error);
}

TEST_CASE("add and concat") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 2}, {10, 20, 30, 40});
  Tensor s = add(a, b);
  CHECK(s[3] == doctest::Approx(44));
  CHECK_THROWS_AS(add(a, Tensor({4})), Error);

  Tensor p1({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor p2({1, 1, 2, 2}, {9, 10, 11, 12});
  std::vector<Tensor> parts = {p1, p2};
  Tensor c = concat(parts, 1);
  REQUIRE(c.shape() == Shape{1, 3, 2, 2});
  CHECK(c[0] == 1);
  CHECK(c[7] == 8);
  CHECK(c[8] == 9);
  CHECK(c[11] == 12);

  std::vector<Tensor> rows = {Tensor({1, 2}, {1, 2}), Tensor({2, 2}, {3, 4, 5, 6})};
  Tensor r = concat(rows, 0);
  REQUIRE(r.shape() == Shape{3, 2});
  CHECK(r[2] == 3);
  CHECK(r[5] == 6);

  std::vector<Tensor> bad = {p1, Tensor({1, 1, 3, 2})};
  CHECK_THROWS_AS(concat(bad, 1), Error);
}

TEST_CASE("relu clamps negatives") {
  Tensor x({5}, {-2, -0.5, 0, 0.5, 2});
  Tensor y = relu(x);
  CHECK(y[0] == 0);
  CHECK(y[1] == 0);
  CHECK(y[2] == 0);
  CHECK(y[3] == 0.5);
  CHECK(y[4] == 2);
}

TEST_CASE("batchnorm2d training statistics and running updates") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor gamma({1}, {2.0});
  Tensor beta({1}, {1.0});
  BatchNormState st(1);
  Tensor y = batchnorm2d(x, gamma, beta, st, true);
  CHECK(y[0] == doctest::Approx(-1.683270839937854).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(0.105576386687382).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(1.894423613312618).epsilon(1e-12));
  CHECK(y[3] == doctest::Approx(3.683270839937854).epsilon(1e-12));
  CHECK(st.running_mean[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(st.running_var[0] == doctest::Approx(1.025).epsilon(1e-12));

  // update_running off: statistics are used but not folded in
  BatchNormState st2(1);
  batchnorm2d(x, gamma, beta, st2, true, false);
  CHECK(st2.running_mean[0] == 0.0);
  CHECK(st2.running_var[0] == 1.0);
}

TEST_CASE("batchnorm2d normalizes per channel") {
  Rng rng(3);
  Tensor x({4, 3, 5, 5});
  for (double& v : x.values()) v = rng.normal(2.0, 3.0);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta({3});
  BatchNormState st(3);
  Tensor y = batchnorm2d(x, gamma, beta, st, true);
  const std::size_t M = 4 * 5 * 5;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t i = 0; i < 25; ++i) {
        double v = y[(n * 3 + c) * 25 + i];
        s += v;
        s2 += v * v;
      }
    }
    double mean = s / M;
    double var = s2 / M - mean * mean;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly
  }
}

TEST_CASE("batchnorm2d eval uses running estimates") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor gamma({1}, {1.5});
  Tensor beta({1}, {-1.0});
  BatchNormState st(1);
  st.running_mean[0] = 1.0;
  st.running_var[0] = 4.0;
  Tensor y = batchnorm2d(x, gamma, beta, st, false);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(-0.250000937498242).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(0.499998125003516).epsilon(1e-12));
  CHECK(y[3] == doctest::Approx(1.249997187505274).epsilon(1e-12));
  // eval never touches the estimates
  CHECK(st.running_mean[0] == 1.0);
  CHECK(st.running_var[0] == 4.0);
}

TEST_CASE("batchnorm2d stays finite on constant input") {
  Tensor x = Tensor::full({2, 1, 3, 3}, 7.0);
  Tensor gamma({1}, {1.0});
  Tensor beta({1}, {0.5});
  BatchNormState st(1);
  Tensor y = batchnorm2d(x, gamma, beta, st, true);
  CHECK_NOTHROW(assert_finite(y));
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.5));
}

TEST_CASE("global_avg_pool") {
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  Tensor y = global_avg_pool(x);
  REQUIRE(y.shape() == Shape{1, 2});
  CHECK(y[0] == doctest::Approx(2.5));
  CHECK(y[1] == doctest::Approx(25.0));
}

TEST_CASE("softmax cross-entropy on all-zero logits is ln(classes)") {
  Tensor logits({4, 10});
  std::vector<int> labels = {0, 3, 7, 9};
  Tensor loss = softmax_cross_entropy(logits, labels);
  CHECK(std::abs(loss.item() - std::log(10.0)) < 1e-12);
}

TEST_CASE("softmax cross-entropy is shift invariant and overflow safe") {
  Tensor a({2, 3}, {1.0, -2.0, 0.5, 3.0, 3.0, -1.0});
  Tensor b({2, 3}, {1001.0, 998.0, 1000.5, 10003.0, 10003.0, 9999.0});
  std::vector<int> labels = {2, 0};
  double la = softmax_cross_entropy(a, labels).item();
  double lb = softmax_cross_entropy(b, labels).item();
  CHECK(std::isfinite(lb));
  CHECK(la == doctest::Approx(lb).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy gradient is (p - onehot)/batch") {
  Tensor logits({4, 10});
  logits.set_requires_grad(true);
  std::vector<int> labels = {0, 3, 7, 9};
  Graph g;
  Tensor loss = softmax_cross_entropy(logits, labels);
  g.backward(loss);
  const auto& gr = logits.grad();
  CHECK(gr[0] == doctest::Approx((0.1 - 1.0) / 4.0).epsilon(1e-12));
  CHECK(gr[1] == doctest::Approx(0.1 / 4.0).epsilon(1e-12));
  CHECK(gr[13] == doctest::Approx((0.1 - 1.0) / 4.0).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy rejects bad labels") {
  Tensor logits({2, 3});
  std::vector<int> bad = {0, 3};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), Error);
  std::vector<int> neg = {-1, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, neg), Error);
  std::vector<int> short_labels = {1};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, short_labels), Error);
}

TEST_CASE("gate_mul scales by a learnable 1-element tensor") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  Tensor g({1}, {0.5});
  Tensor y = gate_mul(x, g);
  CHECK(y[3] == doctest::Approx(2.0));

  Tensor zero_gate({1});
  Tensor yz = gate_mul(x, zero_gate);
  for (std::size_t i = 0; i < yz.numel(); ++i) CHECK(yz[i] == 0.0);

  x.set_requires_grad(true);
  g.set_requires_grad(true);
  Graph graph;
  Tensor loss = sum(gate_mul(x, g));
  graph.backward(loss);
  CHECK(g.grad()[0] == doctest::Approx(10.0));  // sum of x
  CHECK(x.grad()[2] == doctest::Approx(0.5));
  CHECK_THROWS_AS(gate_mul(x, Tensor({2})), Error);
}

TEST_CASE("scalar_mul, sum, weighted_sum") {
  Tensor x({3}, {1.0, -2.0, 4.0});
  CHECK(scalar_mul(x, -0.5)[2] == doctest::Approx(-2.0));
  CHECK(sum(x).item() == doctest::Approx(3.0));
  std::vector<double> c = {1.0, 0.5, 0.25};
  CHECK(weighted_sum(x, c).item() == doctest::Approx(1.0));
  std::vector<double> wrong = {1.0};
  CHECK_THROWS_AS(weighted_sum(x, wrong), Error);
}

TEST_CASE("argmax_rows") {
  Tensor s({2, 3}, {0.1, 0.9, 0.5, 2.0, -1.0, 1.5});
  auto idx = argmax_rows(s);
  CHECK(idx == std::vector<int>{1, 0});
}

}  // TEST_SUITE
