#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "multibreath/autodiff.hpp"
#include "multibreath/gradcheck.hpp"
#include "multibreath/rng.hpp"

using namespace mb;
using ad::Tensor;

namespace {

Array<double> randn(const Shape& shape, std::uint64_t seed) {
  Array<double> a(shape);
  Rng rng(seed);
  for (double& v : a.v) v = rng.normal();
  return a;
}

}  // namespace

TEST_CASE("forward values of the elementwise ops") {
  auto a = Tensor<double>::leaf(Array<double>({3}, {1.0, -2.0, 0.5}));
  auto b = Tensor<double>::leaf(Array<double>({3}, {4.0, 0.5, -1.0}));
  CHECK(ad::add(a, b).value().v == std::vector<double>{5.0, -1.5, -0.5});
  CHECK(ad::sub(a, b).value().v == std::vector<double>{-3.0, -2.5, 1.5});
  CHECK(ad::mul(a, b).value().v == std::vector<double>{4.0, -1.0, -0.5});
  CHECK(ad::smul(a, 2.0).value().v == std::vector<double>{2.0, -4.0, 1.0});
  CHECK(ad::sadd(a, 1.0).value().v == std::vector<double>{2.0, -1.0, 1.5});
  CHECK(ad::relu(a).value().v == std::vector<double>{1.0, 0.0, 0.5});
  CHECK(ad::sigmoid(a).value().v[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(ad::exp_(a).value().v[1] == doctest::Approx(std::exp(-2.0)));
  auto pos = Tensor<double>::leaf(Array<double>({2}, {1.0, std::exp(1.0)}));
  CHECK(ad::log_(pos).value().v[1] == doctest::Approx(1.0));
}

TEST_CASE("sigmoid is stable at extreme logits") {
  auto z = Tensor<double>::leaf(Array<double>({4}, {-800.0, -30.0, 30.0, 800.0}));
  const auto s = ad::sigmoid(z).value();
  CHECK(s.v[0] == 0.0);
  CHECK(s.v[1] == doctest::Approx(std::exp(-30.0)).epsilon(1e-9));
  CHECK(s.v[2] == doctest::Approx(1.0 - std::exp(-30.0)).epsilon(1e-9));
  CHECK(s.v[3] == 1.0);
  for (double v : s.v) CHECK(std::isfinite(v));
}

TEST_CASE("softmax is shift-invariant and normalized") {
  auto big = Tensor<double>::leaf(Array<double>({1, 3}, {1000.0, 1001.0, 999.0}));
  auto small = Tensor<double>::leaf(Array<double>({1, 3}, {0.0, 1.0, -1.0}));
  const auto p1 = ad::softmax_axis(big, 1).value();
  const auto p2 = ad::softmax_axis(small, 1).value();
  double total = 0;
  for (int i = 0; i < 3; ++i) {
    CHECK(p1.v[i] == doctest::Approx(p2.v[i]).epsilon(1e-12));
    total += p1.v[i];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("reductions and reshaping") {
  // [2,3]: rows (1,2,3) and (4,5,6)
  auto a = Tensor<double>::leaf(Array<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(ad::sum_axis(a, 1).value().v == std::vector<double>{6, 15});
  CHECK(ad::sum_axis(a, 0).value().v == std::vector<double>{5, 7, 9});
  CHECK(ad::mean_axis(a, 1).value().v == std::vector<double>{2, 5});
  CHECK(ad::max_axis(a, 1).value().v == std::vector<double>{3, 6});
  CHECK(ad::sum_all(a).value().v[0] == 21);
  CHECK(ad::mean_all(a).value().v[0] == doctest::Approx(3.5));
  CHECK(ad::reshape(a, {3, 2}).value().shape == Shape{3, 2});
  CHECK(ad::transpose_last2(a).value().v ==
        std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(ad::repeat_axis(a, 0, 2).value().shape == Shape{4, 3});
  CHECK_THROWS_AS(ad::reshape(a, {4, 2}), UsageError);
}

TEST_CASE("max ties route the gradient to the first argmax") {
  auto a = Tensor<double>::leaf(Array<double>({1, 3}, {2.0, 2.0, 1.0}), true);
  auto loss = ad::sum_all(ad::max_axis(a, 1));
  ad::backward(loss);
  CHECK(a.grad().v == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("matmul matches direct summation") {
  // oracle: straightforward triple loop
  const auto A = randn({2, 3, 4}, 1);
  const auto B = randn({4, 5}, 2);
  auto ta = Tensor<double>::leaf(A);
  auto tb = Tensor<double>::leaf(B);
  const auto C = ad::matmul(ta, tb).value();
  REQUIRE(C.shape == Shape{2, 3, 5});
  for (long b = 0; b < 2; ++b)
    for (long i = 0; i < 3; ++i)
      for (long j = 0; j < 5; ++j) {
        double want = 0;
        for (long k = 0; k < 4; ++k)
          want += A.v[(b * 3 + i) * 4 + k] * B.v[k * 5 + j];
        CHECK(C.v[(b * 3 + i) * 5 + j] == doctest::Approx(want).epsilon(1e-12));
      }
}

TEST_CASE("conv2d matches direct summation") {
  const auto X = randn({2, 3, 5, 6}, 3);
  const auto W = randn({4, 3, 3, 3}, 4);
  auto tx = Tensor<double>::leaf(X);
  auto tw = Tensor<double>::leaf(W);
  const auto Y = ad::conv2d(tx, tw, static_cast<ad::Tensor<double>*>(nullptr),
                            /*stride=*/1, /*pad=*/1)
                     .value();
  REQUIRE(Y.shape == Shape{2, 4, 5, 6});
  for (long n = 0; n < 2; ++n)
    for (long co = 0; co < 4; ++co)
      for (long y = 0; y < 5; ++y)
        for (long x = 0; x < 6; ++x) {
          double want = 0;
          for (long ci = 0; ci < 3; ++ci)
            for (long ky = 0; ky < 3; ++ky)
              for (long kx = 0; kx < 3; ++kx) {
                const long iy = y + ky - 1, ix = x + kx - 1;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                want += X.v[((n * 3 + ci) * 5 + iy) * 6 + ix] *
                        W.v[((co * 3 + ci) * 3 + ky) * 3 + kx];
              }
          CHECK(Y.v[((n * 4 + co) * 5 + y) * 6 + x] ==
                doctest::Approx(want).epsilon(1e-10));
        }
}

TEST_CASE("batchnorm normalizes per channel and tracks running stats") {
  const long N = 4, C = 2, H = 3, W = 3;
  auto x = Tensor<double>::leaf(randn({N, C, H, W}, 7));
  auto gamma = Tensor<double>::leaf(Array<double>({C}, {1.0, 2.0}));
  auto beta = Tensor<double>::leaf(Array<double>({C}, {0.0, -1.0}));
  ad::BatchNormStats<double> stats(C);
  auto y = ad::batchnorm2d(x, gamma, beta, stats, /*train=*/true).value();

  for (long c = 0; c < C; ++c) {
    double mean = 0, var = 0;
    for (long n = 0; n < N; ++n)
      for (long i = 0; i < H * W; ++i) mean += y.v[(n * C + c) * H * W + i];
    mean /= N * H * W;
    for (long n = 0; n < N; ++n)
      for (long i = 0; i < H * W; ++i) {
        const double d = y.v[(n * C + c) * H * W + i] - mean;
        var += d * d;
      }
    var /= N * H * W;
    const double want_mean = c == 0 ? 0.0 : -1.0;
    const double want_sd = c == 0 ? 1.0 : 2.0;
    CHECK(mean == doctest::Approx(want_mean).epsilon(1e-6).scale(1.0));
    CHECK(std::sqrt(var) == doctest::Approx(want_sd).epsilon(1e-3));
  }
  // running stats moved off their init by one momentum step
  CHECK(stats.running_mean.v[0] != 0.0);
  CHECK(stats.running_var.v[0] != 1.0);

  // eval mode uses the running stats and builds no graph
  auto x2 = Tensor<double>::leaf(randn({N, C, H, W}, 8));
  const auto frozen = stats.running_mean.v;
  ad::batchnorm2d(x2, gamma, beta, stats, /*train=*/false);
  CHECK(stats.running_mean.v == frozen);
}

TEST_CASE("loss values match closed forms") {
  // BCE at z=0, y=1 is log 2; CE of uniform logits over K classes is log K
  auto z = Tensor<double>::leaf(Array<double>({2, 2}, {0.0, 0.0, 0.0, 0.0}));
  Array<double> y({2, 2}, {1.0, 0.0, 1.0, 1.0});
  CHECK(ad::bce_with_logits(z, y).value().v[0] ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto logits = Tensor<double>::leaf(Array<double>({2, 4}, 0.0));
  CHECK(ad::cross_entropy(logits, {0, 3}).value().v[0] ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // extreme logits stay finite
  auto zx = Tensor<double>::leaf(Array<double>({1, 2}, {500.0, -500.0}));
  Array<double> yx({1, 2}, {1.0, 0.0});
  CHECK(ad::bce_with_logits(zx, yx).value().v[0] ==
        doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
}

TEST_CASE("central differences validate a composite graph") {
  ad::ParameterSet<double> p;
  p.add("a", randn({3, 4}, 11));
  p.add("w", randn({4, 2}, 12));
  const auto f = [&]() {
    auto h = ad::relu(ad::matmul(p.at("a"), p.at("w")));
    auto s = ad::softmax_axis(ad::sigmoid(h), 1);
    return ad::mean_all(ad::mul(s, s));
  };
  const auto report = ad::gradient_check(p, f);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("negative control: a corrupted backward rule is caught") {
  // same graph, but the analytic gradient of one parameter is scaled by 1.01
  ad::ParameterSet<double> p;
  p.add("a", randn({3, 3}, 13));
  const auto f = [&]() { return ad::mean_all(ad::mul(p.at("a"), p.at("a"))); };
  auto loss = f();
  ad::backward(loss);
  for (double& g : p.at("a").grad().v) g *= 1.01;
  // compare against finite differences manually
  double max_rel = 0;
  auto& val = p.at("a").raw_value();
  for (long i = 0; i < val.numel(); ++i) {
    const double keep = val.v[i], h = 1e-5;
    val.v[i] = keep + h;
    const double up = f().value().v[0];
    val.v[i] = keep - h;
    const double dn = f().value().v[0];
    val.v[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double an = p.at("a").grad().v[i];
    const double rel =
        std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  CHECK(max_rel > 1e-4);  // the corruption must be detected
}

TEST_CASE("backward accumulates into leaves and resets interior grads") {
  auto a = Tensor<double>::leaf(Array<double>({2}, {3.0, -1.0}), true);
  auto loss = ad::sum_all(ad::mul(a, a));
  ad::backward(loss);
  const auto once = a.grad().v;
  CHECK(once == std::vector<double>{6.0, -2.0});
  ad::backward(loss);
  for (int i = 0; i < 2; ++i)
    CHECK(a.grad().v[i] == doctest::Approx(2.0 * once[i]));
}

TEST_CASE("no gradient flows into constants") {
  auto a = Tensor<double>::leaf(Array<double>({2}, {1.0, 2.0}), true);
  auto c = Tensor<double>::leaf(Array<double>({2}, {5.0, 5.0}), false);
  auto loss = ad::sum_all(ad::mul(a, c));
  ad::backward(loss);
  CHECK(a.grad().v == std::vector<double>{5.0, 5.0});
  CHECK(c.grad().v == std::vector<double>{0.0, 0.0});  // untouched
}

TEST_CASE("gather routes gradients to the selected positions only") {
  auto x = Tensor<double>::leaf(randn({2, 4, 3}, 21), true);
  auto g = ad::gather_positions(x, {{1, 1}, {0, 3}});
  REQUIRE(g.shape() == Shape{2, 2, 3});
  auto loss = ad::sum_all(g);
  ad::backward(loss);
  // batch 0: position 1 picked twice; batch 1: positions 0 and 3 once each
  for (long d = 0; d < 3; ++d) {
    CHECK(x.grad().v[0 * 12 + 1 * 3 + d] == 2.0);
    CHECK(x.grad().v[0 * 12 + 0 * 3 + d] == 0.0);
    CHECK(x.grad().v[1 * 12 + 0 * 3 + d] == 1.0);
    CHECK(x.grad().v[1 * 12 + 2 * 3 + d] == 0.0);
  }
}

TEST_CASE("shape errors are usage errors") {
  auto a = Tensor<double>::leaf(Array<double>({2, 3}, 0.0));
  auto b = Tensor<double>::leaf(Array<double>({3, 2}, 0.0));
  CHECK_THROWS_AS(ad::add(a, b), UsageError);
  CHECK_THROWS_AS(ad::matmul(a, a), UsageError);
  CHECK_THROWS_AS(ad::backward(a), UsageError);  // non-scalar root
}
