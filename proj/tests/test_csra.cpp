#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "multibreath/csra.hpp"
#include "multibreath/rng.hpp"

using namespace mb;
using ad::Tensor;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Array<double> randn(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  Array<double> a(shape);
  Rng rng(seed);
  for (double& v : a.v) v = scale * rng.normal();
  return a;
}

nn::CsraHeadConfig config(long heads, long d = 16, long classes = 2) {
  nn::CsraHeadConfig cfg;
  cfg.num_heads = heads;
  cfg.temperatures = nn::CsraHeadConfig::default_temperatures(heads);
  cfg.feature_dim = d;
  cfg.num_classes = classes;
  return cfg;
}

}  // namespace

TEST_CASE("default temperature schedules") {
  using nn::CsraHeadConfig;
  CHECK(CsraHeadConfig::default_temperatures(1) == std::vector<double>{1.0});
  CHECK(CsraHeadConfig::default_temperatures(2) ==
        std::vector<double>{1.0, kInf});
  CHECK(CsraHeadConfig::default_temperatures(4) ==
        std::vector<double>{1.0, 2.0, 3.0, kInf});
  CHECK(CsraHeadConfig::default_temperatures(6) ==
        std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0, kInf});
}

TEST_CASE("attention scores are a distribution over positions") {
  const long N = 3, d = 16, f = 4, t = 8, m = 2;
  auto features = Tensor<double>::leaf(randn({N, d, f, t}, 1));
  auto weights = Tensor<double>::leaf(randn({m, d}, 2));
  auto positions = nn::flatten_positions(features);
  for (double T : {0.5, 1.0, 3.0}) {
    const auto s = nn::attention_scores(positions, weights, T).value();
    REQUIRE(s.shape == Shape{N, m, f * t});
    for (long n = 0; n < N; ++n)
      for (long i = 0; i < m; ++i) {
        double total = 0;
        for (long k = 0; k < f * t; ++k) {
          const double v = s.v[(n * m + i) * f * t + k];
          CHECK(v >= 0.0);
          total += v;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("uniform input gives uniform scores 1/P") {
  const long d = 8, f = 8, t = 8;
  auto features = Tensor<double>::leaf(Array<double>({1, d, f, t}, 0.37));
  auto weights = Tensor<double>::leaf(randn({2, d}, 3));
  auto positions = nn::flatten_positions(features);
  const auto s = nn::attention_scores(positions, weights, 1.0).value();
  for (double v : s.v) CHECK(v == doctest::Approx(1.0 / 64.0).epsilon(1e-9));
}

TEST_CASE("temperature 1e3 agrees with the max-pool head") {
  const long N = 2, d = 16, f = 4, t = 4, m = 2;
  auto features = Tensor<double>::leaf(randn({N, d, f, t}, 4));
  auto weights = Tensor<double>::leaf(randn({m, d}, 5));
  auto positions = nn::flatten_positions(features);

  const auto soft =
      nn::class_feature(nn::attention_scores(positions, weights, 1e3),
                        positions)
          .value();
  const auto logits = nn::position_logits(positions, weights);
  const auto hard =
      ad::gather_positions(positions, nn::argmax_positions(logits.value()))
          .value();
  REQUIRE(soft.shape == hard.shape);
  for (long i = 0; i < soft.numel(); ++i)
    CHECK(std::abs(soft.v[i] - hard.v[i]) < 1e-3);
}

TEST_CASE("higher temperature sharpens the distribution") {
  const long d = 8, f = 4, t = 4;
  auto features = Tensor<double>::leaf(randn({1, d, f, t}, 6));
  auto weights = Tensor<double>::leaf(randn({1, d}, 7));
  auto positions = nn::flatten_positions(features);
  double prev_max = 0.0;
  for (double T : {1.0, 2.0, 4.0, 16.0}) {
    const auto s = nn::attention_scores(positions, weights, T).value();
    const double mx = *std::max_element(s.v.begin(), s.v.end());
    CHECK(mx >= prev_max);
    prev_max = mx;
  }
  CHECK(prev_max > 0.5);
}

TEST_CASE("attention is invariant to a constant shift of position logits") {
  // softmax subtracts the max, so adding a constant vector component aligned
  // with the class weight cannot change the scores
  const long d = 8, f = 2, t = 4;
  auto weights = Tensor<double>::leaf(randn({1, d}, 8));
  const auto base = randn({1, d, f, t}, 9);
  auto shifted = base;
  // adding the same vector to every position shifts all position logits by
  // the same constant, which softmax discards
  for (long c = 0; c < d; ++c)
    for (long p = 0; p < f * t; ++p)
      shifted.v[c * f * t + p] += 3.0 * weights.value().v[c];
  const auto s1 = nn::attention_scores(
                      nn::flatten_positions(Tensor<double>::leaf(base)),
                      weights, 2.0)
                      .value();
  const auto s2 = nn::attention_scores(
                      nn::flatten_positions(Tensor<double>::leaf(shifted)),
                      weights, 2.0)
                      .value();
  for (long i = 0; i < s1.numel(); ++i)
    CHECK(s1.v[i] == doctest::Approx(s2.v[i]).epsilon(1e-9));
}

TEST_CASE("class feature stays in the convex hull of positions") {
  const long N = 2, d = 8, f = 4, t = 4, m = 3;
  const auto F = randn({N, d, f, t}, 10);
  auto features = Tensor<double>::leaf(F);
  auto weights = Tensor<double>::leaf(randn({m, d}, 11));
  auto positions = nn::flatten_positions(features);
  const auto a =
      nn::class_feature(nn::attention_scores(positions, weights, 2.0),
                        positions)
          .value();
  REQUIRE(a.shape == Shape{N, m, d});
  const auto& P = positions.value();  // [N, f*t, d]
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < m; ++i)
      for (long c = 0; c < d; ++c) {
        double lo = 1e300, hi = -1e300;
        for (long k = 0; k < f * t; ++k) {
          const double v = P.v[(n * f * t + k) * d + c];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        const double v = a.v[(n * m + i) * d + c];
        CHECK(v >= lo - 1e-9);
        CHECK(v <= hi + 1e-9);
      }
}

TEST_CASE("lambda = 0 reduces to global-feature logits") {
  const long N = 2, d = 16;
  auto cfg = config(4, d);
  cfg.lambda = 0.0;
  ad::ParameterSet<double> p;
  nn::init_csra(cfg, 12, p);
  auto features = Tensor<double>::leaf(randn({N, d, 4, 8}, 13));

  const auto z = nn::csra_logits(features, p, cfg).value();
  // with lambda = 0 every head computes g . C_h; the mean over heads equals
  // g . mean(C_h)
  const auto g = nn::global_feature(features).value();  // [N,d]
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < cfg.num_classes; ++i) {
      double want = 0;
      for (long h = 0; h < cfg.num_heads; ++h) {
        const auto& C = p.at(nn::head_weight_name(cfg, h)).value();
        for (long c = 0; c < d; ++c)
          want += g.v[n * d + c] * C.v[i * d + c];
      }
      want /= cfg.num_heads;
      CHECK(z.v[n * cfg.num_classes + i] == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("csra logits shape, head count, and aggregation mode") {
  const long N = 3, d = 16;
  for (long H : {1L, 2L, 4L, 6L}) {
    auto cfg = config(H, d);
    ad::ParameterSet<double> p;
    nn::init_csra(cfg, 20 + H, p);
    CHECK(p.size() == static_cast<std::size_t>(H));
    auto features = Tensor<double>::leaf(randn({N, d, 4, 8}, 30 + H));
    const auto z = nn::csra_logits(features, p, cfg).value();
    CHECK(z.shape == Shape{N, 2});
    CHECK(z.all_finite());

    // sum_heads scales the mean by H
    auto sum_cfg = cfg;
    sum_cfg.sum_heads = true;
    const auto zs = nn::csra_logits(features, p, sum_cfg).value();
    for (long i = 0; i < z.numel(); ++i)
      CHECK(zs.v[i] == doctest::Approx(z.v[i] * H).epsilon(1e-9));
  }

  // shared weights: one parameter tensor reused by every head
  auto shared = config(4, d);
  shared.share_weights = true;
  ad::ParameterSet<double> p;
  nn::init_csra(shared, 40, p);
  CHECK(p.size() == 1);
  CHECK(p.contains("head.shared.weight"));
  auto features = Tensor<double>::leaf(randn({N, d, 4, 8}, 41));
  CHECK(nn::csra_logits(features, p, shared).value().all_finite());
}

TEST_CASE("argmax ties break to the lowest index") {
  Array<double> logits({1, 1, 4}, {2.0, 5.0, 5.0, 1.0});
  const auto idx = nn::argmax_positions(logits);
  CHECK(idx[0][0] == 1);
}

TEST_CASE("prediction thresholding") {
  Array<double> logits({2, 2}, {3.0, -3.0, 0.0, 0.2});
  const auto preds = nn::predict_labels(logits, 0.5);
  CHECK(preds[0].labels == std::vector<int>{1, 0});
  // p = 0.5 exactly sits on the boundary and counts as positive
  CHECK(preds[1].labels[0] == 1);
  CHECK(preds[1].probabilities[0] == doctest::Approx(0.5));
  CHECK(preds[1].labels[1] == 1);

  // tau sweep changes the decision
  CHECK(nn::predict_labels(logits, 0.9)[0].labels ==
        std::vector<int>{1, 0});
  CHECK(nn::predict_labels(logits, 0.96)[0].labels ==
        std::vector<int>{0, 0});
  Array<double> bad({1, 1}, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(nn::predict_labels(bad, 0.5), NumericalError);
}

TEST_CASE("config validation") {
  auto cfg = config(2);
  cfg.temperatures = {1.0};
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = config(2);
  cfg.temperatures[0] = -1.0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg = config(2);
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}
