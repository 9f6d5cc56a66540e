#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "multibreath/backbone.hpp"
#include "multibreath/rng.hpp"

using namespace mb;

TEST_CASE("default config maps 1x64x256 to 512x4x16") {
  nn::BackboneConfig cfg;
  ad::ParameterSet<float> p;
  nn::BackboneState<float> state;
  nn::init_backbone(cfg, 1, p, state);

  Array<float> x({2, 1, 64, 256});
  Rng rng(2);
  for (float& v : x.v) v = static_cast<float>(rng.normal());
  const auto y =
      nn::forward_features(cfg, p, state, ad::Tensor<float>::leaf(x), true);
  CHECK(y.shape() == Shape{2, 512, 4, 16});
}

TEST_CASE("shape law: each block halves both spatial dims") {
  nn::BackboneConfig cfg;
  cfg.widths = {3, 5, 7};
  ad::ParameterSet<float> p;
  nn::BackboneState<float> state;
  nn::init_backbone(cfg, 1, p, state);
  Array<float> x({1, 1, 16, 32}, 0.5f);
  const auto y =
      nn::forward_features(cfg, p, state, ad::Tensor<float>::leaf(x), false);
  CHECK(y.shape() == Shape{1, 7, 2, 4});

  // indivisible input is rejected up front
  Array<float> odd({1, 1, 12, 32}, 0.0f);
  CHECK_THROWS_AS(
      nn::forward_features(cfg, p, state, ad::Tensor<float>::leaf(odd), false),
      UsageError);
}

TEST_CASE("parameter count matches the closed form") {
  nn::BackboneConfig cfg;  // 64,128,256,512 with 5x5 kernels
  long want = 0, cin = 1;
  for (long w : cfg.widths) {
    want += w * cin * 25 + 2 * w;
    cin = w;
  }
  CHECK(cfg.param_count() == want);

  ad::ParameterSet<float> p;
  nn::BackboneState<float> state;
  nn::init_backbone(cfg, 9, p, state);
  CHECK(p.total_count() == cfg.param_count());
  CHECK(p.size() == 3 * cfg.widths.size());  // conv + gamma + beta per block
}

TEST_CASE("initialization follows the stated scheme") {
  nn::BackboneConfig cfg;
  cfg.widths = {8, 16};
  ad::ParameterSet<double> p;
  nn::BackboneState<double> state;
  nn::init_backbone(cfg, 123, p, state);

  // conv weights live inside +-sqrt(6/fan_in), use a decent part of the range,
  // and are not all equal
  long cin = 1;
  for (std::size_t b = 0; b < cfg.widths.size(); ++b) {
    const auto& w =
        p.at("backbone.block" + std::to_string(b) + ".conv.weight").value();
    const double bound = std::sqrt(6.0 / (cin * 25.0));
    double lo = 0, hi = 0;
    for (double v : w.v) {
      CHECK(std::abs(v) <= bound);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(hi > 0.5 * bound);
    CHECK(lo < -0.5 * bound);
    cin = cfg.widths[b];
    for (double v :
         p.at("backbone.block" + std::to_string(b) + ".bn.gamma").value().v)
      CHECK(v == 1.0);
    for (double v :
         p.at("backbone.block" + std::to_string(b) + ".bn.beta").value().v)
      CHECK(v == 0.0);
    CHECK(state.bn_stats[b].running_mean.v ==
          std::vector<double>(cfg.widths[b], 0.0));
    CHECK(state.bn_stats[b].running_var.v ==
          std::vector<double>(cfg.widths[b], 1.0));
  }

  // deterministic in the seed
  ad::ParameterSet<double> q;
  nn::BackboneState<double> qs;
  nn::init_backbone(cfg, 123, q, qs);
  CHECK(q.at("backbone.block0.conv.weight").value().v ==
        p.at("backbone.block0.conv.weight").value().v);
  ad::ParameterSet<double> r;
  nn::BackboneState<double> rs;
  nn::init_backbone(cfg, 124, r, rs);
  CHECK(r.at("backbone.block0.conv.weight").value().v !=
        p.at("backbone.block0.conv.weight").value().v);
}

TEST_CASE("train and eval modes produce valid, different outputs") {
  nn::BackboneConfig cfg;
  cfg.widths = {4, 8};
  ad::ParameterSet<float> p;
  nn::BackboneState<float> state;
  nn::init_backbone(cfg, 3, p, state);
  Array<float> x({2, 1, 8, 8});
  Rng rng(4);
  for (float& v : x.v) v = static_cast<float>(rng.normal());

  const auto train_out =
      nn::forward_features(cfg, p, state, ad::Tensor<float>::leaf(x), true);
  const auto eval_out =
      nn::forward_features(cfg, p, state, ad::Tensor<float>::leaf(x), false);
  CHECK(train_out.value().all_finite());
  CHECK(eval_out.value().all_finite());
  // relu + pooling keep activations non-negative
  for (float v : train_out.value().v) CHECK(v >= 0.0f);
  // batch stats vs running stats differ after one momentum step
  CHECK(train_out.value().v != eval_out.value().v);
}

TEST_CASE("config validation") {
  nn::BackboneConfig cfg;
  cfg.widths = {};
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.widths = {4, -1};
  CHECK_THROWS_AS(cfg.validate(), UsageError);
  cfg.widths = {4};
  cfg.kernel = 0;
  CHECK_THROWS_AS(cfg.validate(), UsageError);
}
