#pragma once

// CNN6-style extractor: per block conv5x5(pad 2, no bias) -> batchnorm ->
// relu -> 2x2 average pool. Defaults map 1x64x256 to 512x4x16.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "multibreath/autodiff.hpp"
#include "multibreath/rng.hpp"

namespace mb::nn {

struct BackboneConfig {
  std::vector<long> widths{64, 128, 256, 512};
  long kernel = 5;
  long pad = 2;

  long blocks() const { return static_cast<long>(widths.size()); }
  long feature_dim() const { return widths.back(); }

  void validate() const {
    if (widths.empty()) throw UsageError("backbone needs at least one block");
    for (long w : widths)
      if (w <= 0) throw UsageError("backbone widths must be positive");
    if (kernel <= 0 || pad < 0) throw UsageError("bad backbone kernel/pad");
  }

  // analytic parameter count: per block Cout*Cin*k*k conv + 2*Cout batchnorm
  long param_count() const {
    long total = 0, cin = 1;
    for (long w : widths) {
      total += w * cin * kernel * kernel + 2 * w;
      cin = w;
    }
    return total;
  }
};

template <class T>
struct BackboneState {
  std::vector<ad::BatchNormStats<T>> bn_stats;
};

// conv weights uniform in +-sqrt(6/fan_in); gamma=1, beta=0
template <class T>
void init_backbone(const BackboneConfig& cfg, std::uint64_t seed,
                   ad::ParameterSet<T>& params, BackboneState<T>& state) {
  cfg.validate();
  Rng rng(seed);
  long cin = 1;
  state.bn_stats.clear();
  for (long b = 0; b < cfg.blocks(); ++b) {
    const long cout = cfg.widths[b];
    const std::string prefix = "backbone.block" + std::to_string(b);
    Array<T> w({cout, cin, cfg.kernel, cfg.kernel});
    const double bound = std::sqrt(6.0 / (cin * cfg.kernel * cfg.kernel));
    for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
    params.add(prefix + ".conv.weight", std::move(w));
    params.add(prefix + ".bn.gamma", Array<T>({cout}, T(1)));
    params.add(prefix + ".bn.beta", Array<T>({cout}, T(0)));
    state.bn_stats.emplace_back(cout);
    cin = cout;
  }
}

// relu_kink_margin, when given, receives the minimum |pre-relu activation|
// across all blocks: the distance to the nearest relu kink. Finite-difference
// gradient checks use it to reject inputs where a perturbation could push an
// activation across the kink and corrupt the numerical derivative.
template <class T>
ad::Tensor<T> forward_features(const BackboneConfig& cfg,
                               ad::ParameterSet<T>& params,
                               BackboneState<T>& state,
                               const ad::Tensor<T>& input, bool train,
                               T* relu_kink_margin = nullptr) {
  const Shape& s = input.shape();
  if (s.size() != 4)
    throw UsageError("forward_features: want [N,1,H,W], got " + shape_str(s));
  const long div = 1L << cfg.blocks();
  if (s[2] % div || s[3] % div)
    throw UsageError("forward_features: spatial dims " + shape_str(s) +
                     " not divisible by 2^" + std::to_string(cfg.blocks()));
  ad::Tensor<T> x = input;
  for (long b = 0; b < cfg.blocks(); ++b) {
    const std::string prefix = "backbone.block" + std::to_string(b);
    x = ad::conv2d(x, params.at(prefix + ".conv.weight"),
                   static_cast<ad::Tensor<T>*>(nullptr), 1, cfg.pad);
    x = ad::batchnorm2d(x, params.at(prefix + ".bn.gamma"),
                        params.at(prefix + ".bn.beta"), state.bn_stats[b],
                        train);
    if (relu_kink_margin)
      for (T v : x.value().v)
        *relu_kink_margin = std::min(*relu_kink_margin, std::abs(v));
    x = ad::relu(x);
    x = ad::avgpool2x2(x);
  }
  return x;
}

}  // namespace mb::nn
