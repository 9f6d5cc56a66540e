#pragma once

// Multi-head class-specific residual attention classifier. Per head with
// temperature T: attention over the P=f*t spatial positions of each class's
// logit map, a weighted feature a^i, and the residual f^i = g + lambda*a^i
// scored by the same class vector. T = infinity degenerates to max pooling
// over positions.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "multibreath/autodiff.hpp"
#include "multibreath/rng.hpp"

namespace mb::nn {

struct CsraHeadConfig {
  long num_classes = 2;  // (crackle, wheeze)
  long num_heads = 1;
  std::vector<double> temperatures;  // infinity() encodes the max-pool head
  double lambda = 0.1;
  long feature_dim = 512;
  bool share_weights = false;  // one C shared by all heads (ablation)
  bool sum_heads = false;      // sum instead of mean over heads

  // H=1 -> (1); H=2 -> (1,inf); H=4 -> (1,2,3,inf); H=6 -> (1..5,inf)
  static std::vector<double> default_temperatures(long num_heads) {
    if (num_heads == 1) return {1.0};
    std::vector<double> t;
    for (long i = 1; i < num_heads; ++i) t.push_back(static_cast<double>(i));
    t.push_back(std::numeric_limits<double>::infinity());
    return t;
  }

  void validate() const {
    if (num_classes <= 0 || num_heads <= 0 || feature_dim <= 0)
      throw UsageError("csra config: non-positive dimension");
    if (static_cast<long>(temperatures.size()) != num_heads)
      throw UsageError("csra config: need one temperature per head");
    for (double t : temperatures)
      if (!(t > 0.0)) throw UsageError("csra config: temperatures must be > 0");
    if (lambda < 0.0) throw UsageError("csra config: lambda must be >= 0");
  }
};

inline std::string head_weight_name(const CsraHeadConfig& cfg, long head) {
  return cfg.share_weights ? std::string("head.shared.weight")
                           : "head.h" + std::to_string(head) + ".weight";
}

template <class T>
void init_csra(const CsraHeadConfig& cfg, std::uint64_t seed,
               ad::ParameterSet<T>& params) {
  cfg.validate();
  Rng rng(seed);
  const long n = cfg.share_weights ? 1 : cfg.num_heads;
  const double bound = std::sqrt(6.0 / cfg.feature_dim);
  for (long h = 0; h < n; ++h) {
    Array<T> w({cfg.num_classes, cfg.feature_dim});
    for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
    params.add(head_weight_name(cfg, h), std::move(w));
  }
}

// positions: features [N,d,f,t] -> [N,P,d] with P = f*t
template <class T>
ad::Tensor<T> flatten_positions(const ad::Tensor<T>& features) {
  const Shape& s = features.shape();
  if (s.size() != 4)
    throw UsageError("csra: want features [N,d,f,t], got " + shape_str(s));
  return ad::transpose_last2(
      ad::reshape(features, Shape{s[0], s[1], s[2] * s[3]}));
}

// pre-softmax position logits: [N, m, P]
template <class T>
ad::Tensor<T> position_logits(const ad::Tensor<T>& positions,
                              const ad::Tensor<T>& class_weights) {
  return ad::transpose_last2(
      ad::matmul(positions, ad::transpose_last2(class_weights)));
}

// Finite T: softmax(T * x_j . C_i) over positions, [N, m, P].
// For T = infinity call infinite_attention_onehot instead.
template <class T>
ad::Tensor<T> attention_scores(const ad::Tensor<T>& positions,
                               const ad::Tensor<T>& class_weights,
                               double temperature) {
  if (!std::isfinite(temperature))
    throw UsageError("attention_scores: use the max-pool path for T = inf");
  ad::Tensor<T> logits = position_logits(positions, class_weights);
  return ad::softmax_axis(ad::smul(logits, static_cast<T>(temperature)), 2);
}

// argmax positions per (batch, class); ties break to the lowest index
template <class T>
std::vector<std::vector<long>> argmax_positions(const Array<T>& logits) {
  const long N = logits.shape[0], m = logits.shape[1], P = logits.shape[2];
  std::vector<std::vector<long>> idx(N, std::vector<long>(m, 0));
  for (long n = 0; n < N; ++n)
    for (long i = 0; i < m; ++i) {
      const T* row = logits.data() + (n * m + i) * P;
      long best = 0;
      for (long k = 1; k < P; ++k)
        if (row[k] > row[best]) best = k;
      idx[n][i] = best;
    }
  return idx;
}

// a^i = sum_k s_k^i x_k : [N, m, d]
template <class T>
ad::Tensor<T> class_feature(const ad::Tensor<T>& scores,
                            const ad::Tensor<T>& positions) {
  return ad::matmul(scores, positions);
}

// g = max_f(mean_t R) + mean_f(mean_t R) : [N, d]
template <class T>
ad::Tensor<T> global_feature(const ad::Tensor<T>& features) {
  const Shape& s = features.shape();
  if (s.size() != 4)
    throw UsageError("global_feature: want [N,d,f,t], got " + shape_str(s));
  ad::Tensor<T> over_time = ad::mean_axis(features, 3);  // [N,d,f]
  return ad::add(ad::max_axis(over_time, 2), ad::mean_axis(over_time, 2));
}

// Per-head logits z_i = (g + lambda * a^i) . C_i, aggregated over heads.
template <class T>
ad::Tensor<T> csra_logits(const ad::Tensor<T>& features,
                          ad::ParameterSet<T>& params,
                          const CsraHeadConfig& cfg) {
  cfg.validate();
  const Shape& s = features.shape();
  if (s[1] != cfg.feature_dim)
    throw UsageError("csra_logits: feature dim " + std::to_string(s[1]) +
                     " != config " + std::to_string(cfg.feature_dim));
  const long N = s[0], m = cfg.num_classes;

  ad::Tensor<T> positions = flatten_positions(features);  // [N,P,d]
  ad::Tensor<T> g = global_feature(features);             // [N,d]
  ad::Tensor<T> g_bc =
      ad::repeat_axis(ad::reshape(g, Shape{N, 1, cfg.feature_dim}), 1, m);

  ad::Tensor<T> total;
  for (long h = 0; h < cfg.num_heads; ++h) {
    ad::Tensor<T>& C = params.at(head_weight_name(cfg, h));
    if (C.shape() != Shape{m, cfg.feature_dim})
      throw UsageError("csra_logits: weights for head " + std::to_string(h) +
                       " have shape " + shape_str(C.shape()) + ", want " +
                       shape_str(Shape{m, cfg.feature_dim}));
    ad::Tensor<T> a;
    if (std::isfinite(cfg.temperatures[h])) {
      ad::Tensor<T> scores = attention_scores(positions, C, cfg.temperatures[h]);
      a = class_feature(scores, positions);
    } else {
      // max pooling: select the argmax position; the selection itself is
      // treated as constant, so gradient flows through the chosen x only
      ad::Tensor<T> logits = position_logits(positions, C);
      a = ad::gather_positions(positions, argmax_positions(logits.value()));
    }
    ad::Tensor<T> f = ad::add(g_bc, ad::smul(a, static_cast<T>(cfg.lambda)));
    ad::Tensor<T> C_bc =
        ad::repeat_axis(ad::reshape(C, Shape{1, m, cfg.feature_dim}), 0, N);
    ad::Tensor<T> z = ad::sum_axis(ad::mul(f, C_bc), 2);  // [N,m]
    total = total.defined() ? ad::add(total, z) : z;
  }
  if (!cfg.sum_heads && cfg.num_heads > 1)
    total = ad::smul(total, T(1) / T(cfg.num_heads));
  return total;
}

// decision rule: p = sigmoid(logit), label = p >= tau
struct Prediction {
  std::vector<double> probabilities;
  std::vector<int> labels;
};

template <class T>
std::vector<Prediction> predict_labels(const Array<T>& logits,
                                       double tau = 0.5) {
  if (logits.rank() != 2) throw UsageError("predict_labels: want [N,m] logits");
  const long N = logits.shape[0], m = logits.shape[1];
  std::vector<Prediction> out(N);
  for (long n = 0; n < N; ++n) {
    out[n].probabilities.resize(m);
    out[n].labels.resize(m);
    for (long i = 0; i < m; ++i) {
      const double z = static_cast<double>(logits.v[n * m + i]);
      if (!std::isfinite(z)) throw NumericalError("predict_labels: non-finite logit");
      const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                : std::exp(z) / (1.0 + std::exp(z));
      out[n].probabilities[i] = p;
      out[n].labels[i] = p >= tau ? 1 : 0;
    }
  }
  return out;
}

}  // namespace mb::nn
