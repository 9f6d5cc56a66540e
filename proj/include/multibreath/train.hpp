#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "multibreath/autodiff.hpp"
#include "multibreath/dsp.hpp"
#include "multibreath/icbhi.hpp"
#include "multibreath/model.hpp"

namespace mb::train {

struct TrainConfig {
  double learning_rate = 1e-3;
  long batch_size = 64;
  long epochs = 50;
  double eta_min = 0.0;
  double weight_decay = 0.0;   // off unless configured
  double grad_clip = 0.0;      // 0 disables clipping
  std::uint64_t seed = 0;
  dsp::MaskSpec masks;
  long threads = 1;  // 1 is the bit-reproducible mode
  bool log_wall_time = true;

  void validate() const {
    if (learning_rate <= 0 || batch_size <= 0 || epochs <= 0)
      throw UsageError("train config: hyperparameters must be positive");
    if (eta_min < 0 || weight_decay < 0 || grad_clip < 0)
      throw UsageError("train config: negative value");
  }
};

// lr = eta_min + (lr_max - eta_min) * (1 + cos(pi * step / total)) / 2,
// clamped to eta_min past the horizon
inline double cosine_lr(long step, long total_steps, double lr_max = 1e-3,
                        double eta_min = 0.0) {
  if (step < 0 || total_steps <= 0) throw UsageError("cosine_lr: bad step");
  if (step > total_steps) return eta_min;
  return eta_min +
         0.5 * (lr_max - eta_min) *
             (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps));
}

template <class T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Array<T>> m, v;
};

// Standard Adam with bias correction. Rejects non-finite gradients before
// touching any state.
template <class T>
void adam_step(ad::ParameterSet<T>& params, AdamState<T>& state, double lr,
               double weight_decay = 0.0) {
  for (auto& [name, p] : params) {
    if (p.grad().v.empty() && p.value().numel() > 0)
      throw UsageError("adam_step: missing gradient for " + name);
    if (!p.grad().all_finite())
      throw NumericalError("adam_step: non-finite gradient in " + name);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (auto& [name, p] : params) {
    Array<T>& m = state.m.try_emplace(name, Array<T>(p.shape())).first->second;
    Array<T>& v = state.v.try_emplace(name, Array<T>(p.shape())).first->second;
    Array<T>& val = p.raw_value();
    const Array<T>& g = p.grad();
    for (long i = 0; i < val.numel(); ++i) {
      T gi = g.v[i];
      if (weight_decay > 0) gi += static_cast<T>(weight_decay) * val.v[i];
      m.v[i] = static_cast<T>(state.beta1 * m.v[i] + (1.0 - state.beta1) * gi);
      v.v[i] = static_cast<T>(state.beta2 * v.v[i] + (1.0 - state.beta2) * gi * gi);
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      val.v[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// global L2-norm clipping, applied only when max_norm > 0
template <class T>
void clip_gradients(ad::ParameterSet<T>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (auto& [_, p] : params)
    for (T g : p.grad().v) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const T scale = static_cast<T>(max_norm / norm);
  for (auto& [_, p] : params)
    for (T& g : p.grad().v) g *= scale;
}

struct TrainExample {
  Array<float> spec;  // unnormalized log-mel, [64 x 256]
  icbhi::LabelVector label;
};

struct EpochLog {
  long epoch = 0;
  double mean_loss = 0.0;
  double lr_start = 0.0;
  double lr_end = 0.0;
  double wall_seconds = 0.0;
};

// One pass over the training examples: seeded shuffle, masked batches,
// forward/backward, Adam with per-step cosine lr. The final partial batch
// is used. Throws NumericalError with batch diagnostics on non-finite loss.
EpochLog train_epoch(nn::Model<float>& model,
                     const std::vector<TrainExample>& examples,
                     const TrainConfig& cfg, AdamState<float>& adam,
                     long epoch_index, long total_steps, long& global_step);

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochLog& log);

}  // namespace mb::train
