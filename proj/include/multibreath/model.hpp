#pragma once

#include <string>

#include "multibreath/autodiff.hpp"
#include "multibreath/backbone.hpp"
#include "multibreath/csra.hpp"

namespace mb::nn {

enum class LossMode { kMultilabelBce, kSinglelabelCe };

inline const char* loss_mode_name(LossMode m) {
  return m == LossMode::kMultilabelBce ? "multilabel_bce" : "singlelabel_ce";
}

inline LossMode loss_mode_from_name(const std::string& s) {
  if (s == "multilabel_bce") return LossMode::kMultilabelBce;
  if (s == "singlelabel_ce") return LossMode::kSinglelabelCe;
  throw UsageError("unknown loss mode: " + s);
}

struct ModelConfig {
  BackboneConfig backbone;
  CsraHeadConfig head;
  LossMode loss_mode = LossMode::kMultilabelBce;
  // dataset-level standardization of the log-mel input
  double input_mean = 0.0;
  double input_std = 1.0;

  void validate() const {
    backbone.validate();
    head.validate();
    if (head.feature_dim != backbone.feature_dim())
      throw UsageError("head feature dim != backbone output width");
    // single-label mode scores the four joint classes directly
    const long want = loss_mode == LossMode::kSinglelabelCe ? 4 : 2;
    if (head.num_classes != want)
      throw UsageError(std::string("loss mode ") + loss_mode_name(loss_mode) +
                       " needs " + std::to_string(want) + " head classes");
    if (input_std <= 0.0) throw UsageError("input std must be > 0");
  }
};

template <class T>
struct Model {
  ModelConfig cfg;
  ad::ParameterSet<T> params;
  BackboneState<T> backbone_state;

  static Model init(ModelConfig cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = std::move(cfg);
    init_backbone(m.cfg.backbone, seed, m.params, m.backbone_state);
    init_csra(m.cfg.head, seed + 1, m.params);
    return m;
  }

  // spectrogram batch [N,1,H,W] -> logits [N, num_classes]
  ad::Tensor<T> forward(const Array<T>& batch, bool train) {
    Array<T> norm = batch;
    const T mean = static_cast<T>(cfg.input_mean);
    const T inv = static_cast<T>(1.0 / cfg.input_std);
    for (auto& x : norm.v) x = (x - mean) * inv;
    ad::Tensor<T> input = ad::Tensor<T>::leaf(std::move(norm), false);
    ad::Tensor<T> features =
        forward_features(cfg.backbone, params, backbone_state, input, train);
    return csra_logits(features, params, cfg.head);
  }
};

// Versioned binary checkpoint: magic, version, config as embedded JSON
// text, then named records (trainables plus batchnorm buffers) as
// little-endian float32.
void save_checkpoint(const std::string& path, const Model<float>& model,
                     const std::string& extra_json = "{}");
Model<float> load_checkpoint(const std::string& path,
                             std::string* extra_json = nullptr);

}  // namespace mb::nn
