#include "multibreath/train.hpp"

#include <chrono>
#include <sstream>

#include "multibreath/rng.hpp"

namespace mb::train {

namespace {

// stable per-sample mask seed: mixes run seed, epoch and dataset index
std::uint64_t mask_seed(std::uint64_t run_seed, long epoch, long index) {
  std::uint64_t x = run_seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)) ^
                    (0xbf58476d1ce4e5b9ULL * (index + 1));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

EpochLog train_epoch(nn::Model<float>& model,
                     const std::vector<TrainExample>& examples,
                     const TrainConfig& cfg, AdamState<float>& adam,
                     long epoch_index, long total_steps, long& global_step) {
  cfg.validate();
  if (examples.empty()) throw DataError("train_epoch: no training examples");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<long> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
  Rng shuffle_rng(cfg.seed ^ (0xa24baed4963ee407ULL * (epoch_index + 1)));
  shuffle_rng.shuffle(order.begin(), order.end());

  const long n_mels = examples[0].spec.shape[0];
  const long n_frames = examples[0].spec.shape[1];
  const bool multilabel = model.cfg.loss_mode == nn::LossMode::kMultilabelBce;

  EpochLog log;
  log.epoch = epoch_index;
  log.lr_start = cosine_lr(global_step, total_steps, cfg.learning_rate, cfg.eta_min);

  double loss_sum = 0.0;
  long sample_count = 0;
  double last_lr = log.lr_start;

  for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
    const long bs = std::min<long>(cfg.batch_size,
                                   static_cast<long>(order.size() - pos));
    Array<float> batch({bs, 1, n_mels, n_frames});
    Array<float> targets({bs, multilabel ? 2L : 0L});
    std::vector<long> class_ids(multilabel ? 0 : bs);
    for (long b = 0; b < bs; ++b) {
      const long idx = order[pos + b];
      const TrainExample& ex = examples[idx];
      dsp::MelSpectrogram s{ex.spec, ""};
      dsp::MelSpectrogram masked =
          dsp::apply_masks(s, cfg.masks, mask_seed(cfg.seed, epoch_index, idx));
      std::copy(masked.values.v.begin(), masked.values.v.end(),
                batch.v.begin() + b * n_mels * n_frames);
      if (multilabel) {
        targets.v[b * 2 + 0] = static_cast<float>(ex.label.crackle);
        targets.v[b * 2 + 1] = static_cast<float>(ex.label.wheeze);
      } else {
        class_ids[b] =
            icbhi::class_from_flags(ex.label.crackle, ex.label.wheeze);
      }
    }

    model.params.zero_grads();
    ad::Tensor<float> logits = model.forward(batch, /*train=*/true);
    ad::Tensor<float> loss = multilabel
                                 ? ad::bce_with_logits(logits, targets)
                                 : ad::cross_entropy(logits, class_ids);
    const double loss_val = static_cast<double>(loss.value().v[0]);
    if (!std::isfinite(loss_val)) {
      std::ostringstream os;
      os << "non-finite loss " << loss_val << " in epoch " << epoch_index
         << ", batch starting at shuffled position " << pos << " (samples";
      for (long b = 0; b < bs; ++b) os << " " << order[pos + b];
      os << ")";
      throw NumericalError(os.str());
    }
    ad::backward(loss);
    clip_gradients(model.params, cfg.grad_clip);
    last_lr = cosine_lr(global_step, total_steps, cfg.learning_rate, cfg.eta_min);
    adam_step(model.params, adam, last_lr, cfg.weight_decay);
    ++global_step;

    loss_sum += loss_val * bs;
    sample_count += bs;
  }

  log.mean_loss = loss_sum / sample_count;
  log.lr_end = last_lr;
  if (cfg.log_wall_time)
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
  return log;
}

std::string epoch_csv_header() {
  return "epoch,mean_train_loss,lr_start,lr_end,wall_seconds";
}

std::string epoch_csv_row(const EpochLog& log) {
  std::ostringstream os;
  os.precision(10);
  os << log.epoch << "," << log.mean_loss << "," << log.lr_start << ","
     << log.lr_end << "," << log.wall_seconds;
  return os.str();
}

}  // namespace mb::train
