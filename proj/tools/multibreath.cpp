// multibreath: respiratory-sound classification pipeline.
// Subcommands: prepare, synth, train, evaluate, predict, gradcheck.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "multibreath/config.hpp"
#include "multibreath/gradcheck_suite.hpp"
#include "multibreath/image.hpp"
#include "multibreath/metrics.hpp"
#include "multibreath/model.hpp"
#include "multibreath/pipeline.hpp"
#include "multibreath/train.hpp"

namespace fs = std::filesystem;
using namespace mb;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file,
                  "config file with key = value lines");
  cmd->add_option("--set", args.overrides,
                  "override a config key (key=value), repeatable");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_file.empty()) cfg.load_file(args.config_file);
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw UsageError("--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  const std::string text = cfg.resolved();
  std::cout << "resolved config:\n" << text;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / "resolved_config.txt");
    f << text;
  }
}

dsp::MaskSpec mask_spec_from(const RunConfig& cfg) {
  dsp::MaskSpec m;
  m.max_time_frames = static_cast<int>(cfg.get_long("masks.max_time_frames"));
  m.max_freq_bins = static_cast<int>(cfg.get_long("masks.max_freq_bins"));
  m.num_masks_per_axis = static_cast<int>(cfg.get_long("masks.num_per_axis"));
  m.fill_value = static_cast<float>(cfg.get_double("masks.fill_value"));
  return m;
}

dsp::MelFilterbank filterbank_from(const RunConfig& cfg) {
  for (const auto& [key, want] :
       std::initializer_list<std::pair<const char*, const char*>>{
           {"mel.window", "hann"},
           {"mel.edge_padding", "reflect"},
           {"mel.scale", "htk"}}) {
    if (cfg.get(key) != want)
      throw UsageError(std::string(key) + ": only '" + want +
                       "' is implemented");
  }
  return dsp::build_mel_filterbank(dsp::kFftSize, dsp::kTargetRateHz,
                                   dsp::kNumMels, cfg.get_double("mel.fmin_hz"),
                                   cfg.get_double("mel.fmax_hz"));
}

nn::ModelConfig model_config_from(const RunConfig& cfg, double mean, double sd) {
  nn::ModelConfig mc;
  mc.backbone.widths = cfg.get_long_list("backbone.widths");
  mc.backbone.kernel = cfg.get_long("backbone.kernel");
  mc.backbone.pad = cfg.get_long("backbone.pad");
  mc.loss_mode = nn::loss_mode_from_name(cfg.get("loss_mode"));
  mc.head.num_classes = mc.loss_mode == nn::LossMode::kSinglelabelCe ? 4 : 2;
  mc.head.num_heads = cfg.get_long("head.num_heads");
  mc.head.temperatures =
      nn::CsraHeadConfig::default_temperatures(mc.head.num_heads);
  mc.head.lambda = cfg.get_double("head.lambda");
  mc.head.share_weights = cfg.get_bool("head.share_weights");
  mc.head.sum_heads = cfg.get_bool("head.sum_heads");
  mc.head.feature_dim = mc.backbone.feature_dim();
  mc.input_mean = mean;
  mc.input_std = sd;
  return mc;
}

train::TrainConfig train_config_from(const RunConfig& cfg) {
  train::TrainConfig tc;
  tc.learning_rate = cfg.get_double("train.learning_rate");
  tc.batch_size = cfg.get_long("train.batch_size");
  tc.epochs = cfg.get_long("train.epochs");
  tc.eta_min = cfg.get_double("train.eta_min");
  tc.weight_decay = cfg.get_double("train.weight_decay");
  tc.grad_clip = cfg.get_double("train.grad_clip");
  tc.seed = static_cast<std::uint64_t>(cfg.get_long("seed"));
  tc.masks = mask_spec_from(cfg);
  tc.threads = cfg.get_long("threads");
  // wall time varies between runs; keep the CSV byte-reproducible in the
  // single-threaded mode
  tc.log_wall_time = tc.threads != 1;
  tc.validate();
  return tc;
}

void write_dataset_outputs(const std::string& data_dir,
                           const std::string& out_dir,
                           icbhi::DatasetManifest manifest,
                           const dsp::MelFilterbank& fb) {
  fs::create_directories(out_dir);
  pipeline::DatasetSummary summary = pipeline::summarize(manifest);
  const auto train_examples = pipeline::load_examples(
      data_dir, manifest, icbhi::Split::kTrain, fb);
  pipeline::compute_normalization(train_examples, summary.logmel_mean,
                                  summary.logmel_std);
  pipeline::write_manifest((fs::path(out_dir) / "manifest.jsonl").string(),
                           manifest);
  pipeline::write_summary((fs::path(out_dir) / "summary.json").string(),
                          summary);
  std::cout << "cycles per class (train): " << summary.counts[0][0] << " "
            << summary.counts[0][1] << " " << summary.counts[0][2] << " "
            << summary.counts[0][3] << "\n";
  std::cout << "cycles per class (test):  " << summary.counts[1][0] << " "
            << summary.counts[1][1] << " " << summary.counts[1][2] << " "
            << summary.counts[1][3] << "\n";
  std::cout << "patients: " << summary.train_patients << " train, "
            << summary.test_patients << " test\n";
  std::cout << "log-mel normalization: mean " << summary.logmel_mean
            << ", std " << summary.logmel_std << "\n";
}

metrics::MetricsReport evaluate_examples(
    nn::Model<float>& model, const std::vector<train::TrainExample>& examples,
    double tau);

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// ---- commands ----

int cmd_prepare(const CommonArgs& common, const std::string& data_dir,
                const std::string& out_dir, const std::string& split_file) {
  RunConfig cfg = resolve_config(common);
  echo_config(cfg, out_dir);
  const auto recordings = pipeline::scan_dataset_dir(data_dir);
  auto entries = pipeline::build_entries(recordings);
  icbhi::DatasetManifest manifest;
  if (cfg.get("split.mode") == "official") {
    if (split_file.empty())
      throw UsageError("prepare: --split-file is required in official mode");
    manifest = icbhi::split_patients_official(
        std::move(entries), icbhi::parse_split_file(read_text_file(split_file)));
  } else if (cfg.get("split.mode") == "ratio") {
    manifest = icbhi::split_patients_ratio(
        std::move(entries), cfg.get_double("split.ratio"),
        static_cast<std::uint64_t>(cfg.get_long("seed")));
  } else {
    throw UsageError("split.mode must be official or ratio, got " +
                     cfg.get("split.mode"));
  }
  write_dataset_outputs(data_dir, out_dir, std::move(manifest),
                        filterbank_from(cfg));
  return 0;
}

int cmd_synth(const CommonArgs& common, const std::string& out_dir) {
  RunConfig cfg = resolve_config(common);
  echo_config(cfg, out_dir);
  pipeline::SynthSpec spec;
  spec.per_class_train = cfg.get_long("synth.per_class_train");
  spec.per_class_test = cfg.get_long("synth.per_class_test");
  spec.sample_rate_hz = static_cast<int>(cfg.get_long("synth.rate_hz"));
  spec.min_duration_s = cfg.get_double("synth.min_duration_s");
  spec.max_duration_s = cfg.get_double("synth.max_duration_s");
  spec.seed = static_cast<std::uint64_t>(cfg.get_long("seed"));
  const std::string split_file = pipeline::write_synth_dataset(out_dir, spec);
  auto entries = pipeline::build_entries(pipeline::scan_dataset_dir(out_dir));
  icbhi::DatasetManifest manifest = icbhi::split_patients_official(
      std::move(entries), icbhi::parse_split_file(read_text_file(split_file)));
  write_dataset_outputs(out_dir, out_dir, std::move(manifest),
                        filterbank_from(cfg));
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& work_dir,
              const std::string& data_dir_arg, const std::string& out_dir_arg,
              bool plot) {
  RunConfig cfg = resolve_config(common);
  const std::string data_dir = data_dir_arg.empty() ? work_dir : data_dir_arg;
  const std::string out_dir = out_dir_arg.empty() ? work_dir : out_dir_arg;
  echo_config(cfg, out_dir);

  const auto manifest =
      pipeline::read_manifest((fs::path(work_dir) / "manifest.jsonl").string());
  const auto summary =
      pipeline::read_summary((fs::path(work_dir) / "summary.json").string());
  const dsp::MelFilterbank fb = filterbank_from(cfg);
  auto examples =
      pipeline::load_examples(data_dir, manifest, icbhi::Split::kTrain, fb);
  if (examples.empty()) throw DataError("train: no training cycles in manifest");

  // optional patient-disjoint validation carve-out
  std::vector<train::TrainExample> val_examples;
  const double val_frac = cfg.get_double("train.validation_fraction");
  if (val_frac > 0) {
    std::vector<icbhi::ManifestEntry> train_entries;
    for (const auto& e : manifest.entries)
      if (e.split == icbhi::Split::kTrain) train_entries.push_back(e);
    auto carved = icbhi::split_patients_ratio(
        std::move(train_entries), 1.0 - val_frac,
        static_cast<std::uint64_t>(cfg.get_long("seed")) + 13);
    std::vector<train::TrainExample> keep;
    for (std::size_t i = 0; i < carved.entries.size(); ++i)
      (carved.entries[i].split == icbhi::Split::kTrain ? keep : val_examples)
          .push_back(std::move(examples[i]));
    examples = std::move(keep);
  }

  const train::TrainConfig tc = train_config_from(cfg);
  nn::ModelConfig mc =
      model_config_from(cfg, summary.logmel_mean, summary.logmel_std);
  nn::Model<float> model = nn::Model<float>::init(mc, tc.seed);

  const long steps_per_epoch =
      (static_cast<long>(examples.size()) + tc.batch_size - 1) / tc.batch_size;
  const long total_steps = steps_per_epoch * tc.epochs;

  train::AdamState<float> adam;
  long global_step = 0;
  std::ostringstream csv;
  csv << train::epoch_csv_header();
  if (!val_examples.empty()) csv << ",val_score";
  csv << "\n";
  std::vector<double> losses;
  for (long epoch = 0; epoch < tc.epochs; ++epoch) {
    const train::EpochLog log = train::train_epoch(
        model, examples, tc, adam, epoch, total_steps, global_step);
    losses.push_back(log.mean_loss);
    csv << train::epoch_csv_row(log);
    if (!val_examples.empty()) {
      const auto report = evaluate_examples(model, val_examples,
                                            cfg.get_double("head.tau"));
      csv << "," << (report.score ? std::to_string(*report.score) : "undefined");
    }
    csv << "\n";
    std::cout << "epoch " << epoch << ": mean loss " << log.mean_loss
              << ", lr " << log.lr_start << " -> " << log.lr_end << "\n";
  }

  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "train_log.csv");
    f << csv.str();
  }
  if (plot)
    image::write_loss_curve((fs::path(out_dir) / "loss_curve.ppm").string(),
                            losses);
  std::ostringstream extra;
  extra << "{\"trained_epochs\": " << tc.epochs << ", \"rng_state\": \""
        << tc.seed << "\", \"global_step\": " << global_step << "}";
  nn::save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), model,
                      extra.str());
  std::cout << "checkpoint written to "
            << (fs::path(out_dir) / "checkpoint.bin").string() << "\n";
  return 0;
}

metrics::MetricsReport evaluate_examples(
    nn::Model<float>& model, const std::vector<train::TrainExample>& examples,
    double tau) {
  std::vector<icbhi::LabelVector> truth, pred;
  const long batch_size = 64;
  const long n_mels = examples[0].spec.shape[0];
  const long n_frames = examples[0].spec.shape[1];
  for (std::size_t pos = 0; pos < examples.size(); pos += batch_size) {
    const long bs =
        std::min<long>(batch_size, static_cast<long>(examples.size() - pos));
    Array<float> batch({bs, 1, n_mels, n_frames});
    for (long b = 0; b < bs; ++b)
      std::copy(examples[pos + b].spec.v.begin(),
                examples[pos + b].spec.v.end(),
                batch.v.begin() + b * n_mels * n_frames);
    const ad::Tensor<float> logits = model.forward(batch, /*train=*/false);
    if (model.cfg.loss_mode == nn::LossMode::kMultilabelBce) {
      const auto preds = nn::predict_labels(logits.value(), tau);
      for (long b = 0; b < bs; ++b)
        pred.push_back({preds[b].labels[0], preds[b].labels[1]});
    } else {
      for (long b = 0; b < bs; ++b) {
        const float* z = logits.value().data() + b * 4;
        int best = 0;
        for (int k = 1; k < 4; ++k)
          if (z[k] > z[best]) best = k;
        pred.push_back(icbhi::flags_from_class(best));
      }
    }
    for (long b = 0; b < bs; ++b) truth.push_back(examples[pos + b].label);
  }
  return metrics::icbhi_metrics(metrics::confusion(truth, pred));
}

int cmd_evaluate(const CommonArgs& common, const std::string& checkpoint,
                 const std::string& work_dir, const std::string& data_dir_arg,
                 const std::string& split, const std::string& out_path,
                 bool plot) {
  RunConfig cfg = resolve_config(common);
  const std::string data_dir = data_dir_arg.empty() ? work_dir : data_dir_arg;
  if (split != "train" && split != "test")
    throw UsageError("evaluate: --split must be train or test");
  nn::Model<float> model = nn::load_checkpoint(checkpoint);
  const auto manifest =
      pipeline::read_manifest((fs::path(work_dir) / "manifest.jsonl").string());
  const auto examples = pipeline::load_examples(
      data_dir, manifest,
      split == "train" ? icbhi::Split::kTrain : icbhi::Split::kTest,
      filterbank_from(cfg));
  if (examples.empty()) throw DataError("evaluate: no cycles in split " + split);
  const auto report =
      evaluate_examples(model, examples, cfg.get_double("head.tau"));
  const std::string text = metrics::format_metrics(report);
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw DataError("cannot write metrics to " + out_path);
    f << text;
    if (plot) {
      fs::path heatmap = fs::path(out_path).parent_path() / "confusion.ppm";
      image::write_confusion_heatmap(heatmap.string(), report.matrix);
    }
  }
  return 0;
}

int cmd_predict(const CommonArgs& common, const std::string& checkpoint,
                const std::string& audio_path,
                const std::string& annotation_path) {
  RunConfig cfg = resolve_config(common);
  nn::Model<float> model = nn::load_checkpoint(checkpoint);
  const double tau = cfg.get_double("head.tau");
  const Waveform w = read_wav(audio_path);

  std::vector<icbhi::CycleAnnotation> anns;
  if (!annotation_path.empty()) {
    anns = icbhi::parse_annotation_file(read_text_file(annotation_path));
  } else {
    anns.push_back({0.0, w.duration_s(), 0, 0});  // whole file as one cycle
  }
  icbhi::RecordingMeta meta;
  meta.file_stem = fs::path(audio_path).stem().string();
  const auto cycles = icbhi::extract_cycles(w, anns, meta);
  const dsp::MelFilterbank fb = filterbank_from(cfg);

  std::cout << "cycle start_s end_s p_crackle p_wheeze crackle wheeze class\n";
  for (std::size_t i = 0; i < cycles.size(); ++i) {
    const dsp::MelSpectrogram spec = dsp::frontend(cycles[i].samples, fb);
    Array<float> batch({1, 1, spec.values.shape[0], spec.values.shape[1]});
    batch.v = spec.values.v;
    const ad::Tensor<float> logits = model.forward(batch, /*train=*/false);
    icbhi::LabelVector lv;
    double pc = 0, pw = 0;
    if (model.cfg.loss_mode == nn::LossMode::kMultilabelBce) {
      const auto preds = nn::predict_labels(logits.value(), tau);
      lv = {preds[0].labels[0], preds[0].labels[1]};
      pc = preds[0].probabilities[0];
      pw = preds[0].probabilities[1];
    } else {
      const float* z = logits.value().data();
      int best = 0;
      double mx = z[0], total = 0;
      for (int k = 1; k < 4; ++k)
        if (z[k] > z[best]) best = k;
      for (int k = 0; k < 4; ++k) total += std::exp(z[k] - z[best]);
      lv = icbhi::flags_from_class(best);
      // report joint-class probabilities marginalized onto the two flags
      for (int k = 0; k < 4; ++k) {
        const double p = std::exp(z[k] - z[best]) / total;
        const auto f = icbhi::flags_from_class(k);
        pc += f.crackle * p;
        pw += f.wheeze * p;
      }
      (void)mx;
    }
    std::cout << i << " " << anns[i].start_s << " " << anns[i].end_s << " "
              << pc << " " << pw << " " << lv.crackle << " " << lv.wheeze
              << " " << icbhi::class_name(
                             icbhi::class_from_flags(lv.crackle, lv.wheeze))
              << "\n";
  }
  return 0;
}

int cmd_gradcheck(int num_seeds) {
  const auto results = ad::run_gradcheck_suite(num_seeds);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass() ? "PASS" : "FAIL") << " " << r.name
              << " max_rel_err " << r.max_rel_err << " (tolerance "
              << r.tolerance << ")\n";
    all_pass = all_pass && r.pass();
  }
  if (!all_pass) throw NumericalError("gradient suite failed");
  std::cout << "gradient suite passed (" << results.size() << " checks)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"respiratory-sound classification pipeline"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data_dir, out_dir, work_dir, split_file, checkpoint, audio_path,
      annotation_path, split = "test", metrics_out;
  bool plot = false;
  int gradcheck_seeds = 20;

  auto* prepare = app.add_subcommand("prepare", "index a dataset directory");
  prepare->add_option("--data", data_dir, "directory of wav/txt pairs")
      ->required();
  prepare->add_option("--out", out_dir, "output directory")->required();
  prepare->add_option("--split-file", split_file,
                      "official split file (stem<TAB>train|test)");
  add_common(prepare, common);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", out_dir, "output directory")->required();
  add_common(synth, common);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd
      ->add_option("--work", work_dir, "directory with manifest.jsonl + summary.json")
      ->required();
  train_cmd->add_option("--data", data_dir, "audio directory (default: work dir)");
  train_cmd->add_option("--out", out_dir, "output directory (default: work dir)");
  train_cmd->add_flag("--plot", plot, "write loss_curve.ppm");
  add_common(train_cmd, common);

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--work", work_dir, "directory with manifest.jsonl")
      ->required();
  eval_cmd->add_option("--data", data_dir, "audio directory (default: work dir)");
  eval_cmd->add_option("--split", split, "train or test (default test)");
  eval_cmd->add_option("--out", metrics_out, "metrics output file");
  eval_cmd->add_flag("--plot", plot, "write confusion.ppm next to --out");
  add_common(eval_cmd, common);

  auto* predict = app.add_subcommand("predict", "classify one audio file");
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--audio", audio_path, "wav file")->required();
  predict->add_option("--annotations", annotation_path,
                      "optional cycle annotation file for per-cycle mode");
  add_common(predict, common);

  auto* gradcheck = app.add_subcommand("gradcheck", "run the gradient suite");
  gradcheck->add_option("--seeds", gradcheck_seeds, "random seeds per check");

  try {
    app.parse(argc, argv);
    if (prepare->parsed())
      return cmd_prepare(common, data_dir, out_dir, split_file);
    if (synth->parsed()) return cmd_synth(common, out_dir);
    if (train_cmd->parsed())
      return cmd_train(common, work_dir, data_dir, out_dir, plot);
    if (eval_cmd->parsed())
      return cmd_evaluate(common, checkpoint, work_dir, data_dir, split,
                          metrics_out, plot);
    if (predict->parsed())
      return cmd_predict(common, checkpoint, audio_path, annotation_path);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seeds);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
