#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "multibreath/dsp.hpp"
#include "multibreath/icbhi.hpp"
#include "multibreath/train.hpp"

namespace mb::pipeline {

// one <stem>.wav / <stem>.txt pair from a dataset directory
struct RecordingFiles {
  icbhi::RecordingMeta meta;
  std::string wav_path;
  std::string txt_path;
};

std::vector<RecordingFiles> scan_dataset_dir(const std::string& data_dir);

std::vector<icbhi::ManifestEntry> build_entries(
    const std::vector<RecordingFiles>& recordings);

void write_manifest(const std::string& path,
                    const icbhi::DatasetManifest& manifest);
icbhi::DatasetManifest read_manifest(const std::string& path);

struct DatasetSummary {
  std::array<std::array<long, 4>, 2> counts{};  // [train/test][class]
  long train_patients = 0;
  long test_patients = 0;
  double logmel_mean = 0.0;
  double logmel_std = 1.0;
};

DatasetSummary summarize(const icbhi::DatasetManifest& manifest);

void write_summary(const std::string& path, const DatasetSummary& s);
DatasetSummary read_summary(const std::string& path);

// Decode, slice and run the front end for every manifest entry in `split`.
// Entry order is preserved. Recordings are read once each.
std::vector<train::TrainExample> load_examples(
    const std::string& data_dir, const icbhi::DatasetManifest& manifest,
    icbhi::Split split, const dsp::MelFilterbank& fb);

// global mean/std of log-mel cells over a set of examples
void compute_normalization(const std::vector<train::TrainExample>& examples,
                           double& mean, double& std);

// Synthetic ICBHI-shaped dataset: one cycle per recording, wav+txt pairs
// plus an official-style split file. Returns the split-file path.
struct SynthSpec {
  long per_class_train = 100;
  long per_class_test = 50;
  double min_duration_s = 1.5;
  double max_duration_s = 3.5;
  int sample_rate_hz = 8000;
  std::uint64_t seed = 7;
};

std::string write_synth_dataset(const std::string& out_dir, const SynthSpec& spec);

}  // namespace mb::pipeline
