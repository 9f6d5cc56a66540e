#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "multibreath/wav.hpp"

namespace mb::icbhi {

// Annotations whose end overruns the audio by at most this much are
// clamped; real annotation files carry rounding slop.
inline constexpr double kEndSlackS = 0.01;

struct RecordingMeta {
  int patient_id = 0;
  std::string recording_index;
  std::string chest_location;
  std::string acquisition_mode;  // sc / mc
  std::string device;
  std::string file_stem;
};

struct CycleAnnotation {
  double start_s = 0.0;
  double end_s = 0.0;
  int crackle = 0;
  int wheeze = 0;
};

struct BreathCycle {
  RecordingMeta meta;
  CycleAnnotation annotation;
  Waveform samples;
};

// (crackle, wheeze) bit pair, the multi-label target
struct LabelVector {
  int crackle = 0;
  int wheeze = 0;
  bool operator==(const LabelVector&) const = default;
};

enum class Split { kTrain, kTest };

inline const char* split_name(Split s) {
  return s == Split::kTrain ? "train" : "test";
}

struct ManifestEntry {
  std::string file_stem;
  int cycle_index = 0;  // position within the recording's annotation file
  int patient_id = 0;
  double start_s = 0.0;
  double end_s = 0.0;
  LabelVector label;
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  // counts[split][class], class order: Normal, Crackle, Wheeze, Both
  std::array<std::array<long, 4>, 2> counts{};

  void recount();
};

// ---- parsing ----

std::vector<CycleAnnotation> parse_annotation_file(const std::string& text);
RecordingMeta parse_recording_filename(const std::string& file_stem);

std::vector<BreathCycle> extract_cycles(const Waveform& w,
                                        const std::vector<CycleAnnotation>& anns,
                                        const RecordingMeta& meta);

// ---- label codec ----

int class_from_flags(int crackle, int wheeze);
LabelVector flags_from_class(int class_id);
const char* class_name(int class_id);

// ---- splitting ----

// Official mode: stem -> split assignments from the challenge split file.
// Ratio mode: whole patients, shuffled by seed, assigned to train until the
// train cycle fraction reaches r.
DatasetManifest split_patients_official(
    std::vector<ManifestEntry> entries,
    const std::map<std::string, Split>& split_file);

DatasetManifest split_patients_ratio(std::vector<ManifestEntry> entries,
                                     double ratio, std::uint64_t seed);

std::map<std::string, Split> parse_split_file(const std::string& text);

// ---- synthetic data ----

enum class SynthKind { kNormal, kCrackle, kWheeze, kBoth };

SynthKind synth_kind_from_class(int class_id);

BreathCycle synth_cycle(SynthKind kind, double duration_s, int sample_rate_hz,
                        std::uint64_t seed);

}  // namespace mb::icbhi
