#include "multibreath/icbhi.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "multibreath/errors.hpp"
#include "multibreath/rng.hpp"

namespace mb::icbhi {

void DatasetManifest::recount() {
  counts = {};
  for (const auto& e : entries) {
    const int cls = class_from_flags(e.label.crackle, e.label.wheeze);
    counts[e.split == Split::kTrain ? 0 : 1][cls]++;
  }
}

std::vector<CycleAnnotation> parse_annotation_file(const std::string& text) {
  std::vector<CycleAnnotation> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    CycleAnnotation a;
    std::string extra;
    if (!(ls >> a.start_s >> a.end_s >> a.crackle >> a.wheeze) || (ls >> extra))
      throw DataError("annotation line " + std::to_string(line_no) +
                      " malformed (want: begin end crackle wheeze): " + line);
    if ((a.crackle != 0 && a.crackle != 1) || (a.wheeze != 0 && a.wheeze != 1))
      throw DataError("annotation line " + std::to_string(line_no) +
                      ": crackle/wheeze must be 0 or 1");
    if (!(a.start_s >= 0.0 && a.start_s < a.end_s))
      throw DataError("annotation line " + std::to_string(line_no) +
                      ": need 0 <= start < end, got [" +
                      std::to_string(a.start_s) + ", " +
                      std::to_string(a.end_s) + ")");
    out.push_back(a);
  }
  return out;
}

RecordingMeta parse_recording_filename(const std::string& file_stem) {
  std::vector<std::string> tokens;
  std::string tok;
  std::istringstream in(file_stem);
  while (std::getline(in, tok, '_')) tokens.push_back(tok);
  if (tokens.size() != 5)
    throw DataError("recording stem '" + file_stem +
                    "' must have 5 underscore-separated tokens, has " +
                    std::to_string(tokens.size()));
  RecordingMeta m;
  try {
    std::size_t used = 0;
    m.patient_id = std::stoi(tokens[0], &used);
    if (used != tokens[0].size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw DataError("recording stem '" + file_stem +
                    "': patient id '" + tokens[0] + "' is not an integer");
  }
  if (m.patient_id <= 0)
    throw DataError("recording stem '" + file_stem + "': patient id must be > 0");
  m.recording_index = tokens[1];
  m.chest_location = tokens[2];
  m.acquisition_mode = tokens[3];
  m.device = tokens[4];
  m.file_stem = file_stem;
  return m;
}

std::vector<BreathCycle> extract_cycles(const Waveform& w,
                                        const std::vector<CycleAnnotation>& anns,
                                        const RecordingMeta& meta) {
  const double duration = w.duration_s();
  std::vector<BreathCycle> out;
  out.reserve(anns.size());
  for (const auto& a : anns) {
    if (a.end_s > duration + kEndSlackS)
      throw DataError("annotation [" + std::to_string(a.start_s) + ", " +
                      std::to_string(a.end_s) + ") exceeds " +
                      std::to_string(duration) + " s audio in " +
                      meta.file_stem);
    const long L = static_cast<long>(w.samples.size());
    long lo = std::lround(a.start_s * w.sample_rate_hz);
    long hi = std::min(L, std::lround(a.end_s * w.sample_rate_hz));
    lo = std::clamp(lo, 0L, hi);
    BreathCycle c;
    c.meta = meta;
    c.annotation = a;
    c.samples.sample_rate_hz = w.sample_rate_hz;
    c.samples.samples.assign(w.samples.begin() + lo, w.samples.begin() + hi);
    out.push_back(std::move(c));
  }
  return out;
}

int class_from_flags(int crackle, int wheeze) {
  return (wheeze != 0 ? 2 : 0) + (crackle != 0 ? 1 : 0);
}

LabelVector flags_from_class(int class_id) {
  if (class_id < 0 || class_id > 3)
    throw UsageError("class id must be in 0..3, got " + std::to_string(class_id));
  return LabelVector{class_id & 1, (class_id >> 1) & 1};
}

const char* class_name(int class_id) {
  switch (class_id) {
    case 0: return "Normal";
    case 1: return "Crackle";
    case 2: return "Wheeze";
    case 3: return "Crackle&Wheeze";
  }
  throw UsageError("class id must be in 0..3");
}

std::map<std::string, Split> parse_split_file(const std::string& text) {
  std::map<std::string, Split> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string stem, tag;
    if (!(ls >> stem >> tag))
      throw DataError("split file line " + std::to_string(line_no) +
                      " malformed: " + line);
    if (tag == "train")
      out[stem] = Split::kTrain;
    else if (tag == "test")
      out[stem] = Split::kTest;
    else
      throw DataError("split file line " + std::to_string(line_no) +
                      ": tag must be train or test, got '" + tag + "'");
  }
  return out;
}

DatasetManifest split_patients_official(
    std::vector<ManifestEntry> entries,
    const std::map<std::string, Split>& split_file) {
  std::map<int, Split> patient_split;
  for (auto& e : entries) {
    auto it = split_file.find(e.file_stem);
    if (it == split_file.end())
      throw DataError("stem '" + e.file_stem + "' missing from split file");
    e.split = it->second;
    auto [pit, inserted] = patient_split.emplace(e.patient_id, e.split);
    if (!inserted && pit->second != e.split)
      throw DataError("patient " + std::to_string(e.patient_id) +
                      " mapped to both splits by the split file");
  }
  DatasetManifest m;
  m.entries = std::move(entries);
  m.recount();
  return m;
}

DatasetManifest split_patients_ratio(std::vector<ManifestEntry> entries,
                                     double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw UsageError("split ratio must be in (0, 1), got " + std::to_string(ratio));
  std::map<int, long> cycles_per_patient;
  for (const auto& e : entries) cycles_per_patient[e.patient_id]++;
  std::vector<int> patients;
  for (const auto& [pid, _] : cycles_per_patient) patients.push_back(pid);

  Rng rng(seed);
  rng.shuffle(patients.begin(), patients.end());

  // whole patients into train, greedily, until the cycle fraction is reached
  const long total = static_cast<long>(entries.size());
  std::set<int> train_patients;
  long train_cycles = 0;
  for (int pid : patients) {
    if (static_cast<double>(train_cycles) / total >= ratio) break;
    train_patients.insert(pid);
    train_cycles += cycles_per_patient[pid];
  }
  for (auto& e : entries)
    e.split = train_patients.count(e.patient_id) ? Split::kTrain : Split::kTest;

  DatasetManifest m;
  m.entries = std::move(entries);
  m.recount();
  return m;
}

SynthKind synth_kind_from_class(int class_id) {
  switch (class_id) {
    case 0: return SynthKind::kNormal;
    case 1: return SynthKind::kCrackle;
    case 2: return SynthKind::kWheeze;
    case 3: return SynthKind::kBoth;
  }
  throw UsageError("class id must be in 0..3");
}

namespace {

// flat-ish band noise: white Gaussian through a short moving average
void add_band_noise(std::vector<float>& x, Rng& rng, double amp) {
  const int taps = 8;
  std::vector<double> white(x.size() + taps, 0.0);
  for (auto& v : white) v = rng.normal();
  for (std::size_t i = 0; i < x.size(); ++i) {
    double acc = 0.0;
    for (int t = 0; t < taps; ++t) acc += white[i + t];
    x[i] += static_cast<float>(amp * acc / taps);
  }
}

void add_wheeze_tone(std::vector<float>& x, Rng& rng, int rate) {
  const double tone_hz = rng.uniform(200.0, 800.0);
  const double mod_hz = rng.uniform(2.0, 8.0);
  const double depth = rng.uniform(0.2, 0.5);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = static_cast<double>(i) / rate;
    const double env = 1.0 - depth * (0.5 + 0.5 * std::sin(2.0 * M_PI * mod_hz * t));
    x[i] += static_cast<float>(0.5 * env * std::sin(2.0 * M_PI * tone_hz * t + phase));
  }
}

void add_crackles(std::vector<float>& x, Rng& rng, int rate) {
  const int count = 5 + static_cast<int>(rng.uniform_int(15));  // 5..20
  const long decay = std::max(1L, static_cast<long>(0.004 * rate));
  for (int k = 0; k < count; ++k) {
    const long onset = static_cast<long>(rng.uniform_int(
        static_cast<std::uint64_t>(std::max<std::size_t>(1, x.size() - 1))));
    const double amp = rng.uniform(0.4, 0.9) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    for (long i = onset; i < static_cast<long>(x.size()); ++i) {
      const double e = std::exp(-static_cast<double>(i - onset) / decay);
      if (e < 1e-3) break;
      x[i] += static_cast<float>(amp * e * rng.normal() * 0.7 + amp * e * 0.3);
    }
  }
}

}  // namespace

BreathCycle synth_cycle(SynthKind kind, double duration_s, int sample_rate_hz,
                        std::uint64_t seed) {
  if (duration_s <= 0.0) throw UsageError("synth_cycle: duration must be > 0");
  if (sample_rate_hz <= 0) throw UsageError("synth_cycle: rate must be > 0");
  const long n = std::lround(duration_s * sample_rate_hz);
  Rng rng(seed);
  std::vector<float> x(static_cast<std::size_t>(std::max(1L, n)), 0.0f);
  add_band_noise(x, rng, 0.05);
  const bool crackle = kind == SynthKind::kCrackle || kind == SynthKind::kBoth;
  const bool wheeze = kind == SynthKind::kWheeze || kind == SynthKind::kBoth;
  if (wheeze) add_wheeze_tone(x, rng, sample_rate_hz);
  if (crackle) add_crackles(x, rng, sample_rate_hz);

  BreathCycle c;
  c.samples.sample_rate_hz = sample_rate_hz;
  c.samples.samples = std::move(x);
  c.annotation = {0.0, duration_s, crackle ? 1 : 0, wheeze ? 1 : 0};
  c.meta.file_stem = "synthetic";
  return c;
}

}  // namespace mb::icbhi
