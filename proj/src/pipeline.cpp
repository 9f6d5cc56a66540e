#include "multibreath/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "multibreath/errors.hpp"
#include "multibreath/rng.hpp"
#include "multibreath/wav.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mb::pipeline {

std::vector<RecordingFiles> scan_dataset_dir(const std::string& data_dir) {
  if (!fs::is_directory(data_dir))
    throw DataError("dataset directory not found: " + data_dir);
  std::vector<RecordingFiles> out;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
    const std::string stem = entry.path().stem().string();
    fs::path txt = entry.path();
    txt.replace_extension(".txt");
    if (!fs::exists(txt))
      throw DataError("recording " + stem + " has no annotation file " +
                      txt.string());
    RecordingFiles r;
    r.meta = icbhi::parse_recording_filename(stem);
    r.wav_path = entry.path().string();
    r.txt_path = txt.string();
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.meta.file_stem < b.meta.file_stem;
  });
  if (out.empty()) throw DataError("no .wav files in " + data_dir);
  return out;
}

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

std::vector<icbhi::ManifestEntry> build_entries(
    const std::vector<RecordingFiles>& recordings) {
  std::vector<icbhi::ManifestEntry> entries;
  for (const auto& rec : recordings) {
    std::vector<icbhi::CycleAnnotation> anns;
    try {
      anns = icbhi::parse_annotation_file(read_text_file(rec.txt_path));
    } catch (const DataError& e) {
      throw DataError(rec.txt_path + ": " + e.what());
    }
    for (std::size_t i = 0; i < anns.size(); ++i) {
      icbhi::ManifestEntry e;
      e.file_stem = rec.meta.file_stem;
      e.cycle_index = static_cast<int>(i);
      e.patient_id = rec.meta.patient_id;
      e.start_s = anns[i].start_s;
      e.end_s = anns[i].end_s;
      e.label = {anns[i].crackle, anns[i].wheeze};
      entries.push_back(std::move(e));
    }
  }
  return entries;
}

void write_manifest(const std::string& path,
                    const icbhi::DatasetManifest& manifest) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write manifest: " + path);
  for (const auto& e : manifest.entries) {
    json j;
    j["file_stem"] = e.file_stem;
    j["cycle_index"] = e.cycle_index;
    j["patient_id"] = e.patient_id;
    j["start_s"] = e.start_s;
    j["end_s"] = e.end_s;
    j["crackle"] = e.label.crackle;
    j["wheeze"] = e.label.wheeze;
    j["split"] = icbhi::split_name(e.split);
    f << j.dump() << "\n";
  }
}

icbhi::DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read manifest: " + path);
  icbhi::DatasetManifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    icbhi::ManifestEntry e;
    e.file_stem = j.at("file_stem").get<std::string>();
    e.cycle_index = j.at("cycle_index").get<int>();
    e.patient_id = j.at("patient_id").get<int>();
    e.start_s = j.at("start_s").get<double>();
    e.end_s = j.at("end_s").get<double>();
    e.label = {j.at("crackle").get<int>(), j.at("wheeze").get<int>()};
    const std::string split = j.at("split").get<std::string>();
    if (split != "train" && split != "test")
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": bad split tag " + split);
    e.split = split == "train" ? icbhi::Split::kTrain : icbhi::Split::kTest;
    m.entries.push_back(std::move(e));
  }
  m.recount();
  return m;
}

DatasetSummary summarize(const icbhi::DatasetManifest& manifest) {
  DatasetSummary s;
  s.counts = manifest.counts;
  std::set<int> train_p, test_p;
  for (const auto& e : manifest.entries)
    (e.split == icbhi::Split::kTrain ? train_p : test_p).insert(e.patient_id);
  for (int p : train_p)
    if (test_p.count(p))
      throw DataError("patient " + std::to_string(p) + " appears in both splits");
  s.train_patients = static_cast<long>(train_p.size());
  s.test_patients = static_cast<long>(test_p.size());
  return s;
}

namespace {

json counts_to_json(const std::array<long, 4>& c) {
  return {{"normal", c[0]}, {"crackle", c[1]}, {"wheeze", c[2]}, {"both", c[3]}};
}

std::array<long, 4> counts_from_json(const json& j) {
  return {j.at("normal").get<long>(), j.at("crackle").get<long>(),
          j.at("wheeze").get<long>(), j.at("both").get<long>()};
}

}  // namespace

void write_summary(const std::string& path, const DatasetSummary& s) {
  json j;
  j["counts"]["train"] = counts_to_json(s.counts[0]);
  j["counts"]["test"] = counts_to_json(s.counts[1]);
  j["train_patients"] = s.train_patients;
  j["test_patients"] = s.test_patients;
  long total = 0;
  for (const auto& row : s.counts)
    for (long c : row) total += c;
  j["total_cycles"] = total;
  j["logmel_mean"] = s.logmel_mean;
  j["logmel_std"] = s.logmel_std;
  std::ofstream f(path);
  if (!f) throw DataError("cannot write summary: " + path);
  f << j.dump(2) << "\n";
}

DatasetSummary read_summary(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError("unparseable summary " + path + ": " + e.what());
  }
  DatasetSummary s;
  s.counts[0] = counts_from_json(j.at("counts").at("train"));
  s.counts[1] = counts_from_json(j.at("counts").at("test"));
  s.train_patients = j.at("train_patients").get<long>();
  s.test_patients = j.at("test_patients").get<long>();
  s.logmel_mean = j.at("logmel_mean").get<double>();
  s.logmel_std = j.at("logmel_std").get<double>();
  return s;
}

std::vector<train::TrainExample> load_examples(
    const std::string& data_dir, const icbhi::DatasetManifest& manifest,
    icbhi::Split split, const dsp::MelFilterbank& fb) {
  // group entry indices by stem so each recording is decoded once
  std::map<std::string, std::vector<std::size_t>> by_stem;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    if (manifest.entries[i].split == split)
      by_stem[manifest.entries[i].file_stem].push_back(i);

  std::vector<train::TrainExample> out(manifest.entries.size());
  std::vector<bool> present(manifest.entries.size(), false);
  for (const auto& [stem, indices] : by_stem) {
    const Waveform w = read_wav((fs::path(data_dir) / (stem + ".wav")).string());
    const icbhi::RecordingMeta meta = icbhi::parse_recording_filename(stem);
    for (std::size_t i : indices) {
      const auto& e = manifest.entries[i];
      const auto cycles = icbhi::extract_cycles(
          w, {{e.start_s, e.end_s, e.label.crackle, e.label.wheeze}}, meta);
      train::TrainExample ex;
      ex.spec = dsp::frontend(cycles[0].samples, fb).values;
      ex.label = e.label;
      out[i] = std::move(ex);
      present[i] = true;
    }
  }
  // compact, preserving manifest order
  std::vector<train::TrainExample> result;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (present[i]) result.push_back(std::move(out[i]));
  return result;
}

void compute_normalization(const std::vector<train::TrainExample>& examples,
                           double& mean, double& std) {
  if (examples.empty()) throw DataError("compute_normalization: no examples");
  double acc = 0.0;
  long n = 0;
  for (const auto& ex : examples) {
    for (float x : ex.spec.v) acc += x;
    n += ex.spec.numel();
  }
  mean = acc / n;
  double var = 0.0;
  for (const auto& ex : examples)
    for (float x : ex.spec.v) var += (x - mean) * (x - mean);
  std = std::sqrt(var / n);
  if (std <= 0.0) std = 1.0;
}

std::string write_synth_dataset(const std::string& out_dir,
                                const SynthSpec& spec) {
  fs::create_directories(out_dir);
  Rng rng(spec.seed);
  std::ostringstream split_text;
  // synthetic patients carry their split in the id range: train ids start
  // at 1000, test ids at 5000, so patient disjointness holds by construction
  long next_patient[2] = {1000, 5000};
  for (int split = 0; split < 2; ++split) {
    const long per_class =
        split == 0 ? spec.per_class_train : spec.per_class_test;
    for (int cls = 0; cls < 4; ++cls) {
      for (long k = 0; k < per_class; ++k) {
        const int patient = static_cast<int>(next_patient[split]++);
        const double duration =
            rng.uniform(spec.min_duration_s, spec.max_duration_s);
        const icbhi::BreathCycle cycle =
            icbhi::synth_cycle(icbhi::synth_kind_from_class(cls), duration,
                               spec.sample_rate_hz, rng.next_u64());
        std::ostringstream stem;
        stem << patient << "_1b1_Tc_sc_Synth";
        write_wav((fs::path(out_dir) / (stem.str() + ".wav")).string(),
                  cycle.samples);
        std::ofstream txt((fs::path(out_dir) / (stem.str() + ".txt")).string());
        txt << "0.0\t" << duration << "\t" << cycle.annotation.crackle << "\t"
            << cycle.annotation.wheeze << "\n";
        split_text << stem.str() << "\t" << (split == 0 ? "train" : "test")
                   << "\n";
      }
    }
  }
  const std::string split_path = (fs::path(out_dir) / "split.txt").string();
  std::ofstream f(split_path);
  f << split_text.str();
  if (!f) throw DataError("cannot write split file: " + split_path);
  return split_path;
}

}  // namespace mb::pipeline
