#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "multibreath/errors.hpp"
#include "multibreath/icbhi.hpp"

using namespace mb;
using icbhi::Split;

namespace {

icbhi::ManifestEntry entry(int patient, int cls, const std::string& stem = "") {
  icbhi::ManifestEntry e;
  e.patient_id = patient;
  e.file_stem = stem.empty() ? std::to_string(patient) + "_1b1_Al_sc_Dev" : stem;
  e.label = icbhi::flags_from_class(cls);
  e.end_s = 1.0;
  return e;
}

}  // namespace

TEST_CASE("class codec covers all four combinations") {
  CHECK(icbhi::class_from_flags(0, 0) == 0);
  CHECK(icbhi::class_from_flags(1, 0) == 1);
  CHECK(icbhi::class_from_flags(0, 1) == 2);
  CHECK(icbhi::class_from_flags(1, 1) == 3);
  for (int c = 0; c < 4; ++c) {
    const auto f = icbhi::flags_from_class(c);
    CHECK(icbhi::class_from_flags(f.crackle, f.wheeze) == c);
  }
  CHECK(std::string(icbhi::class_name(0)) == "Normal");
  CHECK(std::string(icbhi::class_name(1)) == "Crackle");
  CHECK(std::string(icbhi::class_name(2)) == "Wheeze");
  CHECK(std::string(icbhi::class_name(3)) == "Crackle&Wheeze");
  CHECK_THROWS_AS(icbhi::flags_from_class(4), UsageError);
  CHECK(icbhi::class_from_flags(2, 0) == 1);  // any nonzero flag counts as set
}

TEST_CASE("annotation parser") {
  const auto anns = icbhi::parse_annotation_file(
      "0.036\t0.579\t0\t0\n"
      "0.579\t2.45\t1\t0\n"
      "2.45\t3.893\t0\t1\n"
      "3.893\t5.793\t1\t1\n");
  REQUIRE(anns.size() == 4);
  CHECK(anns[0].start_s == doctest::Approx(0.036));
  CHECK(anns[1].end_s == doctest::Approx(2.45));
  CHECK(anns[1].crackle == 1);
  CHECK(anns[1].wheeze == 0);
  CHECK(anns[3].crackle == 1);
  CHECK(anns[3].wheeze == 1);

  // space-separated, trailing blank lines
  CHECK(icbhi::parse_annotation_file("0.1 0.9 0 0\n\n").size() == 1);

  SUBCASE("rejects malformed rows with the line number") {
    try {
      icbhi::parse_annotation_file("0.1\t0.9\t0\t0\n0.9\t0.5\t0\t0\n");
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(icbhi::parse_annotation_file("0.1\t0.9\t0\n"), DataError);
    CHECK_THROWS_AS(icbhi::parse_annotation_file("0.1\t0.9\t2\t0\n"), DataError);
    CHECK_THROWS_AS(icbhi::parse_annotation_file("a\tb\t0\t0\n"), DataError);
  }
}

TEST_CASE("recording filename parser") {
  const auto m = icbhi::parse_recording_filename("101_1b1_Al_sc_Meditron");
  CHECK(m.patient_id == 101);
  CHECK(m.recording_index == "1b1");
  CHECK(m.chest_location == "Al");
  CHECK(m.acquisition_mode == "sc");
  CHECK(m.device == "Meditron");
  CHECK(m.file_stem == "101_1b1_Al_sc_Meditron");
  CHECK_THROWS_AS(icbhi::parse_recording_filename("101_1b1_Al_sc"), DataError);
  CHECK_THROWS_AS(icbhi::parse_recording_filename("x_1b1_Al_sc_Dev"), DataError);
  CHECK_THROWS_AS(icbhi::parse_recording_filename("0_1b1_Al_sc_Dev"), DataError);
}

TEST_CASE("cycle extraction slices by time") {
  Waveform w;
  w.sample_rate_hz = 100;
  w.samples.resize(200);  // 2 s
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = static_cast<float>(i);

  icbhi::RecordingMeta meta;
  meta.file_stem = "t";
  std::vector<icbhi::CycleAnnotation> anns = {
      {0.0, 0.5, 0, 0}, {0.5, 1.25, 1, 0}, {1.25, 2.0, 0, 1}};
  const auto cycles = icbhi::extract_cycles(w, anns, meta);
  REQUIRE(cycles.size() == 3);
  CHECK(cycles[0].samples.samples.size() == 50);
  CHECK(cycles[0].samples.samples.front() == 0.0f);
  CHECK(cycles[1].samples.samples.size() == 75);
  CHECK(cycles[1].samples.samples.front() == 50.0f);
  CHECK(cycles[2].samples.samples.back() == 199.0f);
  CHECK(cycles[1].annotation.crackle == 1);
  CHECK(cycles[0].samples.sample_rate_hz == 100);

  // a small annotation overrun is clamped, a large one is an error
  std::vector<icbhi::CycleAnnotation> slop = {{1.5, 2.0 + 0.009, 0, 0}};
  CHECK(icbhi::extract_cycles(w, slop, meta).size() == 1);
  std::vector<icbhi::CycleAnnotation> over = {{1.5, 2.5, 0, 0}};
  CHECK_THROWS_AS(icbhi::extract_cycles(w, over, meta), DataError);
}

TEST_CASE("split file parsing and official split") {
  const auto split = icbhi::parse_split_file(
      "101_1b1_Al_sc_Meditron\ttrain\n"
      "102_1b1_Ar_sc_Litt3200 test\n");
  CHECK(split.at("101_1b1_Al_sc_Meditron") == Split::kTrain);
  CHECK(split.at("102_1b1_Ar_sc_Litt3200") == Split::kTest);
  CHECK_THROWS_AS(icbhi::parse_split_file("stem banana\n"), DataError);

  std::vector<icbhi::ManifestEntry> entries;
  entries.push_back(entry(101, 0, "101_1b1_Al_sc_Meditron"));
  entries.push_back(entry(101, 1, "101_1b1_Al_sc_Meditron"));
  entries.push_back(entry(102, 3, "102_1b1_Ar_sc_Litt3200"));
  const auto manifest = icbhi::split_patients_official(entries, split);
  CHECK(manifest.counts[0][0] == 1);
  CHECK(manifest.counts[0][1] == 1);
  CHECK(manifest.counts[1][3] == 1);
  CHECK(manifest.entries[2].split == Split::kTest);

  // a recording missing from the split file is an error
  entries.push_back(entry(103, 0, "103_1b1_Al_sc_Dev"));
  CHECK_THROWS_AS(icbhi::split_patients_official(entries, split), DataError);

  // one patient on both sides of the split is an integrity error
  auto bad_split = split;
  bad_split["101_2b2_Pl_sc_Meditron"] = Split::kTest;
  entries.pop_back();
  entries.push_back(entry(101, 0, "101_2b2_Pl_sc_Meditron"));
  CHECK_THROWS_AS(icbhi::split_patients_official(entries, bad_split),
                  DataError);
}

TEST_CASE("ratio split keeps patients whole and is seed-deterministic") {
  std::vector<icbhi::ManifestEntry> entries;
  for (int p = 1; p <= 20; ++p)
    for (int c = 0; c < 3 + p % 3; ++c) entries.push_back(entry(p, c % 4));

  const auto a = icbhi::split_patients_ratio(entries, 0.6, 42);
  const auto b = icbhi::split_patients_ratio(entries, 0.6, 42);
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    CHECK(a.entries[i].split == b.entries[i].split);

  // patients never straddle the split
  std::map<int, std::set<Split>> seen;
  for (const auto& e : a.entries) seen[e.patient_id].insert(e.split);
  for (const auto& [p, splits] : seen) CHECK(splits.size() == 1);

  // train fraction reaches the requested ratio
  long train = 0;
  for (const auto& e : a.entries) train += e.split == Split::kTrain;
  CHECK(static_cast<double>(train) / a.entries.size() >= 0.6);
  CHECK(a.counts[0][0] + a.counts[0][1] + a.counts[0][2] + a.counts[0][3] ==
        train);

  // different seeds give a different assignment at least sometimes
  bool differs = false;
  for (std::uint64_t s = 0; s < 8 && !differs; ++s) {
    const auto c = icbhi::split_patients_ratio(entries, 0.6, s);
    for (std::size_t i = 0; i < c.entries.size(); ++i)
      differs = differs || c.entries[i].split != a.entries[i].split;
  }
  CHECK(differs);

  CHECK_THROWS_AS(icbhi::split_patients_ratio(entries, 1.5, 0), UsageError);
}

TEST_CASE("manifest recount matches entries") {
  icbhi::DatasetManifest m;
  m.entries.push_back(entry(1, 0));
  m.entries.push_back(entry(1, 2));
  m.entries.push_back(entry(2, 2));
  m.entries[2].split = Split::kTest;
  m.recount();
  CHECK(m.counts[0][0] == 1);
  CHECK(m.counts[0][2] == 1);
  CHECK(m.counts[1][2] == 1);
  CHECK(m.counts[1][0] == 0);
}

TEST_CASE("synthetic cycles are deterministic and class-distinct") {
  using icbhi::SynthKind;
  for (int c = 0; c < 4; ++c) {
    const auto kind = icbhi::synth_kind_from_class(c);
    const auto a = icbhi::synth_cycle(kind, 2.0, 8000, 99);
    const auto b = icbhi::synth_cycle(kind, 2.0, 8000, 99);
    CHECK(a.samples.samples == b.samples.samples);
    CHECK(a.samples.samples.size() == 16000);
    CHECK(a.samples.sample_rate_hz == 8000);
    CHECK(a.annotation.crackle == icbhi::flags_from_class(c).crackle);
    CHECK(a.annotation.wheeze == icbhi::flags_from_class(c).wheeze);
    float peak = 0;
    for (float v : a.samples.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak > 0.0f);
    CHECK(peak < 10.0f);
  }
  // wheeze adds strong band energy: compare against plain normal noise
  const auto normal = icbhi::synth_cycle(SynthKind::kNormal, 2.0, 8000, 5);
  const auto wheeze = icbhi::synth_cycle(SynthKind::kWheeze, 2.0, 8000, 5);
  double en = 0, ew = 0;
  for (float v : normal.samples.samples) en += v * v;
  for (float v : wheeze.samples.samples) ew += v * v;
  CHECK(ew > en);
}
