#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "multibreath/array.hpp"
#include "multibreath/wav.hpp"

namespace mb::dsp {

// Pipeline defaults reproducing a 64x256 log-mel image at 16 kHz.
inline constexpr int kTargetRateHz = 16000;
inline constexpr int kFftSize = 1024;
inline constexpr int kHopSize = 512;
inline constexpr int kNumMels = 64;
inline constexpr int kNumFrames = 256;
// 256 frames at hop 512 => 131072 samples (8.192 s)
inline constexpr long kPipelineSamples = static_cast<long>(kHopSize) * kNumFrames;
inline constexpr double kFminHz = 50.0;
inline constexpr double kFmaxHz = 2000.0;
inline constexpr double kLogFloor = 1e-10;

struct MelFilterbank {
  // [n_mels x (1 + fft_size/2)], triangular rows peak-normalized to 1
  Array<float> weights;
  std::vector<double> band_centers_hz;
  int fft_size = 0;
  int sample_rate = 0;
};

struct MelSpectrogram {
  Array<float> values;  // [64 x 256], natural-log power
  std::string source;   // provenance tag, free-form
};

struct MaskSpec {
  int max_time_frames = 20;
  int max_freq_bins = 40;
  int num_masks_per_axis = 1;
  float fill_value = 0.0f;
};

// Windowed-sinc resampler, cutoff at min of the two Nyquist rates.
Waveform resample(const Waveform& w, int target_rate_hz);

// out[n] = in[n mod L]; truncates when the input is already long enough.
Waveform circular_pad(const Waveform& w, long target_len_samples);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelFilterbank build_mel_filterbank(int fft_size = kFftSize,
                                   int sample_rate = kTargetRateHz,
                                   int n_mels = kNumMels,
                                   double fmin = kFminHz,
                                   double fmax = kFmaxHz);

// Centered STFT (Hann 1024, hop 512, reflect edges), power spectra, mel
// projection, log(max(p, 1e-10)). Input must be 131072 samples at 16 kHz.
MelSpectrogram mel_spectrogram(const Waveform& w, const MelFilterbank& fb);

// SpecAugment-style zero masks; widths ~ U{0..max}, offsets uniform.
MelSpectrogram apply_masks(const MelSpectrogram& s, const MaskSpec& spec,
                           std::uint64_t seed);

// waveform -> resample -> circular pad -> log-mel, the full front end
MelSpectrogram frontend(const Waveform& w, const MelFilterbank& fb);

// Debug export: text header "rows cols" then row-major values.
void write_float_matrix(const std::string& path, const Array<float>& m);
Array<float> read_float_matrix(const std::string& path);

// in-place radix-2 complex FFT, n a power of two (exposed for tests)
void fft_inplace(std::vector<double>& re, std::vector<double>& im);

}  // namespace mb::dsp
