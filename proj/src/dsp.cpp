#include "multibreath/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "multibreath/errors.hpp"
#include "multibreath/rng.hpp"

namespace mb::dsp {

namespace {

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

}  // namespace

Waveform resample(const Waveform& w, int target_rate_hz) {
  if (target_rate_hz <= 0) throw UsageError("resample: target rate must be > 0");
  if (w.samples.empty()) throw DataError("resample: empty input waveform");
  if (w.sample_rate_hz <= 0) throw DataError("resample: invalid source rate");
  if (target_rate_hz == w.sample_rate_hz) return w;

  const double ratio = static_cast<double>(target_rate_hz) / w.sample_rate_hz;
  const long in_len = static_cast<long>(w.samples.size());
  const long out_len = std::max(1L, std::lround(in_len * ratio));

  // When downsampling, widen the kernel and lower the cutoff by the same
  // factor so the output stays band-limited below its Nyquist.
  const double scale = ratio < 1.0 ? 1.0 / ratio : 1.0;
  const double cutoff = 0.95 / scale;  // in units of the input Nyquist
  const int half_width = static_cast<int>(std::ceil(16.0 * scale));

  Waveform out;
  out.sample_rate_hz = target_rate_hz;
  out.samples.resize(out_len);
  for (long n = 0; n < out_len; ++n) {
    const double center = n / ratio;
    const long lo = std::max(0L, static_cast<long>(std::floor(center)) - half_width);
    const long hi = std::min(in_len - 1,
                             static_cast<long>(std::floor(center)) + half_width + 1);
    double acc = 0.0;
    for (long m = lo; m <= hi; ++m) {
      const double t = center - m;
      const double win = 0.5 * (1.0 + std::cos(M_PI * t / (half_width + 1)));
      acc += w.samples[m] * cutoff * sinc(cutoff * t) * win;
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

Waveform circular_pad(const Waveform& w, long target_len_samples) {
  if (target_len_samples <= 0)
    throw UsageError("circular_pad: target length must be > 0");
  if (w.samples.empty()) throw DataError("circular_pad: empty input waveform");
  const long L = static_cast<long>(w.samples.size());
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples.resize(target_len_samples);
  for (long n = 0; n < target_len_samples; ++n) out.samples[n] = w.samples[n % L];
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank build_mel_filterbank(int fft_size, int sample_rate, int n_mels,
                                   double fmin, double fmax) {
  if (fft_size <= 0 || sample_rate <= 0 || n_mels <= 0)
    throw UsageError("build_mel_filterbank: non-positive parameter");
  if (!(fmin < fmax && fmax <= sample_rate / 2.0))
    throw UsageError("build_mel_filterbank: need fmin < fmax <= nyquist");

  const int n_bins = 1 + fft_size / 2;
  const double mel_lo = hz_to_mel(fmin), mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  MelFilterbank fb;
  fb.fft_size = fft_size;
  fb.sample_rate = sample_rate;
  fb.weights = Array<float>({n_mels, n_bins});
  fb.band_centers_hz.resize(n_mels);
  for (int m = 0; m < n_mels; ++m) {
    fb.band_centers_hz[m] = edges[m + 1];
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    float peak = 0.0f;
    for (int b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / fft_size;
      double wgt = 0.0;
      if (f > left && f < right)
        wgt = f <= center ? (f - left) / (center - left)
                          : (right - f) / (right - center);
      fb.weights.v[m * n_bins + b] = static_cast<float>(wgt);
      peak = std::max(peak, fb.weights.v[m * n_bins + b]);
    }
    if (peak > 0)
      for (int b = 0; b < n_bins; ++b) fb.weights.v[m * n_bins + b] /= peak;
  }
  return fb;
}

void fft_inplace(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  if (n == 0 || (n & (n - 1)) || im.size() != n)
    throw UsageError("fft_inplace: length must be a power of two");
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

MelSpectrogram mel_spectrogram(const Waveform& w, const MelFilterbank& fb) {
  if (w.sample_rate_hz != fb.sample_rate)
    throw UsageError("mel_spectrogram: waveform rate " +
                     std::to_string(w.sample_rate_hz) + " != filterbank rate " +
                     std::to_string(fb.sample_rate));
  const long L = static_cast<long>(w.samples.size());
  if (L != kPipelineSamples)
    throw UsageError("mel_spectrogram: input must be " +
                     std::to_string(kPipelineSamples) + " samples, got " +
                     std::to_string(L) + " (pad first)");

  const int nfft = fb.fft_size;
  const int n_bins = 1 + nfft / 2;
  const int n_mels = fb.weights.shape[0];

  std::vector<double> window(nfft);
  for (int i = 0; i < nfft; ++i)
    window[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / nfft));

  MelSpectrogram out;
  out.values = Array<float>({static_cast<long>(n_mels), kNumFrames});

  std::vector<double> re(nfft), im(nfft);
  std::vector<double> power(n_bins);
  for (int t = 0; t < kNumFrames; ++t) {
    const long center = static_cast<long>(t) * kHopSize;
    for (int i = 0; i < nfft; ++i) {
      long idx = center - nfft / 2 + i;
      if (idx < 0) idx = -idx;                      // reflect edges
      if (idx >= L) idx = 2 * (L - 1) - idx;
      re[i] = w.samples[idx] * window[i];
      im[i] = 0.0;
    }
    fft_inplace(re, im);
    for (int b = 0; b < n_bins; ++b) power[b] = re[b] * re[b] + im[b] * im[b];
    for (int m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      const float* row = fb.weights.data() + m * n_bins;
      for (int b = 0; b < n_bins; ++b) acc += row[b] * power[b];
      out.values.v[m * kNumFrames + t] =
          static_cast<float>(std::log(std::max(acc, kLogFloor)));
    }
  }
  return out;
}

MelSpectrogram apply_masks(const MelSpectrogram& s, const MaskSpec& spec,
                           std::uint64_t seed) {
  const long n_mels = s.values.shape[0];
  const long n_frames = s.values.shape[1];
  if (spec.max_time_frames > n_frames || spec.max_freq_bins > n_mels)
    throw UsageError("apply_masks: mask maxima exceed spectrogram axes");

  MelSpectrogram out = s;
  Rng rng(seed);
  for (int k = 0; k < spec.num_masks_per_axis; ++k) {
    const long w = static_cast<long>(rng.uniform_int(spec.max_time_frames));
    const long t0 = w > 0 ? static_cast<long>(rng.uniform_int(n_frames - w)) : 0;
    for (long m = 0; m < n_mels; ++m)
      for (long t = t0; t < t0 + w; ++t)
        out.values.v[m * n_frames + t] = spec.fill_value;
  }
  for (int k = 0; k < spec.num_masks_per_axis; ++k) {
    const long w = static_cast<long>(rng.uniform_int(spec.max_freq_bins));
    const long m0 = w > 0 ? static_cast<long>(rng.uniform_int(n_mels - w)) : 0;
    for (long m = m0; m < m0 + w; ++m)
      for (long t = 0; t < n_frames; ++t)
        out.values.v[m * n_frames + t] = spec.fill_value;
  }
  return out;
}

MelSpectrogram frontend(const Waveform& w, const MelFilterbank& fb) {
  Waveform r = resample(w, fb.sample_rate);
  Waveform p = circular_pad(r, kPipelineSamples);
  return mel_spectrogram(p, fb);
}

void write_float_matrix(const std::string& path, const Array<float>& m) {
  if (m.rank() != 2) throw UsageError("write_float_matrix: want rank 2");
  std::ofstream f(path);
  if (!f) throw DataError("cannot write matrix file: " + path);
  f << m.shape[0] << " " << m.shape[1] << "\n";
  f.precision(9);
  for (long i = 0; i < m.shape[0]; ++i) {
    for (long j = 0; j < m.shape[1]; ++j)
      f << (j ? " " : "") << m.v[i * m.shape[1] + j];
    f << "\n";
  }
}

Array<float> read_float_matrix(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read matrix file: " + path);
  long rows = 0, cols = 0;
  if (!(f >> rows >> cols) || rows <= 0 || cols <= 0)
    throw DataError("bad matrix header in " + path);
  Array<float> m({rows, cols});
  for (long i = 0; i < rows * cols; ++i)
    if (!(f >> m.v[i])) throw DataError("truncated matrix file: " + path);
  return m;
}

}  // namespace mb::dsp
