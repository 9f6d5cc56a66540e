#pragma once

#include <string>
#include <vector>

namespace mb {

struct Waveform {
  std::vector<float> samples;
  int sample_rate_hz = 0;

  double duration_s() const {
    return sample_rate_hz > 0
               ? static_cast<double>(samples.size()) / sample_rate_hz
               : 0.0;
  }
};

// PCM 16/24/32-bit integer and 32-bit float; takes the first channel of
// multichannel files. Throws DataError on malformed input.
Waveform read_wav(const std::string& path);

// 16-bit PCM mono, values clipped to [-1, 1].
void write_wav(const std::string& path, const Waveform& w);

}  // namespace mb
