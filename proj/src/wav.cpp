#include "multibreath/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "multibreath/errors.hpp"

namespace mb {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (p[1] << 8) | (p[2] << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open wav file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* ch = buf.data() + pos;
    std::uint32_t len = rd_u32(ch + 4);
    const unsigned char* body = ch + 8;
    if (pos + 8 + len > buf.size())
      throw DataError("truncated chunk in wav file: " + path);
    if (std::memcmp(ch, "fmt ", 4) == 0) {
      if (len < 16) throw DataError("fmt chunk too small: " + path);
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      if (format == 0xFFFE) {  // WAVE_FORMAT_EXTENSIBLE
        if (len < 40) throw DataError("extensible fmt chunk too small: " + path);
        format = rd_u16(body + 24);  // first two bytes of the SubFormat GUID
      }
    } else if (std::memcmp(ch, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);  // chunks are word-aligned
  }
  if (!data) throw DataError("wav file has no data chunk: " + path);
  if (channels == 0 || rate == 0) throw DataError("wav file has no fmt chunk: " + path);
  if (!((format == 1 && (bits == 16 || bits == 24 || bits == 32)) ||
        (format == 3 && bits == 32)))
    throw DataError("unsupported wav encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bits): " + path);

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t frames = data_len / frame_bytes;

  Waveform w;
  w.sample_rate_hz = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const unsigned char* p = data + i * frame_bytes;  // first channel
    float x;
    if (format == 3) {
      std::uint32_t u = rd_u32(p);
      std::memcpy(&x, &u, 4);
    } else if (bits == 16) {
      std::int16_t s = static_cast<std::int16_t>(rd_u16(p));
      x = static_cast<float>(s) / 32768.0f;
    } else if (bits == 24) {
      std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
      if (s & 0x800000) s |= ~0xFFFFFF;
      x = static_cast<float>(s) / 8388608.0f;
    } else {
      std::int32_t s = static_cast<std::int32_t>(rd_u32(p));
      x = static_cast<float>(s) / 2147483648.0f;
    }
    w.samples[i] = x;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write wav file: " + path);
  auto wr_u32 = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
  };
  auto wr_u16 = [&](std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8)};
    f.write(reinterpret_cast<char*>(b), 2);
  };
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  f.write("RIFF", 4);
  wr_u32(36 + 2 * n);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wr_u32(16);
  wr_u16(1);  // PCM
  wr_u16(1);  // mono
  wr_u32(static_cast<std::uint32_t>(w.sample_rate_hz));
  wr_u32(static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  wr_u16(2);
  wr_u16(16);
  f.write("data", 4);
  wr_u32(2 * n);
  for (float x : w.samples) {
    float c = std::clamp(x, -1.0f, 1.0f);
    std::int16_t s = static_cast<std::int16_t>(std::lrintf(c * 32767.0f));
    wr_u16(static_cast<std::uint16_t>(s));
  }
  if (!f) throw DataError("short write to wav file: " + path);
}

}  // namespace mb
