#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cof/audio/waveform.hpp"

namespace cof::audio {

// Interleaved multi-channel PCM as read from disk.
struct WavData {
  int sample_rate = 0;
  int channels = 0;
  std::vector<double> interleaved;  // [-1, 1]

  std::int64_t frames() const { return channels ? static_cast<std::int64_t>(interleaved.size()) / channels : 0; }
};

namespace detail {
inline std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
}  // namespace detail

// Reads RIFF/WAVE with 8/16/24/32-bit integer PCM or 32-bit float samples.
inline WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path.string());
  int format = 0, channels = 0, rate = 0, bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* ck = buf.data() + pos;
    const std::uint32_t len = detail::rd_u32(ck + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = buf.size() - body;
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      if (len < 16 || avail < 16) throw IoError("truncated fmt chunk in " + path.string());
      format = detail::rd_u16(buf.data() + body);
      channels = detail::rd_u16(buf.data() + body + 2);
      rate = static_cast<int>(detail::rd_u32(buf.data() + body + 4));
      bits = detail::rd_u16(buf.data() + body + 14);
      if (format == 0xFFFE && len >= 26) format = detail::rd_u16(buf.data() + body + 24);
    } else if (std::memcmp(ck, "data", 4) == 0) {
      data = buf.data() + body;
      data_len = std::min<std::size_t>(len, avail);
    }
    pos = body + len + (len & 1);
  }
  if (!data || channels <= 0 || rate <= 0) throw IoError("missing fmt/data chunk in " + path.string());
  const int bytes = bits / 8;
  if (!((format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) || (format == 3 && bits == 32)))
    throw IoError("unsupported WAV encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                  " bits) in " + path.string());
  WavData w;
  w.sample_rate = rate;
  w.channels = channels;
  const std::size_t n = data_len / static_cast<std::size_t>(bytes);
  w.interleaved.resize(n - n % static_cast<std::size_t>(channels));
  for (std::size_t i = 0; i < w.interleaved.size(); ++i) {
    const unsigned char* p = data + i * static_cast<std::size_t>(bytes);
    double v = 0;
    if (format == 3) {
      float f;
      std::memcpy(&f, p, 4);
      v = f;
    } else if (bits == 8) {
      v = (static_cast<int>(p[0]) - 128) / 128.0;
    } else if (bits == 16) {
      v = static_cast<std::int16_t>(detail::rd_u16(p)) / 32768.0;
    } else if (bits == 24) {
      std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
      if (s & 0x800000) s |= ~0xffffff;
      v = s / 8388608.0;
    } else {
      v = static_cast<std::int32_t>(detail::rd_u32(p)) / 2147483648.0;
    }
    w.interleaved[i] = v;
  }
  return w;
}

// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.sample_rate <= 0) throw InvalidInput("write_wav: sample rate must be positive");
  std::string out;
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  out.append("RIFF");
  detail::put_u32(out, 36 + n * 2);
  out.append("WAVEfmt ");
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out.append("data");
  detail::put_u32(out, n * 2);
  for (double v : w.samples) {
    const double c = std::clamp(v, -1.0, 1.0);
    const auto s = static_cast<std::int16_t>(std::lround(c * 32767.0));
    detail::put_u16(out, static_cast<std::uint16_t>(s));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to " + path.string());
}

}  // namespace cof::audio
