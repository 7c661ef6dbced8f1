#pragma once

// Packed tensor file (".cft"), little-endian:
//
//   offset  size  field
//   0       4     magic "CFT1"
//   4       4     u32 format_version (= 1)
//   8       1     u8 dtype: 0 = f32, 1 = f64, 2 = complex64 (re,im f32 pairs), 3 = u8
//   9       1     u8 codec: 0 = raw, 1 = zlib
//   10      2     u16 rank
//   12      8*R   i64 dims
//   ..      4     u32 window_size (0 if not a spectrogram)
//   ..      4     u32 hop
//   ..      4     u32 sample_rate
//   ..      8     u64 payload byte count (after codec)
//   ..      4     u32 crc32 of the decoded payload
//   ..      N     payload, row-major
//
// Complex spectrograms are stored as [freq_bins, frames] complex64.

#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "cof/audio/stft.hpp"
#include "cof/core/tensor.hpp"

namespace cof::io {

enum class DType : std::uint8_t { F32 = 0, F64 = 1, C64 = 2, U8 = 3 };
enum class Codec : std::uint8_t { Raw = 0, Zlib = 1 };

struct TensorFile {
  DType dtype = DType::F32;
  Shape shape;
  std::uint32_t window_size = 0, hop = 0, sample_rate = 0;
  std::vector<unsigned char> payload;  // decoded bytes
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::C64: return 8;
    case DType::U8: return 1;
  }
  throw InvalidInput("unknown tensor dtype");
}

namespace detail {
template <class V>
void put(std::string& s, V v) {
  char b[sizeof(V)];
  std::memcpy(b, &v, sizeof(V));
  s.append(b, sizeof(V));
}
template <class V>
V get(const std::vector<unsigned char>& buf, std::size_t& pos) {
  if (pos + sizeof(V) > buf.size()) throw IntegrityError("tensor file truncated");
  V v;
  std::memcpy(&v, buf.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Write to a sibling temp file, then rename over the target.
inline void atomic_write(const std::filesystem::path& p, const std::string& bytes) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}
}  // namespace detail

inline void write_tensor_file(const std::filesystem::path& path, const TensorFile& tf, Codec codec = Codec::Raw) {
  const std::size_t expect = static_cast<std::size_t>(numel_of(tf.shape)) * dtype_size(tf.dtype);
  if (tf.payload.size() != expect) throw InvalidInput("tensor payload size does not match shape");
  std::string s = "CFT1";
  detail::put<std::uint32_t>(s, kTensorFileVersion);
  detail::put<std::uint8_t>(s, static_cast<std::uint8_t>(tf.dtype));
  detail::put<std::uint8_t>(s, static_cast<std::uint8_t>(codec));
  detail::put<std::uint16_t>(s, static_cast<std::uint16_t>(tf.shape.size()));
  for (auto d : tf.shape) detail::put<std::int64_t>(s, d);
  detail::put<std::uint32_t>(s, tf.window_size);
  detail::put<std::uint32_t>(s, tf.hop);
  detail::put<std::uint32_t>(s, tf.sample_rate);
  std::vector<unsigned char> body;
  if (codec == Codec::Zlib) {
    uLongf len = compressBound(static_cast<uLong>(tf.payload.size()));
    body.resize(len);
    if (compress2(body.data(), &len, tf.payload.data(), static_cast<uLong>(tf.payload.size()), 6) != Z_OK)
      throw IoError("zlib compression failed for " + path.string());
    body.resize(len);
  } else {
    body = tf.payload;
  }
  detail::put<std::uint64_t>(s, body.size());
  detail::put<std::uint32_t>(
      s, static_cast<std::uint32_t>(crc32(0L, tf.payload.data(), static_cast<uInt>(tf.payload.size()))));
  s.append(reinterpret_cast<const char*>(body.data()), body.size());
  detail::atomic_write(path, s);
}

inline TensorFile read_tensor_file(const std::filesystem::path& path) {
  const auto buf = detail::read_all(path);
  if (buf.size() < 4 || std::memcmp(buf.data(), "CFT1", 4) != 0)
    throw IntegrityError("bad tensor file magic in " + path.string());
  std::size_t pos = 4;
  const auto version = detail::get<std::uint32_t>(buf, pos);
  if (version != kTensorFileVersion)
    throw IntegrityError("unsupported tensor file version " + std::to_string(version) + " in " + path.string());
  TensorFile tf;
  const auto dt = detail::get<std::uint8_t>(buf, pos);
  if (dt > 3) throw IntegrityError("unknown dtype code in " + path.string());
  tf.dtype = static_cast<DType>(dt);
  const auto codec = static_cast<Codec>(detail::get<std::uint8_t>(buf, pos));
  const auto rank = detail::get<std::uint16_t>(buf, pos);
  for (int i = 0; i < rank; ++i) tf.shape.push_back(detail::get<std::int64_t>(buf, pos));
  tf.window_size = detail::get<std::uint32_t>(buf, pos);
  tf.hop = detail::get<std::uint32_t>(buf, pos);
  tf.sample_rate = detail::get<std::uint32_t>(buf, pos);
  const auto body_len = detail::get<std::uint64_t>(buf, pos);
  const auto crc = detail::get<std::uint32_t>(buf, pos);
  if (pos + body_len != buf.size()) throw IntegrityError("tensor file length mismatch in " + path.string());
  const std::size_t expect = static_cast<std::size_t>(numel_of(tf.shape)) * dtype_size(tf.dtype);
  if (codec == Codec::Zlib) {
    tf.payload.resize(expect);
    uLongf len = static_cast<uLongf>(expect);
    if (uncompress(tf.payload.data(), &len, buf.data() + pos, static_cast<uLong>(body_len)) != Z_OK || len != expect)
      throw IntegrityError("corrupt compressed payload in " + path.string());
  } else if (codec == Codec::Raw) {
    if (body_len != expect) throw IntegrityError("payload size does not match shape in " + path.string());
    tf.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  } else {
    throw IntegrityError("unknown codec in " + path.string());
  }
  if (crc32(0L, tf.payload.data(), static_cast<uInt>(tf.payload.size())) != crc)
    throw IntegrityError("checksum mismatch in " + path.string());
  return tf;
}

template <class T>
TensorFile pack(const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double> || std::is_same_v<T, std::uint8_t>);
  TensorFile tf;
  tf.dtype = std::is_same_v<T, float> ? DType::F32 : (std::is_same_v<T, double> ? DType::F64 : DType::U8);
  tf.shape = t.shape();
  tf.payload.resize(t.size() * sizeof(T));
  std::memcpy(tf.payload.data(), t.data(), tf.payload.size());
  return tf;
}

template <class T>
Tensor<T> unpack(const TensorFile& tf) {
  Tensor<T> out(tf.shape);
  const std::size_t n = out.size();
  auto cvt = [&](auto tag) {
    using S = decltype(tag);
    for (std::size_t i = 0; i < n; ++i) {
      S v;
      std::memcpy(&v, tf.payload.data() + i * sizeof(S), sizeof(S));
      out[i] = static_cast<T>(v);
    }
  };
  switch (tf.dtype) {
    case DType::F32: cvt(float{}); break;
    case DType::F64: cvt(double{}); break;
    case DType::U8: cvt(std::uint8_t{}); break;
    case DType::C64: throw InvalidInput("unpack: complex payload needs unpack_spectrogram");
  }
  return out;
}

template <class T>
void save_tensor(const std::filesystem::path& p, const Tensor<T>& t, Codec codec = Codec::Raw) {
  write_tensor_file(p, pack(t), codec);
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& p) {
  return unpack<T>(read_tensor_file(p));
}

inline void save_spectrogram(const std::filesystem::path& p, const audio::ComplexSpectrogram& s) {
  s.validate();
  TensorFile tf;
  tf.dtype = DType::C64;
  tf.shape = {s.freq_bins, s.frames};
  tf.window_size = static_cast<std::uint32_t>(s.window_size);
  tf.hop = static_cast<std::uint32_t>(s.hop);
  tf.sample_rate = static_cast<std::uint32_t>(s.sample_rate);
  tf.payload.resize(s.bins.size() * 8);
  for (std::size_t i = 0; i < s.bins.size(); ++i) {
    const float re = static_cast<float>(s.bins[i].real()), im = static_cast<float>(s.bins[i].imag());
    std::memcpy(tf.payload.data() + i * 8, &re, 4);
    std::memcpy(tf.payload.data() + i * 8 + 4, &im, 4);
  }
  write_tensor_file(p, tf);
}

inline audio::ComplexSpectrogram load_spectrogram(const std::filesystem::path& p) {
  const auto tf = read_tensor_file(p);
  if (tf.dtype != DType::C64 || tf.shape.size() != 2) throw InvalidInput(p.string() + " is not a spectrogram file");
  audio::ComplexSpectrogram s;
  s.freq_bins = tf.shape[0];
  s.frames = tf.shape[1];
  s.window_size = static_cast<int>(tf.window_size);
  s.hop = static_cast<int>(tf.hop);
  s.sample_rate = static_cast<int>(tf.sample_rate);
  s.bins.resize(static_cast<std::size_t>(s.freq_bins * s.frames));
  for (std::size_t i = 0; i < s.bins.size(); ++i) {
    float re, im;
    std::memcpy(&re, tf.payload.data() + i * 8, 4);
    std::memcpy(&im, tf.payload.data() + i * 8 + 4, 4);
    s.bins[i] = {re, im};
  }
  s.validate();
  return s;
}

}  // namespace cof::io
