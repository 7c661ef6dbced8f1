#pragma once

// Checkpoint file, little-endian:
//
//   8 bytes   magic "COFCKPT1"
//   u32       format_version (= 1)
//   u64       header length H
//   H bytes   JSON header: kind, iteration, config map, rng state, extra,
//             tensor index [{name, shape, offset}] (offsets into the payload)
//   ...       payload: f32 tensors, row-major, in index order
//   u32       crc32 of every preceding byte

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cof/core/nn.hpp"
#include "cof/io/tensor_file.hpp"

namespace cof::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'F', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  std::string kind;
  std::int64_t iteration = 0;
  std::map<std::string, std::string> config;
  std::string rng_state;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
  void put(const std::string& name, Tensor<float> t) {
    for (auto& [n, old] : tensors)
      if (n == name) {
        old = std::move(t);
        return;
      }
    tensors.emplace_back(name, std::move(t));
  }
};

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (auto& [name, t] : c.tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  const nlohmann::json header{{"format_version", kCheckpointVersion}, {"kind", c.kind},   {"iteration", c.iteration},
                              {"config", c.config},                   {"rng", c.rng_state}, {"extra", c.extra},
                              {"tensors", index}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, h.size());
  out += h;
  for (auto& [_, t] : c.tensors) out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
  detail::put<std::uint32_t>(out, crc);
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  detail::atomic_write(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto buf = detail::read_all(path);
  const std::string where = path.string();
  if (buf.size() < sizeof(kCheckpointMagic) + 16 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0)
    throw IntegrityError(where + ": not a checkpoint file");
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  const auto crc =
      static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
  if (crc != stored) throw IntegrityError(where + ": checksum mismatch (file corrupt or truncated)");
  std::size_t pos = 8;
  const auto version = detail::get<std::uint32_t>(buf, pos);
  if (version != kCheckpointVersion)
    throw IntegrityError(where + ": unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::get<std::uint64_t>(buf, pos);
  if (pos + hlen > buf.size() - 4) throw IntegrityError(where + ": header runs past end of file");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                              buf.begin() + static_cast<std::ptrdiff_t>(pos + hlen));
  } catch (const std::exception&) {
    throw IntegrityError(where + ": header is not valid JSON");
  }
  pos += hlen;
  const std::size_t payload = pos, payload_end = buf.size() - 4;
  Checkpoint c;
  try {
    c.kind = h.at("kind").get<std::string>();
    c.iteration = h.at("iteration").get<std::int64_t>();
    c.config = h.at("config").get<std::map<std::string, std::string>>();
    c.rng_state = h.at("rng").get<std::string>();
    c.extra = h.at("extra");
    for (auto& e : h.at("tensors")) {
      Shape s = e.at("shape").get<Shape>();
      Tensor<float> t(s);
      const auto off = e.at("offset").get<std::uint64_t>();
      const std::size_t bytes = t.size() * sizeof(float);
      if (payload + off + bytes > payload_end) throw IntegrityError(where + ": tensor data runs past end of file");
      std::memcpy(t.data(), buf.data() + payload + off, bytes);
      c.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IntegrityError(where + ": malformed header (" + std::string(ex.what()) + ")");
  }
  return c;
}

// Parameters and buffers of `m`, named with `prefix`.
inline void store_module(Checkpoint& c, nn::Module<float>& m, const std::string& prefix) {
  for (auto& [n, p] : m.named_parameters(prefix)) c.put(n, p.value());
  for (auto& [n, b] : m.named_buffers(prefix)) c.put(n, *b);
}

// Copies tensors into `m`. Strict mode requires every tensor to be present;
// otherwise missing names are skipped. Returns the number copied.
inline std::size_t restore_module(const Checkpoint& c, nn::Module<float>& m, const std::string& prefix,
                                  bool strict = true) {
  std::unordered_map<std::string, const Tensor<float>*> idx;
  for (auto& [n, t] : c.tensors) idx.emplace(n, &t);
  std::size_t copied = 0;
  auto copy = [&](const std::string& name, Tensor<float>& dst) {
    auto it = idx.find(name);
    if (it == idx.end()) {
      if (strict) throw ShapeMismatch("checkpoint has no tensor '" + name + "' for this model");
      return;
    }
    if (it->second->shape() != dst.shape())
      throw ShapeMismatch("tensor '" + name + "' is " + shape_str(it->second->shape()) + " in the checkpoint but " +
                          shape_str(dst.shape()) + " in the model");
    dst = *it->second;
    ++copied;
  };
  for (auto& [n, p] : m.named_parameters(prefix)) copy(n, p.mutable_value());
  for (auto& [n, b] : m.named_buffers(prefix)) copy(n, *b);
  return copied;
}

template <class Engine>
std::string rng_to_string(const Engine& e) {
  std::ostringstream o;
  o << e;
  return o.str();
}

template <class Engine>
void rng_from_string(Engine& e, const std::string& s) {
  std::istringstream i(s);
  i >> e;
  if (!i) throw IntegrityError("cannot restore random generator state");
}

}  // namespace cof::io
