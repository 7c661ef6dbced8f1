#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cof/audio/waveform.hpp"
#include "cof/separation/model.hpp"

namespace cof::training {

struct AudioConfig {
  int sample_rate = audio::kSampleRate;
  int window = audio::kWindowSize;
  int hop = 344;
  std::int64_t frames = 64;  // spectrogram frames per clip
  std::int64_t rows = 64;    // warped frequency rows

  // Samples per clip so that a centred STFT yields exactly `frames` frames.
  std::int64_t clip_samples() const { return (frames - 1) * hop; }
};

struct VideoConfig {
  int fps = 8;
  int clip_frames = 16;
  int frame_size = 64;
};

struct TrainConfig {
  int batch_size = 10;
  int iters = 4000;
  double lr_pretrained = 1e-4;
  double lr_scratch = 1e-3;
  double lr_decay_factor = 10;
  int lr_decay_every = 1600;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int sources = 2;
  std::vector<double> stage_weights;  // empty: 1 per stage
  std::uint64_t seed = 1;
  int checkpoint_every = 500;
  int log_every = 1;
  std::vector<std::string> pretrained{"vision"};  // submodule names on lr_pretrained
  bool augment = true;
  int workers = 0;

  double stage_weight(int j) const {
    return j < static_cast<int>(stage_weights.size()) ? stage_weights[static_cast<std::size_t>(j)] : 1.0;
  }
};

struct SslmConfig {
  double lambda = 0.05;
  double lr = 1e-3;
  int iters = 300;
  int batch_size = 4;
  vision::BackboneConfig backbone{{8, 8, 16, 16}, 1};
  std::vector<double> stage_weights;
};

struct EvalConfig {
  int mixtures = 0;  // 0: every unordered pair of test videos
  int filter_len = 512;
  std::uint64_t seed = 1234;
};

struct Config {
  std::string profile = "toy";
  AudioConfig audio;
  VideoConfig video;
  separation::ModelConfig model;
  TrainConfig train;
  SslmConfig sslm;
  EvalConfig eval;

  static Config toy();
  static Config paper();
  static Config for_profile(const std::string& name);

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  std::map<std::string, std::string> to_map() const;
  static std::vector<std::string> keys();
  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

template <class V>
V parse_num(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    V v;
    if constexpr (std::is_floating_point_v<V>)
      v = static_cast<V>(std::stod(s, &pos));
    else if constexpr (std::is_unsigned_v<V>)
      v = static_cast<V>(std::stoull(s, &pos));
    else
      v = static_cast<V>(std::stoll(s, &pos));
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw InvalidInput("config key '" + key + "': cannot parse '" + s + "' as a number");
  }
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw InvalidInput("config key '" + key + "': expected a boolean, got '" + s + "'");
}

template <class V>
std::string join(const std::vector<V>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<V, std::string>)
      out += xs[i];
    else if constexpr (std::is_floating_point_v<V>)
      out += fmt(xs[i]);
    else
      out += std::to_string(xs[i]);
  }
  return out;
}

struct Field {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&, const std::string&)> set;
};

template <class M>
Field number_field(M accessor) {
  return {[accessor](const Config& c) {
            const auto v = accessor(const_cast<Config&>(c));
            if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>)
              return fmt(v);
            else
              return std::to_string(v);
          },
          [accessor](Config& c, const std::string& k, const std::string& s) {
            auto& ref = accessor(c);
            ref = parse_num<std::decay_t<decltype(ref)>>(k, s);
          }};
}

inline const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> r = [] {
    std::map<std::string, Field> m;
    m["profile"] = {[](const Config& c) { return c.profile; },
                    [](Config& c, const std::string&, const std::string& s) { c.profile = s; }};
    m["audio.sample_rate"] = number_field([](Config& c) -> int& { return c.audio.sample_rate; });
    m["audio.window"] = number_field([](Config& c) -> int& { return c.audio.window; });
    m["audio.hop"] = number_field([](Config& c) -> int& { return c.audio.hop; });
    m["audio.frames"] = number_field([](Config& c) -> std::int64_t& { return c.audio.frames; });
    m["audio.rows"] = number_field([](Config& c) -> std::int64_t& { return c.audio.rows; });
    m["video.fps"] = number_field([](Config& c) -> int& { return c.video.fps; });
    m["video.clip_frames"] = number_field([](Config& c) -> int& { return c.video.clip_frames; });
    m["video.frame_size"] = number_field([](Config& c) -> int& { return c.video.frame_size; });
    m["model.K"] = number_field([](Config& c) -> std::int64_t& { return c.model.K; });
    m["model.stages"] = number_field([](Config& c) -> int& { return c.model.stages; });
    m["model.vision"] = {[](const Config& c) {
                           std::vector<std::string> v;
                           for (auto k : c.model.vision) v.push_back(vision::to_string(k));
                           return join(v);
                         },
                         [](Config& c, const std::string&, const std::string& s) {
                           c.model.vision.clear();
                           for (auto& x : split_list(s)) c.model.vision.push_back(vision::parse_vision_kind(x));
                         }};
    m["model.backbone_widths"] = {[](const Config& c) {
                                    return join(std::vector<std::int64_t>(c.model.backbone.widths.begin(),
                                                                          c.model.backbone.widths.end()));
                                  },
                                  [](Config& c, const std::string& k, const std::string& s) {
                                    auto xs = split_list(s);
                                    if (xs.size() != 4) throw InvalidInput("config key '" + k + "': needs 4 widths");
                                    for (int i = 0; i < 4; ++i) c.model.backbone.widths[i] = parse_num<std::int64_t>(k, xs[i]);
                                  }};
    m["model.backbone_blocks"] = number_field([](Config& c) -> int& { return c.model.backbone.blocks; });
    m["model.unet_base"] = number_field([](Config& c) -> std::int64_t& { return c.model.unet.base; });
    m["model.unet_levels"] = number_field([](Config& c) -> int& { return c.model.unet.levels; });
    m["model.per_pair_combiners"] = {
        [](const Config& c) { return std::string(c.model.per_pair_combiners ? "true" : "false"); },
        [](Config& c, const std::string& k, const std::string& s) { c.model.per_pair_combiners = parse_bool(k, s); }};
    m["train.batch_size"] = number_field([](Config& c) -> int& { return c.train.batch_size; });
    m["train.iters"] = number_field([](Config& c) -> int& { return c.train.iters; });
    m["train.lr_pretrained"] = number_field([](Config& c) -> double& { return c.train.lr_pretrained; });
    m["train.lr_scratch"] = number_field([](Config& c) -> double& { return c.train.lr_scratch; });
    m["train.lr_decay_factor"] = number_field([](Config& c) -> double& { return c.train.lr_decay_factor; });
    m["train.lr_decay_every"] = number_field([](Config& c) -> int& { return c.train.lr_decay_every; });
    m["train.momentum"] = number_field([](Config& c) -> double& { return c.train.momentum; });
    m["train.weight_decay"] = number_field([](Config& c) -> double& { return c.train.weight_decay; });
    m["train.sources"] = number_field([](Config& c) -> int& { return c.train.sources; });
    m["train.stage_weights"] = {[](const Config& c) { return join(c.train.stage_weights); },
                                [](Config& c, const std::string& k, const std::string& s) {
                                  c.train.stage_weights.clear();
                                  for (auto& x : split_list(s)) c.train.stage_weights.push_back(parse_num<double>(k, x));
                                }};
    m["train.seed"] = number_field([](Config& c) -> std::uint64_t& { return c.train.seed; });
    m["train.checkpoint_every"] = number_field([](Config& c) -> int& { return c.train.checkpoint_every; });
    m["train.log_every"] = number_field([](Config& c) -> int& { return c.train.log_every; });
    m["train.pretrained"] = {[](const Config& c) { return join(c.train.pretrained); },
                             [](Config& c, const std::string&, const std::string& s) { c.train.pretrained = split_list(s); }};
    m["train.augment"] = {[](const Config& c) { return std::string(c.train.augment ? "true" : "false"); },
                          [](Config& c, const std::string& k, const std::string& s) { c.train.augment = parse_bool(k, s); }};
    m["train.workers"] = number_field([](Config& c) -> int& { return c.train.workers; });
    m["sslm.lambda"] = number_field([](Config& c) -> double& { return c.sslm.lambda; });
    m["sslm.lr"] = number_field([](Config& c) -> double& { return c.sslm.lr; });
    m["sslm.iters"] = number_field([](Config& c) -> int& { return c.sslm.iters; });
    m["sslm.batch_size"] = number_field([](Config& c) -> int& { return c.sslm.batch_size; });
    m["sslm.backbone_widths"] = {[](const Config& c) {
                                   return join(std::vector<std::int64_t>(c.sslm.backbone.widths.begin(),
                                                                         c.sslm.backbone.widths.end()));
                                 },
                                 [](Config& c, const std::string& k, const std::string& s) {
                                   auto xs = split_list(s);
                                   if (xs.size() != 4) throw InvalidInput("config key '" + k + "': needs 4 widths");
                                   for (int i = 0; i < 4; ++i) c.sslm.backbone.widths[i] = parse_num<std::int64_t>(k, xs[i]);
                                 }};
    m["sslm.backbone_blocks"] = number_field([](Config& c) -> int& { return c.sslm.backbone.blocks; });
    m["sslm.stage_weights"] = {[](const Config& c) { return join(c.sslm.stage_weights); },
                               [](Config& c, const std::string& k, const std::string& s) {
                                 c.sslm.stage_weights.clear();
                                 for (auto& x : split_list(s)) c.sslm.stage_weights.push_back(parse_num<double>(k, x));
                               }};
    m["eval.mixtures"] = number_field([](Config& c) -> int& { return c.eval.mixtures; });
    m["eval.filter_len"] = number_field([](Config& c) -> int& { return c.eval.filter_len; });
    m["eval.seed"] = number_field([](Config& c) -> std::uint64_t& { return c.eval.seed; });
    return m;
  }();
  return r;
}

}  // namespace detail

// Desk-scale preset. Nothing is pretrained here, so the vision networks get
// the scratch learning rate too; the schedule keeps the decay at 40% of the run.
inline Config Config::toy() {
  Config c;
  c.train.iters = 2000;
  c.train.lr_scratch = 0.01;
  c.train.lr_pretrained = 0.01;
  c.train.lr_decay_every = 800;
  return c;
}

inline Config Config::paper() {
  Config c;
  c.profile = "paper";
  c.audio.hop = audio::kHop;
  c.audio.frames = 256;
  c.audio.rows = audio::kWarpedRows;
  c.video.clip_frames = 48;
  c.video.frame_size = 224;
  c.model.backbone = vision::BackboneConfig::resnet18();
  c.model.unet.base = 32;
  c.model.rows = 256;
  c.model.frames = 256;
  c.sslm.backbone = vision::BackboneConfig::resnet18();
  c.sslm.lr = 1e-4;
  c.sslm.batch_size = 10;
  c.sslm.iters = 4000;
  return c;
}

inline Config Config::for_profile(const std::string& name) {
  if (name == "toy") return toy();
  if (name == "paper") return paper();
  throw InvalidInput("unknown profile '" + name + "' (expected toy or paper)");
}

inline void Config::set(const std::string& key, const std::string& value) {
  const auto& r = detail::registry();
  auto it = r.find(key);
  if (it == r.end()) throw InvalidInput("unknown config key '" + key + "'");
  it->second.set(*this, key, detail::trim(value));
  model.rows = audio.rows;
  model.frames = audio.frames;
  model.sources = train.sources;
}

inline std::string Config::get(const std::string& key) const {
  const auto& r = detail::registry();
  auto it = r.find(key);
  if (it == r.end()) throw InvalidInput("unknown config key '" + key + "'");
  return it->second.get(*this);
}

inline std::map<std::string, std::string> Config::to_map() const {
  std::map<std::string, std::string> m;
  for (auto& [k, f] : detail::registry()) m[k] = f.get(*this);
  return m;
}

inline std::vector<std::string> Config::keys() {
  std::vector<std::string> k;
  for (auto& [name, _] : detail::registry()) k.push_back(name);
  return k;
}

inline void Config::validate() const {
  model.validate();
  auto pos = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidInput(what + " must be positive");
  };
  pos(audio.sample_rate > 0, "audio.sample_rate");
  pos(audio.window > 0 && audio.window % 2 == 0, "audio.window (even)");
  pos(audio.hop > 0, "audio.hop");
  pos(audio.frames > 1, "audio.frames");
  pos(audio.rows > 1, "audio.rows");
  pos(video.fps > 0, "video.fps");
  pos(video.clip_frames > 1, "video.clip_frames");
  pos(video.frame_size > 0 && video.frame_size % 16 == 0, "video.frame_size (multiple of 16)");
  pos(train.batch_size > 0, "train.batch_size");
  pos(train.iters > 0, "train.iters");
  pos(train.lr_pretrained > 0 && train.lr_scratch > 0, "learning rates");
  pos(train.lr_decay_factor > 0 && train.lr_decay_every > 0, "learning-rate decay");
  pos(train.momentum >= 0 && train.weight_decay >= 0, "momentum/weight decay (non-negative)");
  pos(train.sources >= 2, "train.sources (>= 2)");
  pos(train.checkpoint_every > 0 && train.log_every > 0, "checkpoint/log interval");
  pos(sslm.lambda >= 0, "sslm.lambda (non-negative)");
  pos(sslm.lr > 0 && sslm.iters > 0 && sslm.batch_size > 0, "sslm optimiser settings");
  pos(eval.filter_len > 0, "eval.filter_len");
  if (model.rows != audio.rows || model.frames != audio.frames) throw InvalidInput("model grid disagrees with audio grid");
}

// Flat "key = value" lines; '#' starts a comment.
inline void apply_config_file(Config& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected key = value");
    c.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

// Rebuilds a config from a key/value snapshot, starting from its profile.
inline Config config_from_map(const std::map<std::string, std::string>& m) {
  auto it = m.find("profile");
  Config c = Config::for_profile(it == m.end() ? "toy" : it->second);
  for (auto& [k, v] : m) c.set(k, v);
  c.validate();
  return c;
}

inline std::string config_text(const Config& c) {
  std::string out;
  for (auto& [k, v] : c.to_map()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace cof::training
