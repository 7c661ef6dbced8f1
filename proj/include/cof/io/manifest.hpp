#pragma once

// Manifest: JSON lines. The first line is a header
//   {"type": "cof-manifest", "format_version": 1}
// followed by one record per video:
//   {"id": "...", "frame_dir" | "frames_path": "...", "audio_path": "...",
//    "flow_path": "..." (optional), "category": "...", "split": "train|val|test"}
// Relative paths are resolved against the manifest's directory.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "cof/core/error.hpp"

namespace cof::io {

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
  std::string id;
  std::filesystem::path frame_dir;    // numbered PNG files
  std::filesystem::path frames_path;  // or a packed u8 tensor [T,3,H,W]
  std::filesystem::path audio_path;
  std::filesystem::path flow_path;    // packed f32 tensor [T-1,2,H,W], optional
  std::string category;
  std::string split;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> split(const std::string& name) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == name) out.push_back(i);
    return out;
  }
  std::vector<std::string> categories() const {
    std::set<std::string> s;
    for (auto& e : entries) s.insert(e.category);
    return {s.begin(), s.end()};
  }
};

namespace detail {
inline std::string field(const nlohmann::json& j, const char* key, const std::string& where, bool required = true) {
  if (!j.contains(key)) {
    if (required) throw InvalidInput(where + ": missing field '" + key + "'");
    return "";
  }
  if (!j[key].is_string()) throw InvalidInput(where + ": field '" + std::string(key) + "' must be a string");
  return j[key].get<std::string>();
}
}  // namespace detail

inline Manifest load_manifest(const std::filesystem::path& path, bool check_paths = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
  };
  Manifest m;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception&) {
      throw InvalidInput(where + ": not valid JSON");
    }
    if (!j.is_object()) throw InvalidInput(where + ": record must be an object");
    if (!header) {
      if (j.value("type", "") != "cof-manifest") throw InvalidInput(where + ": field 'type' must be cof-manifest");
      if (!j.contains("format_version") || !j["format_version"].is_number_integer())
        throw InvalidInput(where + ": missing field 'format_version'");
      if (j["format_version"].get<int>() != kManifestVersion)
        throw InvalidInput(where + ": unsupported format_version " + j["format_version"].dump());
      header = true;
      continue;
    }
    ManifestEntry e;
    e.id = detail::field(j, "id", where);
    if (e.id.empty()) throw InvalidInput(where + ": field 'id' is empty");
    if (!ids.insert(e.id).second) throw InvalidInput(where + ": field 'id' duplicates '" + e.id + "'");
    e.frame_dir = resolve(detail::field(j, "frame_dir", where, false));
    e.frames_path = resolve(detail::field(j, "frames_path", where, false));
    if (e.frame_dir.empty() == e.frames_path.empty())
      throw InvalidInput(where + ": exactly one of fields 'frame_dir' and 'frames_path' is required");
    e.audio_path = resolve(detail::field(j, "audio_path", where));
    e.flow_path = resolve(detail::field(j, "flow_path", where, false));
    e.category = detail::field(j, "category", where);
    e.split = detail::field(j, "split", where);
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw InvalidInput(where + ": field 'split' must be train, val or test, got '" + e.split + "'");
    if (check_paths) {
      auto must = [&](const std::filesystem::path& p, const char* name) {
        if (!p.empty() && !std::filesystem::exists(p))
          throw IoError(where + ": field '" + name + "' points to missing " + p.string());
      };
      must(e.frame_dir, "frame_dir");
      must(e.frames_path, "frames_path");
      must(e.audio_path, "audio_path");
      must(e.flow_path, "flow_path");
    }
    m.entries.push_back(std::move(e));
  }
  if (!header) throw InvalidInput(path.string() + ": empty manifest (no header line)");
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  const auto base = std::filesystem::absolute(path).parent_path().lexically_normal();
  auto rel = [&](const std::filesystem::path& p) -> std::string {
    if (p.empty()) return "";
    return std::filesystem::absolute(p).lexically_normal().lexically_relative(base).generic_string();
  };
  std::string out = nlohmann::json{{"type", "cof-manifest"}, {"format_version", kManifestVersion}}.dump() + "\n";
  for (auto& e : m.entries) {
    nlohmann::json j{{"id", e.id}, {"audio_path", rel(e.audio_path)}, {"category", e.category}, {"split", e.split}};
    if (!e.frame_dir.empty()) j["frame_dir"] = rel(e.frame_dir);
    if (!e.frames_path.empty()) j["frames_path"] = rel(e.frames_path);
    if (!e.flow_path.empty()) j["flow_path"] = rel(e.flow_path);
    out += j.dump() + "\n";
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << out;
}

}  // namespace cof::io
