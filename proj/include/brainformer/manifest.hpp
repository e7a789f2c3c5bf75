#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "brainformer/errors.hpp"

namespace brainformer {

/// One dataset line: `split filename seed`. `path` is resolved against the
/// manifest's directory; `file` keeps the name as written.
struct ManifestEntry {
  std::string split;
  std::string file;
  std::uint64_t seed = 0;
  std::string path;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == name) out.push_back(e);
    return out;
  }
};

inline Manifest parse_manifest(const std::string& text, const std::filesystem::path& base, const std::string& source) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    ManifestEntry e;
    std::string seed, extra;
    if (!(fields >> e.split)) continue;
    if (!(fields >> e.file >> seed) || (fields >> extra)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected `split filename seed`");
    }
    try {
      std::size_t used = 0;
      e.seed = std::stoull(seed, &used);
      if (used != seed.size()) throw std::invalid_argument(seed);
    } catch (const std::logic_error&) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": seed `" + seed + "` is not an unsigned integer");
    }
    e.path = (base / e.file).string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str(), std::filesystem::path(path).parent_path(), path);
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path);
  out << "# split filename seed\n";
  for (const auto& e : m.entries) out << e.split << ' ' << e.file << ' ' << e.seed << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace brainformer
