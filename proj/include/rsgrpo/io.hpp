#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsgrpo/synth_env.hpp"
#include "rsgrpo/toy_policy.hpp"

namespace rsgrpo {

namespace fs = std::filesystem;

/// Writes through a sibling temporary file and renames it into place, so a
/// reader never sees a half-written file.
inline void atomic_write(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline constexpr const char* kDatasetFormat = "rsgrpo-dataset/1";

/// JSONL: one header line (format, split, spec, vocab), then one episode per
/// line.
inline std::string dataset_to_jsonl(const Dataset& d) {
  std::string out = nlohmann::json{{"format", kDatasetFormat},
                                   {"split", d.split},
                                   {"episodes", d.episodes.size()},
                                   {"spec", d.spec},
                                   {"vocab", d.vocab}}
                        .dump();
  out += '\n';
  for (const auto& ep : d.episodes) {
    out += episode_to_json(ep).dump();
    out += '\n';
  }
  return out;
}

inline Dataset dataset_from_jsonl(const std::string& text, const std::string& origin = "dataset") {
  std::istringstream in(text);
  std::string line;
  Dataset d;
  bool header = false;
  std::size_t lineno = 0;
  std::size_t declared = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!header) {
      if (j.value("format", std::string{}) != kDatasetFormat) {
        throw std::runtime_error(origin + ": missing " + std::string(kDatasetFormat) + " header");
      }
      d.split = j.at("split").get<std::string>();
      d.spec = j.at("spec").get<DatasetSpec>();
      d.vocab = j.at("vocab").get<Vocabulary>();
      declared = j.at("episodes").get<std::size_t>();
      header = true;
      continue;
    }
    Episode ep = episode_from_json(j);
    for (const auto& doc : ep.docs) {
      for (TokenId t : doc) {
        if (!d.vocab.contains(t)) {
          throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": token " + std::to_string(t) +
                                   " outside vocabulary");
        }
      }
    }
    d.episodes.push_back(std::move(ep));
  }
  if (!header) throw std::runtime_error(origin + ": empty file");
  if (d.episodes.size() != declared) {
    throw std::runtime_error(origin + ": header declares " + std::to_string(declared) + " episodes, found " +
                             std::to_string(d.episodes.size()));
  }
  return d;
}

inline void save_dataset(const fs::path& path, const Dataset& d) { atomic_write(path, dataset_to_jsonl(d)); }

inline Dataset load_dataset(const fs::path& path) { return dataset_from_jsonl(read_file(path), path.string()); }

inline void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  atomic_write(path, checkpoint_to_json(c).dump(1) + "\n");
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace rsgrpo
