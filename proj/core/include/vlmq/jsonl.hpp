#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vlmq {

using json = nlohmann::json;

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct JsonLine {
  std::size_t line = 0;
  json value;
};

// Provenance header carried as the first record of every artifact file.
// Kept free of timestamps so reruns are byte-identical.
struct ArtifactMeta {
  std::string stage;
  std::string config_digest;
  std::optional<std::uint64_t> seed;
  json extra = json::object();

  json to_json() const;
  static ArtifactMeta from_json(const json& j);
};

struct JsonlFile {
  std::optional<ArtifactMeta> meta;
  std::vector<JsonLine> records;
  std::vector<LineError> errors;
};

// Reads one JSON object per line. Blank lines are skipped; lines that fail to
// parse (or are not objects) are reported with their line number.
// Throws InputError if the file cannot be opened.
JsonlFile read_jsonl(const std::filesystem::path& path);

// Writes an optional header line followed by one compact JSON record per line.
void write_jsonl(const std::filesystem::path& path, const std::optional<ArtifactMeta>& meta,
                 const std::vector<json>& records);

void write_text_file(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace vlmq
