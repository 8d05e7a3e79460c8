#include "vlmq/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "vlmq/error.hpp"

namespace vlmq {

namespace {
constexpr const char* kMetaKey = "_meta";
}

json ArtifactMeta::to_json() const {
  json j = {{"stage", stage}, {"config_digest", config_digest}};
  j["seed"] = seed ? json(*seed) : json(nullptr);
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

ArtifactMeta ArtifactMeta::from_json(const json& j) {
  ArtifactMeta m;
  m.stage = j.value("stage", "");
  m.config_digest = j.value("config_digest", "");
  if (j.contains("seed") && j["seed"].is_number_unsigned()) m.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("extra")) m.extra = j["extra"];
  return m;
}

JsonlFile read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  JsonlFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json value = json::parse(line, nullptr, false);
    if (value.is_discarded() || !value.is_object()) {
      out.errors.push_back({line_no, "malformed JSON object"});
      continue;
    }
    if (value.contains(kMetaKey)) {
      if (!out.meta && out.records.empty()) {
        out.meta = ArtifactMeta::from_json(value[kMetaKey]);
      } else {
        out.errors.push_back({line_no, "unexpected header record"});
      }
      continue;
    }
    out.records.push_back({line_no, std::move(value)});
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::optional<ArtifactMeta>& meta,
                 const std::vector<json>& records) {
  std::ostringstream os;
  if (meta) os << json{{kMetaKey, meta->to_json()}}.dump() << '\n';
  for (const auto& r : records) os << r.dump() << '\n';
  write_text_file(path, os.str());
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << contents;
  if (!out) throw InputError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace vlmq
