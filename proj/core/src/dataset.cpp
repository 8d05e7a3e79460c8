#include "vlmq/dataset.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "vlmq/error.hpp"
#include "vlmq/text.hpp"

namespace vlmq {

namespace {

constexpr std::string_view kUnanswerable = "unanswerable";

std::string required_string(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw InputError(std::string("missing required field '") + key + "'");
  }
  auto v = j[key].get<std::string>();
  if (text::trim(v).empty()) throw InputError(std::string("empty required field '") + key + "'");
  return v;
}

std::string optional_string(const json& j, const char* key) {
  if (j.contains(key) && j[key].is_string()) return j[key].get<std::string>();
  return {};
}

// VizWiz stores answers either as plain strings or as {"answer": ...} objects.
std::string annotation_text(const json& a) {
  if (a.is_string()) return a.get<std::string>();
  if (a.is_object() && a.contains("answer") && a["answer"].is_string()) {
    return a["answer"].get<std::string>();
  }
  throw InputError("annotation must be a string or an object with 'answer'");
}

VisualInstance parse_instance(const json& j, DatasetKind kind) {
  VisualInstance inst;
  inst.kind = kind;
  inst.id = required_string(j, "id");
  inst.question = required_string(j, "question");
  inst.image_ref = optional_string(j, "image");

  if (kind == DatasetKind::multiple_choice) {
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
      throw InputError("choice list empty for multiple_choice record");
    }
    for (const auto& c : j["choices"]) {
      if (!c.is_string()) throw InputError("choices must be strings");
      inst.choices.push_back(c.get<std::string>());
    }
    if (!j.contains("correct_choice_idx") || !j["correct_choice_idx"].is_number_integer()) {
      throw InputError("missing required field 'correct_choice_idx'");
    }
    auto idx = j["correct_choice_idx"].get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= inst.choices.size()) {
      throw InputError("correct_choice_idx out of range");
    }
    inst.gold.correct_choice = inst.choices[static_cast<std::size_t>(idx)];
  } else {
    if (!j.contains("answers") || !j["answers"].is_array() || j["answers"].empty()) {
      throw InputError("open_ended record needs a non-empty 'answers' list");
    }
    std::vector<std::string> annotations;
    for (const auto& a : j["answers"]) annotations.push_back(annotation_text(a));
    inst.gold.annotations = std::move(annotations);
  }
  return inst;
}

}  // namespace

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::multiple_choice ? "multiple_choice" : "open_ended";
}

DatasetKind parse_dataset_kind(std::string_view s) {
  auto v = text::to_lower(s);
  if (v == "multiple_choice" || v == "mc" || v == "aokvqa" || v == "a-okvqa") {
    return DatasetKind::multiple_choice;
  }
  if (v == "open_ended" || v == "open" || v == "vizwiz") return DatasetKind::open_ended;
  throw InputError("unknown dataset kind '" + std::string(s) + "'");
}

json VisualInstance::to_json() const {
  json j = {{"id", id}, {"image", image_ref}, {"question", question}};
  if (kind == DatasetKind::multiple_choice) {
    j["choices"] = choices;
    auto it = std::find(choices.begin(), choices.end(), gold.correct_choice.value_or(""));
    j["correct_choice_idx"] = static_cast<long long>(std::distance(choices.begin(), it));
  } else {
    j["answers"] = gold.annotations.value_or(std::vector<std::string>{});
  }
  return j;
}

json PredictionRecord::to_json() const {
  return {{"instance_id", instance_id},
          {"answer", answer},
          {"explanation", explanation},
          {"generator", generator}};
}

PredictionRecord PredictionRecord::from_json(const json& j) {
  PredictionRecord p;
  p.instance_id = required_string(j, "instance_id");
  p.answer = required_string(j, "answer");
  p.explanation = optional_string(j, "explanation");
  p.generator = optional_string(j, "generator");
  return p;
}

DatasetLoad load_dataset(const std::filesystem::path& path, DatasetKind kind,
                         std::optional<std::size_t> limit) {
  DatasetLoad out;
  if (limit && *limit == 0) return out;
  auto file = read_jsonl(path);
  out.errors = std::move(file.errors);
  for (const auto& rec : file.records) {
    try {
      out.instances.push_back(parse_instance(rec.value, kind));
    } catch (const InputError& e) {
      out.errors.push_back({rec.line, e.what()});
      continue;
    }
    if (limit && out.instances.size() >= *limit) break;
  }
  std::sort(out.errors.begin(), out.errors.end(),
            [](const LineError& a, const LineError& b) { return a.line < b.line; });
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<VisualInstance>& instances,
                   const std::vector<LineError>& errors) {
  std::vector<json> records;
  records.reserve(instances.size());
  for (const auto& i : instances) records.push_back(i.to_json());
  write_jsonl(path, std::nullopt, records);
  if (!errors.empty()) {
    std::vector<json> err;
    for (const auto& e : errors) err.push_back({{"line", e.line}, {"error", e.message}});
    write_jsonl(path.string() + ".errors.jsonl", std::nullopt, err);
  }
}

std::string majority_annotation(const VisualInstance& instance) {
  if (!instance.gold.annotations || instance.gold.annotations->empty()) return {};
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& a : *instance.gold.annotations) {
    auto n = text::normalize_answer(a);
    if (counts[n]++ == 0) order.push_back(n);
  }
  std::size_t best = 0;
  for (const auto& [_, c] : counts) best = std::max(best, c);
  auto un = counts.find(std::string(kUnanswerable));
  if (un != counts.end() && un->second == best) return std::string(kUnanswerable);
  for (const auto& a : order) {
    if (counts[a] == best) return a;
  }
  return {};
}

std::vector<VisualInstance> filter_open_ended(const std::vector<VisualInstance>& instances,
                                              const std::set<std::string>& exclusion_ids) {
  std::vector<VisualInstance> out;
  for (const auto& inst : instances) {
    if (exclusion_ids.contains(inst.id)) continue;
    if (majority_annotation(inst) == kUnanswerable) continue;
    out.push_back(inst);
  }
  return out;
}

bool grade_prediction(const VisualInstance& instance, std::string_view answer) {
  auto a = text::normalize_answer(answer);
  if (a.empty()) return false;
  if (instance.kind == DatasetKind::multiple_choice) {
    return instance.gold.correct_choice && a == text::normalize_answer(*instance.gold.correct_choice);
  }
  if (!instance.gold.annotations) return false;
  const auto& anns = *instance.gold.annotations;
  auto matches = static_cast<std::size_t>(std::count_if(
      anns.begin(), anns.end(), [&](const std::string& g) { return text::normalize_answer(g) == a; }));
  return matches >= std::min(kOpenEndedMatchThreshold, anns.size());
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  auto file = read_jsonl(path);
  if (!file.errors.empty()) {
    throw InputError(path.string() + ":" + std::to_string(file.errors.front().line) + ": " +
                     file.errors.front().message);
  }
  std::vector<PredictionRecord> out;
  for (const auto& rec : file.records) {
    try {
      out.push_back(PredictionRecord::from_json(rec.value));
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(rec.line) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vlmq
