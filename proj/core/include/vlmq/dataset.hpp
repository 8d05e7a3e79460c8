#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vlmq/jsonl.hpp"

namespace vlmq {

enum class DatasetKind { multiple_choice, open_ended };

std::string to_string(DatasetKind kind);
// Accepts "multiple_choice"/"mc"/"aokvqa" and "open_ended"/"open"/"vizwiz".
DatasetKind parse_dataset_kind(std::string_view s);

// Exactly one of the two members is populated.
struct GoldAnswer {
  std::optional<std::string> correct_choice;
  std::optional<std::vector<std::string>> annotations;
};

struct VisualInstance {
  std::string id;
  std::string image_ref;
  std::string question;
  std::vector<std::string> choices;  // multiple_choice only
  GoldAnswer gold;
  DatasetKind kind = DatasetKind::multiple_choice;

  json to_json() const;
};

struct PredictionRecord {
  std::string instance_id;
  std::string answer;
  std::string explanation;
  std::string generator;

  json to_json() const;
  static PredictionRecord from_json(const json& j);
};

struct DatasetLoad {
  std::vector<VisualInstance> instances;
  std::vector<LineError> errors;
};

// Parses one record per line. Invalid records become line-numbered errors and
// are skipped; `limit` keeps only the first N valid instances.
DatasetLoad load_dataset(const std::filesystem::path& path, DatasetKind kind,
                         std::optional<std::size_t> limit = std::nullopt);

// Same record format as the input, plus `<path>.errors.jsonl` when errors exist.
void write_dataset(const std::filesystem::path& path, const std::vector<VisualInstance>& instances,
                   const std::vector<LineError>& errors = {});

// Most frequent normalized annotation. A tie that includes "unanswerable"
// resolves to "unanswerable"; other ties go to the earliest-seen answer.
std::string majority_annotation(const VisualInstance& instance);

// Drops unanswerable-majority items and anything listed in `exclusion_ids`.
std::vector<VisualInstance> filter_open_ended(const std::vector<VisualInstance>& instances,
                                              const std::set<std::string>& exclusion_ids);

// Number of matching annotations needed for an open-ended answer to count.
inline constexpr std::size_t kOpenEndedMatchThreshold = 3;

bool grade_prediction(const VisualInstance& instance, std::string_view answer);

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

}  // namespace vlmq
