#pragma once

// File-to-file pipeline stages shared by the CLI and the end-to-end tests.
// Every artifact starts with an ArtifactMeta header line.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vlmq/dataset.hpp"
#include "vlmq/gateway.hpp"
#include "vlmq/jsonl.hpp"
#include "vlmq/metrics.hpp"
#include "vlmq/study.hpp"

namespace vlmq::artifacts {

// Judge roles looked up in GatewayConfig::judges.
namespace role {
inline constexpr std::string_view generator = "generator";
inline constexpr std::string_view question_generator = "question_generator";
inline constexpr std::string_view verifier = "verifier";
inline constexpr std::string_view paraphraser = "paraphraser";
inline constexpr std::string_view nli = "nli";
inline constexpr std::string_view informativeness = "informativeness";
inline constexpr std::string_view plausibility = "plausibility";
inline constexpr std::string_view describer = "describer";
}  // namespace role

enum class Quality { vf, contr, sim, info, plau };

std::string to_string(Quality q);
Quality parse_quality(std::string_view s);
std::filesystem::path score_file_name(Quality q);  // scores_<q>.jsonl

// ---- generate -------------------------------------------------------------

struct GenerateOptions {
  std::filesystem::path dataset;
  DatasetKind kind = DatasetKind::multiple_choice;
  std::optional<std::size_t> limit;
  std::filesystem::path out;  // predictions file
  // Open-ended only: ids to drop (one per line), on top of the unanswerable filter.
  std::optional<std::filesystem::path> exclusion_ids;
};

struct GenerateSummary {
  std::size_t n_instances = 0;
  std::size_t n_dataset_errors = 0;
  std::size_t n_filtered = 0;
};

std::set<std::string> load_id_list(const std::filesystem::path& path);

GenerateSummary run_generate(Gateway& gateway, const GenerateOptions& options);

// ---- score ------------------------------------------------------------------

struct ScoreRecord {
  std::string instance_id;
  Quality quality = Quality::vf;
  std::optional<double> score;  // empty when unscorable
  bool unscorable = false;
  bool correct = false;
  json evidence = json::object();  // quality-specific fields, flattened on write

  json to_json() const;
  static ScoreRecord from_json(const json& j);
};

// Scores every prediction that has a matching instance. Contrastiveness skips
// open-ended instances, which have no candidate answer set.
std::vector<ScoreRecord> score_predictions(Gateway& gateway, const std::vector<VisualInstance>& instances,
                                           const std::vector<PredictionRecord>& predictions, Quality quality);

struct ScoreOptions {
  std::filesystem::path dataset;
  DatasetKind kind = DatasetKind::multiple_choice;
  std::optional<std::size_t> limit;
  std::filesystem::path predictions;
  std::vector<Quality> qualities;
  std::filesystem::path out_dir;
};

// Writes one score file per quality into out_dir; returns the paths written.
std::vector<std::filesystem::path> run_score(Gateway& gateway, const ScoreOptions& options);

struct ScoreFile {
  std::optional<ArtifactMeta> meta;
  Quality quality = Quality::vf;
  std::vector<ScoreRecord> records;
};

ScoreFile load_scores(const std::filesystem::path& path);

// ---- evaluate -----------------------------------------------------------------

struct QualityEvaluation {
  std::string quality;  // vf, contr, sim, info, plau, avg, prod, min
  std::size_t n = 0;
  std::size_t n_unscorable = 0;
  metrics::DiscReport disc;
  metrics::CalibrationReport calibration;

  json to_json() const;
};

// Unscorable VF counts as 0.0 for Disc and is left out of ECE.
QualityEvaluation evaluate_quality(const std::string& name, const std::vector<ScoreRecord>& records,
                                   std::size_t n_bins);

// Adds avg/prod/min rows when both vf and contr are present (joined on instance id).
std::vector<QualityEvaluation> evaluate_all(const std::vector<ScoreFile>& files, std::size_t n_bins);

std::string markdown_table(const std::vector<QualityEvaluation>& rows);
// bin_center,accuracy,count rows for one quality.
std::string curve_csv(const QualityEvaluation& row);

struct EvaluateOptions {
  std::vector<std::filesystem::path> score_files;
  std::size_t n_bins = metrics::kDefaultBins;
  std::filesystem::path out_dir;
};

std::vector<QualityEvaluation> run_evaluate(const EvaluateOptions& options);

// ---- subset -------------------------------------------------------------------

struct SubsetOptions {
  std::filesystem::path dataset;
  DatasetKind kind = DatasetKind::multiple_choice;
  std::filesystem::path predictions;
  std::vector<std::filesystem::path> score_files;
  metrics::SubsetOptions selection;
  std::filesystem::path out_dir;  // subset.json + study_items.jsonl
};

std::vector<study::StudyItem> build_study_items(const std::vector<VisualInstance>& instances,
                                                const std::vector<PredictionRecord>& predictions,
                                                const std::vector<ScoreFile>& scores,
                                                const std::vector<std::string>& ids);

metrics::SubsetSelection run_subset(const SubsetOptions& options);

// ---- report ---------------------------------------------------------------------

struct ReportOptions {
  std::filesystem::path event_log;
  std::optional<std::filesystem::path> study_config;
  std::optional<std::size_t> bootstrap_iterations;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out_dir;  // reliance.json + reliance.md
};

std::vector<study::ConditionReport> run_report(const ReportOptions& options);
std::string markdown_reliance_table(const std::vector<study::ConditionReport>& reports);

}  // namespace vlmq::artifacts
