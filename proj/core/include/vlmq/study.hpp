#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vlmq/contrastiveness.hpp"
#include "vlmq/error.hpp"
#include "vlmq/gateway.hpp"
#include "vlmq/jsonl.hpp"
#include "vlmq/metrics.hpp"
#include "vlmq/visual_fidelity.hpp"

namespace vlmq::study {

enum class Stage { answer_only, with_explanation, with_quality };
enum class ScoreSource { vf, contr, prod, avg, random, none };
enum class Presentation { numeric, descriptive };

std::string to_string(Stage s);
Stage parse_stage(std::string_view s);
std::string to_string(ScoreSource s);
ScoreSource parse_score_source(std::string_view s);
std::string to_string(Presentation p);
Presentation parse_presentation(std::string_view s);

inline constexpr std::string_view kLabelCorrect = "AI Confidence that the explanation is correct";
inline constexpr std::string_view kLabelVisualFidelity =
    "AI Confidence that the explanation accurately describes the image details";
inline constexpr std::string_view kLabelContrastiveness =
    "AI Confidence that the explanation rules out the other choices";

struct StudyCondition {
  std::string id;
  std::string title;
  std::vector<ScoreSource> score_sources;
  Presentation presentation = Presentation::numeric;
  // Numeric label per source. Labels may deliberately name a different
  // quality than the one shown (relabeling conditions).
  std::map<ScoreSource, std::string> labels;
  std::vector<Stage> stages{Stage::with_quality};

  bool three_stage() const { return stages.size() > 1; }
  // Throws InputError on: "none" mixed with other sources, descriptive with
  // anything but vf/contr, empty or misordered stages.
  void validate() const;

  json to_json() const;
  static StudyCondition from_json(const json& j);
};

// The 14 one-stage settings and the three-stage variants.
std::vector<StudyCondition> default_conditions();

// Participant metadata check, e.g. {"field": "approval_rate", "op": "range", "value": [98, 100]}.
struct EligibilityRule {
  std::string field;
  std::string op;  // eq | in | min | max | range
  json value;
  bool admits(const json& metadata) const;
};

struct StudyConfig {
  std::vector<StudyCondition> conditions;
  std::string control_condition_id = "control";
  std::size_t items_per_session = 10;
  std::size_t annotations_per_question = 3;
  std::uint64_t seed = 0;
  std::size_t bootstrap_iterations = metrics::kDefaultBootstrapIterations;
  std::vector<EligibilityRule> eligibility;

  const StudyCondition& condition(std::string_view id) const;
  json to_json() const;
  static StudyConfig from_json(const json& j);
  static StudyConfig load(const std::filesystem::path& path);
};

// ---- items -----------------------------------------------------------------

struct VfEvidence {
  std::string question;
  vf::Verdict verdict = vf::Verdict::unparseable;
  std::string sentence;  // declarative form shown to participants
};

struct StudyItem {
  std::string instance_id;
  std::string question;
  std::vector<std::string> choices;
  std::string prediction;
  std::string explanation;
  bool model_was_correct = false;
  std::map<std::string, double> scores;  // vf, contr, prod, avg
  std::vector<VfEvidence> vf_evidence;
  std::vector<contr::AnswerEvidence> contr_evidence;
  std::size_t predicted_index = 0;

  json to_json() const;
  static StudyItem from_json(const json& j);
};

std::vector<StudyItem> load_items(const std::filesystem::path& path);
void write_items(const std::filesystem::path& path, const std::vector<StudyItem>& items,
                 const std::optional<ArtifactMeta>& meta = std::nullopt);

ChatRequest describe_request(std::string_view verification_question, const std::string& model_id);

// Fills missing VfEvidence::sentence fields through the gateway.
void prepare_descriptions(Gateway& gateway, std::vector<StudyItem>& items, const std::string& model_id);

// ---- presentation ------------------------------------------------------------

struct DisplayBlock {
  std::string kind;  // numeric | vf_verified | vf_unverified | contr_alternatives
  std::string label;
  std::optional<double> value;
  std::string value_text;
  std::vector<std::string> lines;

  json to_json() const;
};

inline constexpr std::size_t kMaxDescriptiveSentences = 2;
inline constexpr double kAlternativeEntailmentThreshold = 0.5;

std::string format_percent(double v);

// `random_value` is the draw persisted for this item when the condition
// shows a random score.
std::vector<DisplayBlock> render_quality_message(const StudyCondition& condition, const StudyItem& item,
                                                 std::optional<double> random_value = std::nullopt);

// ---- timing and bonus --------------------------------------------------------

inline constexpr double kReadingWordsPerMinute = 238.0;
inline constexpr std::int64_t kOneStageExtraMs = 10000;
inline constexpr std::int64_t kFixedStageMs = 5000;
inline constexpr std::int64_t kBonusStepCents = 10;

std::int64_t reading_time_ms(std::string_view explanation);
std::int64_t min_display_time(std::string_view explanation, Stage stage, bool three_stage);

// Bank change for one judgment; never lets the bank drop below zero.
std::int64_t bonus_delta(std::int64_t bank_cents, metrics::Choice choice, bool model_was_correct,
                         bool final_stage);

// ---- errors ------------------------------------------------------------------

class StudyError : public Error {
 public:
  enum class Code { not_found, conflict, too_early, invalid, capacity, ineligible };
  StudyError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

// ---- event log ------------------------------------------------------------------

struct SessionCreated {
  std::string session_id;
  std::string participant_id;
  std::string condition_id;
  std::vector<std::string> items;
  std::vector<std::optional<double>> random_values;
  json metadata = json::object();

  json to_json() const;
  static SessionCreated from_json(const json& j);
};

struct AnnotationEvent {
  std::string session_id;
  std::string condition_id;
  std::string instance_id;
  Stage stage = Stage::with_quality;
  bool final_stage = true;
  metrics::Choice choice = metrics::Choice::unsure;
  bool model_was_correct = false;
  std::int64_t elapsed_ms = 0;
  std::int64_t min_display_ms = 0;
  std::int64_t submitted_at = 0;  // ms since epoch
  std::int64_t bonus_delta_cents = 0;
  std::optional<double> shown_random;

  json to_json() const;
  static AnnotationEvent from_json(const json& j);
};

// Append-only JSONL stream; one record per event, flushed on every append.
class EventLog {
 public:
  EventLog() = default;  // in-memory only
  explicit EventLog(std::filesystem::path path);

  void append(const json& event);
  const std::vector<json>& events() const { return events_; }
  static std::vector<json> read(const std::filesystem::path& path);

 private:
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
  std::vector<json> events_;
  std::mutex mu_;
};

// ---- engine ------------------------------------------------------------------------

class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t monotonic_ms() = 0;
  virtual std::int64_t wall_ms() = 0;
};

std::shared_ptr<Clock> system_clock();

struct Session {
  std::string session_id;
  std::string participant_id;
  std::string condition_id;
  std::vector<std::string> items;
  std::vector<std::optional<double>> random_values;
  std::size_t cursor = 0;
  std::size_t stage_cursor = 0;
  std::int64_t bonus_cents = 0;

  bool done() const { return cursor >= items.size(); }
};

struct CurrentView {
  std::string session_id;
  bool done = false;
  std::size_t item_index = 0;
  std::size_t n_items = 0;
  std::string instance_id;
  std::string question;
  std::vector<std::string> choices;
  std::string prediction;
  std::optional<std::string> explanation;
  std::vector<DisplayBlock> quality_blocks;
  Stage stage = Stage::with_quality;
  std::size_t stage_index = 0;
  std::size_t n_stages = 1;
  std::int64_t min_display_ms = 0;
  std::int64_t bonus_total_cents = 0;

  json to_json() const;
};

struct SubmitResult {
  std::int64_t bonus_delta_cents = 0;
  std::int64_t bonus_total_cents = 0;
  bool done = false;

  json to_json() const;
};

struct StageReport {
  Stage stage;
  metrics::RelianceReport reliance;
};

struct ConditionReport {
  std::string condition_id;
  std::size_t n_sessions = 0;
  std::size_t n_events = 0;
  metrics::RelianceReport overall;  // final-stage judgments
  std::vector<StageReport> per_stage;
  std::map<std::string, metrics::BootstrapResult> vs_control;  // metric -> test

  json to_json() const;
};

json to_json(const metrics::RelianceReport& r);

// Pure reducer from events to reports, shared by the live engine and offline
// log replays.
ConditionReport build_condition_report(const StudyConfig& config, const std::string& condition_id,
                                       const std::vector<AnnotationEvent>& events,
                                       std::size_t n_sessions);

class StudyEngine {
 public:
  StudyEngine(StudyConfig config, std::vector<StudyItem> items,
              std::optional<std::filesystem::path> event_log = std::nullopt,
              std::shared_ptr<Clock> clock = system_clock());

  Session create_session(const std::string& participant_id, const std::string& condition_id,
                         const json& metadata = json::object());
  CurrentView current(const std::string& session_id);
  SubmitResult submit_choice(const std::string& session_id, const std::string& instance_id, Stage stage,
                             metrics::Choice choice, std::int64_t elapsed_ms);
  ConditionReport condition_report(const std::string& condition_id) const;

  Session session(const std::string& session_id) const;
  std::size_t capacity(const std::string& condition_id) const;
  std::map<std::string, std::size_t> assignment_counts(const std::string& condition_id) const;
  std::vector<AnnotationEvent> annotations() const;
  const StudyConfig& config() const { return config_; }
  const std::vector<json>& event_log() const { return log_->events(); }

 private:
  void apply_session_created(const SessionCreated& e);
  void apply_annotation(const AnnotationEvent& e);
  const StudyItem& item(const std::string& id) const;
  std::int64_t stage_min_display(const StudyCondition& c, const StudyItem& item, Stage stage) const;

  StudyConfig config_;
  std::vector<StudyItem> items_;
  std::map<std::string, std::size_t> item_index_;
  std::shared_ptr<Clock> clock_;
  std::unique_ptr<EventLog> log_;

  mutable std::mutex mu_;
  std::map<std::string, Session> sessions_;
  std::vector<std::string> session_order_;
  std::set<std::string> participants_;
  std::map<std::string, std::map<std::string, std::size_t>> assigned_;  // condition -> item -> count
  std::map<std::string, std::size_t> sessions_per_condition_;
  std::vector<AnnotationEvent> annotations_;
  std::set<std::tuple<std::string, std::string, Stage>> submitted_;
  std::map<std::pair<std::string, std::size_t>, std::int64_t> served_at_;  // (session, step) -> ms
};

}  // namespace vlmq::study
