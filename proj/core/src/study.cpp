#include "vlmq/study.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <spdlog/spdlog.h>

#include "vlmq/digest.hpp"
#include "vlmq/parallel.hpp"
#include "vlmq/random.hpp"
#include "vlmq/text.hpp"

namespace vlmq::study {

namespace {

using metrics::Choice;

std::uint64_t seed_from(std::string_view material) {
  auto hex = sha256_hex(material);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

json opt_double(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_opt_double(const json& j, const char* key) {
  if (j.contains(key) && j[key].is_number()) return j[key].get<double>();
  return std::nullopt;
}

std::string default_label(ScoreSource s) {
  switch (s) {
    case ScoreSource::vf: return std::string(kLabelVisualFidelity);
    case ScoreSource::contr: return std::string(kLabelContrastiveness);
    default: return std::string(kLabelCorrect);
  }
}

StudyCondition make(std::string id, std::string title, std::vector<ScoreSource> sources,
                    Presentation presentation, std::map<ScoreSource, std::string> labels = {}) {
  StudyCondition c;
  c.id = std::move(id);
  c.title = std::move(title);
  c.score_sources = std::move(sources);
  c.presentation = presentation;
  c.labels = std::move(labels);
  return c;
}

}  // namespace

// ---- enums -------------------------------------------------------------------

std::string to_string(Stage s) {
  switch (s) {
    case Stage::answer_only: return "answer_only";
    case Stage::with_explanation: return "with_explanation";
    case Stage::with_quality: return "with_quality";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (auto v : {Stage::answer_only, Stage::with_explanation, Stage::with_quality}) {
    if (to_string(v) == s) return v;
  }
  throw InputError("unknown stage '" + std::string(s) + "'");
}

std::string to_string(ScoreSource s) {
  switch (s) {
    case ScoreSource::vf: return "vf";
    case ScoreSource::contr: return "contr";
    case ScoreSource::prod: return "prod";
    case ScoreSource::avg: return "avg";
    case ScoreSource::random: return "random";
    case ScoreSource::none: return "none";
  }
  return "?";
}

ScoreSource parse_score_source(std::string_view s) {
  for (auto v : {ScoreSource::vf, ScoreSource::contr, ScoreSource::prod, ScoreSource::avg,
                 ScoreSource::random, ScoreSource::none}) {
    if (to_string(v) == s) return v;
  }
  throw InputError("unknown score source '" + std::string(s) + "'");
}

std::string to_string(Presentation p) { return p == Presentation::numeric ? "numeric" : "descriptive"; }

Presentation parse_presentation(std::string_view s) {
  if (s == "numeric") return Presentation::numeric;
  if (s == "descriptive") return Presentation::descriptive;
  throw InputError("unknown presentation '" + std::string(s) + "'");
}

// ---- conditions ----------------------------------------------------------------

void StudyCondition::validate() const {
  if (id.empty()) throw InputError("condition id is empty");
  if (score_sources.empty()) throw InputError("condition '" + id + "' has no score sources");
  bool has_none = std::find(score_sources.begin(), score_sources.end(), ScoreSource::none) !=
                  score_sources.end();
  if (has_none && score_sources.size() > 1) {
    throw InputError("condition '" + id + "': 'none' excludes other sources");
  }
  if (presentation == Presentation::descriptive) {
    for (auto s : score_sources) {
      if (s != ScoreSource::vf && s != ScoreSource::contr) {
        throw InputError("condition '" + id + "': descriptive presentation supports only vf/contr");
      }
    }
  }
  static const std::vector<Stage> kOne{Stage::with_quality};
  static const std::vector<Stage> kThree{Stage::answer_only, Stage::with_explanation,
                                         Stage::with_quality};
  if (stages != kOne && stages != kThree) {
    throw InputError("condition '" + id +
                     "': stages must be [with_quality] or [answer_only, with_explanation, with_quality]");
  }
}

json StudyCondition::to_json() const {
  json j = {{"id", id}, {"title", title}, {"presentation", to_string(presentation)}};
  j["score_sources"] = json::array();
  for (auto s : score_sources) j["score_sources"].push_back(to_string(s));
  j["labels"] = json::object();
  for (const auto& [s, l] : labels) j["labels"][to_string(s)] = l;
  j["stages"] = json::array();
  for (auto s : stages) j["stages"].push_back(to_string(s));
  return j;
}

StudyCondition StudyCondition::from_json(const json& j) {
  StudyCondition c;
  c.id = j.at("id").get<std::string>();
  c.title = j.value("title", c.id);
  for (const auto& s : j.at("score_sources")) c.score_sources.push_back(parse_score_source(s.get<std::string>()));
  c.presentation = parse_presentation(j.value("presentation", "numeric"));
  if (j.contains("labels")) {
    for (const auto& [k, v] : j["labels"].items()) c.labels[parse_score_source(k)] = v.get<std::string>();
  }
  if (j.contains("label_template") && c.score_sources.size() == 1) {
    c.labels[c.score_sources.front()] = j["label_template"].get<std::string>();
  }
  if (j.contains("stages")) {
    c.stages.clear();
    for (const auto& s : j["stages"]) c.stages.push_back(parse_stage(s.get<std::string>()));
  }
  c.validate();
  return c;
}

std::vector<StudyCondition> default_conditions() {
  using P = Presentation;
  using S = ScoreSource;
  const std::string conf(kLabelCorrect), vfl(kLabelVisualFidelity), crl(kLabelContrastiveness);
  std::vector<StudyCondition> one = {
      make("control", "Show Explanation Only", {S::none}, P::numeric),
      make("random", "Random Score", {S::random}, P::numeric, {{S::random, conf}}),
      make("vf_x_contr", "VFxContr", {S::prod}, P::numeric, {{S::prod, conf}}),
      make("avg_vf_contr", "AVG(VF, Contr)", {S::avg}, P::numeric, {{S::avg, conf}}),
      make("vf_num", "VF num", {S::vf}, P::numeric, {{S::vf, vfl}}),
      make("vf_desc", "VF desc", {S::vf}, P::descriptive),
      make("contr_num", "Contr. num", {S::contr}, P::numeric, {{S::contr, crl}}),
      make("contr_desc", "Contr. desc", {S::contr}, P::descriptive),
      make("both_num", "Both Numeric", {S::vf, S::contr}, P::numeric, {{S::vf, vfl}, {S::contr, crl}}),
      make("both_desc", "Both Descriptive", {S::vf, S::contr}, P::descriptive),
      make("vf_as_conf", "VF shown as Conf", {S::vf}, P::numeric, {{S::vf, conf}}),
      make("contr_as_conf", "Contr shown as Conf", {S::contr}, P::numeric, {{S::contr, conf}}),
      make("prod_as_vf", "Prod shown as VF", {S::prod}, P::numeric, {{S::prod, vfl}}),
      make("prod_as_contr", "Prod shown as Contr", {S::prod}, P::numeric, {{S::prod, crl}}),
  };
  std::vector<StudyCondition> three = {
      make("vf_num_3s", "VF (numeric), three stages", {S::vf}, P::numeric, {{S::vf, vfl}}),
      make("contr_num_3s", "Contr (numeric), three stages", {S::contr}, P::numeric, {{S::contr, crl}}),
      make("both_num_3s", "Both VF and Contr (numeric), three stages", {S::vf, S::contr}, P::numeric,
           {{S::vf, vfl}, {S::contr, crl}}),
      make("avg_3s", "Avg(VF, Contr), three stages", {S::avg}, P::numeric, {{S::avg, conf}}),
      make("vf_desc_3s", "VF (descriptive), three stages", {S::vf}, P::descriptive),
      make("contr_desc_3s", "Contr (descriptive), three stages", {S::contr}, P::descriptive),
      make("both_desc_3s", "Both VF and Contr (descriptive), three stages", {S::vf, S::contr},
           P::descriptive),
  };
  for (auto& c : three) c.stages = {Stage::answer_only, Stage::with_explanation, Stage::with_quality};
  one.insert(one.end(), three.begin(), three.end());
  return one;
}

bool EligibilityRule::admits(const json& metadata) const {
  if (!metadata.contains(field)) return false;
  const auto& v = metadata[field];
  if (op == "eq") return v == value;
  if (op == "in") {
    return value.is_array() && std::find(value.begin(), value.end(), v) != value.end();
  }
  if (!v.is_number()) return false;
  double x = v.get<double>();
  if (op == "min") return x >= value.get<double>();
  if (op == "max") return x <= value.get<double>();
  if (op == "range") return x >= value.at(0).get<double>() && x <= value.at(1).get<double>();
  throw InputError("unknown eligibility op '" + op + "'");
}

const StudyCondition& StudyConfig::condition(std::string_view id) const {
  for (const auto& c : conditions) {
    if (c.id == id) return c;
  }
  throw StudyError(StudyError::Code::not_found, "unknown condition '" + std::string(id) + "'");
}

json StudyConfig::to_json() const {
  json j = {{"control_condition_id", control_condition_id},
            {"items_per_session", items_per_session},
            {"annotations_per_question", annotations_per_question},
            {"seed", seed},
            {"bootstrap_iterations", bootstrap_iterations}};
  j["conditions"] = json::array();
  for (const auto& c : conditions) j["conditions"].push_back(c.to_json());
  j["eligibility"] = json::array();
  for (const auto& r : eligibility) {
    j["eligibility"].push_back({{"field", r.field}, {"op", r.op}, {"value", r.value}});
  }
  return j;
}

StudyConfig StudyConfig::from_json(const json& j) {
  StudyConfig c;
  c.control_condition_id = j.value("control_condition_id", c.control_condition_id);
  c.items_per_session = j.value("items_per_session", c.items_per_session);
  c.annotations_per_question = j.value("annotations_per_question", c.annotations_per_question);
  c.seed = j.value("seed", c.seed);
  c.bootstrap_iterations = j.value("bootstrap_iterations", c.bootstrap_iterations);
  if (j.contains("conditions")) {
    for (const auto& cj : j["conditions"]) c.conditions.push_back(StudyCondition::from_json(cj));
  } else {
    c.conditions = default_conditions();
  }
  if (j.contains("eligibility")) {
    for (const auto& r : j["eligibility"]) {
      c.eligibility.push_back({r.at("field").get<std::string>(), r.at("op").get<std::string>(), r.at("value")});
    }
  }
  if (c.items_per_session == 0 || c.items_per_session % 2 != 0) {
    throw InputError("items_per_session must be a positive even number");
  }
  if (c.annotations_per_question == 0) throw InputError("annotations_per_question must be positive");
  std::set<std::string> ids;
  for (const auto& cond : c.conditions) {
    if (!ids.insert(cond.id).second) throw InputError("duplicate condition id '" + cond.id + "'");
  }
  return c;
}

StudyConfig StudyConfig::load(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("study config " + path.string() + " is not valid JSON");
  return from_json(j);
}

// ---- items -----------------------------------------------------------------------

json StudyItem::to_json() const {
  json j = {{"instance_id", instance_id},
            {"question", question},
            {"choices", choices},
            {"prediction", prediction},
            {"explanation", explanation},
            {"model_was_correct", model_was_correct},
            {"scores", scores},
            {"predicted_index", predicted_index}};
  j["vf_evidence"] = json::array();
  for (const auto& e : vf_evidence) {
    j["vf_evidence"].push_back(
        {{"question", e.question}, {"verdict", vf::to_string(e.verdict)}, {"sentence", e.sentence}});
  }
  j["contr_evidence"] = json::array();
  for (const auto& e : contr_evidence) {
    j["contr_evidence"].push_back(
        {{"answer", e.answer}, {"hypothesis", e.hypothesis}, {"entailment", e.entailment}});
  }
  return j;
}

StudyItem StudyItem::from_json(const json& j) {
  StudyItem it;
  it.instance_id = j.at("instance_id").get<std::string>();
  it.question = j.at("question").get<std::string>();
  it.choices = j.value("choices", std::vector<std::string>{});
  it.prediction = j.at("prediction").get<std::string>();
  it.explanation = j.value("explanation", "");
  it.model_was_correct = j.at("model_was_correct").get<bool>();
  if (j.contains("scores")) {
    for (const auto& [k, v] : j["scores"].items()) {
      if (v.is_number()) it.scores[k] = v.get<double>();
    }
  }
  it.predicted_index = j.value("predicted_index", std::size_t{0});
  for (const auto& e : j.value("vf_evidence", json::array())) {
    it.vf_evidence.push_back({e.at("question").get<std::string>(),
                              vf::parse_verdict_label(e.value("verdict", "unparseable")),
                              e.value("sentence", "")});
  }
  for (const auto& e : j.value("contr_evidence", json::array())) {
    it.contr_evidence.push_back({e.at("answer").get<std::string>(), e.value("hypothesis", ""),
                                 e.at("entailment").get<double>()});
  }
  return it;
}

std::vector<StudyItem> load_items(const std::filesystem::path& path) {
  auto file = read_jsonl(path);
  if (!file.errors.empty()) {
    throw InputError(path.string() + ":" + std::to_string(file.errors.front().line) + ": " +
                     file.errors.front().message);
  }
  std::vector<StudyItem> items;
  for (const auto& rec : file.records) items.push_back(StudyItem::from_json(rec.value));
  return items;
}

void write_items(const std::filesystem::path& path, const std::vector<StudyItem>& items,
                 const std::optional<ArtifactMeta>& meta) {
  std::vector<json> records;
  for (const auto& it : items) records.push_back(it.to_json());
  write_jsonl(path, meta, records);
}

ChatRequest describe_request(std::string_view verification_question, const std::string& model_id) {
  ChatRequest r;
  r.model_id = model_id;
  r.user_prompt =
      "Rewrite the yes/no question as one short declarative sentence that states the detail it "
      "asks about. Do not answer the question and do not add information.\n"
      "For example, given the question \"Is the person wearing a helmet while riding a bicycle?\", "
      "you should output \"The person is wearing a helmet while riding a bicycle.\"\n"
      "Question: " + std::string(verification_question);
  return r;
}

void prepare_descriptions(Gateway& gateway, std::vector<StudyItem>& items, const std::string& model_id) {
  std::vector<VfEvidence*> pending;
  for (auto& it : items) {
    for (auto& e : it.vf_evidence) {
      if (e.sentence.empty()) pending.push_back(&e);
    }
  }
  auto sentences = parallel_map(pending.size(), gateway.config().max_in_flight, [&](std::size_t i) {
    return contr::clean_hypothesis(gateway.complete(describe_request(pending[i]->question, model_id)));
  });
  for (std::size_t i = 0; i < pending.size(); ++i) pending[i]->sentence = sentences[i];
}

// ---- presentation ----------------------------------------------------------------------

json DisplayBlock::to_json() const {
  json j = {{"kind", kind}, {"label", label}, {"lines", lines}};
  j["value"] = opt_double(value);
  j["value_text"] = value_text;
  return j;
}

std::string format_percent(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.0f%%", std::round(v * 100.0));
  return buf;
}

std::vector<DisplayBlock> render_quality_message(const StudyCondition& condition, const StudyItem& item,
                                                 std::optional<double> random_value) {
  std::vector<DisplayBlock> blocks;
  if (condition.score_sources.front() == ScoreSource::none) return blocks;

  if (condition.presentation == Presentation::numeric) {
    for (auto source : condition.score_sources) {
      double value = 0;
      if (source == ScoreSource::random) {
        if (!random_value) throw InputError("random condition without a drawn value");
        value = *random_value;
      } else {
        auto it = item.scores.find(to_string(source));
        if (it == item.scores.end()) {
          throw InputError("item " + item.instance_id + " has no '" + to_string(source) + "' score");
        }
        value = it->second;
      }
      auto label = condition.labels.contains(source) ? condition.labels.at(source) : default_label(source);
      blocks.push_back({"numeric", label, value, format_percent(value), {}});
    }
    return blocks;
  }

  for (auto source : condition.score_sources) {
    if (source == ScoreSource::vf) {
      if (item.vf_evidence.empty() && !item.scores.contains("vf")) {
        throw InputError("item " + item.instance_id + " has no visual fidelity evidence");
      }
      DisplayBlock verified{"vf_verified", "Details in the explanation that the AI verified in the image",
                            std::nullopt, "", {}};
      DisplayBlock unverified{"vf_unverified",
                              "Details in the explanation that the AI could not verify in the image",
                              std::nullopt, "", {}};
      for (const auto& e : item.vf_evidence) {
        auto& target = e.verdict == vf::Verdict::yes ? verified : unverified;
        if (target.lines.size() >= kMaxDescriptiveSentences) continue;
        target.lines.push_back(e.sentence.empty() ? e.question : e.sentence);
      }
      blocks.push_back(std::move(verified));
      blocks.push_back(std::move(unverified));
    } else if (source == ScoreSource::contr) {
      if (item.contr_evidence.empty()) {
        throw InputError("item " + item.instance_id + " has no contrastiveness evidence");
      }
      DisplayBlock alts{"contr_alternatives",
                        "Other answer options that the explanation also supports", std::nullopt, "", {}};
      for (std::size_t j = 0; j < item.contr_evidence.size(); ++j) {
        if (j == item.predicted_index) continue;
        if (item.contr_evidence[j].entailment >= kAlternativeEntailmentThreshold) {
          alts.lines.push_back(item.contr_evidence[j].answer);
        }
      }
      blocks.push_back(std::move(alts));
    }
  }
  return blocks;
}

// ---- timing and bonus --------------------------------------------------------------------

std::int64_t reading_time_ms(std::string_view explanation) {
  auto words = static_cast<double>(text::word_count(explanation));
  return static_cast<std::int64_t>(std::ceil(words * 60000.0 / kReadingWordsPerMinute));
}

std::int64_t min_display_time(std::string_view explanation, Stage stage, bool three_stage) {
  if (stage == Stage::answer_only) return kFixedStageMs;
  if (!three_stage) return reading_time_ms(explanation) + kOneStageExtraMs;
  if (stage == Stage::with_explanation) return reading_time_ms(explanation);
  return kFixedStageMs;
}

std::int64_t bonus_delta(std::int64_t bank_cents, Choice choice, bool model_was_correct, bool final_stage) {
  if (!final_stage || choice == Choice::unsure) return 0;
  bool right = (choice == Choice::correct) == model_was_correct;
  if (right) return kBonusStepCents;
  return -std::min(kBonusStepCents, std::max<std::int64_t>(bank_cents, 0));
}

// ---- events ------------------------------------------------------------------------------

json SessionCreated::to_json() const {
  json rv = json::array();
  for (const auto& v : random_values) rv.push_back(opt_double(v));
  return {{"type", "session_created"}, {"session_id", session_id},
          {"participant_id", participant_id}, {"condition_id", condition_id},
          {"items", items}, {"random_values", rv}, {"metadata", metadata}};
}

SessionCreated SessionCreated::from_json(const json& j) {
  SessionCreated e;
  e.session_id = j.at("session_id").get<std::string>();
  e.participant_id = j.at("participant_id").get<std::string>();
  e.condition_id = j.at("condition_id").get<std::string>();
  e.items = j.at("items").get<std::vector<std::string>>();
  for (const auto& v : j.value("random_values", json::array())) {
    e.random_values.push_back(v.is_number() ? std::optional<double>(v.get<double>()) : std::nullopt);
  }
  e.random_values.resize(e.items.size());
  e.metadata = j.value("metadata", json::object());
  return e;
}

json AnnotationEvent::to_json() const {
  json j = {{"type", "annotation"},
            {"session_id", session_id},
            {"condition_id", condition_id},
            {"instance_id", instance_id},
            {"stage", to_string(stage)},
            {"final_stage", final_stage},
            {"choice", metrics::to_string(choice)},
            {"model_was_correct", model_was_correct},
            {"elapsed_ms", elapsed_ms},
            {"min_display_ms", min_display_ms},
            {"submitted_at", submitted_at},
            {"bonus_delta_cents", bonus_delta_cents}};
  j["shown_random"] = opt_double(shown_random);
  return j;
}

AnnotationEvent AnnotationEvent::from_json(const json& j) {
  AnnotationEvent e;
  e.session_id = j.at("session_id").get<std::string>();
  e.condition_id = j.at("condition_id").get<std::string>();
  e.instance_id = j.at("instance_id").get<std::string>();
  e.stage = parse_stage(j.at("stage").get<std::string>());
  e.final_stage = j.value("final_stage", true);
  e.choice = metrics::parse_choice(j.at("choice").get<std::string>());
  e.model_was_correct = j.at("model_was_correct").get<bool>();
  e.elapsed_ms = j.value("elapsed_ms", std::int64_t{0});
  e.min_display_ms = j.value("min_display_ms", std::int64_t{0});
  e.submitted_at = j.value("submitted_at", std::int64_t{0});
  e.bonus_delta_cents = j.value("bonus_delta_cents", std::int64_t{0});
  e.shown_random = read_opt_double(j, "shown_random");
  return e;
}

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(*path_)) events_ = read(*path_);
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
  out_.open(*path_, std::ios::app | std::ios::binary);
  if (!out_) throw InputError("cannot open event log " + path_->string());
}

void EventLog::append(const json& event) {
  std::lock_guard lock(mu_);
  if (path_) {
    out_ << event.dump() << '\n';
    out_.flush();
    if (!out_) throw Error("failed to append to event log " + path_->string());
  }
  events_.push_back(event);
}

std::vector<json> EventLog::read(const std::filesystem::path& path) {
  auto file = read_jsonl(path);
  if (!file.errors.empty()) {
    throw InputError("event log " + path.string() + ":" + std::to_string(file.errors.front().line) +
                     ": " + file.errors.front().message);
  }
  std::vector<json> out;
  for (auto& r : file.records) out.push_back(std::move(r.value));
  return out;
}

namespace {

class SystemClock final : public Clock {
 public:
  std::int64_t monotonic_ms() override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }
  std::int64_t wall_ms() override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }
};

}  // namespace

std::shared_ptr<Clock> system_clock() { return std::make_shared<SystemClock>(); }

// ---- views and reports --------------------------------------------------------------------

json CurrentView::to_json() const {
  json j = {{"session_id", session_id}, {"done", done}, {"bonus_total_cents", bonus_total_cents},
            {"n_items", n_items}};
  if (done) return j;
  j["item_index"] = item_index;
  j["instance_id"] = instance_id;
  j["question"] = question;
  if (!choices.empty()) j["choices"] = choices;
  j["prediction"] = prediction;
  if (explanation) j["explanation"] = *explanation;
  j["quality_blocks"] = json::array();
  for (const auto& b : quality_blocks) j["quality_blocks"].push_back(b.to_json());
  j["stage"] = to_string(stage);
  j["stage_index"] = stage_index;
  j["n_stages"] = n_stages;
  j["min_display_ms"] = min_display_ms;
  return j;
}

json SubmitResult::to_json() const {
  return {{"bonus_delta_cents", bonus_delta_cents}, {"bonus_total_cents", bonus_total_cents}, {"done", done}};
}

json to_json(const metrics::RelianceReport& r) {
  auto rate = [](const metrics::Rate& x) {
    json j = {{"numerator", x.numerator}, {"denominator", x.denominator}};
    j["value"] = opt_double(x.value());
    return j;
  };
  return {{"n", r.n},
          {"unsure_rate", rate(r.unsure_rate)},
          {"accept_rate", rate(r.accept_rate)},
          {"user_accuracy", rate(r.user_accuracy)},
          {"over_reliance", rate(r.over_reliance)},
          {"under_reliance", rate(r.under_reliance)}};
}

json ConditionReport::to_json() const {
  json j = {{"condition_id", condition_id}, {"n_sessions", n_sessions}, {"n_events", n_events}};
  j["overall"] = study::to_json(overall);
  j["per_stage"] = json::array();
  for (const auto& s : per_stage) {
    j["per_stage"].push_back({{"stage", to_string(s.stage)}, {"reliance", study::to_json(s.reliance)}});
  }
  j["vs_control"] = json::object();
  for (const auto& [m, b] : vs_control) {
    j["vs_control"][m] = {{"p_value", b.p_value},
                          {"observed_difference", b.observed_difference},
                          {"iterations", b.iterations},
                          {"valid_iterations", b.valid_iterations}};
  }
  return j;
}

ConditionReport build_condition_report(const StudyConfig& config, const std::string& condition_id,
                                       const std::vector<AnnotationEvent>& events, std::size_t n_sessions) {
  const auto& cond = config.condition(condition_id);
  ConditionReport r;
  r.condition_id = condition_id;
  r.n_sessions = n_sessions;

  auto judgments_for = [&](const std::string& cid, std::optional<Stage> stage, bool final_only) {
    std::vector<metrics::Judgment> out;
    for (const auto& e : events) {
      if (e.condition_id != cid) continue;
      if (stage && e.stage != *stage) continue;
      if (final_only && !e.final_stage) continue;
      out.push_back({e.choice, e.model_was_correct});
    }
    return out;
  };

  for (const auto& e : events) r.n_events += e.condition_id == condition_id;
  auto final_judgments = judgments_for(condition_id, std::nullopt, true);
  r.overall = metrics::reliance_metrics(final_judgments);
  for (auto s : cond.stages) r.per_stage.push_back({s, metrics::reliance_metrics(judgments_for(condition_id, s, false))});

  if (condition_id != config.control_condition_id && !final_judgments.empty()) {
    bool control_known = std::any_of(config.conditions.begin(), config.conditions.end(),
                                     [&](const StudyCondition& c) { return c.id == config.control_condition_id; });
    if (control_known) {
      auto control = judgments_for(config.control_condition_id, std::nullopt, true);
      if (!control.empty()) {
        for (auto m : {metrics::RelianceMetric::user_accuracy, metrics::RelianceMetric::over_reliance,
                       metrics::RelianceMetric::under_reliance}) {
          r.vs_control[metrics::to_string(m)] = metrics::bootstrap_significance(
              final_judgments, control, m, config.bootstrap_iterations, config.seed);
        }
      }
    }
  }
  return r;
}

// ---- engine --------------------------------------------------------------------------------

StudyEngine::StudyEngine(StudyConfig config, std::vector<StudyItem> items,
                         std::optional<std::filesystem::path> event_log, std::shared_ptr<Clock> clock)
    : config_(std::move(config)), items_(std::move(items)), clock_(std::move(clock)) {
  for (const auto& c : config_.conditions) c.validate();
  std::size_t n_correct = 0;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!item_index_.emplace(items_[i].instance_id, i).second) {
      throw InputError("duplicate study item '" + items_[i].instance_id + "'");
    }
    n_correct += items_[i].model_was_correct;
  }
  const auto half = config_.items_per_session / 2;
  if (n_correct < half || items_.size() - n_correct < half) {
    throw InputError("study items cannot fill a balanced session of " +
                     std::to_string(config_.items_per_session));
  }
  log_ = event_log ? std::make_unique<EventLog>(*event_log) : std::make_unique<EventLog>();
  for (const auto& e : log_->events()) {
    auto type = e.value("type", "");
    if (type == "session_created") {
      apply_session_created(SessionCreated::from_json(e));
    } else if (type == "annotation") {
      apply_annotation(AnnotationEvent::from_json(e));
    } else {
      throw InputError("unknown event type '" + type + "' in event log");
    }
  }
}

const StudyItem& StudyEngine::item(const std::string& id) const {
  auto it = item_index_.find(id);
  if (it == item_index_.end()) throw StudyError(StudyError::Code::not_found, "unknown item '" + id + "'");
  return items_[it->second];
}

std::size_t StudyEngine::capacity(const std::string& condition_id) const {
  config_.condition(condition_id);
  return items_.size() * config_.annotations_per_question / config_.items_per_session;
}

std::int64_t StudyEngine::stage_min_display(const StudyCondition& c, const StudyItem& it, Stage stage) const {
  return min_display_time(it.explanation, stage, c.three_stage());
}

void StudyEngine::apply_session_created(const SessionCreated& e) {
  Session s;
  s.session_id = e.session_id;
  s.participant_id = e.participant_id;
  s.condition_id = e.condition_id;
  s.items = e.items;
  s.random_values = e.random_values;
  participants_.insert(e.participant_id);
  for (const auto& id : e.items) assigned_[e.condition_id][id]++;
  sessions_per_condition_[e.condition_id]++;
  session_order_.push_back(e.session_id);
  sessions_.emplace(e.session_id, std::move(s));
}

void StudyEngine::apply_annotation(const AnnotationEvent& e) {
  auto it = sessions_.find(e.session_id);
  if (it == sessions_.end()) throw InputError("annotation for unknown session " + e.session_id);
  auto& s = it->second;
  const auto& cond = config_.condition(s.condition_id);
  s.bonus_cents += e.bonus_delta_cents;
  submitted_.insert({e.session_id, e.instance_id, e.stage});
  if (++s.stage_cursor >= cond.stages.size()) {
    s.stage_cursor = 0;
    ++s.cursor;
  }
  annotations_.push_back(e);
}

Session StudyEngine::create_session(const std::string& participant_id, const std::string& condition_id,
                                    const json& metadata) {
  if (text::trim(participant_id).empty()) throw StudyError(StudyError::Code::invalid, "participant_id is empty");
  const auto& cond = config_.condition(condition_id);
  for (const auto& rule : config_.eligibility) {
    if (!rule.admits(metadata)) {
      throw StudyError(StudyError::Code::ineligible,
                       "participant does not satisfy eligibility rule on '" + rule.field + "'");
    }
  }

  std::lock_guard lock(mu_);
  if (participants_.contains(participant_id)) {
    throw StudyError(StudyError::Code::conflict, "participant '" + participant_id + "' already took part");
  }
  auto done = sessions_per_condition_[condition_id];
  if (done >= capacity(condition_id)) {
    throw StudyError(StudyError::Code::capacity, "condition '" + condition_id + "' is full");
  }

  Rng rng(seed_from(std::to_string(config_.seed) + "|" + condition_id + "|" + std::to_string(done)));
  auto& counts = assigned_[condition_id];
  auto pick = [&](bool correct) {
    std::vector<std::string> pool;
    for (const auto& it : items_) {
      if (it.model_was_correct == correct) pool.push_back(it.instance_id);
    }
    rng.shuffle(pool);
    std::stable_sort(pool.begin(), pool.end(), [&](const std::string& a, const std::string& b) {
      return counts[a] < counts[b];
    });
    pool.resize(config_.items_per_session / 2);
    return pool;
  };
  auto chosen = pick(true);
  auto wrong = pick(false);
  chosen.insert(chosen.end(), wrong.begin(), wrong.end());
  rng.shuffle(chosen);

  SessionCreated ev;
  ev.session_id = "s-" + sha256_hex(participant_id + "|" + condition_id + "|" + std::to_string(config_.seed)).substr(0, 16);
  ev.participant_id = participant_id;
  ev.condition_id = condition_id;
  ev.items = chosen;
  ev.metadata = metadata;
  bool has_random = std::find(cond.score_sources.begin(), cond.score_sources.end(), ScoreSource::random) !=
                    cond.score_sources.end();
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    ev.random_values.push_back(has_random ? std::optional<double>(rng.uniform01()) : std::nullopt);
  }
  log_->append(ev.to_json());
  apply_session_created(ev);
  return sessions_.at(ev.session_id);
}

Session StudyEngine::session(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw StudyError(StudyError::Code::not_found, "unknown session '" + session_id + "'");
  return it->second;
}

CurrentView StudyEngine::current(const std::string& session_id) {
  std::lock_guard lock(mu_);
  auto sit = sessions_.find(session_id);
  if (sit == sessions_.end()) throw StudyError(StudyError::Code::not_found, "unknown session '" + session_id + "'");
  const auto& s = sit->second;
  CurrentView v;
  v.session_id = s.session_id;
  v.n_items = s.items.size();
  v.bonus_total_cents = s.bonus_cents;
  if (s.done()) {
    v.done = true;
    return v;
  }
  const auto& cond = config_.condition(s.condition_id);
  const auto& it = item(s.items[s.cursor]);
  v.item_index = s.cursor;
  v.instance_id = it.instance_id;
  v.question = it.question;
  v.choices = it.choices;
  v.prediction = it.prediction;
  v.stage = cond.stages[s.stage_cursor];
  v.stage_index = s.stage_cursor;
  v.n_stages = cond.stages.size();
  if (v.stage != Stage::answer_only) v.explanation = it.explanation;
  if (v.stage == Stage::with_quality) {
    v.quality_blocks = render_quality_message(cond, it, s.random_values[s.cursor]);
  }
  v.min_display_ms = stage_min_display(cond, it, v.stage);
  served_at_.try_emplace({s.session_id, s.cursor * cond.stages.size() + s.stage_cursor}, clock_->monotonic_ms());
  return v;
}

SubmitResult StudyEngine::submit_choice(const std::string& session_id, const std::string& instance_id,
                                        Stage stage, Choice choice, std::int64_t elapsed_ms) {
  std::lock_guard lock(mu_);
  auto sit = sessions_.find(session_id);
  if (sit == sessions_.end()) throw StudyError(StudyError::Code::not_found, "unknown session '" + session_id + "'");
  auto& s = sit->second;
  if (submitted_.contains({session_id, instance_id, stage})) {
    throw StudyError(StudyError::Code::conflict, "duplicate submission for " + instance_id + " at " + to_string(stage));
  }
  if (s.done()) throw StudyError(StudyError::Code::conflict, "session is complete");
  if (instance_id != s.items[s.cursor]) {
    throw StudyError(StudyError::Code::conflict, "out-of-order submission: current item is " + s.items[s.cursor]);
  }
  const auto& cond = config_.condition(s.condition_id);
  auto current_stage = cond.stages[s.stage_cursor];
  if (stage != current_stage) {
    throw StudyError(StudyError::Code::conflict, "stage mismatch: current stage is " + to_string(current_stage));
  }
  const auto& it = item(instance_id);
  auto min_ms = stage_min_display(cond, it, stage);
  if (elapsed_ms < min_ms) {
    throw StudyError(StudyError::Code::too_early, "submitted after " + std::to_string(elapsed_ms) +
                                                      " ms; minimum display time is " + std::to_string(min_ms) + " ms");
  }
  auto served = served_at_.find({session_id, s.cursor * cond.stages.size() + s.stage_cursor});
  if (served == served_at_.end()) {
    throw StudyError(StudyError::Code::conflict, "item has not been displayed yet");
  }
  if (clock_->monotonic_ms() - served->second < min_ms) {
    throw StudyError(StudyError::Code::too_early, "server-side display timer has not elapsed");
  }

  AnnotationEvent ev;
  ev.session_id = session_id;
  ev.condition_id = s.condition_id;
  ev.instance_id = instance_id;
  ev.stage = stage;
  ev.final_stage = s.stage_cursor + 1 == cond.stages.size();
  ev.choice = choice;
  ev.model_was_correct = it.model_was_correct;
  ev.elapsed_ms = elapsed_ms;
  ev.min_display_ms = min_ms;
  ev.submitted_at = clock_->wall_ms();
  ev.bonus_delta_cents = bonus_delta(s.bonus_cents, choice, it.model_was_correct, ev.final_stage);
  if (stage == Stage::with_quality) ev.shown_random = s.random_values[s.cursor];

  log_->append(ev.to_json());
  apply_annotation(ev);
  return {ev.bonus_delta_cents, s.bonus_cents, s.done()};
}

ConditionReport StudyEngine::condition_report(const std::string& condition_id) const {
  std::lock_guard lock(mu_);
  auto n = sessions_per_condition_.contains(condition_id) ? sessions_per_condition_.at(condition_id) : 0;
  return build_condition_report(config_, condition_id, annotations_, n);
}

std::map<std::string, std::size_t> StudyEngine::assignment_counts(const std::string& condition_id) const {
  std::lock_guard lock(mu_);
  auto it = assigned_.find(condition_id);
  return it == assigned_.end() ? std::map<std::string, std::size_t>{} : it->second;
}

std::vector<AnnotationEvent> StudyEngine::annotations() const {
  std::lock_guard lock(mu_);
  return annotations_;
}

}  // namespace vlmq::study
