#include "vlmq/artifacts.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <spdlog/spdlog.h>

#include "vlmq/baseline.hpp"
#include "vlmq/digest.hpp"
#include "vlmq/contrastiveness.hpp"
#include "vlmq/generation.hpp"
#include "vlmq/parallel.hpp"
#include "vlmq/text.hpp"
#include "vlmq/visual_fidelity.hpp"

namespace vlmq::artifacts {

namespace {

std::string judge(const Gateway& gateway, std::string_view r) { return gateway.judge(r); }

std::string judge_or(const Gateway& gateway, std::string_view r, std::string_view fallback) {
  const auto& judges = gateway.config().judges;
  if (judges.contains(std::string(r))) return judges.at(std::string(r));
  return gateway.judge(fallback);
}

std::vector<VisualInstance> load_instances(const std::filesystem::path& path, DatasetKind kind,
                                           std::optional<std::size_t> limit) {
  auto load = load_dataset(path, kind, limit);
  for (const auto& e : load.errors) spdlog::warn("{}:{}: {}", path.string(), e.line, e.message);
  return std::move(load.instances);
}

std::map<std::string, const VisualInstance*> index_instances(const std::vector<VisualInstance>& instances) {
  std::map<std::string, const VisualInstance*> out;
  for (const auto& i : instances) out.emplace(i.id, &i);
  return out;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string fmt_pct(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v * 100.0);
  return buf;
}

ScoreRecord score_one(Gateway& gateway, const VisualInstance& inst, const PredictionRecord& pred,
                      Quality quality) {
  ScoreRecord r;
  r.instance_id = pred.instance_id;
  r.quality = quality;
  r.correct = grade_prediction(inst, pred.answer);
  switch (quality) {
    case Quality::vf: {
      vf::Judges judges{judge(gateway, role::question_generator), judge(gateway, role::verifier)};
      auto res = vf::evaluate(gateway, pred.explanation, inst.question, pred.answer, inst.image_ref, judges);
      r.score = res.score;
      r.unscorable = res.unscorable;
      json qs = json::array();
      for (const auto& q : res.questions) {
        qs.push_back({{"text", q.text}, {"verdict", q.verdict ? vf::to_string(*q.verdict) : "unparseable"}});
      }
      r.evidence["questions"] = qs;
      break;
    }
    case Quality::contr: {
      contr::Judges judges{judge(gateway, role::paraphraser), judge(gateway, role::nli)};
      auto res = contr::evaluate(gateway, pred.explanation, inst.question, inst.choices, pred.answer, judges);
      r.score = res.score;
      json per = json::array();
      for (const auto& a : res.per_answer) {
        per.push_back({{"answer", a.answer}, {"hypothesis", a.hypothesis}, {"entailment", a.entailment}});
      }
      r.evidence["per_answer"] = per;
      r.evidence["premise"] = res.premise;
      r.evidence["predicted_index"] = res.predicted_index;
      break;
    }
    case Quality::sim: {
      baseline::SimulatabilityJudges judges{judge(gateway, role::paraphraser), judge(gateway, role::nli)};
      auto res = baseline::simulatability(gateway, pred.explanation, inst.question, pred.answer, judges);
      r.score = res.score;
      r.evidence["premise"] = res.premise;
      r.evidence["hypothesis"] = res.hypothesis;
      break;
    }
    case Quality::info: {
      auto hypothesis = contr::paraphrase_to_declarative(gateway, inst.question, pred.answer,
                                                         judge(gateway, role::paraphraser));
      auto res = baseline::informativeness(gateway, pred.explanation, hypothesis,
                                           judge_or(gateway, role::informativeness, role::paraphraser));
      r.score = res.score;
      r.evidence["hypothesis"] = hypothesis;
      r.evidence["pieces"] = res.pieces;
      break;
    }
    case Quality::plau:
      r.score = baseline::plausibility(gateway, pred.explanation, judge(gateway, role::plausibility));
      break;
  }
  return r;
}

ArtifactMeta meta_for(std::string stage, const Gateway* gateway, json extra = json::object()) {
  ArtifactMeta m;
  m.stage = std::move(stage);
  if (gateway) m.config_digest = gateway->config().digest();
  m.extra = std::move(extra);
  return m;
}

std::string file_digest(const std::filesystem::path& p) { return sha256_hex(read_text_file(p)); }

}  // namespace

std::string to_string(Quality q) {
  switch (q) {
    case Quality::vf: return "vf";
    case Quality::contr: return "contr";
    case Quality::sim: return "sim";
    case Quality::info: return "info";
    case Quality::plau: return "plau";
  }
  return "?";
}

Quality parse_quality(std::string_view s) {
  for (auto q : {Quality::vf, Quality::contr, Quality::sim, Quality::info, Quality::plau}) {
    if (to_string(q) == s) return q;
  }
  throw InputError("unknown quality '" + std::string(s) + "' (expected vf, contr, sim, info or plau)");
}

std::filesystem::path score_file_name(Quality q) { return "scores_" + to_string(q) + ".jsonl"; }

// ---- generate ----------------------------------------------------------------

std::set<std::string> load_id_list(const std::filesystem::path& path) {
  std::set<std::string> ids;
  for (const auto& line : text::split_lines(read_text_file(path))) {
    auto id = text::trim(line);
    if (!id.empty() && id.front() != '#') ids.insert(id);
  }
  return ids;
}

GenerateSummary run_generate(Gateway& gateway, const GenerateOptions& options) {
  auto load = load_dataset(options.dataset, options.kind, options.limit);
  for (const auto& e : load.errors) spdlog::warn("{}:{}: {}", options.dataset.string(), e.line, e.message);
  auto instances = std::move(load.instances);
  std::size_t before = instances.size();
  if (options.kind == DatasetKind::open_ended) {
    auto excluded = options.exclusion_ids ? load_id_list(*options.exclusion_ids) : std::set<std::string>{};
    instances = filter_open_ended(instances, excluded);
  } else if (options.exclusion_ids) {
    throw InputError("exclusion ids apply to open-ended datasets only");
  }
  auto model = judge(gateway, role::generator);
  auto preds = generation::generate_predictions(gateway, instances, model);
  std::vector<json> records;
  for (const auto& p : preds) records.push_back(p.to_json());
  write_jsonl(options.out,
              meta_for("generate", &gateway,
                       {{"dataset_sha256", file_digest(options.dataset)}, {"kind", to_string(options.kind)},
                        {"generator", model}}),
              records);
  return {preds.size(), load.errors.size(), before - instances.size()};
}

// ---- score -----------------------------------------------------------------------

json ScoreRecord::to_json() const {
  json j = evidence.is_object() ? evidence : json::object();
  j["instance_id"] = instance_id;
  j["quality"] = artifacts::to_string(quality);
  j["score"] = score ? json(*score) : json(nullptr);
  j["unscorable"] = unscorable;
  j["correct"] = correct;
  return j;
}

ScoreRecord ScoreRecord::from_json(const json& j) {
  ScoreRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.quality = parse_quality(j.at("quality").get<std::string>());
  if (j.contains("score") && j["score"].is_number()) r.score = j["score"].get<double>();
  r.unscorable = j.value("unscorable", !r.score.has_value());
  r.correct = j.at("correct").get<bool>();
  if (!r.score && !r.unscorable) throw InputError("score record " + r.instance_id + " has no score");
  r.evidence = j;
  for (const char* k : {"instance_id", "quality", "score", "unscorable", "correct"}) r.evidence.erase(k);
  return r;
}

std::vector<ScoreRecord> score_predictions(Gateway& gateway, const std::vector<VisualInstance>& instances,
                                           const std::vector<PredictionRecord>& predictions, Quality quality) {
  auto index = index_instances(instances);
  std::vector<std::pair<const VisualInstance*, const PredictionRecord*>> work;
  for (const auto& p : predictions) {
    auto it = index.find(p.instance_id);
    if (it == index.end()) {
      throw InputError("prediction for unknown instance '" + p.instance_id + "'");
    }
    if (quality == Quality::contr && it->second->kind != DatasetKind::multiple_choice) continue;
    work.emplace_back(it->second, &p);
  }
  if (quality == Quality::contr && work.size() < predictions.size()) {
    spdlog::info("contrastiveness skipped {} open-ended instances", predictions.size() - work.size());
  }
  return parallel_map(work.size(), gateway.config().max_in_flight, [&](std::size_t i) {
    return score_one(gateway, *work[i].first, *work[i].second, quality);
  });
}

std::vector<std::filesystem::path> run_score(Gateway& gateway, const ScoreOptions& options) {
  auto instances = load_instances(options.dataset, options.kind, options.limit);
  auto predictions = load_predictions(options.predictions);
  std::vector<std::filesystem::path> written;
  for (auto q : options.qualities) {
    auto records = score_predictions(gateway, instances, predictions, q);
    std::vector<json> lines;
    for (const auto& r : records) lines.push_back(r.to_json());
    auto path = options.out_dir / score_file_name(q);
    write_jsonl(path,
                meta_for("score", &gateway,
                         {{"quality", to_string(q)},
                          {"dataset_sha256", file_digest(options.dataset)},
                          {"predictions_sha256", file_digest(options.predictions)}}),
                lines);
    written.push_back(path);
  }
  return written;
}

ScoreFile load_scores(const std::filesystem::path& path) {
  auto file = read_jsonl(path);
  if (!file.errors.empty()) {
    throw InputError(path.string() + ":" + std::to_string(file.errors.front().line) + ": " +
                     file.errors.front().message);
  }
  ScoreFile out;
  out.meta = file.meta;
  std::optional<Quality> q;
  if (out.meta && out.meta->extra.contains("quality")) q = parse_quality(out.meta->extra["quality"].get<std::string>());
  for (const auto& rec : file.records) {
    auto r = ScoreRecord::from_json(rec.value);
    if (q && r.quality != *q) {
      throw InputError(path.string() + ":" + std::to_string(rec.line) + ": mixed qualities in one score file");
    }
    q = r.quality;
    out.records.push_back(std::move(r));
  }
  if (!q) throw InputError("score file " + path.string() + " is empty");
  out.quality = *q;
  return out;
}

// ---- evaluate ----------------------------------------------------------------------

json QualityEvaluation::to_json() const {
  json bins = json::array();
  for (const auto& b : calibration.bins) {
    bins.push_back({{"lower", b.lower}, {"upper", b.upper}, {"count", b.count},
                    {"mean_confidence", b.mean_confidence}, {"empirical_accuracy", b.empirical_accuracy}});
  }
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"quality", quality},
          {"n", n},
          {"n_unscorable", n_unscorable},
          {"disc", disc.disc},
          {"p", opt(disc.p_value)},
          {"t", opt(disc.t_statistic)},
          {"dof", opt(disc.dof)},
          {"n_correct", disc.n_correct},
          {"n_incorrect", disc.n_incorrect},
          {"note", disc.note},
          {"ece", calibration.ece},
          {"ece_n", calibration.n},
          {"bins", bins}};
}

QualityEvaluation evaluate_quality(const std::string& name, const std::vector<ScoreRecord>& records,
                                   std::size_t n_bins) {
  QualityEvaluation ev;
  ev.quality = name;
  ev.n = records.size();
  std::vector<metrics::ScoredInstance> all, scorable;
  for (const auto& r : records) {
    if (!r.score) {
      ++ev.n_unscorable;
      all.push_back({r.instance_id, 0.0, r.correct});
      continue;
    }
    all.push_back({r.instance_id, *r.score, r.correct});
    scorable.push_back(all.back());
  }
  ev.disc = metrics::discriminability(all);
  if (ev.n_unscorable) {
    if (!ev.disc.note.empty()) ev.disc.note += "; ";
    ev.disc.note += std::to_string(ev.n_unscorable) + " unscorable counted as 0";
  }
  if (!scorable.empty()) ev.calibration = metrics::ece(scorable, n_bins);
  return ev;
}

std::vector<QualityEvaluation> evaluate_all(const std::vector<ScoreFile>& files, std::size_t n_bins) {
  std::vector<QualityEvaluation> rows;
  const ScoreFile* vf_file = nullptr;
  const ScoreFile* contr_file = nullptr;
  for (const auto& f : files) {
    rows.push_back(evaluate_quality(to_string(f.quality), f.records, n_bins));
    if (f.quality == Quality::vf) vf_file = &f;
    if (f.quality == Quality::contr) contr_file = &f;
  }
  if (vf_file && contr_file) {
    std::map<std::string, const ScoreRecord*> vf_by_id;
    for (const auto& r : vf_file->records) vf_by_id.emplace(r.instance_id, &r);
    for (auto mode : {metrics::CombineMode::avg, metrics::CombineMode::prod, metrics::CombineMode::min}) {
      std::vector<ScoreRecord> combined;
      for (const auto& c : contr_file->records) {
        auto it = vf_by_id.find(c.instance_id);
        if (it == vf_by_id.end() || !c.score) continue;
        ScoreRecord r;
        r.instance_id = c.instance_id;
        r.correct = c.correct;
        r.score = metrics::combine(it->second->score, *c.score, mode);
        r.unscorable = !r.score;
        combined.push_back(r);
      }
      if (!combined.empty()) rows.push_back(evaluate_quality(metrics::to_string(mode), combined, n_bins));
    }
  }
  return rows;
}

std::string markdown_table(const std::vector<QualityEvaluation>& rows) {
  std::ostringstream out;
  out << "| Quality | Disc | p | ECE | N | Unscorable |\n|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    std::string p = "n/a";
    if (r.disc.p_value) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3g", *r.disc.p_value);
      p = buf;
    }
    out << "| " << r.quality << " | " << fmt3(r.disc.disc) << " | " << p << " | " << fmt3(r.calibration.ece)
        << " | " << r.n << " | " << r.n_unscorable << " |\n";
  }
  return out.str();
}

std::string curve_csv(const QualityEvaluation& row) {
  std::ostringstream out;
  out << "bin_center,accuracy,count\n";
  for (const auto& b : row.calibration.bins) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu\n", (b.lower + b.upper) / 2, b.empirical_accuracy, b.count);
    out << buf;
  }
  return out.str();
}

std::vector<QualityEvaluation> run_evaluate(const EvaluateOptions& options) {
  if (options.score_files.empty()) throw InputError("evaluate needs at least one score file");
  std::vector<ScoreFile> files;
  json inputs = json::array();
  for (const auto& p : options.score_files) {
    files.push_back(load_scores(p));
    inputs.push_back({{"file", p.filename().string()}, {"sha256", file_digest(p)}});
  }
  auto rows = evaluate_all(files, options.n_bins);

  json report = {{"_meta", meta_for("evaluate", nullptr, {{"inputs", inputs}, {"bins", options.n_bins}}).to_json()}};
  if (files.front().meta) report["_meta"]["config_digest"] = files.front().meta->config_digest;
  report["qualities"] = json::array();
  for (const auto& r : rows) report["qualities"].push_back(r.to_json());
  write_text_file(options.out_dir / "evaluation.json", report.dump(2) + "\n");
  write_text_file(options.out_dir / "evaluation.md", markdown_table(rows));
  for (const auto& r : rows) write_text_file(options.out_dir / ("curve_" + r.quality + ".csv"), curve_csv(r));
  return rows;
}

// ---- subset ---------------------------------------------------------------------------

std::vector<study::StudyItem> build_study_items(const std::vector<VisualInstance>& instances,
                                                const std::vector<PredictionRecord>& predictions,
                                                const std::vector<ScoreFile>& scores,
                                                const std::vector<std::string>& ids) {
  auto index = index_instances(instances);
  std::map<std::string, const PredictionRecord*> preds;
  for (const auto& p : predictions) preds.emplace(p.instance_id, &p);
  std::map<Quality, std::map<std::string, const ScoreRecord*>> by_quality;
  for (const auto& f : scores) {
    for (const auto& r : f.records) by_quality[f.quality].emplace(r.instance_id, &r);
  }

  std::vector<study::StudyItem> items;
  for (const auto& id : ids) {
    auto ii = index.find(id);
    auto pi = preds.find(id);
    if (ii == index.end() || pi == preds.end()) throw InputError("subset id '" + id + "' has no instance or prediction");
    study::StudyItem it;
    it.instance_id = id;
    it.question = ii->second->question;
    it.choices = ii->second->choices;
    it.prediction = pi->second->answer;
    it.explanation = pi->second->explanation;
    it.model_was_correct = grade_prediction(*ii->second, it.prediction);

    std::optional<double> vf_score, contr_score;
    if (auto q = by_quality.find(Quality::vf); q != by_quality.end() && q->second.contains(id)) {
      const auto* r = q->second.at(id);
      vf_score = r->score.value_or(0.0);
      it.scores["vf"] = *vf_score;
      for (const auto& e : r->evidence.value("questions", json::array())) {
        it.vf_evidence.push_back({e.at("text").get<std::string>(),
                                  vf::parse_verdict_label(e.value("verdict", "unparseable")), ""});
      }
    }
    if (auto q = by_quality.find(Quality::contr); q != by_quality.end() && q->second.contains(id)) {
      const auto* r = q->second.at(id);
      contr_score = r->score;
      if (contr_score) it.scores["contr"] = *contr_score;
      it.predicted_index = r->evidence.value("predicted_index", std::size_t{0});
      for (const auto& e : r->evidence.value("per_answer", json::array())) {
        it.contr_evidence.push_back({e.at("answer").get<std::string>(), e.value("hypothesis", ""),
                                     e.at("entailment").get<double>()});
      }
    }
    if (vf_score && contr_score) {
      it.scores["prod"] = metrics::combine(*vf_score, *contr_score, metrics::CombineMode::prod);
      it.scores["avg"] = metrics::combine(*vf_score, *contr_score, metrics::CombineMode::avg);
    }
    items.push_back(std::move(it));
  }
  return items;
}

metrics::SubsetSelection run_subset(const SubsetOptions& options) {
  auto instances = load_instances(options.dataset, options.kind, std::nullopt);
  auto predictions = load_predictions(options.predictions);
  std::vector<ScoreFile> files;
  for (const auto& p : options.score_files) files.push_back(load_scores(p));

  // Pool: instances scored for every supplied quality. Unscorable VF enters as 0.
  std::map<std::string, metrics::PoolItem> pool_by_id;
  std::map<std::string, std::size_t> seen;
  for (const auto& f : files) {
    for (const auto& r : f.records) {
      auto& item = pool_by_id[r.instance_id];
      item.instance_id = r.instance_id;
      item.correct = r.correct;
      if (r.score || f.quality == Quality::vf) item.scores[to_string(f.quality)] = r.score.value_or(0.0);
      seen[r.instance_id]++;
    }
  }
  std::vector<metrics::PoolItem> pool;
  for (const auto& inst : instances) {
    auto it = pool_by_id.find(inst.id);
    if (it != pool_by_id.end() && seen[inst.id] == files.size()) pool.push_back(it->second);
  }
  auto selection = metrics::select_study_subset(pool, options.selection);

  json trials = json::array();
  for (const auto& t : selection.trials) trials.push_back({{"objective", t.objective}});
  ArtifactMeta meta;
  meta.stage = "subset";
  if (!files.empty() && files.front().meta) meta.config_digest = files.front().meta->config_digest;
  meta.seed = options.selection.seed;
  meta.extra = {{"trials", options.selection.trials}, {"per_class", options.selection.per_class},
                {"bins", options.selection.n_bins}};
  json out = {{"_meta", meta.to_json()},
              {"ids", selection.ids},
              {"objective", selection.objective},
              {"trial_index", selection.trial_index},
              {"qualities", selection.qualities},
              {"trials", trials}};
  write_text_file(options.out_dir / "subset.json", out.dump(2) + "\n");
  auto items = build_study_items(instances, predictions, files, selection.ids);
  ArtifactMeta items_meta = meta;
  items_meta.stage = "study_items";
  study::write_items(options.out_dir / "study_items.jsonl", items, items_meta);
  return selection;
}

// ---- report -----------------------------------------------------------------------------

std::string markdown_reliance_table(const std::vector<study::ConditionReport>& reports) {
  std::ostringstream out;
  out << "| Condition | N | Unsure (%) | Accept (%) | Accuracy (%) | False accept (%) | False reject (%) |"
         " p acc | p over | p under |\n|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    auto p = [&](const char* m) -> std::string {
      auto it = r.vs_control.find(m);
      if (it == r.vs_control.end()) return "";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", it->second.p_value);
      return buf;
    };
    const auto& o = r.overall;
    out << "| " << r.condition_id << " | " << o.n << " | " << fmt_pct(o.unsure_rate.value()) << " | "
        << fmt_pct(o.accept_rate.value()) << " | " << fmt_pct(o.user_accuracy.value()) << " | "
        << fmt_pct(o.over_reliance.value()) << " | " << fmt_pct(o.under_reliance.value()) << " | "
        << p("user_accuracy") << " | " << p("over_reliance") << " | " << p("under_reliance") << " |\n";
  }
  return out.str();
}

std::vector<study::ConditionReport> run_report(const ReportOptions& options) {
  auto config = options.study_config ? study::StudyConfig::load(*options.study_config)
                                     : study::StudyConfig::from_json(json::object());
  if (options.bootstrap_iterations) config.bootstrap_iterations = *options.bootstrap_iterations;
  if (options.seed) config.seed = *options.seed;

  std::vector<study::AnnotationEvent> events;
  std::map<std::string, std::size_t> sessions;
  for (const auto& e : study::EventLog::read(options.event_log)) {
    auto type = e.value("type", "");
    if (type == "annotation") {
      events.push_back(study::AnnotationEvent::from_json(e));
    } else if (type == "session_created") {
      sessions[e.at("condition_id").get<std::string>()]++;
    }
  }
  std::vector<study::ConditionReport> reports;
  json out = json::array();
  for (const auto& c : config.conditions) {
    bool any = std::any_of(events.begin(), events.end(),
                           [&](const study::AnnotationEvent& e) { return e.condition_id == c.id; });
    if (!any) continue;
    reports.push_back(study::build_condition_report(config, c.id, events, sessions[c.id]));
    out.push_back(reports.back().to_json());
  }
  ArtifactMeta meta;
  meta.stage = "report";
  meta.config_digest = sha256_hex(config.to_json().dump());
  meta.seed = config.seed;
  meta.extra = {{"event_log_sha256", file_digest(options.event_log)},
                {"bootstrap_iterations", config.bootstrap_iterations}};
  write_text_file(options.out_dir / "reliance.json",
                  json{{"_meta", meta.to_json()}, {"conditions", out}}.dump(2) + "\n");
  write_text_file(options.out_dir / "reliance.md", markdown_reliance_table(reports));
  return reports;
}

}  // namespace vlmq::artifacts
