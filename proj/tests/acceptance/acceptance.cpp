// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "masking_corpus.hpp"
#include "mock_model.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"
#include "vlmq/artifacts.hpp"
#include "vlmq/contrastiveness.hpp"
#include "vlmq/metrics.hpp"
#include "vlmq/random.hpp"
#include "vlmq/study.hpp"
#include "vlmq/visual_fidelity.hpp"

using namespace vlmq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    } else if (!ok) {
      detail += "; " + what;
    }
  }
};

using Check = std::function<Outcome()>;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- criteria ------------------------------------------------------------------

Outcome vf_aggregation() {
  Outcome o;
  Rng rng(101);
  for (int t = 0; t < 10000 && o.pass; ++t) {
    auto k = rng.index(33);
    std::vector<vf::Verdict> v(k);
    std::size_t yes = 0;
    for (auto& x : v) {
      x = static_cast<vf::Verdict>(rng.index(3));
      yes += x == vf::Verdict::yes;
    }
    auto r = vf::visual_fidelity_score(v);
    if (k == 0) {
      o.require(r.unscorable && !r.score, "K = 0 must be unscorable");
      continue;
    }
    o.require(!r.unscorable && r.score, "scorable vector reported unscorable");
    if (!o.pass) break;
    double s = *r.score;
    o.require(s == static_cast<double>(yes) / static_cast<double>(k), "score != #yes/K");
    o.require(s >= 0.0 && s <= 1.0, "score out of bounds");
    auto shuffled = v;
    rng.shuffle(shuffled);
    o.require(*vf::visual_fidelity_score(shuffled).score == s, "not permutation invariant");
    auto it = std::find_if(v.begin(), v.end(), [](vf::Verdict x) { return x != vf::Verdict::yes; });
    if (it != v.end()) {
      *it = vf::Verdict::yes;
      o.require(*vf::visual_fidelity_score(v).score > s, "turning a verdict to yes did not raise the score");
    }
  }
  return o;
}

Outcome contrastiveness() {
  Outcome o;
  Rng rng(202);
  for (int t = 0; t < 10000 && o.pass; ++t) {
    std::vector<double> p(4);
    for (auto& x : p) x = rng.uniform01() * 0.1;
    if (t % 50 == 0) p[rng.index(4)] = 0;
    double total = 0;
    for (std::size_t i = 0; i < 4; ++i) total += contr::contrastiveness_score(p, i);
    o.require(std::fabs(total - 1.0) <= 1e-12, "normalized scores sum to " + fmt("%.17g", total));
    for (double c : {0.5, 2.0, 10.0}) {
      std::vector<double> q(p);
      for (auto& x : q) x *= c;
      for (std::size_t i = 0; i < 4; ++i) {
        double a = contr::contrastiveness_score(p, i), b = contr::contrastiveness_score(q, i);
        o.require(std::fabs(a - b) <= 1e-12, "not scale invariant at c = " + fmt("%g", c));
      }
    }
  }
  std::vector<double> zeros(4, 0.0);
  for (std::size_t i = 0; i < 4; ++i) o.require(contr::contrastiveness_score(zeros, i) == 0.25, "zero-sum fallback");
  return o;
}

Outcome masking() {
  Outcome o;
  auto cases = corpus::masking_corpus(200, 303);
  bool nested = false;
  for (const auto& c : cases) {
    nested |= std::find(c.answers.begin(), c.answers.end(), "ice cream") != c.answers.end() &&
              text::to_lower(c.explanation).find("ice cream") != std::string::npos;
    auto once = contr::mask_answers(c.explanation, c.answers);
    for (const auto& a : c.answers) {
      o.require(!corpus::answer_survives(once.text, a), "'" + a + "' survives in: " + once.text);
    }
    auto twice = contr::mask_answers(once.text, c.answers);
    o.require(twice.text == once.text, "masking is not idempotent on: " + c.explanation);
  }
  o.require(nested, "corpus has no nested ice cream/cream case");
  return o;
}

Outcome ece_oracle() {
  Outcome o;
  Rng rng(404);
  for (int t = 0; t < 1000; ++t) {
    std::vector<metrics::ScoredInstance> xs;
    std::vector<oracle::Scored> ys;
    auto n = 1 + rng.index(64);
    for (std::size_t i = 0; i < n; ++i) {
      double s = rng.index(4) == 0 ? static_cast<double>(rng.index(11)) / 10 : rng.uniform01();
      bool c = rng.uniform01() < s;
      xs.push_back({"x" + std::to_string(i), s, c});
      ys.push_back({s, c});
    }
    double got = metrics::ece(xs).ece, want = oracle::ece(ys, 10);
    o.require(std::fabs(got - want) <= 1e-12, "ece " + fmt("%.17g", got) + " vs oracle " + fmt("%.17g", want));
  }
  // Ten items per bin center c with round(10c) hits.
  std::vector<metrics::ScoredInstance> calibrated;
  for (int b = 0; b < 10; ++b) {
    double s = (b + 0.5) / 10;
    for (int i = 0; i < 20; ++i) calibrated.push_back({"c", s, i < b * 2 + 1});
  }
  o.require(metrics::ece(calibrated).ece <= 1e-15, "calibrated set has ECE " + fmt("%.3g", metrics::ece(calibrated).ece));
  return o;
}

Outcome disc_welch() {
  Outcome o;
  std::vector<metrics::ScoredInstance> fixture{{"a", 0.9, true}, {"b", 0.7, true}, {"c", 0.8, true},
                                               {"d", 0.2, false}, {"e", 0.4, false}};
  double hand = (0.9 + 0.7 + 0.8) / 3 - (0.2 + 0.4) / 2;
  o.require(std::fabs(metrics::discriminability(fixture).disc - hand) < 1e-15, "disc != hand means");
  Rng rng(505);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(2 + rng.index(40)), b(2 + rng.index(40));
    double shift = rng.uniform01() * 0.5;
    for (auto& x : a) x = std::min(1.0, rng.uniform01() * 0.6 + shift);
    for (auto& x : b) x = rng.uniform01() * (0.1 + rng.uniform01() * 0.9);
    auto got = metrics::welch_t_test(a, b);
    auto want = oracle::welch(a, b);
    worst = std::max(worst, std::fabs(got.p_value - want.p));
  }
  o.require(worst <= 1e-6, "max |p - oracle| = " + fmt("%.3g", worst));
  return o;
}

Outcome combined_ordering() {
  Outcome o;
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      double a = i / 99.0, b = j / 99.0;
      double p = metrics::combine(a, b, metrics::CombineMode::prod);
      double m = metrics::combine(a, b, metrics::CombineMode::min);
      double v = metrics::combine(a, b, metrics::CombineMode::avg);
      o.require(p <= m && m <= v, "ordering fails at (" + fmt("%g", a) + ", " + fmt("%g", b) + ")");
    }
  }
  return o;
}

double pct(const metrics::Rate& r) { return std::round(*r.value() * 1000) / 10; }

Outcome reliance_fixture() {
  Outcome o;
  synth::TempDir tmp("acc-reliance");
  const auto& table = oracle::one_stage_table();
  study::StudyConfig cfg;
  cfg.bootstrap_iterations = 50;
  std::vector<std::string> ids;
  std::vector<json> events;
  std::vector<std::string> unsolved;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto& row = table[r];
    auto id = r == 0 ? std::string("control") : "row" + std::to_string(r);
    ids.push_back(id);
    cfg.conditions.push_back({id, row.dataset + " " + row.setting, {study::ScoreSource::vf}});
    auto cells = oracle::solve_row(row);
    if (!cells) {
      unsolved.push_back(row.dataset + " / " + row.setting);
      continue;
    }
    auto add = [&](int n, metrics::Choice c, bool ok) {
      for (int i = 0; i < n; ++i) {
        study::AnnotationEvent e;
        e.session_id = id;
        e.condition_id = id;
        e.instance_id = "i" + std::to_string(events.size());
        e.choice = c;
        e.model_was_correct = ok;
        events.push_back(e.to_json());
      }
    };
    add(cells->accept_on_correct, metrics::Choice::correct, true);
    add(cells->reject_on_correct, metrics::Choice::incorrect, true);
    add(cells->unsure_on_correct, metrics::Choice::unsure, true);
    add(cells->accept_on_wrong, metrics::Choice::correct, false);
    add(cells->reject_on_wrong, metrics::Choice::incorrect, false);
    add(cells->unsure_on_wrong, metrics::Choice::unsure, false);
  }
  write_jsonl(tmp / "events.jsonl", std::nullopt, events);
  synth::write_json(tmp / "study.json", cfg.to_json());
  auto reports = artifacts::run_report({tmp / "events.jsonl", tmp / "study.json", std::nullopt, std::nullopt, tmp.path()});

  std::map<std::string, const study::ConditionReport*> by_id;
  for (const auto& rep : reports) by_id[rep.condition_id] = &rep;
  for (std::size_t r = 0; r < table.size(); ++r) {
    auto it = by_id.find(ids[r]);
    if (it == by_id.end()) continue;
    const auto& row = table[r];
    const auto& m = it->second->overall;
    bool ok = pct(m.unsure_rate) == row.unsure && pct(m.accept_rate) == row.accept &&
              pct(m.user_accuracy) == row.accuracy && pct(m.over_reliance) == row.false_accept &&
              pct(m.under_reliance) == row.false_reject;
    o.require(ok, row.dataset + " / " + row.setting + " rates differ from the table");
  }
  for (const auto& u : unsolved) {
    o.require(false, u + ": no whole-count event log with 150 judgments per class matches the printed rates");
  }

  // VF x Contr (row 2) against Control (row 0), both A-OKVQA.
  if (by_id.contains("row2") && by_id.contains("control")) {
    const auto& vfc = by_id["row2"]->overall;
    const auto& ctl = by_id["control"]->overall;
    double d_acc = std::round((pct(vfc.user_accuracy) - pct(ctl.user_accuracy)) * 10) / 1000;
    double d_over = std::round((pct(ctl.over_reliance) - pct(vfc.over_reliance)) * 10) / 1000;
    o.require(d_acc == 0.111, "accuracy delta " + fmt("%.4f", d_acc));
    o.require(d_over == 0.154, "over-reliance delta " + fmt("%.4f", d_over));
  } else {
    o.require(false, "missing rows for the delta check");
  }
  return o;
}

Outcome timer_and_bonus() {
  Outcome o;
  std::string text;
  for (int i = 0; i < 238; ++i) text += i ? " word" : "word";
  o.require(study::min_display_time(text, study::Stage::with_quality, false) == 70000, "238 words is not 70 s");
  std::int64_t bank = 0;
  std::vector<std::int64_t> totals;
  for (bool right : {false, false, true}) {
    bank += study::bonus_delta(bank, metrics::Choice::correct, right, true);
    totals.push_back(bank);
  }
  o.require(totals == std::vector<std::int64_t>{0, 0, 10}, "bonus sequence is not 0, 0, 10");
  for (std::int64_t b : {0, 10, 250}) {
    for (bool ok : {true, false}) {
      o.require(study::bonus_delta(b, metrics::Choice::unsure, ok, true) == 0, "unsure changed the bank");
    }
  }
  return o;
}

std::vector<std::string> e2e_files() {
  std::vector<std::string> names{"predictions.jsonl", "evaluation.json", "evaluation.md"};
  for (const auto* q : {"vf", "contr", "sim", "info", "plau"}) names.push_back(std::string("scores_") + q + ".jsonl");
  return names;
}

GatewayStats e2e_run(const json& gateway_json, const fs::path& dataset, const fs::path& out) {
  using namespace artifacts;
  Gateway gateway(GatewayConfig::from_json(gateway_json));
  run_generate(gateway, {dataset, DatasetKind::multiple_choice, std::nullopt, out / "predictions.jsonl"});
  auto files = run_score(gateway, {dataset, DatasetKind::multiple_choice, std::nullopt, out / "predictions.jsonl",
                                   {Quality::vf, Quality::contr, Quality::sim, Quality::info, Quality::plau}, out});
  run_evaluate({files, metrics::kDefaultBins, out});
  return gateway.stats();
}

Outcome e2e_replay() {
  Outcome o;
  synth::TempDir tmp("acc-e2e");
  auto dataset = synth::write_mc_dataset(tmp / "data", 20);
  {
    // Record the fixtures once from the deterministic mock judges.
    mock::Server server;
    e2e_run(mock::gateway_config(server.base(), (tmp / "fixtures").string()), dataset, tmp / "record");
  }
  auto replay = mock::replay_config((tmp / "fixtures").string());
  auto first = e2e_run(replay, dataset, tmp / "run1");
  auto second = e2e_run(replay, dataset, tmp / "run2");
  o.require(first.live_calls == 0 && second.live_calls == 0, "replay made live calls");
  o.require(second.replay_hits > 0, "second run did not read the fixtures");
  for (const auto& f : e2e_files()) {
    o.require(read_text_file(tmp / "run1" / f) == read_text_file(tmp / "run2" / f), f + " differs between runs");
  }
  return o;
}

Outcome subset_selection() {
  Outcome o;
  Rng rng(606);
  std::vector<metrics::PoolItem> pool;
  for (int i = 0; i < 300; ++i) {
    bool c = rng.uniform01() < 0.55;
    double vf = std::clamp(rng.uniform01() * 0.8 + (c ? 0.2 : 0.0), 0.0, 1.0);
    pool.push_back({"i" + std::to_string(i), c, {{"vf", vf}, {"contr", rng.uniform01()}}});
  }
  metrics::SubsetOptions opt;
  opt.seed = 7;
  auto sel = metrics::select_study_subset(pool, opt);
  o.require(sel.trials.size() == 50, "expected 50 trials");
  std::map<std::string, const metrics::PoolItem*> by_id;
  for (const auto& p : pool) by_id[p.instance_id] = &p;
  auto objective = [&](const std::vector<std::string>& ids) {
    double total = 0;
    for (const auto* q : {"vf", "contr"}) {
      std::vector<oracle::Scored> xs;
      for (const auto& id : ids) xs.push_back({by_id.at(id)->scores.at(q), by_id.at(id)->correct});
      total += oracle::ece(xs, 10);
    }
    return total / 2;
  };
  std::size_t best = 0;
  double best_value = 0;
  for (std::size_t t = 0; t < sel.trials.size(); ++t) {
    const auto& ids = sel.trials[t].ids;
    std::set<std::string> unique(ids.begin(), ids.end());
    std::size_t correct = 0;
    for (const auto& id : ids) correct += by_id.at(id)->correct;
    o.require(unique.size() == 100 && correct == 50, "trial " + std::to_string(t) + " is not a balanced 50/50 draw");
    double v = objective(ids);
    o.require(std::fabs(v - sel.trials[t].objective) <= 1e-12, "trial objective differs from the oracle");
    if (t == 0 || v < best_value) {
      best = t;
      best_value = v;
    }
  }
  o.require(sel.trial_index == best && sel.ids == sel.trials[best].ids, "selection is not the argmin trial");
  o.require(metrics::select_study_subset(pool, opt).ids == sel.ids, "same seed gave a different subset");
  return o;
}

Outcome kappa() {
  Outcome o;
  std::vector<int> a{1, 1, 0, 0, 1, 0, 1, 1}, b{1, 1, 0, 0}, c{1, 0, 1, 0};
  o.require(metrics::cohen_kappa(a, a) == 1.0, "perfect agreement is not 1");
  o.require(std::fabs(metrics::cohen_kappa(b, c)) <= 1e-12, "independence fixture is not 0");
  o.require(metrics::binarize(0.5) == 1 && metrics::binarize(0.49) == 0, "threshold 0.5 does not map to 1");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Check check;
    double limit_s;
  };
  std::vector<Criterion> criteria{
      {"VF aggregation", vf_aggregation, 5},
      {"Contrastiveness normalization", contrastiveness, 5},
      {"Masking soundness", masking, 60},
      {"ECE oracle equivalence", ece_oracle, 60},
      {"Disc and Welch t-test", disc_welch, 60},
      {"Combined-score ordering", combined_ordering, 60},
      {"Reliance table arithmetic", reliance_fixture, 60},
      {"Timer and bonus", timer_and_bonus, 60},
      {"End-to-end replay", e2e_replay, 60},
      {"Subset selection", subset_selection, 60},
      {"Cohen's kappa", kappa, 60},
  };
  int failures = 0;
  auto suite_start = std::chrono::steady_clock::now();
  for (const auto& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.check();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out.pass && secs > c.limit_s) out = {false, "took " + fmt("%.2f", secs) + " s"};
    failures += !out.pass;
    std::printf("%s %s (%.2f s)%s%s\n", out.pass ? "PASS" : "FAIL", c.name, secs, out.pass ? "" : ": ",
                out.detail.c_str());
    std::fflush(stdout);
  }
  double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - suite_start).count();
  std::printf("%d of %zu criteria passed in %.2f s\n", static_cast<int>(criteria.size()) - failures, criteria.size(),
              total);
  return failures;
}
