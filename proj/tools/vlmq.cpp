#include <csignal>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vlmq/artifacts.hpp"
#include "vlmq/study_server.hpp"

namespace fs = std::filesystem;
using namespace vlmq;

namespace {

study::StudyServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::vector<artifacts::Quality> parse_qualities(const std::vector<std::string>& names) {
  std::vector<artifacts::Quality> out;
  for (const auto& n : names) out.push_back(artifacts::parse_quality(n));
  return out;
}

void print_gateway_stats(const Gateway& gw) {
  auto s = gw.stats();
  spdlog::info("gateway: {} live calls, {} cache hits, {} replay hits, {} retries", s.live_calls, s.cache_hits,
               s.replay_hits, s.retries);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score VLM explanations, evaluate calibration, and run the reliance study."};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error");

  // generate
  auto* gen = app.add_subcommand("generate", "Answer and explain every dataset instance");
  artifacts::GenerateOptions gen_opts;
  std::string gen_kind = "mc", gen_config, gen_exclude;
  std::size_t gen_limit = 0;
  gen->add_option("--dataset", gen_opts.dataset, "dataset JSONL")->required()->check(CLI::ExistingFile);
  gen->add_option("--kind", gen_kind, "mc or open")->capture_default_str();
  gen->add_option("--limit", gen_limit, "keep the first N valid instances");
  gen->add_option("--exclude", gen_exclude, "open-ended ids to drop, one per line")->check(CLI::ExistingFile);
  gen->add_option("--config", gen_config, "gateway config")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_opts.out, "predictions JSONL")->required();

  // score
  auto* score = app.add_subcommand("score", "Score predictions for one or more qualities");
  artifacts::ScoreOptions score_opts;
  std::string score_kind = "mc", score_config;
  std::size_t score_limit = 0;
  std::vector<std::string> score_qualities;
  score->add_option("--dataset", score_opts.dataset, "dataset JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("--kind", score_kind, "mc or open")->capture_default_str();
  score->add_option("--limit", score_limit, "keep the first N valid instances");
  score->add_option("--predictions", score_opts.predictions, "predictions JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("--quality", score_qualities, "vf, contr, sim, info, plau (repeatable)")->required();
  score->add_option("--config", score_config, "gateway config")->required()->check(CLI::ExistingFile);
  score->add_option("--out", score_opts.out_dir, "output directory")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Disc and ECE tables plus calibration curve data");
  artifacts::EvaluateOptions eval_opts;
  eval->add_option("--scores,scores", eval_opts.score_files, "score files")->required()->check(CLI::ExistingFile);
  eval->add_option("--bins", eval_opts.n_bins, "ECE bins")->capture_default_str()->check(CLI::PositiveNumber);
  eval->add_option("--out", eval_opts.out_dir, "output directory")->required();

  // subset
  auto* sub = app.add_subcommand("subset", "Pick the balanced study subset with the lowest ECE");
  artifacts::SubsetOptions sub_opts;
  std::string sub_kind = "mc", sub_config;
  sub->add_option("--dataset", sub_opts.dataset, "dataset JSONL")->required()->check(CLI::ExistingFile);
  sub->add_option("--kind", sub_kind, "mc or open")->capture_default_str();
  sub->add_option("--predictions", sub_opts.predictions, "predictions JSONL")->required()->check(CLI::ExistingFile);
  sub->add_option("--scores", sub_opts.score_files, "score files")->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", sub_opts.selection.seed, "sampling seed")->required();
  sub->add_option("--trials", sub_opts.selection.trials)->capture_default_str();
  sub->add_option("--per-class", sub_opts.selection.per_class)->capture_default_str();
  sub->add_option("--bins", sub_opts.selection.n_bins)->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--config", sub_config, "gateway config; fills descriptive VF sentences when given");
  sub->add_option("--out", sub_opts.out_dir, "output directory")->required();

  // study
  auto* st = app.add_subcommand("study", "Reliance study service");
  st->require_subcommand(1);
  auto* serve = st->add_subcommand("serve", "Run the study HTTP service");
  std::string serve_config, serve_items, serve_log, serve_static;
  study::ServerOptions server_opts;
  std::optional<std::uint64_t> serve_seed;
  serve->add_option("--config", serve_config, "study config")->check(CLI::ExistingFile);
  serve->add_option("--items", serve_items, "study items JSONL")->required()->check(CLI::ExistingFile);
  serve->add_option("--log", serve_log, "event log (appended; replayed on start)")->required();
  serve->add_option("--host", server_opts.host)->capture_default_str();
  serve->add_option("--port", server_opts.port)->capture_default_str();
  serve->add_option("--static", serve_static, "participant UI directory");
  serve->add_option("--seed", serve_seed, "assignment seed (overrides the config)");
  auto* conds = st->add_subcommand("conditions", "Write the default study config");
  std::string conds_out;
  conds->add_option("--out", conds_out, "output file (stdout when omitted)");

  // report
  auto* rep = app.add_subcommand("report", "Reliance tables from a study event log");
  artifacts::ReportOptions rep_opts;
  std::string rep_config;
  std::optional<std::size_t> rep_iters;
  std::optional<std::uint64_t> rep_seed;
  rep->add_option("--log", rep_opts.event_log, "event log")->required()->check(CLI::ExistingFile);
  rep->add_option("--config", rep_config, "study config")->check(CLI::ExistingFile);
  rep->add_option("--bootstrap-iters", rep_iters, "bootstrap iterations");
  rep->add_option("--seed", rep_seed, "bootstrap seed");
  rep->add_option("--out", rep_opts.out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_color_mt("vlmq"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*gen) {
      gen_opts.kind = parse_dataset_kind(gen_kind);
      if (gen->count("--limit")) gen_opts.limit = gen_limit;
      if (!gen_exclude.empty()) gen_opts.exclusion_ids = fs::path(gen_exclude);
      Gateway gw(GatewayConfig::load(gen_config));
      auto s = artifacts::run_generate(gw, gen_opts);
      spdlog::info("wrote {} predictions to {} ({} dataset errors, {} filtered)", s.n_instances,
                   gen_opts.out.string(), s.n_dataset_errors, s.n_filtered);
      print_gateway_stats(gw);
    } else if (*score) {
      score_opts.kind = parse_dataset_kind(score_kind);
      if (score->count("--limit")) score_opts.limit = score_limit;
      score_opts.qualities = parse_qualities(score_qualities);
      Gateway gw(GatewayConfig::load(score_config));
      for (const auto& p : artifacts::run_score(gw, score_opts)) spdlog::info("wrote {}", p.string());
      print_gateway_stats(gw);
    } else if (*eval) {
      auto rows = artifacts::run_evaluate(eval_opts);
      std::cout << artifacts::markdown_table(rows);
    } else if (*sub) {
      sub_opts.kind = parse_dataset_kind(sub_kind);
      auto sel = artifacts::run_subset(sub_opts);
      spdlog::info("trial {} selected, objective {:.4f}", sel.trial_index, sel.objective);
      if (!sub_config.empty()) {
        Gateway gw(GatewayConfig::load(sub_config));
        auto items_path = sub_opts.out_dir / "study_items.jsonl";
        auto items = study::load_items(items_path);
        const auto& judges = gw.config().judges;
        auto model = judges.contains("describer") ? judges.at("describer") : gw.judge("paraphraser");
        study::prepare_descriptions(gw, items, model);
        auto meta = read_jsonl(items_path).meta;
        study::write_items(items_path, items, meta);
        print_gateway_stats(gw);
      }
    } else if (*serve) {
      auto config = serve_config.empty() ? study::StudyConfig::from_json(json::object())
                                         : study::StudyConfig::load(serve_config);
      if (serve_seed) config.seed = *serve_seed;
      if (!serve_static.empty()) server_opts.static_dir = serve_static;
      study::StudyEngine engine(std::move(config), study::load_items(serve_items), fs::path(serve_log));
      study::StudyServer server(engine, server_opts);
      int port = server.bind();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("study service listening on {}:{}", server_opts.host, port);
      server.serve();
      g_server = nullptr;
    } else if (*conds) {
      auto text = study::StudyConfig::from_json(json::object()).to_json().dump(2) + "\n";
      if (conds_out.empty()) {
        std::cout << text;
      } else {
        write_text_file(conds_out, text);
      }
    } else if (*rep) {
      if (!rep_config.empty()) rep_opts.study_config = rep_config;
      rep_opts.bootstrap_iterations = rep_iters;
      rep_opts.seed = rep_seed;
      auto reports = artifacts::run_report(rep_opts);
      std::cout << artifacts::markdown_reliance_table(reports);
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
