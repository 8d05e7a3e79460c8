#include <doctest.h>

#include "fake_transport.hpp"
#include "worked_examples.hpp"
#include "replay_fixtures.hpp"
#include "synthetic.hpp"
#include "vlmq/baseline.hpp"
#include "vlmq/contrastiveness.hpp"
#include "vlmq/error.hpp"

using namespace vlmq;

TEST_SUITE("baseline") {
  TEST_CASE("simulatability on the icing row replays the recorded entailment") {
    synth::TempDir dir("sim");
    const std::string hypothesis = "The white substance on top of the cupcakes is icing.";
    fixtures::put_chat(dir / "fx", contr::paraphrase_request(worked::kIcingQuestion, "icing", "judge"), hypothesis);
    auto premise = contr::mask_answers(worked::kIcingExplanation, {"icing"}).text;
    fixtures::put_entail(dir / "fx", {"nli", premise, hypothesis}, 0.391);
    Gateway gw(GatewayConfig::from_json(fixtures::replay_config(dir / "fx")));
    auto r = baseline::simulatability(gw, worked::kIcingExplanation, worked::kIcingQuestion, "icing", {"judge", "nli"});
    CHECK(r.score == doctest::Approx(0.391).epsilon(1e-12));
    CHECK(r.premise.find("icing") == std::string::npos);
    CHECK(r.hypothesis == hypothesis);
    CHECK(gw.stats().replay_hits == 2);
  }

  TEST_CASE("simulatability is well defined when the explanation restates the answer") {
    auto t = std::make_shared<fake::Transport>(fake::scripted(
        {[](const std::string&, const std::string&) { return std::string("The man is waiting for taxi."); },
         [](const std::string&, const std::string&) { return 0.97; }}));
    Gateway gw(GatewayConfig::from_json(fake::judge_config()), t);
    auto r = baseline::simulatability(gw, "The man is waiting for taxi.", "What is the man waiting for?", "taxi",
                                      {"vlm", "nli"});
    CHECK(r.premise == "The man is waiting for <mask>.");
    CHECK(r.score == doctest::Approx(0.97));
    CHECK_THROWS_AS(baseline::simulatability(gw, " ", "Q?", "taxi", {"vlm", "nli"}), InputError);
  }

  TEST_CASE("informativeness list parsing") {
    CHECK(baseline::parse_string_list("[\"Suitcases are present in the image.\"]").size() == 1);
    CHECK(baseline::parse_string_list("[]").empty());
    auto two = baseline::parse_string_list("Output: [\"a\", \"b\"]");
    CHECK(two == std::vector<std::string>{"a", "b"});
    CHECK(baseline::parse_string_list(R"(["say \"hi\""])") == std::vector<std::string>{"say \"hi\""});
    CHECK(baseline::parse_string_list("['one', 'two']") == std::vector<std::string>{"one", "two"});
    CHECK_THROWS_AS(baseline::parse_string_list("no list here"), ParseError);
    CHECK_THROWS_AS(baseline::parse_string_list("[\"open"), ParseError);
    CHECK_THROWS_AS(baseline::parse_string_list("[a, b]"), ParseError);
  }

  TEST_CASE("informativeness is binary") {
    std::string reply;
    auto t = std::make_shared<fake::Transport>(
        fake::scripted({[&](const std::string&, const std::string& user) {
          CHECK(user.find("Task:\nHypothesis: H.\nRationale: R.") != std::string::npos);
          return reply;
        }}));
    Gateway gw(GatewayConfig::from_json(fake::judge_config()), t);
    reply = "[\"Suitcases are present in the image.\"]";
    CHECK(baseline::informativeness(gw, "R.", "H.", "vlm").score == 1);
    reply = "[]";
    auto empty = baseline::informativeness(gw, "R. ", "H.", "vlm");
    CHECK(empty.score == 0);
    CHECK(empty.pieces.empty());
  }

  TEST_CASE("plausibility replays the recorded value and requires a backend") {
    synth::TempDir dir("plau");
    fixtures::put_plausibility(dir / "fx", {"vera", worked::kSurfaceExplanation}, 0.566);
    Gateway gw(GatewayConfig::from_json(fixtures::replay_config(dir / "fx")));
    CHECK(baseline::plausibility(gw, worked::kSurfaceExplanation, "vera") == doctest::Approx(0.566));
    CHECK(baseline::plausibility(gw, worked::kSurfaceExplanation, "vera") == doctest::Approx(0.566));
    CHECK(gw.stats().replay_hits == 1);
    Gateway none(GatewayConfig::from_json(vlmq::json{{"backends", vlmq::json::object()}}));
    CHECK_THROWS_AS(baseline::plausibility(none, worked::kSurfaceExplanation, "vera"), ConfigError);
  }
}
