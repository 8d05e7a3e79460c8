#include <doctest.h>

#include "fake_transport.hpp"
#include "masking_corpus.hpp"
#include "worked_examples.hpp"
#include "vlmq/contrastiveness.hpp"
#include "vlmq/error.hpp"

using namespace vlmq;

TEST_SUITE("contrastiveness") {
  TEST_CASE("masking the empty-surface explanation") {
    auto m = contr::mask_answers("The surface is empty.", worked::kSurfaceChoices);
    CHECK(m.text == "The surface is <mask>.");
    auto full = contr::mask_answers(worked::kSurfaceExplanation, worked::kSurfaceChoices);
    CHECK(full.text.find("minimalist") == std::string::npos);
    CHECK(full.text.find("emptiness") != std::string::npos);
    CHECK(full.replacements == std::vector<std::size_t>{0, 0, 1, 1});
  }

  TEST_CASE("no mention leaves the explanation untouched") {
    auto m = contr::mask_answers("A cat sits by the screen.", {"dog", "horse"});
    CHECK(m.text == "A cat sits by the screen.");
    CHECK(m.replacements == std::vector<std::size_t>{0, 0});
  }

  TEST_CASE("longer answers are masked before their substrings") {
    auto m = contr::mask_answers("Ice cream with cream and creams, not creamy.", {"cream", "ice cream"});
    CHECK(m.text == "<mask> with <mask> and <mask>, not creamy.");
    CHECK(m.replacements == std::vector<std::size_t>{2, 1});
  }

  TEST_CASE("plural forms and case variants are masked") {
    auto m = contr::mask_answers("Two BOXES and a Box; boxer stays.", {"box"});
    CHECK(m.text == "Two <mask> and a <mask>; boxer stays.");
  }

  TEST_CASE("masking is sound and idempotent on a generated corpus") {
    for (const auto& c : corpus::masking_corpus(200, 5)) {
      auto once = contr::mask_answers(c.explanation, c.answers);
      for (const auto& a : c.answers) CHECK_MESSAGE(!corpus::answer_survives(once.text, a), c.explanation);
      CHECK(contr::mask_answers(once.text, c.answers).text == once.text);
    }
  }

  TEST_CASE("normalized scores follow the definition") {
    std::vector<double> p{0.8, 0.1, 0.05, 0.05};
    CHECK(contr::contrastiveness_score(p, 0) == doctest::Approx(0.8));
    std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
    CHECK(contr::contrastiveness_score(flat, 2) == 0.25);
    std::vector<double> q{0.2, 0.1, 0.1, 0.0};
    CHECK(contr::contrastiveness_score(q, 0) == doctest::Approx(0.5));
    std::vector<double> zero{0, 0, 0, 0};
    CHECK(contr::contrastiveness_score(zero, 1) == 0.25);
    std::vector<double> bad{0.2, 1.3};
    CHECK_THROWS_AS(contr::contrastiveness_score(bad, 0), InputError);
    CHECK_THROWS_AS(contr::contrastiveness_score(q, 4), InputError);
  }

  TEST_CASE("paraphrase prompt and cleanup") {
    auto r = contr::paraphrase_request("What is the man waiting for?", "taxi", "para");
    CHECK(r.user_prompt.find("Integrate the question and the answer into one sentence.") == 0);
    CHECK(r.user_prompt.ends_with("Question: What is the man waiting for?\nAnswer: taxi"));
    CHECK(contr::clean_hypothesis("The man is waiting for taxi.") == "The man is waiting for taxi.");
    CHECK(contr::clean_hypothesis("\"The man is waiting for taxi.\"") == "The man is waiting for taxi.");
    CHECK(contr::clean_hypothesis("The man is waiting for taxi. He is late.\n\nMore text") ==
          "The man is waiting for taxi.");
  }

  TEST_CASE("paraphrasing rejects empty inputs") {
    auto t = std::make_shared<fake::Transport>(
        fake::scripted({[](const std::string&, const std::string&) { return std::string("The man is waiting for taxi."); }}));
    Gateway gw(GatewayConfig::from_json(fake::judge_config()), t);
    CHECK(contr::paraphrase_to_declarative(gw, "What is the man waiting for?", "taxi", "vlm") ==
          "The man is waiting for taxi.");
    CHECK_THROWS_AS(contr::paraphrase_to_declarative(gw, "What is the man waiting for?", "", "vlm"), InputError);
  }

  TEST_CASE("full pipeline normalizes entailment over the candidates") {
    std::map<std::string, double> entail{{"butter", 0.001}, {"mayo", 0.001}, {"ice cream", 0.002}, {"icing", 0.996}};
    auto t = std::make_shared<fake::Transport>(fake::scripted(
        {[](const std::string&, const std::string& user) {
           auto a = user.substr(user.rfind("Answer: ") + 8);
           return "The white substance is " + a + ".";
         },
         [&](const std::string& premise, const std::string& h) {
           CHECK(premise.find("icing") == std::string::npos);
           for (const auto& [a, p] : entail) {
             if (h == "The white substance is " + a + ".") return p;
           }
           return 0.0;
         }}));
    Gateway gw(GatewayConfig::from_json(fake::judge_config()), t);
    auto r = contr::evaluate(gw, worked::kIcingExplanation, worked::kIcingQuestion, worked::kIcingChoices, "Icing",
                             {"vlm", "nli"});
    CHECK(r.predicted_index == 3);
    CHECK(r.per_answer.size() == 4);
    CHECK(r.score == doctest::Approx(0.996 / 1.0));
    CHECK(r.per_answer[1].answer == "mayo");
  }

  TEST_CASE("a prediction outside the choices joins the candidate set") {
    auto t = std::make_shared<fake::Transport>(fake::scripted(
        {[](const std::string&, const std::string& user) { return "It is " + user.substr(user.rfind(' ') + 1) + "."; },
         [](const std::string&, const std::string&) { return 0.5; }}));
    Gateway gw(GatewayConfig::from_json(fake::judge_config()), t);
    auto r = contr::evaluate(gw, "It is frosting.", "Q?", {"butter", "icing"}, "frosting", {"vlm", "nli"});
    CHECK(r.predicted_index == 2);
    CHECK(r.per_answer.size() == 3);
    CHECK(r.score == doctest::Approx(1.0 / 3));
  }
}
