#include <doctest.h>

#include "fake_transport.hpp"
#include "worked_examples.hpp"
#include "vlmq/error.hpp"
#include "vlmq/random.hpp"
#include "vlmq/visual_fidelity.hpp"

using namespace vlmq;
using vf::Verdict;

TEST_SUITE("visual_fidelity") {
  TEST_CASE("numbered lines become questions") {
    auto qs = vf::parse_questions(
        "1. Is the person wearing a helmet while riding a bicycle?\n2. Is the street in the image busy with traffic?");
    REQUIRE(qs.size() == 2);
    CHECK(qs[0].index == 1);
    CHECK(qs[0].text == "Is the person wearing a helmet while riding a bicycle?");
    CHECK(qs[1].text == "Is the street in the image busy with traffic?");
    CHECK_FALSE(qs[0].verdict.has_value());
  }

  TEST_CASE("prose around the list is ignored") {
    auto qs = vf::parse_questions(
        "Sure, here are the questions.\nThey check the rationale.\n1. Is there a cat?\n2. Is the cat black?\n"
        "3. Is there a computer screen?\nHope this helps.");
    CHECK(qs.size() == 3);
    CHECK(vf::parse_questions("Is there a cat? Is it black?").empty());
    CHECK(vf::parse_questions("").empty());
  }

  TEST_CASE("verdicts normalize to yes, no or unparseable") {
    CHECK(vf::normalize_verdict("Yes.") == Verdict::yes);
    CHECK(vf::normalize_verdict("no") == Verdict::no);
    CHECK(vf::normalize_verdict("  NO!\n") == Verdict::no);
    CHECK(vf::normalize_verdict("It appears so") == Verdict::unparseable);
    CHECK(vf::normalize_verdict("yes, it is") == Verdict::unparseable);
    CHECK(vf::normalize_verdict("") == Verdict::unparseable);
  }

  TEST_CASE("score is the fraction of yes verdicts") {
    auto all_yes = vf::visual_fidelity_score({Verdict::yes, Verdict::yes, Verdict::yes, Verdict::yes});
    CHECK(*all_yes.score == 1.0);
    CHECK(*vf::visual_fidelity_score({Verdict::yes, Verdict::no}).score == 0.5);
    CHECK(*vf::visual_fidelity_score({Verdict::yes, Verdict::unparseable, Verdict::no, Verdict::yes}).score == 0.5);
    auto none = vf::visual_fidelity_score({});
    CHECK(none.unscorable);
    CHECK_FALSE(none.score.has_value());
  }

  TEST_CASE("score properties hold on random verdict vectors") {
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
      std::vector<Verdict> v(1 + rng.index(32));
      for (auto& x : v) x = static_cast<Verdict>(rng.index(3));
      auto s = *vf::visual_fidelity_score(v).score;
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
      auto shuffled = v;
      rng.shuffle(shuffled);
      CHECK(*vf::visual_fidelity_score(shuffled).score == s);
      auto j = rng.index(v.size());
      if (v[j] == Verdict::no) {
        auto flipped = v;
        flipped[j] = Verdict::yes;
        CHECK(*vf::visual_fidelity_score(flipped).score >= s);
      }
    }
  }

  TEST_CASE("prompts carry the instruction, exemplars and the task") {
    auto r = vf::question_generation_request(worked::kIcingExplanation, worked::kIcingQuestion, "icing", "gen");
    CHECK(r.user_prompt.find("generate a list of yes/no questions") != std::string::npos);
    CHECK(r.user_prompt.find("Good Questions:") != std::string::npos);
    CHECK(r.user_prompt.find("Bad Questions:") != std::string::npos);
    CHECK(r.user_prompt.ends_with("Rationale: " + worked::kIcingExplanation));
    CHECK_FALSE(r.image_ref.has_value());
    auto v = vf::verification_request("Are there three cupcakes?", "img.png", "eye");
    CHECK(v.user_prompt ==
          "Question: Are there three cupcakes?. Based on the information provided in the image, answer with 'yes' "
          "or 'no'. Provide one-word answer only.");
    CHECK(v.image_ref == "img.png");
  }

  TEST_CASE("full pipeline on the icing explanation verifies every question") {
    auto t = std::make_shared<fake::Transport>(fake::scripted({[](const std::string&, const std::string& user) {
      if (user.find("yes/no questions") != std::string::npos) {
        return std::string(
            "1. Are there cupcakes in the image?\n2. Is there a white substance on top of the cupcakes?\n"
            "3. Are there three cupcakes?\n4. Do the cupcakes have icing on top?");
      }
      return std::string("Yes.");
    }}));
    Gateway gw(GatewayConfig::from_json(fake::judge_config()), t);
    auto r = vf::evaluate(gw, worked::kIcingExplanation, worked::kIcingQuestion, "icing", "https://img.test/c.jpg",
                          {"vlm", "vlm"});
    CHECK(r.questions.size() == 4);
    CHECK(*r.score == 1.0);
    CHECK(t->calls() == 5);
    for (const auto& q : r.questions) CHECK(q.verdict == Verdict::yes);
  }

  TEST_CASE("no generated questions leaves the explanation unscorable") {
    auto t = std::make_shared<fake::Transport>(
        fake::scripted({[](const std::string&, const std::string&) { return std::string("No visual details."); }}));
    Gateway gw(GatewayConfig::from_json(fake::judge_config()), t);
    auto r = vf::evaluate(gw, "It is icing.", "Q?", "icing", "https://img.test/c.jpg", {"vlm", "vlm"});
    CHECK(r.unscorable);
    CHECK(t->calls() == 1);
  }
}
