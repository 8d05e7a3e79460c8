#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vlmq/gateway.hpp"

namespace vlmq::contr {

inline constexpr std::string_view kDefaultMaskToken = "<mask>";

struct MaskedPremise {
  std::string text;
  std::string mask_token;
  std::vector<std::size_t> replacements;  // aligned with the answers passed in
};

// Replaces every case-insensitive whole-token mention of each answer (plus
// "s"/"es" plural forms) with the mask token. Longer answers are masked first
// so nested answers ("ice cream" / "cream") never leave fragments. Existing
// mask tokens are never re-matched, which makes the operation idempotent.
MaskedPremise mask_answers(std::string_view explanation, const std::vector<std::string>& answers,
                           std::string_view mask_token = kDefaultMaskToken);

ChatRequest paraphrase_request(std::string_view question, std::string_view answer,
                               const std::string& model_id);

// Trims the judge response to one declarative sentence.
std::string clean_hypothesis(std::string_view response);

std::string paraphrase_to_declarative(Gateway& gateway, std::string_view question,
                                      std::string_view answer, const std::string& model_id);

// p[predicted] / sum(p); uniform 1/|A| when the sum is zero.
double contrastiveness_score(std::span<const double> entailment, std::size_t predicted_index);

struct AnswerEvidence {
  std::string answer;
  std::string hypothesis;
  double entailment = 0;
};

struct ContrastivenessResult {
  std::vector<AnswerEvidence> per_answer;
  std::string premise;
  std::size_t predicted_index = 0;
  double score = 0;
};

struct Judges {
  std::string paraphraser;
  std::string nli;
};

// Index of `predicted` among `answers` under answer normalization, or
// answers.size() when absent.
std::size_t find_answer(const std::vector<std::string>& answers, std::string_view predicted);

// Full pipeline over the candidate set. A prediction outside the candidate
// set is appended as an extra candidate.
ContrastivenessResult evaluate(Gateway& gateway, std::string_view explanation,
                               std::string_view question, const std::vector<std::string>& answers,
                               std::string_view predicted, const Judges& judges);

}  // namespace vlmq::contr
