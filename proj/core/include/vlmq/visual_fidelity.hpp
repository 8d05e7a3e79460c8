#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vlmq/gateway.hpp"

namespace vlmq::vf {

enum class Verdict { yes, no, unparseable };

std::string to_string(Verdict v);
Verdict parse_verdict_label(std::string_view s);  // inverse of to_string

struct VerificationQuestion {
  std::size_t index = 0;  // 1-based
  std::string text;
  std::optional<Verdict> verdict;
};

// `score` is (#yes)/K and is absent exactly when no questions were generated.
struct VisualFidelityResult {
  std::vector<VerificationQuestion> questions;
  std::optional<double> score;
  bool unscorable = true;
};

ChatRequest question_generation_request(std::string_view explanation, std::string_view question,
                                        std::string_view answer, const std::string& model_id);
ChatRequest verification_request(std::string_view question, std::string_view image_ref,
                                 const std::string& model_id);

// Keeps lines of the form "N. text" (or "N) text") whose N continues the
// sequence 1, 2, 3, ...; everything else is ignored.
std::vector<VerificationQuestion> parse_questions(std::string_view response);

// Lowercases, trims, strips surrounding punctuation; only exact "yes"/"no" map.
Verdict normalize_verdict(std::string_view response);

// Unparseable verdicts count as not verified but stay in the denominator.
VisualFidelityResult visual_fidelity_score(const std::vector<Verdict>& verdicts);

std::vector<VerificationQuestion> generate_verification_questions(Gateway& gateway,
                                                                  std::string_view explanation,
                                                                  std::string_view question,
                                                                  std::string_view answer,
                                                                  const std::string& model_id);

Verdict verify_question(Gateway& gateway, const VerificationQuestion& q, std::string_view image_ref,
                        const std::string& model_id);

struct Judges {
  std::string question_generator;
  std::string verifier;
};

// Full pipeline: one generation call, then one verification call per question.
VisualFidelityResult evaluate(Gateway& gateway, std::string_view explanation,
                              std::string_view question, std::string_view answer,
                              std::string_view image_ref, const Judges& judges);

}  // namespace vlmq::vf
