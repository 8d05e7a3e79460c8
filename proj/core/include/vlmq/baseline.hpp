#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vlmq/gateway.hpp"

namespace vlmq::baseline {

// Text-only comparison qualities.

struct SimulatabilityJudges {
  std::string paraphraser;
  std::string nli;
};

struct SimulatabilityResult {
  std::string premise;     // explanation with the predicted answer masked
  std::string hypothesis;  // declarative restatement of (question, answer)
  double score = 0;
};

SimulatabilityResult simulatability(Gateway& gateway, std::string_view explanation,
                                    std::string_view question, std::string_view answer,
                                    const SimulatabilityJudges& judges);

ChatRequest informativeness_request(std::string_view rationale, std::string_view hypothesis,
                                    const std::string& model_id);

// Parses a bracketed list of quoted strings, optionally prefixed by "Output:".
// Throws ParseError when no list can be recovered.
std::vector<std::string> parse_string_list(std::string_view response);

struct InformativenessResult {
  std::vector<std::string> pieces;
  int score = 0;  // 1 when any piece survives
};

InformativenessResult informativeness(Gateway& gateway, std::string_view explanation,
                                      std::string_view hypothesis, const std::string& model_id);

double plausibility(Gateway& gateway, std::string_view explanation, const std::string& model_id);

}  // namespace vlmq::baseline
