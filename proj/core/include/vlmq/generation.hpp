#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vlmq/dataset.hpp"
#include "vlmq/gateway.hpp"

namespace vlmq::generation {

// Two-step post-hoc justification: the answer is requested first, then the
// explanation is requested with that answer embedded in the prompt.

std::string format_choices(const std::vector<std::string>& choices);

ChatRequest answer_request(const VisualInstance& instance, const std::string& model_id);
ChatRequest explanation_request(const VisualInstance& instance, std::string_view answer,
                                const std::string& model_id);

// First non-empty line with surrounding quotes and periods removed.
std::string trim_answer(std::string_view response);

std::string predict_answer(Gateway& gateway, const VisualInstance& instance,
                           const std::string& model_id);
std::string generate_explanation(Gateway& gateway, const VisualInstance& instance,
                                 std::string_view answer, const std::string& model_id);

PredictionRecord predict(Gateway& gateway, const VisualInstance& instance,
                         const std::string& model_id);

// Fans out over instances (bounded by the gateway's in-flight limit); output
// order matches input order.
std::vector<PredictionRecord> generate_predictions(Gateway& gateway,
                                                   const std::vector<VisualInstance>& instances,
                                                   const std::string& model_id);

}  // namespace vlmq::generation
