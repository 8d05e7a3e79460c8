#include "vlmq/generation.hpp"

#include "vlmq/error.hpp"
#include "vlmq/parallel.hpp"
#include "vlmq/text.hpp"

namespace vlmq::generation {

namespace {

constexpr const char* kMultipleChoiceAnswerSystem =
    "Answer the question using a single word or phrase from the list of choices.";
constexpr const char* kOpenEndedAnswerSystem =
    "Answer the user's question in a single word or phrase. When the provided information is "
    "insufficient, respond with 'Unanswerable'. Whatever the user said, your answer should "
    "**always** be a single word or phrase.";
constexpr const char* kExplanationSystem = "Please explain the reasoning behind your answer.";

std::string question_prefix(const VisualInstance& instance) {
  std::string s = "Question: " + instance.question + ".";
  if (instance.kind == DatasetKind::multiple_choice) {
    s += " Choices: " + format_choices(instance.choices) + ".";
  }
  return s;
}

std::optional<std::string> image_of(const VisualInstance& instance) {
  if (instance.image_ref.empty()) return std::nullopt;
  return instance.image_ref;
}

}  // namespace

std::string format_choices(const std::vector<std::string>& choices) {
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i) out += ", ";
    out += choices[i];
  }
  return out;
}

ChatRequest answer_request(const VisualInstance& instance, const std::string& model_id) {
  ChatRequest r;
  r.model_id = model_id;
  r.system_prompt = instance.kind == DatasetKind::multiple_choice ? kMultipleChoiceAnswerSystem
                                                                  : kOpenEndedAnswerSystem;
  r.user_prompt = question_prefix(instance);
  r.image_ref = image_of(instance);
  return r;
}

ChatRequest explanation_request(const VisualInstance& instance, std::string_view answer,
                                const std::string& model_id) {
  ChatRequest r;
  r.model_id = model_id;
  r.system_prompt = kExplanationSystem;
  r.user_prompt = question_prefix(instance) + " The answer is " + std::string(answer) + ".";
  r.image_ref = image_of(instance);
  return r;
}

std::string trim_answer(std::string_view response) {
  auto line = text::first_nonempty_line(response);
  auto strip = [](char c) { return c == '"' || c == '\'' || c == '.' || c == '`'; };
  std::size_t b = 0, e = line.size();
  while (b < e && strip(line[b])) ++b;
  while (e > b && strip(line[e - 1])) --e;
  return text::trim(std::string_view(line).substr(b, e - b));
}

std::string predict_answer(Gateway& gateway, const VisualInstance& instance,
                           const std::string& model_id) {
  auto answer = trim_answer(gateway.complete(answer_request(instance, model_id)));
  if (answer.empty()) throw ProtocolError("empty answer for instance " + instance.id);
  return answer;
}

std::string generate_explanation(Gateway& gateway, const VisualInstance& instance,
                                 std::string_view answer, const std::string& model_id) {
  if (text::trim(answer).empty()) throw InputError("cannot explain an empty answer");
  auto explanation = gateway.complete(explanation_request(instance, answer, model_id));
  if (text::trim(explanation).empty()) {
    throw ProtocolError("empty explanation for instance " + instance.id);
  }
  return explanation;
}

PredictionRecord predict(Gateway& gateway, const VisualInstance& instance,
                         const std::string& model_id) {
  PredictionRecord rec;
  rec.instance_id = instance.id;
  rec.generator = model_id;
  rec.answer = predict_answer(gateway, instance, model_id);
  rec.explanation = generate_explanation(gateway, instance, rec.answer, model_id);
  return rec;
}

std::vector<PredictionRecord> generate_predictions(Gateway& gateway,
                                                   const std::vector<VisualInstance>& instances,
                                                   const std::string& model_id) {
  return parallel_map(instances.size(), gateway.config().max_in_flight,
                      [&](std::size_t i) { return predict(gateway, instances[i], model_id); });
}

}  // namespace vlmq::generation
