#include "vlmq/visual_fidelity.hpp"

#include <cctype>

#include <spdlog/spdlog.h>

#include "vlmq/error.hpp"
#include "vlmq/parallel.hpp"
#include "vlmq/text.hpp"

namespace vlmq::vf {

namespace {

constexpr const char* kQuestionGenerationInstruction =
    "You will be shown a question about an image, along with an answer, and a rationale that "
    "explains the answer based on details from the image. Your task is to generate a list of "
    "yes/no questions that verify the details about the image that are **explicitly** mentioned "
    "in the rationale. Your questions should be phrased such that the answer to that question "
    "being yes means that the detail in the rationale is correct. Focus on creating questions "
    "that can be visually verified or refuted based on the details provided in the rationale. "
    "Ensure the questions are specific and directly pertain to aspects that are visually relevant "
    "and mentioned in the rationale. Avoid generating questions about elements that are not "
    "mentioned in the rationale, or the rationale explicitly states are not relevant or present. "
    "Also avoid generating multiple questions that check for the same visual detail.\n"
    "\n"
    "Here is one example:\n"
    "Input: \n"
    "Question: Why is the person wearing a helmet?\n"
    "Answer: For safety\n"
    "Rationale: The person is wearing a helmet because they are riding a bicycle on a busy city "
    "street. Helmets are commonly used to protect against head injuries in case of accidents, "
    "especially in areas with heavy traffic.\n"
    "\n"
    "Good Questions:\n"
    "1. Is the person wearing a helmet while riding a bicycle?\n"
    "Reason: This question is directly answerable by observing whether the person on the bicycle "
    "is wearing a helmet in the image. \n"
    "2. Is the street in the image busy with traffic?\n"
    "Reason: This question can be visually verified by looking at the amount of traffic on the "
    "street in the image.\n"
    "\n"
    "Bad Questions:\n"
    "1. Is the person wearing the helmet because they are concerned about head injuries?\n"
    "Reason: This question is not good because it assumes the person’s intentions or "
    "concerns, which cannot be visually verified from the image.\n"
    "2. Does wearing a helmet suggest that the person is highly safety-conscious?\n"
    "Reason: This question relies on inference and external knowledge about the person’s "
    "mindset, rather than on observable details from the image.\n"
    "3. Is there any indication that the person is wearing a helmet for safety reasons?\n"
    "Reason: This question verifies the answer to the original question, rather than verifying a "
    "detail about the image that's mentioned in the rationale.\n"
    "4. Is the person wearing a safety vest?\n"
    "Reason: This question is not good because it tries to verify details about the image that "
    "are not explicitly mentioned in the rationale.\n"
    "5. Is the person not wearing sunglasses?\n"
    "Reason: This question is not good because it asks for verification by absence and can only "
    "be answered with a \"no,\" which is not the preferred type of question.\n"
    "\n"
    "Respond with a list of (good) questions (without the reasons), starting from '1. '";

bool is_punct_or_space(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::ispunct(u) != 0 || std::isspace(u) != 0;
}

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::yes: return "yes";
    case Verdict::no: return "no";
    case Verdict::unparseable: return "unparseable";
  }
  return "unparseable";
}

Verdict parse_verdict_label(std::string_view s) {
  if (s == "yes") return Verdict::yes;
  if (s == "no") return Verdict::no;
  return Verdict::unparseable;
}

ChatRequest question_generation_request(std::string_view explanation, std::string_view question,
                                        std::string_view answer, const std::string& model_id) {
  ChatRequest r;
  r.model_id = model_id;
  r.user_prompt = std::string(kQuestionGenerationInstruction) + "\n\nInput: \nQuestion: " +
                  std::string(question) + "\nAnswer: " + std::string(answer) +
                  "\nRationale: " + std::string(explanation);
  return r;
}

ChatRequest verification_request(std::string_view question, std::string_view image_ref,
                                 const std::string& model_id) {
  ChatRequest r;
  r.model_id = model_id;
  r.user_prompt = "Question: " + std::string(question) +
                  ". Based on the information provided in the image, answer with 'yes' or 'no'. "
                  "Provide one-word answer only.";
  if (!image_ref.empty()) r.image_ref = std::string(image_ref);
  return r;
}

std::vector<VerificationQuestion> parse_questions(std::string_view response) {
  std::vector<VerificationQuestion> out;
  std::size_t expected = 1;
  for (const auto& raw : text::split_lines(response)) {
    auto line = text::trim(raw);
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i == 0 || i > 9 || i >= line.size() || (line[i] != '.' && line[i] != ')')) continue;
    auto n = std::stoul(line.substr(0, i));
    auto body = text::trim(std::string_view(line).substr(i + 1));
    if (n != expected || body.empty()) continue;
    out.push_back({expected, body, std::nullopt});
    ++expected;
  }
  return out;
}

Verdict normalize_verdict(std::string_view response) {
  auto s = text::to_lower(text::trim(response));
  std::size_t b = 0, e = s.size();
  while (b < e && is_punct_or_space(s[b])) ++b;
  while (e > b && is_punct_or_space(s[e - 1])) --e;
  auto core = std::string_view(s).substr(b, e - b);
  if (core == "yes") return Verdict::yes;
  if (core == "no") return Verdict::no;
  return Verdict::unparseable;
}

VisualFidelityResult visual_fidelity_score(const std::vector<Verdict>& verdicts) {
  VisualFidelityResult r;
  r.questions.reserve(verdicts.size());
  std::size_t yes = 0;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    r.questions.push_back({i + 1, {}, verdicts[i]});
    if (verdicts[i] == Verdict::yes) ++yes;
  }
  if (verdicts.empty()) return r;
  r.unscorable = false;
  r.score = static_cast<double>(yes) / static_cast<double>(verdicts.size());
  return r;
}

std::vector<VerificationQuestion> generate_verification_questions(Gateway& gateway,
                                                                  std::string_view explanation,
                                                                  std::string_view question,
                                                                  std::string_view answer,
                                                                  const std::string& model_id) {
  if (text::trim(explanation).empty()) throw InputError("explanation is empty");
  return parse_questions(
      gateway.complete(question_generation_request(explanation, question, answer, model_id)));
}

Verdict verify_question(Gateway& gateway, const VerificationQuestion& q, std::string_view image_ref,
                        const std::string& model_id) {
  auto reply = gateway.complete(verification_request(q.text, image_ref, model_id));
  auto verdict = normalize_verdict(reply);
  if (verdict == Verdict::unparseable) {
    spdlog::warn("verifier reply is neither yes nor no, counted as not verified: {:.80}", reply);
  }
  return verdict;
}

VisualFidelityResult evaluate(Gateway& gateway, std::string_view explanation,
                              std::string_view question, std::string_view answer,
                              std::string_view image_ref, const Judges& judges) {
  auto questions =
      generate_verification_questions(gateway, explanation, question, answer, judges.question_generator);
  auto verdicts = parallel_map(questions.size(), gateway.config().max_in_flight, [&](std::size_t i) {
    return verify_question(gateway, questions[i], image_ref, judges.verifier);
  });
  auto result = visual_fidelity_score(verdicts);
  for (std::size_t i = 0; i < questions.size(); ++i) result.questions[i].text = questions[i].text;
  return result;
}

}  // namespace vlmq::vf
