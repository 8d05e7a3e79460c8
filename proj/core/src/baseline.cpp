#include "vlmq/baseline.hpp"

#include <cctype>

#include "vlmq/contrastiveness.hpp"
#include "vlmq/error.hpp"
#include "vlmq/text.hpp"

namespace vlmq::baseline {

namespace {

constexpr const char* kInformativenessInstruction =
    "Please break the following rationale into distinct pieces, and keep only the ones that are "
    "not semantically equivalent to the hypothesis. Output the final answer in a Python list "
    "format.\n"
    "\n"
    "Example:\n"
    "Hypothesis: The man by the bags is waiting for a delivery.\n"
    "Rationale: The man by the bags is waiting for a delivery, as indicated by the presence of "
    "the suitcases and the fact that he is standing on the side of the road. The other options, "
    "such as a skateboarder, train, or cab, do not seem to be relevant to the situation depicted "
    "in the image.\n"
    "Output: [\"Suitcases are present in the image.\", \"The man is standing on the side of the "
    "road.\", \"The other options, such as a skateboarder, train, or cab, do not seem to be "
    "relevant to the situation depicted in the image.\"]\n"
    "\n"
    "Task:\n";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

SimulatabilityResult simulatability(Gateway& gateway, std::string_view explanation,
                                    std::string_view question, std::string_view answer,
                                    const SimulatabilityJudges& judges) {
  if (text::trim(explanation).empty()) throw InputError("explanation is empty");
  if (text::trim(question).empty() || text::trim(answer).empty()) {
    throw InputError("question and answer must be non-empty");
  }
  SimulatabilityResult r;
  r.premise = contr::mask_answers(explanation, {std::string(answer)}).text;
  r.hypothesis = contr::paraphrase_to_declarative(gateway, question, answer, judges.paraphraser);
  r.score = gateway.entail({judges.nli, r.premise, r.hypothesis});
  return r;
}

ChatRequest informativeness_request(std::string_view rationale, std::string_view hypothesis,
                                    const std::string& model_id) {
  ChatRequest r;
  r.model_id = model_id;
  r.user_prompt = std::string(kInformativenessInstruction) + "Hypothesis: " +
                  std::string(hypothesis) + "\nRationale: " + std::string(rationale);
  return r;
}

std::vector<std::string> parse_string_list(std::string_view response) {
  auto s = text::trim(response);
  auto open = s.find('[');
  if (open == std::string::npos) throw ParseError("no list found in informativeness response");
  std::vector<std::string> items;
  std::size_t i = open + 1;
  auto skip_ws = [&] {
    while (i < s.size() && is_space(s[i])) ++i;
  };
  for (;;) {
    skip_ws();
    if (i >= s.size()) throw ParseError("unterminated list in informativeness response");
    if (s[i] == ']') break;
    char quote = s[i];
    if (quote != '"' && quote != '\'') throw ParseError("list item is not a quoted string");
    ++i;
    std::string item;
    bool closed = false;
    while (i < s.size()) {
      char c = s[i++];
      if (c == '\\' && i < s.size()) {
        char e = s[i++];
        item.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
      } else if (c == quote) {
        closed = true;
        break;
      } else {
        item.push_back(c);
      }
    }
    if (!closed) throw ParseError("unterminated string in informativeness response");
    items.push_back(std::move(item));
    skip_ws();
    if (i < s.size() && s[i] == ',') {
      ++i;
      continue;
    }
    if (i < s.size() && s[i] == ']') break;
    throw ParseError("expected ',' or ']' in informativeness response");
  }
  return items;
}

InformativenessResult informativeness(Gateway& gateway, std::string_view explanation,
                                      std::string_view hypothesis, const std::string& model_id) {
  if (text::trim(explanation).empty() || text::trim(hypothesis).empty()) {
    throw InputError("informativeness needs a non-empty rationale and hypothesis");
  }
  InformativenessResult r;
  r.pieces = parse_string_list(gateway.complete(informativeness_request(explanation, hypothesis, model_id)));
  r.score = r.pieces.empty() ? 0 : 1;
  return r;
}

double plausibility(Gateway& gateway, std::string_view explanation, const std::string& model_id) {
  return gateway.plausibility({model_id, std::string(explanation)});
}

}  // namespace vlmq::baseline
