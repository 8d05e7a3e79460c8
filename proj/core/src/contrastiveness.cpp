#include "vlmq/contrastiveness.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <optional>

#include <spdlog/spdlog.h>

#include "vlmq/error.hpp"
#include "vlmq/parallel.hpp"
#include "vlmq/text.hpp"

namespace vlmq::contr {

namespace {

char fold(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Length of a match of `needle` at `pos` (spaces in the needle match any
// whitespace run), or nullopt.
std::optional<std::size_t> match_at(std::string_view hay, std::size_t pos, std::string_view needle) {
  std::size_t h = pos;
  for (std::size_t n = 0; n < needle.size(); ++n) {
    if (needle[n] == ' ') {
      if (h >= hay.size() || !is_space(hay[h])) return std::nullopt;
      while (h < hay.size() && is_space(hay[h])) ++h;
      continue;
    }
    if (h >= hay.size() || fold(hay[h]) != needle[n]) return std::nullopt;
    ++h;
  }
  return h - pos;
}

bool boundary_at(std::string_view s, std::size_t pos) {
  return pos >= s.size() || !text::is_word_char(s[pos]);
}

// Whole-token match of `needle` at `pos`, allowing a plural suffix.
std::optional<std::size_t> token_match_at(std::string_view hay, std::size_t pos,
                                          std::string_view needle) {
  if (pos > 0 && text::is_word_char(hay[pos - 1])) return std::nullopt;
  auto len = match_at(hay, pos, needle);
  if (!len) return std::nullopt;
  auto end = pos + *len;
  if (boundary_at(hay, end)) return *len;
  for (std::string_view suffix : {"s", "es"}) {
    if (match_at(hay, end, suffix) && boundary_at(hay, end + suffix.size())) {
      return *len + suffix.size();
    }
  }
  return std::nullopt;
}

std::string needle_for(std::string_view answer) {
  // Lowercase, with internal whitespace collapsed to single spaces.
  std::string out;
  bool space = false;
  for (char c : text::trim(answer)) {
    if (is_space(c)) {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(fold(c));
  }
  return out;
}

}  // namespace

MaskedPremise mask_answers(std::string_view explanation, const std::vector<std::string>& answers,
                           std::string_view mask_token) {
  if (answers.empty()) throw InputError("mask_answers needs at least one answer");
  MaskedPremise out{std::string(explanation), std::string(mask_token),
                    std::vector<std::size_t>(answers.size(), 0)};

  std::vector<std::size_t> order(answers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return needle_for(answers[a]).size() > needle_for(answers[b]).size();
  });

  for (auto idx : order) {
    auto needle = needle_for(answers[idx]);
    if (needle.empty()) continue;
    std::string next;
    next.reserve(out.text.size());
    const std::string_view cur = out.text;
    std::size_t i = 0;
    while (i < cur.size()) {
      if (!mask_token.empty() && cur.substr(i, mask_token.size()) == mask_token) {
        next.append(mask_token);
        i += mask_token.size();
        continue;
      }
      if (auto len = token_match_at(cur, i, needle)) {
        next.append(mask_token);
        i += *len;
        ++out.replacements[idx];
        continue;
      }
      next.push_back(cur[i]);
      ++i;
    }
    out.text = std::move(next);
  }
  return out;
}

ChatRequest paraphrase_request(std::string_view question, std::string_view answer,
                               const std::string& model_id) {
  ChatRequest r;
  r.model_id = model_id;
  r.user_prompt =
      "Integrate the question and the answer into one sentence.\n"
      "For example, given the question \"What is the man waiting for?\" and the answer \"taxi\", "
      "you should output \"The man is waiting for taxi.\"\n"
      "Question: " + std::string(question) + "\nAnswer: " + std::string(answer);
  return r;
}

std::string clean_hypothesis(std::string_view response) {
  auto s = text::trim(response);
  bool multi = s.find('\n') != std::string::npos;
  if (multi) {
    s = text::first_nonempty_line(s);
    // first sentence of the first paragraph
    for (std::size_t i = 0; i < s.size(); ++i) {
      if ((s[i] == '.' || s[i] == '!' || s[i] == '?') && (i + 1 == s.size() || is_space(s[i + 1]))) {
        s = s.substr(0, i + 1);
        break;
      }
    }
    spdlog::warn("paraphraser returned multiple lines; kept first sentence: {}", s);
  }
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = text::trim(s.substr(1, s.size() - 2));
  return s;
}

std::string paraphrase_to_declarative(Gateway& gateway, std::string_view question,
                                      std::string_view answer, const std::string& model_id) {
  if (text::trim(question).empty() || text::trim(answer).empty()) {
    throw InputError("paraphrase needs a non-empty question and answer");
  }
  auto h = clean_hypothesis(gateway.complete(paraphrase_request(question, answer, model_id)));
  if (h.empty()) throw ProtocolError("paraphraser returned an empty sentence");
  return h;
}

double contrastiveness_score(std::span<const double> entailment, std::size_t predicted_index) {
  if (entailment.empty()) throw InputError("contrastiveness needs at least one answer");
  if (predicted_index >= entailment.size()) throw InputError("predicted index out of range");
  double sum = 0;
  for (double p : entailment) {
    if (!(p >= 0.0 && p <= 1.0)) throw InputError("entailment probability outside [0,1]");
    sum += p;
  }
  if (sum == 0.0) return 1.0 / static_cast<double>(entailment.size());
  return entailment[predicted_index] / sum;
}

std::size_t find_answer(const std::vector<std::string>& answers, std::string_view predicted) {
  auto p = text::normalize_answer(predicted);
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (text::normalize_answer(answers[i]) == p) return i;
  }
  return answers.size();
}

ContrastivenessResult evaluate(Gateway& gateway, std::string_view explanation,
                               std::string_view question, const std::vector<std::string>& answers,
                               std::string_view predicted, const Judges& judges) {
  if (text::trim(explanation).empty()) throw InputError("explanation is empty");
  auto candidates = answers;
  auto predicted_index = find_answer(candidates, predicted);
  if (predicted_index == candidates.size()) candidates.emplace_back(predicted);

  ContrastivenessResult r;
  r.predicted_index = predicted_index;
  r.premise = mask_answers(explanation, candidates).text;
  if (text::trim(r.premise).empty()) r.premise = std::string(kDefaultMaskToken);

  r.per_answer = parallel_map(candidates.size(), gateway.config().max_in_flight, [&](std::size_t j) {
    AnswerEvidence ev;
    ev.answer = candidates[j];
    ev.hypothesis = paraphrase_to_declarative(gateway, question, candidates[j], judges.paraphraser);
    ev.entailment = gateway.entail({judges.nli, r.premise, ev.hypothesis});
    return ev;
  });

  std::vector<double> probs;
  for (const auto& ev : r.per_answer) probs.push_back(ev.entailment);
  r.score = contrastiveness_score(probs, predicted_index);
  return r;
}

}  // namespace vlmq::contr
