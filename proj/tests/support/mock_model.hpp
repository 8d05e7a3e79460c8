#pragma once

// A stand-in for the remote judges: answers every prompt the toolkit sends
// with a deterministic reply derived from the prompt text.

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>

#include <httplib.h>

#include "vlmq/digest.hpp"
#include "vlmq/jsonl.hpp"
#include "vlmq/text.hpp"

namespace mock {

using vlmq::json;

inline std::uint64_t h(std::string_view s) { return std::stoull(vlmq::sha256_hex(s).substr(0, 12), nullptr, 16); }

inline std::size_t pick(std::string_view question, std::size_t n) { return h(question) % n; }

inline std::string after(const std::string& s, const std::string& marker, char stop = '\n') {
  auto p = s.find(marker);
  if (p == std::string::npos) return "";
  p += marker.size();
  auto e = s.find(stop, p);
  return s.substr(p, e == std::string::npos ? std::string::npos : e - p);
}

inline std::vector<std::string> split_choices(std::string list) {
  std::vector<std::string> out;
  std::size_t p = 0;
  while (true) {
    auto e = list.find(", ", p);
    out.push_back(list.substr(p, e == std::string::npos ? std::string::npos : e - p));
    if (e == std::string::npos) break;
    p = e + 2;
  }
  return out;
}

inline std::string chat_reply(const std::string& system, const std::string& user) {
  if (system.find("single word or phrase from the list of choices") != std::string::npos) {
    auto question = after(user, "Question: ", '.');
    auto choices = after(user, "Choices: ");
    if (!choices.empty() && choices.back() == '.') choices.pop_back();
    auto list = split_choices(choices);
    return list[pick(question, list.size())] + "\n";
  }
  if (system.find("Unanswerable") != std::string::npos) {
    static const char* kAnswers[] = {"pink", "red", "blue", "unanswerable"};
    return kAnswers[pick(user, 4)];
  }
  if (system.find("explain the reasoning") != std::string::npos) {
    auto answer = after(user, "The answer is ");
    if (!answer.empty() && answer.back() == '.') answer.pop_back();
    return "The image shows a " + answer + " on the table next to a bowl. The " + answer +
           " looks fresh and there is a window behind it. So the answer is " + answer + ".";
  }
  if (user.find("Respond with a list of (good) questions") != std::string::npos) {
    auto rationale = after(user, "Rationale: ", '\0');
    auto k = h(rationale) % 4;
    std::string out = k ? "Here are the questions:\n" : "I cannot find visual details.";
    for (std::size_t i = 1; i <= k; ++i) {
      out += std::to_string(i) + ". Is detail " + std::to_string(i) + " of the scene visible in the image?\n";
    }
    return out;
  }
  if (user.find("answer with 'yes' or 'no'") != std::string::npos) {
    return h(user) % 3 ? "Yes." : "No";
  }
  if (user.find("Integrate the question and the answer") != std::string::npos) {
    return "The answer to the question is " + after(user, "\nAnswer: ") + ".";
  }
  if (user.find("Rewrite the yes/no question") != std::string::npos) {
    return "The scene shows " + after(user, "Question: Is ", '?') + ".";
  }
  if (user.find("Hypothesis:") != std::string::npos && user.find("Rationale:") != std::string::npos) {
    return h(user) % 2 ? "[\"There is a window behind the object.\"]" : "[]";
  }
  return "unrecognized prompt";
}

inline double probability(const std::string& body) { return static_cast<double>(h(body) % 1001) / 1000.0; }

inline json chat_completion(const std::string& content) {
  return {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})},
          {"usage", {{"total_tokens", 10}}}};
}

inline std::string chat_body_reply(const std::string& body) {
  auto j = json::parse(body);
  std::string system, user;
  for (const auto& m : j.at("messages")) {
    std::string text;
    if (m["content"].is_string()) {
      text = m["content"].get<std::string>();
    } else {
      for (const auto& part : m["content"]) {
        if (part.value("type", "") == "text") text += part["text"].get<std::string>();
      }
    }
    (m["role"] == "system" ? system : user) = text;
  }
  return chat_completion(chat_reply(system, user)).dump();
}

// Serves /v1/chat/completions, /nli and /plausibility on a free local port.
class Server {
 public:
  Server() {
    srv_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      if (!admit(res)) return;
      res.set_content(chat_body_reply(req.body), "application/json");
    });
    auto prob = [this](const httplib::Request& req, httplib::Response& res) {
      if (!admit(res)) return;
      res.set_content(json{{"probability", probability(req.body)}}.dump(), "application/json");
    };
    srv_.Post("/nli", prob);
    srv_.Post("/plausibility", prob);
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~Server() {
    srv_.stop();
    thread_.join();
  }

  std::string base() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t requests() const { return requests_.load(); }
  void fail_next(int n) { failures_left_ = n; }

 private:
  bool admit(httplib::Response& res) {
    requests_.fetch_add(1);
    if (failures_left_.load() > 0 && failures_left_.fetch_sub(1) > 0) {
      res.status = 503;
      res.set_content("overloaded", "text/plain");
      return false;
    }
    return true;
  }

  httplib::Server srv_;
  int port_ = -1;
  std::thread thread_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<int> failures_left_{0};
};

// Gateway config with every judge role pointed at the mock server.
inline json gateway_config(const std::string& base, const std::string& cache_dir) {
  json backends = {
      {"vlm", {{"kind", "vision"}, {"endpoint", base + "/v1"}}},
      {"nli", {{"kind", "nli"}, {"endpoint", base + "/nli"}}},
      {"vera", {{"kind", "plausibility"}, {"endpoint", base + "/plausibility"}}},
  };
  json j = {{"max_in_flight", 4},
            {"retry", {{"max_attempts", 3}, {"initial_backoff_ms", 5}, {"multiplier", 2.0}}},
            {"backends", backends},
            {"judges",
             {{"generator", "vlm"},
              {"question_generator", "vlm"},
              {"verifier", "vlm"},
              {"paraphraser", "vlm"},
              {"informativeness", "vlm"},
              {"describer", "vlm"},
              {"nli", "nli"},
              {"plausibility", "vera"}}}};
  if (!cache_dir.empty()) j["cache_dir"] = cache_dir;
  return j;
}

// Same roles served from recorded entries only.
inline json replay_config(const std::string& fixtures_dir) {
  json backends = json::object();
  for (const char* id : {"vlm", "nli", "vera"}) backends[id] = {{"kind", "replay"}, {"fixtures", fixtures_dir}};
  auto j = gateway_config("", "");
  j["backends"] = backends;
  return j;
}

}  // namespace mock
