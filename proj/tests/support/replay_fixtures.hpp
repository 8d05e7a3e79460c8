#pragma once

#include <cstdio>
#include <filesystem>

#include "vlmq/gateway.hpp"

namespace fixtures {

inline std::string probability_body(double p) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "{\"probability\": %.17g}", p);
  return buf;
}

inline void put_chat(const std::filesystem::path& dir, const vlmq::ChatRequest& r, const std::string& reply) {
  vlmq::write_cache_entry(dir, {vlmq::request_key(r.model_id, "chat", r.payload()), reply, "fixture"});
}

inline void put_entail(const std::filesystem::path& dir, const vlmq::EntailmentRequest& r, double p) {
  vlmq::write_cache_entry(dir, {vlmq::request_key(r.model_id, "entail", r.payload()), probability_body(p), "fixture"});
}

inline void put_plausibility(const std::filesystem::path& dir, const vlmq::PlausibilityRequest& r, double p) {
  vlmq::write_cache_entry(dir,
                          {vlmq::request_key(r.model_id, "plausibility", r.payload()), probability_body(p), "fixture"});
}

// Replay config with backends "judge", "nli" and "vera" reading from dir.
inline vlmq::json replay_config(const std::filesystem::path& dir) {
  vlmq::json b = {{"kind", "replay"}, {"fixtures", dir.string()}};
  return {{"backends", {{"judge", b}, {"nli", b}, {"vera", b}}},
          {"judges",
           {{"generator", "judge"}, {"question_generator", "judge"}, {"verifier", "judge"}, {"paraphraser", "judge"},
            {"informativeness", "judge"}, {"nli", "nli"}, {"plausibility", "vera"}}}};
}

}  // namespace fixtures
