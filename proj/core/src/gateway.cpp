#include "vlmq/gateway.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <thread>

#include "vlmq/digest.hpp"
#include "vlmq/error.hpp"
#include "vlmq/text.hpp"

namespace vlmq {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kOpChat = "chat";
constexpr std::string_view kOpEntail = "entail";
constexpr std::string_view kOpPlausibility = "plausibility";

std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

bool is_remote_ref(std::string_view ref) {
  return ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:");
}

std::string image_url(const std::string& ref) {
  if (is_remote_ref(ref)) return ref;
  auto ext = text::to_lower(fs::path(ref).extension().string());
  std::string mime = "image/jpeg";
  if (ext == ".png") mime = "image/png";
  else if (ext == ".gif") mime = "image/gif";
  else if (ext == ".webp") mime = "image/webp";
  return "data:" + mime + ";base64," + base64_encode(read_text_file(ref));
}

std::string chat_url(const std::string& endpoint) {
  if (endpoint.ends_with("/chat/completions")) return endpoint;
  if (!endpoint.empty() && endpoint.back() == '/') return endpoint + "chat/completions";
  return endpoint + "/chat/completions";
}

}  // namespace

json ChatRequest::payload() const {
  json j = {{"user_prompt", user_prompt},
            {"max_tokens", max_tokens},
            {"temperature", temperature}};
  j["system_prompt"] = system_prompt;
  j["image_ref"] = image_ref ? json(*image_ref) : json(nullptr);
  return j;
}

json EntailmentRequest::payload() const {
  return {{"premise", premise}, {"hypothesis", hypothesis}};
}

json PlausibilityRequest::payload() const { return {{"statement", statement}}; }

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::chat: return "chat";
    case BackendKind::vision: return "vision";
    case BackendKind::nli: return "nli";
    case BackendKind::plausibility: return "plausibility";
    case BackendKind::replay: return "replay";
  }
  return "?";
}

BackendKind parse_backend_kind(std::string_view s) {
  for (auto k : {BackendKind::chat, BackendKind::vision, BackendKind::nli, BackendKind::plausibility,
                 BackendKind::replay}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown backend kind '" + std::string(s) + "'");
}

GatewayConfig GatewayConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("gateway config must be a JSON object");
  GatewayConfig cfg;
  cfg.source = j;
  if (j.contains("max_in_flight")) {
    auto n = j["max_in_flight"].get<long long>();
    if (n < 1) throw ConfigError("max_in_flight must be >= 1");
    cfg.max_in_flight = static_cast<std::size_t>(n);
  }
  if (j.contains("cache_dir") && j["cache_dir"].is_string()) {
    cfg.cache_dir = resolve(base_dir, j["cache_dir"].get<std::string>());
  }
  if (j.contains("retry")) {
    const auto& r = j["retry"];
    cfg.retry.max_attempts = r.value("max_attempts", cfg.retry.max_attempts);
    cfg.retry.initial_backoff =
        std::chrono::milliseconds(r.value("initial_backoff_ms", cfg.retry.initial_backoff.count()));
    cfg.retry.multiplier = r.value("multiplier", cfg.retry.multiplier);
    if (cfg.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
  }
  if (j.contains("backends")) {
    for (const auto& [id, b] : j["backends"].items()) {
      BackendConfig bc;
      bc.model_id = id;
      if (!b.contains("kind")) throw ConfigError("backend '" + id + "' has no kind");
      bc.kind = parse_backend_kind(b["kind"].get<std::string>());
      bc.endpoint = b.value("endpoint", "");
      bc.credential_env = b.value("credential_env", "");
      bc.remote_model = b.value("remote_model", id);
      bc.timeout = std::chrono::milliseconds(b.value("timeout_ms", 60000));
      if (bc.kind == BackendKind::replay) {
        if (!b.contains("fixtures")) throw ConfigError("replay backend '" + id + "' needs fixtures");
        bc.fixtures = resolve(base_dir, b["fixtures"].get<std::string>());
      } else if (bc.endpoint.empty()) {
        throw ConfigError("backend '" + id + "' needs an endpoint");
      }
      cfg.backends.emplace(id, std::move(bc));
    }
  }
  if (j.contains("judges")) {
    for (const auto& [role, model] : j["judges"].items()) {
      cfg.judges.emplace(role, model.get<std::string>());
    }
  }
  return cfg;
}

GatewayConfig GatewayConfig::load(const fs::path& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return from_json(j, path.parent_path());
}

std::string GatewayConfig::digest() const { return sha256_hex(source.dump()); }

const std::string& GatewayConfig::judge(std::string_view role) const {
  auto it = judges.find(std::string(role));
  if (it == judges.end()) throw ConfigError("no judge configured for role '" + std::string(role) + "'");
  return it->second;
}

std::string request_key(std::string_view model_id, std::string_view op, const json& payload) {
  json k = {{"backend", model_id}, {"op", op}, {"request", payload}};
  return sha256_hex(k.dump());
}

void write_cache_entry(const fs::path& dir, const CacheEntry& entry) {
  fs::create_directories(dir);
  json j = {{"key", entry.key},
            {"value", entry.value},
            {"value_sha256", sha256_hex(entry.value)},
            {"created_at", entry.created_at}};
  auto tmp = dir / (entry.key + ".tmp." +
                    std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  write_text_file(tmp, j.dump());
  fs::rename(tmp, dir / entry.key);
}

std::optional<CacheEntry> read_cache_entry(const fs::path& dir, const std::string& key) {
  auto path = dir / key;
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("value") || !j["value"].is_string()) {
    throw CacheCorruption("cache entry " + path.string() + " is unreadable");
  }
  CacheEntry e{j.value("key", ""), j["value"].get<std::string>(), j.value("created_at", "")};
  if (e.key != key || j.value("value_sha256", "") != sha256_hex(e.value)) {
    throw CacheCorruption("cache entry " + path.string() + " does not match its digest");
  }
  return e;
}

double parse_probability(std::string_view body) {
  json j = json::parse(body, nullptr, false);
  double p = 0;
  if (j.is_number()) {
    p = j.get<double>();
  } else if (j.is_object() && j.contains("probability") && j["probability"].is_number()) {
    p = j["probability"].get<double>();
  } else {
    throw ProtocolError("expected {\"probability\": p}, got: " + std::string(body.substr(0, 200)));
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ProtocolError("probability " + std::to_string(p) + " outside [0,1]");
  }
  return p;
}

Gateway::Gateway(GatewayConfig config, std::shared_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      in_flight_(static_cast<std::ptrdiff_t>(std::min<std::size_t>(config_.max_in_flight, 4096))) {}

GatewayStats Gateway::stats() const {
  return {live_calls_.load(), cache_hits_.load(), replay_hits_.load(),
          retries_.load(),    max_in_flight_observed_.load(), total_tokens_.load()};
}

const BackendConfig& Gateway::backend_for(const std::string& model_id, std::string_view op,
                                          bool needs_image) const {
  auto it = config_.backends.find(model_id);
  if (it == config_.backends.end()) {
    throw ConfigError("no backend configured for model '" + model_id + "'");
  }
  const auto& b = it->second;
  if (b.kind == BackendKind::replay) return b;
  bool ok = false;
  if (op == kOpChat) ok = b.kind == BackendKind::vision || (b.kind == BackendKind::chat && !needs_image);
  if (op == kOpEntail) ok = b.kind == BackendKind::nli;
  if (op == kOpPlausibility) ok = b.kind == BackendKind::plausibility;
  if (!ok) {
    throw ConfigError("backend '" + model_id + "' of kind " + to_string(b.kind) + " cannot serve " +
                      std::string(op) + (needs_image ? " with an image" : ""));
  }
  return b;
}

std::string Gateway::complete(const ChatRequest& request) {
  if (text::trim(request.user_prompt).empty()) throw InputError("user prompt is empty");
  if (request.max_tokens <= 0) throw InputError("max_tokens must be positive");
  if (request.temperature < 0) throw InputError("temperature must be non-negative");
  backend_for(request.model_id, kOpChat, request.image_ref.has_value());
  auto payload = request.payload();
  if (request.image_ref && !is_remote_ref(*request.image_ref)) {
    // Keyed by image bytes so entries survive dataset relocation.
    json keyed = payload;
    keyed["image_ref"] = "sha256:" + sha256_hex(read_text_file(*request.image_ref));
    return call(request.model_id, kOpChat, payload, &keyed);
  }
  return call(request.model_id, kOpChat, payload);
}

double Gateway::entail(const EntailmentRequest& request) {
  if (text::trim(request.premise).empty() || text::trim(request.hypothesis).empty()) {
    throw InputError("entailment premise and hypothesis must be non-empty");
  }
  backend_for(request.model_id, kOpEntail, false);
  return parse_probability(call(request.model_id, kOpEntail, request.payload()));
}

double Gateway::plausibility(const PlausibilityRequest& request) {
  if (text::trim(request.statement).empty()) throw InputError("plausibility statement is empty");
  backend_for(request.model_id, kOpPlausibility, false);
  return parse_probability(call(request.model_id, kOpPlausibility, request.payload()));
}

std::string Gateway::call(const std::string& model_id, std::string_view op, const json& payload,
                          const json* key_payload) {
  const auto& backend = config_.backends.at(model_id);
  auto key = request_key(model_id, op, key_payload ? *key_payload : payload);

  std::promise<std::string> promise;
  std::optional<std::shared_future<std::string>> existing;
  {
    std::lock_guard lock(mu_);
    auto it = memo_.find(key);
    if (it != memo_.end()) {
      existing = it->second;
    } else {
      memo_.emplace(key, promise.get_future().share());
    }
  }
  if (existing) {
    // Completed entries are cache hits; pending ones share the in-flight call.
    cache_hits_.fetch_add(1);
    return existing->get();
  }

  try {
    auto value = fetch(backend, op, key, payload);
    promise.set_value(value);
    return value;
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    memo_.erase(key);
    throw;
  }
}

std::string Gateway::fetch(const BackendConfig& backend, std::string_view op, const std::string& key,
                           const json& payload) {
  if (config_.cache_dir) {
    if (auto hit = read_cache_entry(*config_.cache_dir, key)) {
      cache_hits_.fetch_add(1);
      return hit->value;
    }
  }
  if (backend.kind == BackendKind::replay) {
    auto fixture = read_cache_entry(backend.fixtures, key);
    if (!fixture) {
      throw BackendError("replay backend '" + backend.model_id + "' has no fixture for " +
                             std::string(op) + " request " + key,
                         false);
    }
    replay_hits_.fetch_add(1);
    return fixture->value;
  }
  auto value = live_call(backend, op, payload);
  if (config_.cache_dir) write_cache_entry(*config_.cache_dir, {key, value, utc_now()});
  return value;
}

std::string Gateway::live_call(const BackendConfig& backend, std::string_view op, const json& payload) {
  if (!transport_) transport_ = make_http_transport();

  std::vector<std::pair<std::string, std::string>> headers;
  if (!backend.credential_env.empty()) {
    const char* token = std::getenv(backend.credential_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw ConfigError("credential env var " + backend.credential_env + " is not set");
    }
    headers.emplace_back("Authorization", std::string("Bearer ") + token);
  }

  std::string url;
  json body;
  if (op == kOpChat) {
    url = chat_url(backend.endpoint);
    json messages = json::array();
    const auto& system = payload["system_prompt"].get_ref<const std::string&>();
    if (!system.empty()) messages.push_back({{"role", "system"}, {"content", system}});
    const auto& user = payload["user_prompt"].get_ref<const std::string&>();
    if (payload["image_ref"].is_string()) {
      json content = json::array();
      content.push_back({{"type", "text"}, {"text", user}});
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", image_url(payload["image_ref"].get<std::string>())}}}});
      messages.push_back({{"role", "user"}, {"content", content}});
    } else {
      messages.push_back({{"role", "user"}, {"content", user}});
    }
    body = {{"model", backend.remote_model},
            {"messages", messages},
            {"max_tokens", payload["max_tokens"]},
            {"temperature", payload["temperature"]}};
  } else {
    url = backend.endpoint;
    body = payload;
  }
  const auto wire = body.dump();

  auto backoff = config_.retry.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    HttpResponse res;
    {
      in_flight_.acquire();
      auto now = current_in_flight_.fetch_add(1) + 1;
      auto seen = max_in_flight_observed_.load();
      while (now > seen && !max_in_flight_observed_.compare_exchange_weak(seen, now)) {
      }
      live_calls_.fetch_add(1);
      try {
        res = transport_->post_json(url, wire, headers, backend.timeout);
      } catch (...) {
        current_in_flight_.fetch_sub(1);
        in_flight_.release();
        throw;
      }
      current_in_flight_.fetch_sub(1);
      in_flight_.release();
    }

    if (res.status >= 200 && res.status < 300) {
      if (op != kOpChat) {
        parse_probability(res.body);  // reject before caching
        return res.body;
      }
      json j = json::parse(res.body, nullptr, false);
      if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
          j["choices"].empty()) {
        throw ProtocolError("chat response from '" + backend.model_id + "' has no choices");
      }
      const auto& msg = j["choices"][0]["message"];
      if (!msg.contains("content") || !msg["content"].is_string()) {
        throw ProtocolError("chat response from '" + backend.model_id + "' has no text content");
      }
      if (j.contains("usage") && j["usage"].contains("total_tokens")) {
        total_tokens_.fetch_add(j["usage"]["total_tokens"].get<std::size_t>());
      }
      return msg["content"].get<std::string>();
    }

    bool retryable = res.status < 0 || res.status >= 500;
    std::string what = "backend '" + backend.model_id + "' " +
                       (res.status < 0 ? std::string("unreachable")
                                       : "returned HTTP " + std::to_string(res.status));
    if (!retryable) throw BackendError(what + ": " + res.body.substr(0, 200), false, res.status);
    if (attempt >= config_.retry.max_attempts) {
      throw BackendError(what + " after " + std::to_string(attempt) + " attempts", true, res.status);
    }
    retries_.fetch_add(1);
    std::this_thread::sleep_for(backoff);
    backoff = std::chrono::milliseconds(
        static_cast<long long>(static_cast<double>(backoff.count()) * config_.retry.multiplier));
  }
}

}  // namespace vlmq
