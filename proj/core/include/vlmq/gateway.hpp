#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlmq/jsonl.hpp"

namespace vlmq {

// Defaults shared by every judge prompt.
inline constexpr int kDefaultMaxTokens = 1024;
inline constexpr double kDefaultTemperature = 0.1;

struct ChatRequest {
  std::string model_id;
  std::string system_prompt;  // empty means no system message
  std::string user_prompt;
  std::optional<std::string> image_ref;
  int max_tokens = kDefaultMaxTokens;
  double temperature = kDefaultTemperature;

  json payload() const;
};

struct EntailmentRequest {
  std::string model_id;
  std::string premise;
  std::string hypothesis;

  json payload() const;
};

struct PlausibilityRequest {
  std::string model_id;
  std::string statement;

  json payload() const;
};

enum class BackendKind { chat, vision, nli, plausibility, replay };

std::string to_string(BackendKind kind);
BackendKind parse_backend_kind(std::string_view s);

struct BackendConfig {
  std::string model_id;
  BackendKind kind = BackendKind::chat;
  std::string endpoint;        // URL for live kinds
  std::string credential_env;  // env var holding a bearer token, optional
  std::string remote_model;    // model name sent on the wire; defaults to model_id
  std::filesystem::path fixtures;  // replay only
  std::chrono::milliseconds timeout{60000};
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
};

struct GatewayConfig {
  std::map<std::string, BackendConfig> backends;
  std::map<std::string, std::string> judges;  // role -> model_id
  std::optional<std::filesystem::path> cache_dir;
  std::size_t max_in_flight = 8;
  RetryPolicy retry;
  json source = json::object();  // config as written, for digests

  // Paths inside `j` are resolved against `base_dir`.
  static GatewayConfig from_json(const json& j, const std::filesystem::path& base_dir = {});
  static GatewayConfig load(const std::filesystem::path& path);

  std::string digest() const;
  // Model id configured for a judge role; throws ConfigError if absent.
  const std::string& judge(std::string_view role) const;
};

// --- content-addressed entries (cache and replay fixtures share the format) ---

struct CacheEntry {
  std::string key;
  std::string value;
  std::string created_at;
};

// Digest over (backend id, operation, canonical request payload).
std::string request_key(std::string_view model_id, std::string_view op, const json& payload);

// Atomically writes `<dir>/<key>`.
void write_cache_entry(const std::filesystem::path& dir, const CacheEntry& entry);
// nullopt when absent; throws CacheCorruption when the file does not match its digest.
std::optional<CacheEntry> read_cache_entry(const std::filesystem::path& dir, const std::string& key);

// --- transport ---

struct HttpResponse {
  int status = 0;  // < 0: connection failure or timeout
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post_json(const std::string& url, const std::string& body,
                                 const std::vector<std::pair<std::string, std::string>>& headers,
                                 std::chrono::milliseconds timeout) = 0;
};

std::shared_ptr<Transport> make_http_transport();

struct GatewayStats {
  std::size_t live_calls = 0;     // requests that reached a live transport (incl. retries)
  std::size_t cache_hits = 0;     // memory or disk
  std::size_t replay_hits = 0;
  std::size_t retries = 0;
  std::size_t max_in_flight_observed = 0;
  std::size_t total_tokens = 0;
};

// Single choke point for model calls: config lookup, caching, replay,
// bounded parallelism and retries.
class Gateway {
 public:
  explicit Gateway(GatewayConfig config, std::shared_ptr<Transport> transport = nullptr);

  std::string complete(const ChatRequest& request);
  double entail(const EntailmentRequest& request);
  double plausibility(const PlausibilityRequest& request);

  const GatewayConfig& config() const { return config_; }
  const std::string& judge(std::string_view role) const { return config_.judge(role); }
  GatewayStats stats() const;

 private:
  // `key_payload` defaults to `payload`; chat requests key local images by content.
  std::string call(const std::string& model_id, std::string_view op, const json& payload,
                   const json* key_payload = nullptr);
  std::string fetch(const BackendConfig& backend, std::string_view op, const std::string& key,
                    const json& payload);
  std::string live_call(const BackendConfig& backend, std::string_view op, const json& payload);
  const BackendConfig& backend_for(const std::string& model_id, std::string_view op,
                                   bool needs_image) const;

  GatewayConfig config_;
  std::shared_ptr<Transport> transport_;
  std::counting_semaphore<4096> in_flight_;

  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_future<std::string>> memo_;

  std::atomic<std::size_t> live_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
  std::atomic<std::size_t> replay_hits_{0};
  std::atomic<std::size_t> retries_{0};
  std::atomic<std::size_t> current_in_flight_{0};
  std::atomic<std::size_t> max_in_flight_observed_{0};
  std::atomic<std::size_t> total_tokens_{0};
};

// Parses a probability from `{"probability": p}` (or a bare number); throws
// ProtocolError when missing or outside [0,1].
double parse_probability(std::string_view body);

}  // namespace vlmq
