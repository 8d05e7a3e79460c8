#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "vlmq/study.hpp"

namespace vlmq::study {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;  // participant UI bundle, served at /
};

// HTTP front end over a StudyEngine:
//   POST /sessions                  {participant_id, condition_id, metadata?}
//   GET  /sessions/{id}/current
//   POST /sessions/{id}/choices     {instance_id, stage, choice, elapsed_ms}
//   GET  /conditions
//   GET  /conditions/{id}/report
//   GET  /healthz
// Errors come back as {"error": code, "message": text}.
class StudyServer {
 public:
  StudyServer(StudyEngine& engine, ServerOptions options);
  ~StudyServer();
  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  // Binds the socket; returns the bound port.
  int bind();
  // Blocks serving requests until stop().
  void serve();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

int http_status(StudyError::Code code);
std::string to_string(StudyError::Code code);

}  // namespace vlmq::study
