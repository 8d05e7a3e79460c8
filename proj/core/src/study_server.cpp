#include "vlmq/study_server.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace vlmq::study {

int http_status(StudyError::Code code) {
  switch (code) {
    case StudyError::Code::not_found: return 404;
    case StudyError::Code::conflict: return 409;
    case StudyError::Code::too_early: return 422;
    case StudyError::Code::invalid: return 400;
    case StudyError::Code::capacity: return 409;
    case StudyError::Code::ineligible: return 403;
  }
  return 500;
}

std::string to_string(StudyError::Code code) {
  switch (code) {
    case StudyError::Code::not_found: return "not_found";
    case StudyError::Code::conflict: return "conflict";
    case StudyError::Code::too_early: return "too_early";
    case StudyError::Code::invalid: return "invalid";
    case StudyError::Code::capacity: return "capacity";
    case StudyError::Code::ineligible: return "ineligible";
  }
  return "error";
}

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  reply(res, status, {{"error", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  auto body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) {
    throw StudyError(StudyError::Code::invalid, "request body must be a JSON object");
  }
  return body;
}

template <class T>
T field(const json& body, const char* key) {
  if (!body.contains(key)) throw StudyError(StudyError::Code::invalid, std::string("missing field '") + key + "'");
  try {
    return body[key].get<T>();
  } catch (const json::exception&) {
    throw StudyError(StudyError::Code::invalid, std::string("field '") + key + "' has the wrong type");
  }
}

// Runs a handler, mapping errors to JSON responses.
template <class F>
auto guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const StudyError& e) {
      fail(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const InputError& e) {
      fail(res, 400, "invalid", e.what());
    } catch (const std::exception& e) {
      spdlog::error("study server: {}", e.what());
      fail(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

struct StudyServer::Impl {
  Impl(StudyEngine& e, ServerOptions o) : engine(e), options(std::move(o)) {}
  StudyEngine& engine;
  ServerOptions options;
  httplib::Server server;
  int port = -1;
};

StudyServer::StudyServer(StudyEngine& engine, ServerOptions options)
    : impl_(std::make_unique<Impl>(engine, std::move(options))) {
  auto& srv = impl_->server;
  auto& eng = impl_->engine;

  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, {{"ok", true}}); });

  srv.Get("/conditions", guarded([&eng](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& c : eng.config().conditions) {
      auto j = c.to_json();
      j["capacity"] = eng.capacity(c.id);
      out.push_back(j);
    }
    reply(res, 200, out);
  }));

  srv.Post("/sessions", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto metadata = body.value("metadata", json::object());
    auto s = eng.create_session(field<std::string>(body, "participant_id"), field<std::string>(body, "condition_id"),
                                metadata);
    reply(res, 201, {{"session_id", s.session_id}, {"condition_id", s.condition_id}, {"n_items", s.items.size()}});
  }));

  srv.Get(R"(/sessions/([^/]+)/current)", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, eng.current(req.matches[1]).to_json());
  }));

  srv.Post(R"(/sessions/([^/]+)/choices)", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    Stage stage;
    metrics::Choice choice;
    try {
      stage = parse_stage(field<std::string>(body, "stage"));
      choice = metrics::parse_choice(field<std::string>(body, "choice"));
    } catch (const InputError& e) {
      throw StudyError(StudyError::Code::invalid, e.what());
    }
    auto result = eng.submit_choice(req.matches[1], field<std::string>(body, "instance_id"), stage, choice,
                                    field<std::int64_t>(body, "elapsed_ms"));
    reply(res, 200, result.to_json());
  }));

  srv.Get(R"(/conditions/([^/]+)/report)", guarded([&eng](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, eng.condition_report(req.matches[1]).to_json());
  }));

  if (impl_->options.static_dir) {
    if (!srv.set_mount_point("/", impl_->options.static_dir->string())) {
      throw InputError("static directory " + impl_->options.static_dir->string() + " does not exist");
    }
  }
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::bind() {
  auto& o = impl_->options;
  if (o.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(o.host);
  } else {
    impl_->port = impl_->server.bind_to_port(o.host, o.port) ? o.port : -1;
  }
  if (impl_->port < 0) throw Error("cannot bind " + o.host + ":" + std::to_string(o.port));
  return impl_->port;
}

void StudyServer::serve() {
  if (impl_->port < 0) bind();
  impl_->server.listen_after_bind();
}

void StudyServer::stop() {
  if (impl_) impl_->server.stop();
}

void StudyServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace vlmq::study
