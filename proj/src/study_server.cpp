#include <httplib.h>

#include "psychdepth/study.hpp"

namespace psychdepth::study {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::Auth: return 401;
    case ErrorCode::Forbidden: return 403;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::Parse:
    case ErrorCode::Validation:
    case ErrorCode::Range:
    case ErrorCode::MissingComponent: return 422;
    default: return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string rater_of(const httplib::Request& req) {
  if (req.has_param("rater")) return req.get_param_value("rater");
  if (req.has_header("X-Rater-Id")) return req.get_header_value("X-Rater-Id");
  return {};
}

template <typename F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      send_json(res, 200, f(req));
    } catch (const Error& e) {
      send_json(res, http_status(e.code()), e.to_json());
    } catch (const json::exception& e) {
      send_json(res, 422, Error(ErrorCode::Validation, std::string("malformed JSON body: ") + e.what()).to_json());
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
    }
  };
}

}  // namespace

StudyServer::StudyServer(StudyService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Get("/api/study", guarded([this](const httplib::Request&) { return service_.study_info(); }));
  s.Get("/api/progress", guarded([this](const httplib::Request&) { return service_.progress(); }));
  s.Get("/api/batches/next",
        guarded([this](const httplib::Request& req) { return service_.next_batch(rater_of(req)); }));
  s.Get(R"(/api/stories/(-?\d+))", guarded([this](const httplib::Request& req) {
          return service_.story(rater_of(req), std::stoll(req.matches[1].str()));
        }));
  s.Post("/api/annotations", guarded([this](const httplib::Request& req) {
           return service_.submit(rater_of(req), json::parse(req.body));
         }));
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", "not_found"}, {"message", "no such endpoint"}}.dump(), "application/json");
    }
  });
}

StudyServer::~StudyServer() { stop(); }

int StudyServer::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

bool StudyServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

void StudyServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace psychdepth::study
