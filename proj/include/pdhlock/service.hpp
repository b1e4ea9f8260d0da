#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <regex>
#include <string>

#include <httplib.h>

#include "pdhlock/ops.hpp"

namespace pdhlock {

struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// HTTP+JSON front end. Requests are stateless except named session documents,
/// which live under `<root>/sessions`. Relative CSV paths inside configurations
/// resolve against `root`.
class Service {
 public:
  explicit Service(std::string root = ".") : root_(std::move(root)) {}

  Reply handle(const std::string& method, const std::string& path, const std::string& body,
               const std::map<std::string, std::string>& query = {}) {
    try {
      if (method == "GET" && path == "/health") return ok(json{{"status", "ok"}});
      if (method == "POST" && path == "/evaluate") return ok(ops::evaluate(config(body)));
      if (method == "POST" && path == "/tune") return ok(ops::tune(config(body)));
      if (method == "POST" && path == "/ingest/bode") {
        auto it = query.find("kind");
        const std::string kind = it == query.end() ? "open" : it->second;
        if (kind != "open" && kind != "closed") throw ValidationError("kind", "must be 'open' or 'closed'");
        return ok(ops::ingest_bode(body, kind == "closed"));
      }
      if (method == "POST" && path == "/ingest/ringdown") {
        std::optional<double> exclude;
        if (auto it = query.find("exclude_s"); it != query.end()) {
          exclude = detail::parse_number(it->second, "exclude_s", 0);
        }
        return ok(ops::ringdown(parse_ringdown_csv_text(body, "request"), exclude));
      }
      static const std::regex session_re("^/sessions/([A-Za-z0-9_-]{1,64})$");
      std::smatch sm;
      if (std::regex_match(path, sm, session_re)) {
        if (method == "PUT") return put_session(sm[1], body);
        if (method == "GET") return get_session(sm[1]);
      }
      return {404, dump(json{{"error", "no route for " + method + " " + path}})};
    } catch (const std::exception& e) {
      const auto kind = ops::classify(e);
      const int status = kind == ops::ErrorKind::validation ? 400 : kind == ops::ErrorKind::computation ? 422 : 500;
      return {status, dump(ops::error_json(e))};
    }
  }

  void mount(httplib::Server& svr) {
    auto bridge = [this](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> q(req.params.begin(), req.params.end());
      const Reply r = handle(req.method, req.path, req.body, q);
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    svr.Get("/health", bridge);
    svr.Post("/evaluate", bridge);
    svr.Post("/tune", bridge);
    svr.Post("/ingest/bode", bridge);
    svr.Post("/ingest/ringdown", bridge);
    svr.Put(R"(/sessions/([^/]+))", bridge);
    svr.Get(R"(/sessions/([^/]+))", bridge);
  }

 private:
  static Reply ok(const json& j) { return {200, dump(j)}; }

  ProjectConfig config(const std::string& body) const {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::parse_error& e) {
      throw ValidationError("<root>", std::string("invalid JSON: ") + e.what());
    }
    return config_from_json(j, root_);
  }

  std::shared_ptr<std::mutex> lock_for(const std::string& name) {
    std::lock_guard<std::mutex> g(locks_mu_);
    auto& m = locks_[name];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
  }

  std::filesystem::path session_path(const std::string& name) const {
    return std::filesystem::path(root_) / "sessions" / (name + ".json");
  }

  Reply put_session(const std::string& name, const std::string& body) {
    const ProjectConfig c = config(body);   // validate before storing
    const std::string text = dump(to_json(c));
    auto m = lock_for(name);
    std::lock_guard<std::mutex> g(*m);
    std::filesystem::create_directories(session_path(name).parent_path());
    const auto tmp = session_path(name).string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << text;
      if (!out) throw Error("cannot write session " + name);
    }
    std::filesystem::rename(tmp, session_path(name));
    return {200, text};
  }

  Reply get_session(const std::string& name) {
    auto m = lock_for(name);
    std::lock_guard<std::mutex> g(*m);
    if (!std::filesystem::exists(session_path(name))) {
      return {404, dump(json{{"error", "no session named " + name}})};
    }
    return {200, read_file(session_path(name).string())};
  }

  std::string root_;
  std::mutex locks_mu_;
  std::map<std::string, std::shared_ptr<std::mutex>> locks_;
};

}  // namespace pdhlock
