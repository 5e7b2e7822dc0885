#pragma once

// Application config and the HTTP API over the session engine.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>

#include "ontoctl/engine.hpp"
#include "ontoctl/error.hpp"
#include "ontoctl/gateway.hpp"
#include "ontoctl/ontology.hpp"
#include "ontoctl/strategy.hpp"

namespace ontoctl {

// -- configuration -----------------------------------------------------------

/// Everything a server or interactive session needs. Relative paths in a
/// config file resolve against the file's directory.
struct AppConfig {
  std::filesystem::path resources;  // bundled specs, used when no paths are listed
  std::vector<std::filesystem::path> ontologies;
  std::vector<std::filesystem::path> strategies;
  std::optional<GatewayConfig> gateway;
  std::vector<std::filesystem::path> mock_scripts;  // replaces the LLM when non-empty
  std::map<std::string, std::string, std::less<>> classifiers;  // descriptor -> URL
  std::string template_id = "zero-shot";
  std::string listen = "127.0.0.1:8080";
  std::optional<std::filesystem::path> transcript_dir;
  std::string cors_origin;  // empty disables CORS headers
  int max_retries_on_noncompliance = 0;
};

namespace detail {

inline std::vector<std::filesystem::path> path_list(const json& doc, const char* key, const std::filesystem::path& base,
                                                    const std::string& source) {
  std::vector<std::filesystem::path> out;
  if (!doc.contains(key)) return out;
  if (!doc[key].is_array()) throw Error(ErrorKind::SyntaxError, source + "/" + key + ": expected an array of paths");
  for (std::size_t i = 0; i < doc[key].size(); ++i) {
    if (!doc[key][i].is_string())
      throw Error(ErrorKind::SyntaxError, source + "/" + key + "/" + std::to_string(i) + ": expected a path");
    out.push_back(base / doc[key][i].get<std::string>());
  }
  return out;
}

}  // namespace detail

inline AppConfig parse_app_config(std::string_view text, const std::string& source = "<config>",
                                  const std::filesystem::path& base = {}) {
  json doc = detail::parse_document(text, source);
  if (!doc.is_object()) throw Error(ErrorKind::SyntaxError, source + ": expected an object");
  AppConfig c;
  try {
    if (doc.contains("resources")) c.resources = base / doc["resources"].get<std::string>();
    c.ontologies = detail::path_list(doc, "ontologies", base, source);
    c.strategies = detail::path_list(doc, "strategies", base, source);
    c.mock_scripts = detail::path_list(doc, "mock", base, source);
    if (doc.contains("gateway")) {
      const auto& g = doc["gateway"];
      GatewayConfig gc;
      gc.url = g.at("url").get<std::string>();
      gc.key = g.value("key", gc.key);
      gc.model = g.value("model", gc.model);
      gc.timeout = std::chrono::milliseconds(g.value("timeout_ms", static_cast<long>(gc.timeout.count())));
      gc.retries = g.value("retries", gc.retries);
      c.gateway = gc;
    }
    if (doc.contains("classifiers"))
      for (const auto& [name, url] : doc["classifiers"].items()) c.classifiers[name] = url.get<std::string>();
    c.template_id = doc.value("template", c.template_id);
    c.listen = doc.value("listen", c.listen);
    if (doc.contains("transcript_dir")) c.transcript_dir = base / doc["transcript_dir"].get<std::string>();
    c.cors_origin = doc.value("cors_origin", c.cors_origin);
    c.max_retries_on_noncompliance = doc.value("max_retries_on_noncompliance", 0);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SyntaxError, source + ": " + e.what());
  }
  return c;
}

inline AppConfig load_app_config(const std::string& path) {
  return parse_app_config(detail::read_file(path), path, std::filesystem::path(path).parent_path());
}

/// ONTO_LISTEN overrides the listen address; ONTO_LLM_URL supplies the
/// gateway when the config names neither a gateway nor mock scripts.
inline void apply_env(AppConfig& c) {
  if (auto listen = http::env("ONTO_LISTEN")) c.listen = *listen;
  if (!c.gateway && c.mock_scripts.empty() && http::env("ONTO_LLM_URL")) c.gateway = GatewayConfig::from_env();
}

/// "host:port" or ":port" (all interfaces) or a bare port (loopback).
inline std::pair<std::string, int> parse_listen(std::string_view addr) {
  auto colon = addr.rfind(':');
  std::string host = colon == std::string_view::npos ? "127.0.0.1" : std::string(addr.substr(0, colon));
  std::string port = colon == std::string_view::npos ? std::string(addr) : std::string(addr.substr(colon + 1));
  if (host.empty()) host = "0.0.0.0";
  try {
    std::size_t used = 0;
    int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    return {host, p};
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, "bad listen address '" + std::string(addr) + "'");
  }
}

/// Loads the configured specs, checks each ontology for consistency and each
/// strategy against its ontology, and builds one annotator per concept.
inline Registry build_registry(const AppConfig& c) {
  auto onto_paths = c.ontologies;
  auto strat_paths = c.strategies;
  if (onto_paths.empty()) onto_paths = {c.resources / "ontologies" / "cefr.json", c.resources / "ontologies" / "polarity.json"};
  if (strat_paths.empty())
    strat_paths = {c.resources / "strategies" / "harder_only.json", c.resources / "strategies" / "debate.json"};
  Registry r;
  for (const auto& p : onto_paths) {
    auto spec = load_ontology(p.string());
    auto report = check_consistency(spec);
    if (!report.consistent())
      throw Error(ErrorKind::InvalidArgument, p.string() + ": ontology is inconsistent: " + report.violations.front().message);
    auto annotator = make_annotator(spec, c.classifiers);
    r.add_ontology(std::move(spec), std::move(annotator));
  }
  for (const auto& p : strat_paths) {
    auto s = load_strategy(p.string());
    if (!s.ontology.empty()) validate_strategy(s, r.ontology(s.ontology));
    r.add_strategy(std::move(s));
  }
  return r;
}

inline std::shared_ptr<const Gateway> build_gateway(const AppConfig& c) {
  if (!c.mock_scripts.empty()) {
    auto routing = std::make_shared<RoutingGateway>();
    for (const auto& p : c.mock_scripts) {
      auto script = load_mock_script(p.string());
      auto name = script.concept_name;
      routing->add(name, std::make_shared<MockGateway>(std::move(script)));
    }
    return routing;
  }
  if (c.gateway) return std::make_shared<HttpGateway>(*c.gateway);
  return std::make_shared<HttpGateway>(GatewayConfig::from_env());
}

inline std::unique_ptr<Engine> make_engine(const AppConfig& c) {
  EngineOptions opts;
  opts.turn.template_id = c.template_id;
  opts.turn.max_retries_on_noncompliance = c.max_retries_on_noncompliance;
  opts.transcript_dir = c.transcript_dir;
  return std::make_unique<Engine>(build_registry(c), build_gateway(c), opts);
}

// -- HTTP API ----------------------------------------------------------------

/// Body of a successful turn: the user's detected class and the agent reply
/// with its target, detected class and compliance.
inline json turn_response(const Session& s) {
  if (s.turns.size() < 2 || s.turns.back().role != "agent")
    throw Error(ErrorKind::InvalidArgument, "session '" + s.id + "' has no completed exchange");
  const auto& user = s.turns[s.turns.size() - 2];
  const auto& agent = s.turns.back();
  json j{{"id", s.id}, {"turn", s.turns.size() - 1}};
  j["detected"] = user.detected ? json(*user.detected) : json(nullptr);
  j["target"] = agent.target ? json(*agent.target) : json(nullptr);
  j["reply"] = agent.text;
  j["reply_detected"] = agent.detected ? json(*agent.detected) : json(nullptr);
  j["compliant"] = agent.compliant ? json(*agent.compliant) : json(nullptr);
  j["request_id"] = agent.request_id;
  j["attempts"] = agent.attempts;
  j["state"] = to_json(s.state);
  return j;
}

inline json session_response(const Session& s, const OntologySpec& spec) {
  json j = to_json(s);
  j["classes"] = spec.classes;
  j["ordinal"] = spec.ordinal;
  return j;
}

/// HTTP status for a library error: 404 unknown session, 502 for failures of
/// the LLM or classifier services, 400 for everything the caller can fix.
inline int http_status(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::UnknownSession: return 404;
    case ErrorKind::Timeout:
    case ErrorKind::HttpError:
    case ErrorKind::MalformedResponse:
    case ErrorKind::ConnectionFailed:
    case ErrorKind::BackendUnavailable: return 502;
    case ErrorKind::Io: return 500;
    default: return 400;
  }
}

inline json error_body(const Error& e) {
  json err{{"kind", to_string(e.kind())}, {"message", e.message()}};
  if (auto* g = dynamic_cast<const GatewayError*>(&e)) {
    err["request_id"] = g->request_id();
    if (g->status()) err["upstream_status"] = g->status();
  }
  return {{"error", err}};
}

struct ApiOptions {
  std::string cors_origin;
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    send_json(res, 200, fn());
  } catch (const Error& e) {
    send_json(res, http_status(e), error_body(e));
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", {{"kind", "Internal"}, {"message", e.what()}}}});
  }
}

inline json request_body(const httplib::Request& req) {
  try {
    json body = json::parse(req.body.empty() ? std::string("{}") : req.body);
    if (!body.is_object()) throw Error(ErrorKind::SyntaxError, "request body must be an object");
    return body;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SyntaxError, std::string("request body: ") + e.what());
  }
}

inline std::string string_field(const json& body, const char* key, bool required = true) {
  if (!body.contains(key) || body[key].is_null()) {
    if (required) throw Error(ErrorKind::InvalidArgument, std::string("missing field '") + key + "'");
    return {};
  }
  if (!body[key].is_string()) throw Error(ErrorKind::InvalidArgument, std::string("field '") + key + "' must be a string");
  return body[key].get<std::string>();
}

}  // namespace detail

/// Registers the API routes on `server`. The engine must outlive it.
inline void install_api(httplib::Server& server, Engine& engine, ApiOptions opts = {}) {
  using detail::guarded;

  server.Get("/health", [&engine](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      return json{{"status", "ok"},
                  {"ontologies", engine.registry().ontologies.size()},
                  {"strategies", engine.registry().strategies.size()}};
    });
  });

  server.Get("/ontologies", [&engine](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      json ontologies = json::array();
      for (const auto& [name, spec] : engine.registry().ontologies) ontologies.push_back(to_json(spec));
      json strategies = json::array();
      for (const auto& [name, s] : engine.registry().strategies) strategies.push_back(to_json(s));
      json templates = json::array();
      for (const auto& [id, t] : builtin_template_set().templates) templates.push_back(id);
      return json{{"ontologies", ontologies}, {"strategies", strategies}, {"templates", templates}};
    });
  });

  server.Post("/sessions", [&engine](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = detail::request_body(req);
      auto s = engine.create_session(detail::string_field(body, "ontology"), detail::string_field(body, "strategy"),
                                     detail::string_field(body, "template", false));
      return session_response(s, engine.registry().ontology(s.ontology));
    });
  });

  server.Get(R"(/sessions/([A-Za-z0-9-]+))", [&engine](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto s = engine.get(req.matches[1]);
      return session_response(s, engine.registry().ontology(s.ontology));
    });
  });

  server.Post(R"(/sessions/([A-Za-z0-9-]+)/turns)", [&engine](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      auto body = detail::request_body(req);
      return turn_response(engine.run_turn(req.matches[1], detail::string_field(body, "text")));
    });
  });

  server.Post(R"(/sessions/([A-Za-z0-9-]+)/retry)", [&engine](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return turn_response(engine.retry_turn(req.matches[1])); });
  });

  if (!opts.cors_origin.empty()) {
    auto origin = opts.cors_origin;
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
  }

  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    detail::send_json(res, res.status,
                      {{"error", {{"kind", res.status == 404 ? "NotFound" : "BadRequest"}, {"message", "no route for " + req.method + " " + req.path}}}});
  });
}

}  // namespace ontoctl
