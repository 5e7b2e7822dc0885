#pragma once

// Control-code prompting of an external chat-completion service, plus a
// deterministic in-process mock serving the same contract.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unistd.h>
#include <vector>

#include "ontoctl/dataset.hpp"
#include "ontoctl/error.hpp"
#include "ontoctl/http.hpp"
#include "ontoctl/ontology.hpp"

namespace ontoctl {

struct Message {
  std::string role;  // "user" or "agent"
  std::string text;

  bool operator==(const Message&) const = default;
};

struct PromptBundle {
  std::string concept_name;
  std::string target;
  std::string template_id;
  std::string system;
  std::vector<Message> history;
  double temperature = 0.7;
  int max_tokens = 128;
  std::optional<std::int64_t> seed;

  bool operator==(const PromptBundle&) const = default;
};

struct Generation {
  std::string raw;
  std::string clean;
  bool right_label = false;  // raw ended with a label group
  double latency_ms = 0;
  std::string request_id;
};

inline std::string control_code(std::string_view concept_name, std::string_view cls) {
  return "[" + std::string(concept_name) + ": " + std::string(cls) + "]";
}

// -- templates -------------------------------------------------------------

namespace builtin_templates {
// Mirrors resources/templates/templates.json.
inline constexpr std::string_view k_document = R"json({
  "version": 1,
  "glosses": {
    "CEFR": "The control code names a CEFR proficiency level, from A1 (beginner: very short sentences, everyday words) to C2 (mastery: long sentences, rare and abstract vocabulary).",
    "PolarityProfile": "The control code names a polarity profile: L means emotionally loaded and ~L means not designed to convey an emotion; +, - and 0 mean positive, negative and neutral polarity."
  },
  "templates": {
    "zero-shot": {
      "system": "You are taking part in a conversation. Reply to the last user message with one or two sentences. {gloss} Your reply must belong to the class given by this control code: {control_code}",
      "temperature": 0.7,
      "max_tokens": 128
    },
    "fine-tuned": {
      "system": "{control_code}",
      "temperature": 0.7,
      "max_tokens": 128
    }
  }
}
)json";
}  // namespace builtin_templates

struct PromptTemplate {
  std::string system;
  double temperature = 0.7;
  int max_tokens = 128;
};

struct TemplateSet {
  int version = 1;
  std::map<std::string, std::string, std::less<>> glosses;
  std::map<std::string, PromptTemplate, std::less<>> templates;
};

inline TemplateSet parse_templates(std::string_view text, const std::string& source = "<templates>") {
  json doc = detail::parse_document(text, source);
  TemplateSet out;
  out.version = doc.value("version", 1);
  if (doc.contains("glosses")) out.glosses = detail::require<std::map<std::string, std::string, std::less<>>>(doc, "glosses", source);
  if (!doc.contains("templates") || !doc["templates"].is_object() || doc["templates"].empty())
    throw Error(ErrorKind::SyntaxError, source + "/templates: expected a non-empty object");
  for (const auto& [id, t] : doc["templates"].items()) {
    std::string where = source + "/templates/" + id;
    if (!t.is_object() || !t.contains("system") || !t["system"].is_string())
      throw Error(ErrorKind::SyntaxError, where + ": needs a string \"system\"");
    PromptTemplate p{t["system"].get<std::string>(), t.value("temperature", 0.7), t.value("max_tokens", 128)};
    if (p.system.find("{control_code}") == std::string::npos)
      throw Error(ErrorKind::SyntaxError, where + "/system: missing {control_code} placeholder");
    if (p.temperature < 0) throw Error(ErrorKind::SyntaxError, where + "/temperature: must be >= 0");
    out.templates[id] = std::move(p);
  }
  return out;
}

inline const TemplateSet& builtin_template_set() {
  static const TemplateSet set = parse_templates(builtin_templates::k_document, "<builtin templates>");
  return set;
}

namespace detail {

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

inline std::size_t count_occurrences(std::string_view s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace detail

/// Renders a template with the control code for `target`. Pure.
inline PromptBundle build_control_prompt(const std::vector<Message>& history, std::string_view target,
                                         const OntologySpec& spec, std::string_view template_id,
                                         const TemplateSet& templates = builtin_template_set()) {
  if (!spec.has_class(target))
    throw Error(ErrorKind::UnknownClass, "'" + std::string(target) + "' is not a class of '" + spec.concept_name + "'");
  auto it = templates.templates.find(template_id);
  if (it == templates.templates.end()) throw Error(ErrorKind::UnknownTemplate, "no template '" + std::string(template_id) + "'");
  auto gloss_it = templates.glosses.find(spec.concept_name);
  std::string gloss = gloss_it != templates.glosses.end() ? gloss_it->second : spec.description;

  PromptBundle b;
  b.concept_name = spec.concept_name;
  b.target = std::string(target);
  b.template_id = std::string(template_id);
  b.system = it->second.system;
  detail::replace_all(b.system, "{gloss}", gloss);
  detail::replace_all(b.system, "{concept}", spec.concept_name);
  detail::replace_all(b.system, "{control_code}", control_code(spec.concept_name, target));
  b.history = history;
  b.temperature = it->second.temperature;
  b.max_tokens = it->second.max_tokens;
  if (detail::count_occurrences(b.system, "[" + spec.concept_name + ":") != 1)
    throw Error(ErrorKind::UnknownTemplate, "template '" + std::string(template_id) + "' does not yield exactly one control code");
  return b;
}

/// First "[concept: X]" group in `text`, if any.
inline std::optional<std::string> find_control_code(std::string_view text, std::string_view concept_name) {
  std::string open = "[" + std::string(concept_name) + ":";
  for (auto pos = text.find(open); pos != std::string_view::npos; pos = text.find(open, pos + 1)) {
    auto close = text.find(']', pos);
    if (close == std::string_view::npos) break;
    if (auto label = detail::parse_label_group(text.substr(pos, close - pos + 1), concept_name)) return label;
  }
  return std::nullopt;
}

/// strip(), then drop any control codes still embedded in the text so the
/// clean reply never carries one.
inline std::string clean_generation(std::string_view raw, std::string_view concept_name) {
  std::string text = strip(raw, concept_name).text;
  std::string open = "[" + std::string(concept_name) + ":";
  for (auto pos = text.find(open); pos != std::string::npos;) {
    auto close = text.find(']', pos);
    if (close == std::string::npos) break;
    if (!detail::parse_label_group(std::string_view(text).substr(pos, close - pos + 1), concept_name)) {
      pos = text.find(open, pos + 1);
      continue;
    }
    text.erase(pos, close - pos + 1);
    if (pos > 0 && pos < text.size() && text[pos - 1] == ' ' && text[pos] == ' ') text.erase(pos, 1);
    pos = text.find(open, pos > 0 ? pos - 1 : 0);
  }
  return std::string(detail::trim(text));
}

inline bool has_right_label(std::string_view raw, std::string_view concept_name) {
  auto lead = strip(raw, concept_name);
  auto tail = detail::trim(raw);
  if (tail.empty() || tail.back() != ']') return false;
  auto open = tail.rfind('[');
  if (open == std::string_view::npos || !detail::parse_label_group(tail.substr(open), concept_name)) return false;
  // A lone leading group is the left label, not a right one.
  return !(lead.cls && detail::trim(lead.text).empty() && open == 0);
}

inline Generation make_generation(std::string raw, std::string_view concept_name, double latency_ms,
                                  std::string request_id = {}) {
  Generation g;
  g.clean = clean_generation(raw, concept_name);
  g.right_label = has_right_label(raw, concept_name);
  g.raw = std::move(raw);
  g.latency_ms = latency_ms;
  g.request_id = std::move(request_id);
  return g;
}

class Gateway {
 public:
  virtual ~Gateway() = default;
  virtual Generation complete(const PromptBundle& bundle) const = 0;
  virtual std::string_view name() const = 0;
};

// -- OpenAI-compatible HTTP client ------------------------------------------

struct GatewayConfig {
  std::string url;  // full chat-completions URL
  std::string key;
  std::string model = "default";
  std::chrono::milliseconds timeout{30000};
  int retries = 1;

  /// ONTO_LLM_URL (required), ONTO_LLM_KEY, ONTO_LLM_MODEL,
  /// ONTO_LLM_TIMEOUT_MS, ONTO_LLM_RETRIES.
  static GatewayConfig from_env() {
    GatewayConfig c;
    auto url = http::env("ONTO_LLM_URL");
    if (!url) throw Error(ErrorKind::InvalidArgument, "ONTO_LLM_URL is not set");
    c.url = *url;
    c.key = http::env("ONTO_LLM_KEY").value_or("");
    c.model = http::env("ONTO_LLM_MODEL").value_or(c.model);
    c.timeout = std::chrono::milliseconds(http::env_long("ONTO_LLM_TIMEOUT_MS", c.timeout.count()));
    c.retries = static_cast<int>(http::env_long("ONTO_LLM_RETRIES", c.retries));
    return c;
  }
};

/// Chat-completions request body. Agent turns map to the assistant role.
inline json chat_request(const PromptBundle& b, const std::string& model) {
  json messages = json::array();
  messages.push_back({{"role", "system"}, {"content", b.system}});
  for (const auto& m : b.history) messages.push_back({{"role", m.role == "agent" ? "assistant" : m.role}, {"content", m.text}});
  json body{{"model", model}, {"messages", messages}, {"temperature", b.temperature}, {"max_tokens", b.max_tokens}};
  if (b.seed) body["seed"] = *b.seed;
  return body;
}

class HttpGateway : public Gateway {
 public:
  explicit HttpGateway(GatewayConfig cfg) : cfg_(std::move(cfg)), endpoint_(http::parse_url(cfg_.url)) {
    if (endpoint_.path == "/" || endpoint_.path.empty()) endpoint_.path = "/v1/chat/completions";
  }

  Generation complete(const PromptBundle& bundle) const override {
    const std::string body = chat_request(bundle, cfg_.model).dump();
    for (int attempt = 0;; ++attempt) {
      std::string id = next_request_id();
      httplib::Headers headers{{"X-Request-Id", id}};
      if (!cfg_.key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.key);
      auto start = std::chrono::steady_clock::now();
      auto res = http::post_json(endpoint_, body, cfg_.timeout, headers);
      double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      if (!res.status) {
        if (res.failure == ErrorKind::Timeout && attempt < cfg_.retries) continue;
        throw GatewayError(res.failure, cfg_.url + ": " + res.detail, id);
      }
      if (*res.status != 200)
        throw GatewayError(ErrorKind::HttpError, cfg_.url + " answered HTTP " + std::to_string(*res.status), id, *res.status);
      std::string text;
      try {
        auto j = json::parse(res.body);
        text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        throw GatewayError(ErrorKind::MalformedResponse, cfg_.url + ": no completion text in response: " + e.what(), id,
                           *res.status);
      }
      return make_generation(std::move(text), bundle.concept_name, ms, id);
    }
  }

  std::string_view name() const override { return "http"; }
  const GatewayConfig& config() const { return cfg_; }

 private:
  std::string next_request_id() const {
    return "ontoctl-" + std::to_string(::getpid()) + "-" + std::to_string(counter_.fetch_add(1) + 1);
  }

  GatewayConfig cfg_;
  http::Endpoint endpoint_;
  mutable std::atomic<std::uint64_t> counter_{0};
};

// -- deterministic mock ------------------------------------------------------

/// Scripted class -> canned text. Modes:
///   compliant  reply with the text of the requested class
///   constant   always reply with the text of `constant_class`
///   shift      reply with the class `shift` positions further along the
///              class order, clamped at both ends
/// label_style controls which label groups wrap the reply: none, left or both.
struct MockScript {
  std::string concept_name;
  std::vector<std::string> classes;  // order used by shift
  std::map<std::string, std::string, std::less<>> texts;
  std::string mode = "compliant";
  std::string constant_class;
  int shift = 0;
  std::string label_style = "none";
};

inline MockScript parse_mock_script(std::string_view text, const std::string& source = "<mock>") {
  json doc = detail::parse_document(text, source);
  MockScript m;
  m.concept_name = detail::require<std::string>(doc, "concept", source);
  if (!doc.contains("texts") || !doc["texts"].is_object() || doc["texts"].empty())
    throw Error(ErrorKind::SyntaxError, source + "/texts: expected a non-empty object");
  for (const auto& [cls, t] : doc["texts"].items()) {
    if (!t.is_string()) throw Error(ErrorKind::SyntaxError, source + "/texts/" + cls + ": expected a string");
    m.classes.push_back(cls);
    m.texts[cls] = t.get<std::string>();
  }
  m.mode = doc.value("mode", m.mode);
  m.constant_class = doc.value("constant_class", m.classes.front());
  m.shift = doc.value("shift", 0);
  m.label_style = doc.value("label_style", m.label_style);
  if (m.mode != "compliant" && m.mode != "constant" && m.mode != "shift")
    throw Error(ErrorKind::SyntaxError, source + "/mode: unknown mock mode '" + m.mode + "'");
  if (m.label_style != "none" && m.label_style != "left" && m.label_style != "both")
    throw Error(ErrorKind::SyntaxError, source + "/label_style: expected none, left or both");
  if (!m.texts.contains(m.constant_class))
    throw Error(ErrorKind::SyntaxError, source + "/constant_class: no text for '" + m.constant_class + "'");
  return m;
}

inline MockScript load_mock_script(const std::string& path) { return parse_mock_script(detail::read_file(path), path); }

/// Reply the script gives to a system prompt. Only the control code in the
/// prompt is consulted, so the same logic backs the HTTP mock server.
inline std::string mock_reply(const MockScript& m, std::string_view system) {
  auto requested = find_control_code(system, m.concept_name);
  if (!requested) throw Error(ErrorKind::InvalidArgument, "prompt carries no [" + m.concept_name + ": ...] control code");
  auto it = std::find(m.classes.begin(), m.classes.end(), *requested);
  if (it == m.classes.end()) throw Error(ErrorKind::UnknownClass, "mock has no text for '" + *requested + "'");
  std::string cls = *requested;
  if (m.mode == "constant") {
    cls = m.constant_class;
  } else if (m.mode == "shift") {
    auto i = static_cast<long>(it - m.classes.begin()) + m.shift;
    i = std::clamp<long>(i, 0, static_cast<long>(m.classes.size()) - 1);
    cls = m.classes[static_cast<std::size_t>(i)];
  }
  std::string text = m.texts.at(cls);
  if (m.label_style == "left") return control_code(m.concept_name, cls) + " " + text;
  if (m.label_style == "both") return wrap(text, m.concept_name, cls);
  return text;
}

class MockGateway : public Gateway {
 public:
  explicit MockGateway(MockScript script) : script_(std::move(script)) {}

  Generation complete(const PromptBundle& bundle) const override {
    if (bundle.concept_name != script_.concept_name)
      throw Error(ErrorKind::InvalidArgument, "mock serves '" + script_.concept_name + "', prompt is for '" + bundle.concept_name + "'");
    auto id = "mock-" + std::to_string(counter_.fetch_add(1) + 1);
    return make_generation(mock_reply(script_, bundle.system), bundle.concept_name, 0, id);
  }

  std::string_view name() const override { return "mock"; }
  const MockScript& script() const { return script_; }

 private:
  MockScript script_;
  mutable std::atomic<std::uint64_t> counter_{0};
};

/// Dispatches each prompt to the gateway registered for its concept.
class RoutingGateway : public Gateway {
 public:
  void add(std::string concept_name, std::shared_ptr<const Gateway> gateway) {
    routes_[std::move(concept_name)] = std::move(gateway);
  }

  Generation complete(const PromptBundle& bundle) const override {
    auto it = routes_.find(bundle.concept_name);
    if (it == routes_.end()) throw Error(ErrorKind::InvalidArgument, "no gateway for '" + bundle.concept_name + "'");
    return it->second->complete(bundle);
  }

  std::string_view name() const override { return "routing"; }

 private:
  std::map<std::string, std::shared_ptr<const Gateway>, std::less<>> routes_;
};

/// Serves chat completions from mock scripts, one per concept: the concept is
/// picked by whichever script finds its control code in the system message.
inline void install_mock_llm(httplib::Server& server, std::vector<MockScript> scripts, const std::string& path = "/v1/chat/completions") {
  auto shared = std::make_shared<const std::vector<MockScript>>(std::move(scripts));
  server.Post(path, [shared](const httplib::Request& req, httplib::Response& res) {
    auto fail = [&](int status, const std::string& msg) {
      res.status = status;
      res.set_content(json{{"error", {{"message", msg}}}}.dump(), "application/json");
    };
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      return fail(400, std::string("invalid JSON: ") + e.what());
    }
    std::string system;
    if (body.contains("messages") && body["messages"].is_array())
      for (const auto& m : body["messages"])
        if (m.value("role", "") == "system") system += m.value("content", "") + "\n";
    for (const auto& script : *shared) {
      if (!find_control_code(system, script.concept_name)) continue;
      try {
        auto text = mock_reply(script, system);
        json reply{{"id", "mock-" + req.get_header_value("X-Request-Id")},
                   {"object", "chat.completion"},
                   {"model", body.value("model", "mock")},
                   {"choices", json::array({{{"index", 0},
                                             {"message", {{"role", "assistant"}, {"content", text}}},
                                             {"finish_reason", "stop"}}})}};
        res.set_content(reply.dump(), "application/json");
      } catch (const Error& e) {
        fail(400, e.what());
      }
      return;
    }
    fail(400, "no control code for any scripted concept");
  });
}

}  // namespace ontoctl
