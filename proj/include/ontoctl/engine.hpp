#pragma once

// The conversation loop: annotate the user turn, pick the target class,
// prompt with its control code, annotate the reply and record compliance.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ontoctl/annotators.hpp"
#include "ontoctl/error.hpp"
#include "ontoctl/gateway.hpp"
#include "ontoctl/ontology.hpp"
#include "ontoctl/strategy.hpp"

namespace ontoctl {

struct Turn {
  std::string role;  // "user" or "agent"
  std::string text;  // agent turns hold the clean reply
  std::optional<std::string> detected;
  std::optional<std::string> target;  // agent turns only
  std::optional<bool> compliant;      // agent turns only
  std::string raw;                    // agent turns: generation before stripping
  std::string request_id;
  int attempts = 0;
  std::string annotation_error;  // set when the reply could not be annotated
  std::int64_t time_ms = 0;
};

struct Session {
  std::string id;
  std::string ontology;
  std::string strategy;
  std::string template_id;
  StrategyState state;
  std::vector<Turn> turns;
  std::int64_t created_ms = 0;
};

struct TurnOptions {
  std::string template_id = "zero-shot";
  int max_retries_on_noncompliance = 0;
};

inline std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline json to_json(const Turn& t) {
  json j{{"role", t.role}, {"text", t.text}};
  j["detected"] = t.detected ? json(*t.detected) : json(nullptr);
  if (t.role == "agent") {
    j["target"] = t.target ? json(*t.target) : json(nullptr);
    j["compliant"] = t.compliant.value_or(false);
    j["raw"] = t.raw;
    j["request_id"] = t.request_id;
    j["attempts"] = t.attempts;
    if (!t.annotation_error.empty()) j["annotation_error"] = t.annotation_error;
  }
  j["time_ms"] = t.time_ms;
  return j;
}

inline Turn turn_from_json(const json& j) {
  Turn t;
  t.role = j.at("role").get<std::string>();
  t.text = j.at("text").get<std::string>();
  if (j.contains("detected") && !j["detected"].is_null()) t.detected = j["detected"].get<std::string>();
  if (j.contains("target") && !j["target"].is_null()) t.target = j["target"].get<std::string>();
  if (j.contains("compliant")) t.compliant = j["compliant"].get<bool>();
  t.raw = j.value("raw", std::string{});
  t.request_id = j.value("request_id", std::string{});
  t.attempts = j.value("attempts", 0);
  t.annotation_error = j.value("annotation_error", std::string{});
  t.time_ms = j.value("time_ms", std::int64_t{0});
  return t;
}

inline json session_header(const Session& s) {
  return {{"id", s.id}, {"ontology", s.ontology}, {"strategy", s.strategy}, {"template", s.template_id}, {"created_ms", s.created_ms}};
}

inline json to_json(const Session& s) {
  json j = session_header(s);
  j["state"] = to_json(s.state);
  j["turns"] = json::array();
  for (const auto& t : s.turns) j["turns"].push_back(to_json(t));
  return j;
}

namespace detail {

// Re-raises with the turn index in front of the diagnostic, keeping the kind
// and, for gateway failures, the request id and status.
[[noreturn]] inline void rethrow_for_turn(std::size_t index) {
  std::string where = "turn " + std::to_string(index) + ": ";
  try {
    throw;
  } catch (const GatewayError& e) {
    std::string msg = e.message();
    std::string suffix = " (request " + e.request_id() + ")";
    if (msg.size() >= suffix.size() && msg.compare(msg.size() - suffix.size(), suffix.size(), suffix) == 0)
      msg.resize(msg.size() - suffix.size());
    throw GatewayError(e.kind(), where + msg, e.request_id(), e.status());
  } catch (const Error& e) {
    throw Error(e.kind(), where + e.message());
  }
}

inline std::vector<Message> history_of(const Session& s) {
  std::vector<Message> h;
  for (const auto& t : s.turns) h.push_back({t.role, t.text});
  return h;
}

}  // namespace detail

/// Requests the agent reply for the session's trailing user turn. The state
/// has already absorbed that turn, and next_target is idempotent on it, so
/// the target is the one computed when the turn was recorded.
inline Turn complete_agent_turn(Session& session, const OntologySpec& spec, const StrategySpec& strategy,
                                const Annotator& annotator, const Gateway& gateway, const TurnOptions& opts = {}) {
  if (session.turns.empty() || session.turns.back().role != "user" || !session.turns.back().detected)
    throw Error(ErrorKind::InvalidArgument, "session " + session.id + " has no pending user turn");
  std::size_t index = session.turns.size();
  auto [target, state] = next_target(*session.turns.back().detected, session.state, strategy, spec);
  auto bundle = build_control_prompt(detail::history_of(session), target, spec, opts.template_id);

  Turn agent;
  agent.role = "agent";
  agent.target = target;
  for (int attempt = 0; attempt <= opts.max_retries_on_noncompliance; ++attempt) {
    Generation g;
    try {
      g = gateway.complete(bundle);
    } catch (...) {
      detail::rethrow_for_turn(index);
    }
    agent.text = g.clean;
    agent.raw = g.raw;
    agent.request_id = g.request_id;
    agent.attempts = attempt + 1;
    agent.annotation_error.clear();
    agent.detected.reset();
    try {
      agent.detected = annotator.annotate(g.clean);
    } catch (const Error& e) {
      agent.annotation_error = e.what();
    }
    agent.compliant = agent.detected == target;
    if (*agent.compliant) break;
  }
  agent.time_ms = now_ms();
  session.state = state;
  session.turns.push_back(agent);
  return agent;
}

/// One exchange. The user turn and the strategy state are committed before
/// the gateway is called, so a gateway failure leaves exactly the user turn
/// behind; complete_agent_turn() retries it with the same target.
inline Turn run_turn(Session& session, std::string_view user_text, const OntologySpec& spec,
                     const StrategySpec& strategy, const Annotator& annotator, const Gateway& gateway,
                     const TurnOptions& opts = {}) {
  if (!session.turns.empty() && session.turns.back().role == "user")
    throw Error(ErrorKind::InvalidArgument, "session " + session.id + " has a pending user turn; retry it first");
  std::size_t index = session.turns.size();
  Turn user;
  user.role = "user";
  user.text = std::string(user_text);
  try {
    if (detail::blank(user_text)) throw Error(ErrorKind::BlankInput, "blank user utterance");
    user.detected = annotator.annotate(user_text);
  } catch (...) {
    detail::rethrow_for_turn(index);
  }
  auto [target, state] = next_target(*user.detected, session.state, strategy, spec);
  user.time_ms = now_ms();
  session.turns.push_back(user);
  session.state = state;
  return complete_agent_turn(session, spec, strategy, annotator, gateway, opts);
}

/// Folds the user turns through the strategy; the state a session must hold.
inline StrategyState replay_state(const Session& session, const OntologySpec& spec, const StrategySpec& strategy) {
  auto state = initial_state(strategy, spec);
  for (const auto& t : session.turns)
    if (t.role == "user" && t.detected) state = next_target(*t.detected, state, strategy, spec).second;
  return state;
}

// -- sessions ----------------------------------------------------------------

/// Ontologies, strategies and annotators a server or CLI can bind sessions to.
struct Registry {
  std::map<std::string, OntologySpec, std::less<>> ontologies;           // by concept
  std::map<std::string, StrategySpec, std::less<>> strategies;           // by name
  std::map<std::string, std::shared_ptr<const Annotator>, std::less<>> annotators;  // by concept

  void add_ontology(OntologySpec spec, std::shared_ptr<const Annotator> annotator = nullptr) {
    if (!annotator) annotator = make_annotator(spec);
    annotators[spec.concept_name] = std::move(annotator);
    ontologies[spec.concept_name] = std::move(spec);
  }
  void add_strategy(StrategySpec s) {
    if (s.name.empty()) throw Error(ErrorKind::InvalidStrategy, "registered strategies need a name");
    strategies[s.name] = std::move(s);
  }

  const OntologySpec& ontology(std::string_view concept_name) const {
    auto it = ontologies.find(concept_name);
    if (it == ontologies.end()) throw Error(ErrorKind::InvalidArgument, "unknown ontology '" + std::string(concept_name) + "'");
    return it->second;
  }
  const StrategySpec& strategy(std::string_view name) const {
    auto it = strategies.find(name);
    if (it == strategies.end()) throw Error(ErrorKind::InvalidStrategy, "unknown strategy '" + std::string(name) + "'");
    return it->second;
  }
  const Annotator& annotator(std::string_view concept_name) const {
    auto it = annotators.find(concept_name);
    if (it == annotators.end()) throw Error(ErrorKind::InvalidArgument, "no annotator for '" + std::string(concept_name) + "'");
    return *it->second;
  }
};

/// The bundled CEFR and polarity ontologies with their strategies.
inline Registry bundled_registry(const std::filesystem::path& resources) {
  Registry r;
  r.add_ontology(load_ontology((resources / "ontologies" / "cefr.json").string()));
  r.add_ontology(load_ontology((resources / "ontologies" / "polarity.json").string()));
  r.add_strategy(load_strategy((resources / "strategies" / "harder_only.json").string()));
  r.add_strategy(load_strategy((resources / "strategies" / "debate.json").string()));
  return r;
}

struct EngineOptions {
  TurnOptions turn;
  std::optional<std::filesystem::path> transcript_dir;  // append-only JSONL per session
};

/// Thread-safe session manager. Each session has its own lock so turns are
/// strictly ordered per session while distinct sessions proceed in parallel.
/// Sessions whose transcript exists on disk but not in memory are loaded on
/// first access.
class Engine {
 public:
  Engine(Registry registry, std::shared_ptr<const Gateway> gateway, EngineOptions opts = {})
      : registry_(std::move(registry)), gateway_(std::move(gateway)), opts_(std::move(opts)) {
    if (!gateway_) throw Error(ErrorKind::InvalidArgument, "engine needs a gateway");
    if (opts_.transcript_dir) std::filesystem::create_directories(*opts_.transcript_dir);
  }

  const Registry& registry() const { return registry_; }
  const EngineOptions& options() const { return opts_; }

  Session create_session(std::string_view ontology, std::string_view strategy, std::string template_id = {}) {
    const auto& spec = registry_.ontology(ontology);
    const auto& strat = registry_.strategy(strategy);
    validate_strategy(strat, spec);
    if (template_id.empty()) template_id = opts_.turn.template_id;
    if (!builtin_template_set().templates.contains(template_id))
      throw Error(ErrorKind::UnknownTemplate, "no template '" + template_id + "'");
    auto entry = std::make_shared<Entry>();
    entry->session.id = new_id();
    entry->session.ontology = spec.concept_name;
    entry->session.strategy = strat.name;
    entry->session.template_id = template_id;
    entry->session.state = initial_state(strat, spec);
    entry->session.created_ms = now_ms();
    append(entry->session.id, session_header(entry->session));
    std::unique_lock lock(mu_);
    sessions_[entry->session.id] = entry;
    return entry->session;
  }

  /// Runs one exchange; returns the session after it. On failure the
  /// session keeps whatever the turn committed (see run_turn).
  Session run_turn(const std::string& id, std::string_view text) {
    auto entry = find(id);
    std::lock_guard lock(entry->mu);
    auto& s = entry->session;
    std::size_t before = s.turns.size();
    try {
      ontoctl::run_turn(s, text, registry_.ontology(s.ontology), registry_.strategy(s.strategy),
                        registry_.annotator(s.ontology), *gateway_, turn_options(s));
    } catch (...) {
      persist_from(s, before);
      throw;
    }
    persist_from(s, before);
    return s;
  }

  /// Retries the agent reply for a session left with a pending user turn.
  Session retry_turn(const std::string& id) {
    auto entry = find(id);
    std::lock_guard lock(entry->mu);
    auto& s = entry->session;
    std::size_t before = s.turns.size();
    complete_agent_turn(s, registry_.ontology(s.ontology), registry_.strategy(s.strategy),
                        registry_.annotator(s.ontology), *gateway_, turn_options(s));
    persist_from(s, before);
    return s;
  }

  Session get(const std::string& id) {
    auto entry = find(id);
    std::lock_guard lock(entry->mu);
    return entry->session;
  }

  /// Rebuilds a session from its transcript, recomputing the strategy state
  /// from the user turns.
  Session load_transcript(const std::filesystem::path& path) const {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    Session s;
    std::string line;
    bool header = false;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
      if (detail::blank(line)) continue;
      try {
        auto j = json::parse(line);
        if (!header) {
          s.id = j.at("id").get<std::string>();
          s.ontology = j.at("ontology").get<std::string>();
          s.strategy = j.at("strategy").get<std::string>();
          s.template_id = j.value("template", opts_.turn.template_id);
          s.created_ms = j.value("created_ms", std::int64_t{0});
          header = true;
        } else {
          s.turns.push_back(turn_from_json(j));
        }
      } catch (const json::exception& e) {
        throw Error(ErrorKind::SyntaxError, path.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
    if (!header) throw Error(ErrorKind::SyntaxError, path.string() + ": empty transcript");
    s.state = replay_state(s, registry_.ontology(s.ontology), registry_.strategy(s.strategy));
    return s;
  }

 private:
  struct Entry {
    std::mutex mu;
    Session session;
  };

  TurnOptions turn_options(const Session& s) const {
    auto t = opts_.turn;
    t.template_id = s.template_id;
    return t;
  }

  std::shared_ptr<Entry> find(const std::string& id) {
    {
      std::shared_lock lock(mu_);
      if (auto it = sessions_.find(id); it != sessions_.end()) return it->second;
    }
    if (opts_.transcript_dir && valid_id(id)) {
      auto path = *opts_.transcript_dir / (id + ".jsonl");
      if (std::filesystem::exists(path)) {
        auto entry = std::make_shared<Entry>();
        entry->session = load_transcript(path);
        std::unique_lock lock(mu_);
        return sessions_.try_emplace(id, entry).first->second;
      }
    }
    throw Error(ErrorKind::UnknownSession, "no session '" + id + "'");
  }

  static bool valid_id(const std::string& id) {
    return !id.empty() && id.size() <= 64 &&
           std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; });
  }

  std::string new_id() {
    std::lock_guard lock(rng_mu_);
    static constexpr char hex[] = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 16; ++i) id += hex[rng_() % 16];
    return id;
  }

  void persist_from(const Session& s, std::size_t from) {
    for (std::size_t i = from; i < s.turns.size(); ++i) append(s.id, to_json(s.turns[i]));
  }

  void append(const std::string& id, const json& record) {
    if (!opts_.transcript_dir) return;
    auto path = *opts_.transcript_dir / (id + ".jsonl");
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << record.dump() << '\n';
    if (!out) throw Error(ErrorKind::Io, "cannot append to " + path.string());
  }

  Registry registry_;
  std::shared_ptr<const Gateway> gateway_;
  EngineOptions opts_;
  std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_{std::random_device{}()};
};

}  // namespace ontoctl
