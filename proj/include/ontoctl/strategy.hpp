#pragma once

// Declarative conversation strategies: which class the next agent utterance
// should belong to, given the class detected in the latest user utterance.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "ontoctl/error.hpp"
#include "ontoctl/ontology.hpp"

namespace ontoctl {

struct StrategySpec {
  enum class Kind { OrdinalMax, TransitionTable };

  std::string name;
  std::string ontology;  // concept the strategy is written against
  Kind kind = Kind::OrdinalMax;
  std::map<std::string, std::string, std::less<>> table;
};

/// Running maximum for ordinal-max strategies; unused by transition tables.
struct StrategyState {
  std::optional<std::string> current_max;

  bool operator==(const StrategyState&) const = default;
};

/// Checks that the strategy can drive the given ontology: ordinal-max needs an
/// ordinal concept, a transition table must be total over its classes.
inline void validate_strategy(const StrategySpec& strategy, const OntologySpec& onto) {
  if (!strategy.ontology.empty() && strategy.ontology != onto.concept_name)
    throw Error(ErrorKind::InvalidStrategy,
                "strategy '" + strategy.name + "' targets '" + strategy.ontology + "', not '" + onto.concept_name + "'");
  if (strategy.kind == StrategySpec::Kind::OrdinalMax) {
    if (!onto.ordinal)
      throw Error(ErrorKind::InvalidStrategy, "ordinal-max requires an ordinal concept; '" + onto.concept_name + "' is not");
    return;
  }
  for (const auto& c : onto.classes)
    if (!strategy.table.contains(c))
      throw Error(ErrorKind::InvalidStrategy, "transition table has no entry for '" + c + "'");
  for (const auto& [from, to] : strategy.table) {
    if (!onto.has_class(from)) throw Error(ErrorKind::UnknownClass, "transition from unknown class '" + from + "'");
    if (!onto.has_class(to)) throw Error(ErrorKind::UnknownClass, "transition to unknown class '" + to + "'");
  }
}

inline StrategyState initial_state(const StrategySpec& strategy, const OntologySpec& onto) {
  if (strategy.kind == StrategySpec::Kind::OrdinalMax) return {onto.classes.front()};
  return {};
}

/// Target class for the next agent utterance and the updated state.
inline std::pair<std::string, StrategyState> next_target(std::string_view detected, const StrategyState& state,
                                                         const StrategySpec& strategy, const OntologySpec& onto) {
  auto idx = onto.class_index(detected);
  if (!idx) throw Error(ErrorKind::UnknownClass, "detected class '" + std::string(detected) + "' is not in '" + onto.concept_name + "'");

  if (strategy.kind == StrategySpec::Kind::TransitionTable) {
    auto it = strategy.table.find(detected);
    if (it == strategy.table.end()) throw Error(ErrorKind::InvalidStrategy, "no transition for '" + std::string(detected) + "'");
    return {it->second, state};
  }

  std::size_t current = 0;
  if (state.current_max) {
    auto cur = onto.class_index(*state.current_max);
    if (!cur) throw Error(ErrorKind::UnknownClass, "state holds unknown class '" + *state.current_max + "'");
    current = *cur;
  }
  const std::string& target = onto.classes[std::max(current, *idx)];
  return {target, StrategyState{target}};
}

inline StrategySpec parse_strategy(std::string_view text, const std::string& source = "<strategy>") {
  json doc = detail::parse_document(text, source);
  StrategySpec s;
  auto kind = detail::require<std::string>(doc, "kind", source);
  s.name = doc.value("name", std::string{});
  s.ontology = doc.value("ontology", std::string{});
  if (kind == "ordinal-max") {
    s.kind = StrategySpec::Kind::OrdinalMax;
  } else if (kind == "transition-table") {
    s.kind = StrategySpec::Kind::TransitionTable;
    s.table = detail::require<std::map<std::string, std::string, std::less<>>>(doc, "table", source);
    if (s.table.empty()) throw Error(ErrorKind::InvalidStrategy, source + ": empty transition table");
  } else {
    throw Error(ErrorKind::SyntaxError, source + "/kind: unknown strategy kind '" + kind + "'");
  }
  return s;
}

inline StrategySpec load_strategy(const std::string& path) { return parse_strategy(detail::read_file(path), path); }

inline json to_json(const StrategySpec& s) {
  json j;
  if (!s.name.empty()) j["name"] = s.name;
  if (!s.ontology.empty()) j["ontology"] = s.ontology;
  j["kind"] = s.kind == StrategySpec::Kind::OrdinalMax ? "ordinal-max" : "transition-table";
  if (s.kind == StrategySpec::Kind::TransitionTable) {
    json t = json::object();
    for (const auto& [k, v] : s.table) t[k] = v;
    j["table"] = t;
  }
  return j;
}

inline json to_json(const StrategyState& st) {
  json j = json::object();
  if (st.current_max) j["current_max"] = *st.current_max;
  return j;
}

/// The debate table: align with the user's load except for loaded negatives,
/// invert positive (and non-loaded negative) polarity, answer neutral
/// polarity positively when loaded and negatively otherwise.
inline StrategySpec default_polarity_table() {
  StrategySpec s;
  s.name = "debate";
  s.ontology = "PolarityProfile";
  s.kind = StrategySpec::Kind::TransitionTable;
  s.table = {{"L+", "L-"}, {"L-", "~L-"}, {"L0", "L+"}, {"~L+", "~L-"}, {"~L-", "~L+"}, {"~L0", "~L-"}};
  return s;
}

}  // namespace ontoctl
