#pragma once

// Class definitions as conjunctions of interval / equality predicates over
// descriptors, a document parser, class inference and a consistency checker
// (pairwise disjointness + exhaustiveness) for that fragment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ontoctl/error.hpp"

namespace ontoctl {

using json = nlohmann::ordered_json;

inline constexpr double k_inf = std::numeric_limits<double>::infinity();

/// Numeric constraint; the default convention is [lo, hi).
struct Interval {
  std::string feature;
  double lo = -k_inf;
  double hi = k_inf;
  bool lo_closed = true;
  bool hi_closed = false;

  bool contains(double x) const {
    if (std::isnan(x)) return false;
    bool above = lo_closed ? x >= lo : x > lo;
    bool below = hi_closed ? x <= hi : x < hi;
    return above && below;
  }

  bool empty() const { return lo > hi || (lo == hi && !(lo_closed && hi_closed)); }

  Interval intersect(const Interval& o) const {
    Interval r{feature};
    if (lo > o.lo) {
      r.lo = lo, r.lo_closed = lo_closed;
    } else if (o.lo > lo) {
      r.lo = o.lo, r.lo_closed = o.lo_closed;
    } else {
      r.lo = lo, r.lo_closed = lo_closed && o.lo_closed;
    }
    if (hi < o.hi) {
      r.hi = hi, r.hi_closed = hi_closed;
    } else if (o.hi < hi) {
      r.hi = o.hi, r.hi_closed = o.hi_closed;
    } else {
      r.hi = hi, r.hi_closed = hi_closed && o.hi_closed;
    }
    return r;
  }

  // Some point inside a non-empty interval, preferring "round" values.
  double sample() const {
    bool finite_lo = std::isfinite(lo), finite_hi = std::isfinite(hi);
    if (finite_lo && finite_hi) {
      if (lo_closed) return lo;
      if (hi_closed) return hi;
      return lo + (hi - lo) / 2;
    }
    if (finite_lo) return lo_closed ? lo : lo + 1;
    if (finite_hi) return hi_closed ? hi : hi - 1;
    return 0.0;
  }

  bool operator==(const Interval&) const = default;
};

struct Equals {
  std::string name;
  std::string symbol;
  bool operator==(const Equals&) const = default;
};

using Predicate = std::variant<Interval, Equals>;

inline const std::string& predicate_subject(const Predicate& p) {
  return std::visit(
      [](const auto& v) -> const std::string& {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Interval>)
          return v.feature;
        else
          return v.name;
      },
      p);
}

struct Rule {
  std::vector<Predicate> predicates;
  std::string label;

  const Interval* interval_for(std::string_view feature) const {
    for (const auto& p : predicates)
      if (auto* iv = std::get_if<Interval>(&p); iv && iv->feature == feature) return iv;
    return nullptr;
  }
  const Equals* equals_for(std::string_view name) const {
    for (const auto& p : predicates)
      if (auto* eq = std::get_if<Equals>(&p); eq && eq->name == name) return eq;
    return nullptr;
  }

  bool operator==(const Rule&) const = default;
};

struct Descriptor {
  enum class Kind { Numeric, Categorical };
  std::string name;
  Kind kind = Kind::Numeric;
  std::vector<std::string> symbols;  // categorical only

  bool operator==(const Descriptor&) const = default;
};

struct DescriptorValues {
  std::map<std::string, double, std::less<>> numeric;
  std::map<std::string, std::string, std::less<>> categorical;

  bool operator==(const DescriptorValues&) const = default;
};

struct OntologySpec {
  std::string concept_name;
  std::vector<std::string> classes;
  bool ordinal = false;
  std::string description;
  std::vector<Descriptor> descriptors;
  std::vector<Rule> rules;

  std::optional<std::size_t> class_index(std::string_view name) const {
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) return std::nullopt;
    return static_cast<std::size_t>(it - classes.begin());
  }
  bool has_class(std::string_view name) const { return class_index(name).has_value(); }

  const Descriptor* descriptor(std::string_view name) const {
    for (const auto& d : descriptors)
      if (d.name == name) return &d;
    return nullptr;
  }

  bool operator==(const OntologySpec&) const = default;
};

/// Merges repeated predicates on the same descriptor so every descriptor is
/// constrained at most once. Returns false if the conjunction is unsatisfiable.
inline bool collapse_predicates(Rule& rule) {
  std::vector<Predicate> merged;
  for (auto& p : rule.predicates) {
    const auto& subject = predicate_subject(p);
    auto it = std::find_if(merged.begin(), merged.end(),
                           [&](const Predicate& q) { return predicate_subject(q) == subject; });
    if (it == merged.end()) {
      merged.push_back(p);
      continue;
    }
    if (auto* a = std::get_if<Interval>(&*it); a && std::holds_alternative<Interval>(p)) {
      *a = a->intersect(std::get<Interval>(p));
      if (a->empty()) return false;
    } else if (auto* e = std::get_if<Equals>(&*it); e && std::holds_alternative<Equals>(p)) {
      if (e->symbol != std::get<Equals>(p).symbol) return false;
    } else {
      return false;
    }
  }
  rule.predicates = std::move(merged);
  return true;
}

// ---------------------------------------------------------------------------
// Document format
// ---------------------------------------------------------------------------

namespace detail {

inline std::string line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline json parse_document(std::string_view text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::SyntaxError, source + ": " + line_col(text, e.byte) + ": " + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline double bound_value(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return k_inf;
    if (s == "-inf") return -k_inf;
  }
  throw Error(ErrorKind::SyntaxError, where + ": bound must be a number");
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key))
    throw Error(ErrorKind::SyntaxError, where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::SyntaxError, where + "/" + key + ": wrong type");
  }
}

}  // namespace detail

/// Parses an ontology document. Syntax errors report line and column;
/// semantic errors report the JSON pointer of the offending element.
inline OntologySpec parse_ontology(std::string_view text, const std::string& source = "<ontology>") {
  json doc = detail::parse_document(text, source);
  if (!doc.is_object()) throw Error(ErrorKind::SyntaxError, source + ": top level must be an object");

  OntologySpec spec;
  spec.concept_name = detail::require<std::string>(doc, "concept", source);
  spec.classes = detail::require<std::vector<std::string>>(doc, "classes", source);
  if (doc.contains("ordinal")) spec.ordinal = detail::require<bool>(doc, "ordinal", source);
  if (doc.contains("description")) spec.description = detail::require<std::string>(doc, "description", source);
  if (spec.concept_name.empty()) throw Error(ErrorKind::SyntaxError, source + "/concept: empty");
  if (spec.classes.size() < 2) throw Error(ErrorKind::SyntaxError, source + "/classes: need at least two classes");
  {
    std::set<std::string> seen;
    for (const auto& c : spec.classes) {
      if (c.empty() || c.find_first_of("[]") != std::string::npos)
        throw Error(ErrorKind::SyntaxError, source + "/classes: invalid class name '" + c + "'");
      if (!seen.insert(c).second) throw Error(ErrorKind::SyntaxError, source + "/classes: duplicate '" + c + "'");
    }
  }

  const json& descs = doc.contains("descriptors") ? doc.at("descriptors") : json::object();
  if (!descs.is_object()) throw Error(ErrorKind::SyntaxError, source + "/descriptors: must be an object");
  for (const auto& [name, decl] : descs.items()) {
    std::string where = source + "/descriptors/" + name;
    Descriptor d{name};
    if (decl.is_string() && decl.get<std::string>() == "numeric") {
      d.kind = Descriptor::Kind::Numeric;
    } else if (decl.is_array() || (decl.is_object() && decl.contains("categorical"))) {
      d.kind = Descriptor::Kind::Categorical;
      const json& syms = decl.is_array() ? decl : decl.at("categorical");
      try {
        d.symbols = syms.get<std::vector<std::string>>();
      } catch (const json::exception&) {
        throw Error(ErrorKind::SyntaxError, where + ": symbols must be strings");
      }
      if (d.symbols.empty()) throw Error(ErrorKind::SyntaxError, where + ": empty symbol list");
    } else {
      throw Error(ErrorKind::SyntaxError, where + ": expected \"numeric\" or a symbol list");
    }
    spec.descriptors.push_back(std::move(d));
  }

  if (!doc.contains("rules") || !doc.at("rules").is_array() || doc.at("rules").empty())
    throw Error(ErrorKind::EmptyRuleSet, source + "/rules: no rules");
  std::size_t ri = 0;
  for (const auto& r : doc.at("rules")) {
    std::string where = source + "/rules/" + std::to_string(ri++);
    Rule rule;
    rule.label = detail::require<std::string>(r, "label", where);
    if (!spec.has_class(rule.label))
      throw Error(ErrorKind::UnknownClass, where + ": label '" + rule.label + "' is not a declared class");
    const json& preds = r.contains("predicates") ? r.at("predicates") : json::array();
    if (!preds.is_array()) throw Error(ErrorKind::SyntaxError, where + "/predicates: must be a list");
    std::size_t pi = 0;
    for (const auto& p : preds) {
      std::string pw = where + "/predicates/" + std::to_string(pi++);
      if (!p.is_object()) throw Error(ErrorKind::SyntaxError, pw + ": must be an object");
      if (p.contains("feature")) {
        Interval iv{detail::require<std::string>(p, "feature", pw)};
        const Descriptor* d = spec.descriptor(iv.feature);
        if (!d) throw Error(ErrorKind::UnknownDescriptor, pw + ": undeclared feature '" + iv.feature + "'");
        if (d->kind != Descriptor::Kind::Numeric)
          throw Error(ErrorKind::SyntaxError, pw + ": '" + iv.feature + "' is categorical");
        if (p.contains("lo") && !p.at("lo").is_null()) iv.lo = detail::bound_value(p.at("lo"), pw + "/lo");
        if (p.contains("hi") && !p.at("hi").is_null()) iv.hi = detail::bound_value(p.at("hi"), pw + "/hi");
        if (p.contains("lo_closed")) iv.lo_closed = detail::require<bool>(p, "lo_closed", pw);
        if (p.contains("hi_closed")) iv.hi_closed = detail::require<bool>(p, "hi_closed", pw);
        if (iv.empty()) throw Error(ErrorKind::SyntaxError, pw + ": empty interval");
        rule.predicates.emplace_back(std::move(iv));
      } else if (p.contains("name")) {
        Equals eq{detail::require<std::string>(p, "name", pw), detail::require<std::string>(p, "equals", pw)};
        const Descriptor* d = spec.descriptor(eq.name);
        if (!d) throw Error(ErrorKind::UnknownDescriptor, pw + ": undeclared descriptor '" + eq.name + "'");
        if (d->kind != Descriptor::Kind::Categorical)
          throw Error(ErrorKind::SyntaxError, pw + ": '" + eq.name + "' is numeric");
        if (std::find(d->symbols.begin(), d->symbols.end(), eq.symbol) == d->symbols.end())
          throw Error(ErrorKind::UnknownDescriptor,
                      pw + ": symbol '" + eq.symbol + "' not declared for '" + eq.name + "'");
        rule.predicates.emplace_back(std::move(eq));
      } else {
        throw Error(ErrorKind::SyntaxError, pw + ": expected {feature, lo, hi} or {name, equals}");
      }
    }
    if (!collapse_predicates(rule)) throw Error(ErrorKind::SyntaxError, where + ": contradictory predicates");
    spec.rules.push_back(std::move(rule));
  }
  return spec;
}

inline OntologySpec load_ontology(const std::string& path) {
  return parse_ontology(detail::read_file(path), path);
}

inline json predicate_to_json(const Predicate& p) {
  if (const auto* iv = std::get_if<Interval>(&p)) {
    json j = {{"feature", iv->feature}};
    if (std::isfinite(iv->lo)) j["lo"] = iv->lo;
    if (std::isfinite(iv->hi)) j["hi"] = iv->hi;
    if (!iv->lo_closed && std::isfinite(iv->lo)) j["lo_closed"] = false;
    if (iv->hi_closed && std::isfinite(iv->hi)) j["hi_closed"] = true;
    return j;
  }
  const auto& eq = std::get<Equals>(p);
  return {{"name", eq.name}, {"equals", eq.symbol}};
}

inline json to_json(const OntologySpec& spec) {
  json j;
  j["concept"] = spec.concept_name;
  j["classes"] = spec.classes;
  j["ordinal"] = spec.ordinal;
  if (!spec.description.empty()) j["description"] = spec.description;
  json descs = json::object();
  for (const auto& d : spec.descriptors) {
    if (d.kind == Descriptor::Kind::Numeric)
      descs[d.name] = "numeric";
    else
      descs[d.name] = d.symbols;
  }
  j["descriptors"] = descs;
  json rules = json::array();
  for (const auto& r : spec.rules) {
    json preds = json::array();
    for (const auto& p : r.predicates) preds.push_back(predicate_to_json(p));
    rules.push_back({{"label", r.label}, {"predicates", preds}});
  }
  j["rules"] = rules;
  return j;
}

inline json to_json(const DescriptorValues& v) {
  json j = json::object();
  for (const auto& [k, x] : v.numeric) j[k] = x;
  for (const auto& [k, s] : v.categorical) j[k] = s;
  return j;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

inline bool rule_matches(const Rule& rule, const DescriptorValues& values) {
  for (const auto& p : rule.predicates) {
    if (const auto* iv = std::get_if<Interval>(&p)) {
      auto it = values.numeric.find(iv->feature);
      if (it == values.numeric.end())
        throw Error(ErrorKind::MissingDescriptor, "no value for numeric descriptor '" + iv->feature + "'");
      if (!iv->contains(it->second)) return false;
    } else {
      const auto& eq = std::get<Equals>(p);
      auto it = values.categorical.find(eq.name);
      if (it == values.categorical.end())
        throw Error(ErrorKind::MissingDescriptor, "no value for categorical descriptor '" + eq.name + "'");
      if (it->second != eq.symbol) return false;
    }
  }
  return true;
}

/// Label of the rule(s) matching the values. Throws NoRuleMatches when the
/// spec has a gap here and AmbiguousMatch when rules of different labels
/// overlap here.
inline const std::string& classify(const DescriptorValues& values, const OntologySpec& spec) {
  const Rule* hit = nullptr;
  for (const auto& rule : spec.rules) {
    if (!rule_matches(rule, values)) continue;
    if (hit && hit->label != rule.label)
      throw Error(ErrorKind::AmbiguousMatch, "rules for '" + hit->label + "' and '" + rule.label + "' both match");
    if (!hit) hit = &rule;
  }
  if (!hit) throw Error(ErrorKind::NoRuleMatches, "no rule of '" + spec.concept_name + "' matches");
  return hit->label;
}

// ---------------------------------------------------------------------------
// Consistency
// ---------------------------------------------------------------------------

struct Violation {
  enum class Kind { Overlap, Gap };
  Kind kind;
  std::vector<std::size_t> rules;  // indices into spec.rules (overlap only)
  DescriptorValues witness;
  std::string message;
};

struct ConsistencyReport {
  std::vector<Violation> violations;
  std::vector<std::string> unused_classes;
  bool gaps_truncated = false;

  bool consistent() const { return violations.empty(); }
};

inline constexpr double k_sweep_rel_eps = 1e-9;
inline constexpr double k_sweep_sentinel = 1e12;

namespace detail {

inline DescriptorValues default_values(const OntologySpec& spec) {
  DescriptorValues v;
  for (const auto& d : spec.descriptors) {
    if (d.kind == Descriptor::Kind::Numeric)
      v.numeric[d.name] = 0.0;
    else
      v.categorical[d.name] = d.symbols.front();
  }
  return v;
}

class GapSweep {
 public:
  GapSweep(const OntologySpec& spec, std::size_t max_gaps, ConsistencyReport& report)
      : spec_(spec), max_gaps_(max_gaps), report_(report) {}

  void run() {
    std::vector<std::size_t> all(spec_.rules.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    DescriptorValues partial = default_values(spec_);
    visit(0, all, partial);
  }

 private:
  using Active = std::vector<std::size_t>;

  std::vector<double> numeric_candidates(const Descriptor& d, const Active& active) const {
    std::vector<double> bounds;
    for (auto i : active) {
      if (const auto* iv = spec_.rules[i].interval_for(d.name)) {
        if (std::isfinite(iv->lo)) bounds.push_back(iv->lo);
        if (std::isfinite(iv->hi)) bounds.push_back(iv->hi);
      }
    }
    std::vector<double> pts{-k_sweep_sentinel, k_sweep_sentinel};
    if (bounds.empty()) pts.push_back(0.0);
    for (double b : bounds) {
      double eps = k_sweep_rel_eps * std::max(1.0, std::abs(b));
      pts.insert(pts.end(), {b - eps, b, b + eps});
    }
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
  }

  bool admits(std::size_t rule, const Descriptor& d, double x) const {
    const auto* iv = spec_.rules[rule].interval_for(d.name);
    return !iv || iv->contains(x);
  }
  bool admits(std::size_t rule, const Descriptor& d, const std::string& s) const {
    const auto* eq = spec_.rules[rule].equals_for(d.name);
    return !eq || eq->symbol == s;
  }

  void record_gap(const DescriptorValues& witness) {
    if (gaps_ >= max_gaps_) {
      report_.gaps_truncated = true;
      return;
    }
    ++gaps_;
    report_.violations.push_back({Violation::Kind::Gap, {}, witness, "no rule covers this point"});
  }

  void visit(std::size_t dim, const Active& active, DescriptorValues& partial) {
    if (dim == spec_.descriptors.size()) return;
    if (!explored_.insert({dim, active}).second) return;
    const Descriptor& d = spec_.descriptors[dim];

    auto step = [&](auto value, auto assign) {
      Active next;
      for (auto i : active)
        if (admits(i, d, value)) next.push_back(i);
      assign(value);
      if (next.empty())
        record_gap(partial);
      else
        visit(dim + 1, next, partial);
    };

    if (d.kind == Descriptor::Kind::Numeric) {
      double saved = partial.numeric[d.name];
      for (double x : numeric_candidates(d, active))
        step(x, [&](double v) { partial.numeric[d.name] = v; });
      partial.numeric[d.name] = saved;
    } else {
      std::string saved = partial.categorical[d.name];
      for (const auto& s : d.symbols) step(s, [&](const std::string& v) { partial.categorical[d.name] = v; });
      partial.categorical[d.name] = saved;
    }
  }

  const OntologySpec& spec_;
  std::size_t max_gaps_;
  std::size_t gaps_ = 0;
  ConsistencyReport& report_;
  std::set<std::pair<std::size_t, Active>> explored_;
};

// Intersection of two rules' constraint boxes; nullopt when disjoint.
inline std::optional<DescriptorValues> overlap_witness(const OntologySpec& spec, const Rule& a, const Rule& b) {
  DescriptorValues w = default_values(spec);
  for (const auto& d : spec.descriptors) {
    if (d.kind == Descriptor::Kind::Numeric) {
      Interval box{d.name};
      if (const auto* iv = a.interval_for(d.name)) box = box.intersect(*iv);
      if (const auto* iv = b.interval_for(d.name)) box = box.intersect(*iv);
      if (box.empty()) return std::nullopt;
      w.numeric[d.name] = box.sample();
    } else {
      const auto* ea = a.equals_for(d.name);
      const auto* eb = b.equals_for(d.name);
      if (ea && eb && ea->symbol != eb->symbol) return std::nullopt;
      if (ea) w.categorical[d.name] = ea->symbol;
      else if (eb) w.categorical[d.name] = eb->symbol;
    }
  }
  return w;
}

}  // namespace detail

/// Verifies that rules of different labels never overlap and that every
/// point of the descriptor domain is covered. Each violation carries a
/// witness that reproduces it through classify().
inline ConsistencyReport check_consistency(const OntologySpec& spec, std::size_t max_gaps = 32) {
  ConsistencyReport report;
  for (std::size_t i = 0; i < spec.rules.size(); ++i) {
    for (std::size_t j = i + 1; j < spec.rules.size(); ++j) {
      const auto& a = spec.rules[i];
      const auto& b = spec.rules[j];
      if (a.label == b.label) continue;
      if (auto w = detail::overlap_witness(spec, a, b))
        report.violations.push_back({Violation::Kind::Overlap, {i, j}, std::move(*w),
                                     "rules for '" + a.label + "' and '" + b.label + "' overlap"});
    }
  }
  detail::GapSweep(spec, max_gaps, report).run();

  for (const auto& c : spec.classes) {
    bool used = std::any_of(spec.rules.begin(), spec.rules.end(), [&](const Rule& r) { return r.label == c; });
    if (!used) report.unused_classes.push_back(c);
  }
  return report;
}

inline json to_json(const ConsistencyReport& report, const OntologySpec& spec) {
  json violations = json::array();
  for (const auto& v : report.violations) {
    json j;
    j["kind"] = v.kind == Violation::Kind::Overlap ? "overlap" : "gap";
    j["message"] = v.message;
    if (!v.rules.empty()) {
      json rules = json::array();
      for (auto i : v.rules) rules.push_back({{"index", i}, {"label", spec.rules[i].label}});
      j["rules"] = rules;
    }
    j["witness"] = to_json(v.witness);
    violations.push_back(j);
  }
  return {{"concept", spec.concept_name},
          {"consistent", report.consistent()},
          {"violations", violations},
          {"unused_classes", report.unused_classes},
          {"gaps_truncated", report.gaps_truncated}};
}

}  // namespace ontoctl
