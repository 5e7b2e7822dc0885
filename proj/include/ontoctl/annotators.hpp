#pragma once

// Text -> ontology class. Numeric descriptors come from text_metrics;
// categorical descriptors come from pluggable classifier backends (a remote
// service speaking {text} -> {label, confidence}, or desk-scale lexicons).

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ontoctl/error.hpp"
#include "ontoctl/http.hpp"
#include "ontoctl/lexicons.hpp"
#include "ontoctl/ontology.hpp"
#include "ontoctl/text_metrics.hpp"

namespace ontoctl {

struct ClassifierVerdict {
  std::string label;
  double confidence = 0;
};

class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  virtual ClassifierVerdict classify(std::string_view text) const = 0;
  virtual const std::vector<std::string>& symbols() const = 0;
  virtual std::string_view kind() const = 0;
};

inline constexpr double k_lexicon_tau = 0.05;

/// Net lexicon hits per word: positive above tau, negative below -tau.
class LexiconPolarity : public ClassifierBackend {
 public:
  explicit LexiconPolarity(double tau = k_lexicon_tau, const Lexicon& positive = positive_lexicon(),
                           const Lexicon& negative = negative_lexicon())
      : tau_(tau), positive_(positive), negative_(negative) {}

  double score(std::string_view text) const {
    auto t = segment(text);
    double pos = 0, neg = 0, words = 0;
    for (const auto& s : t.sentences) {
      for (const auto& w : s) {
        words += 1;
        if (positive_.contains(w.form)) pos += 1;
        if (negative_.contains(w.form)) neg += 1;
      }
    }
    return (pos - neg) / words;
  }

  ClassifierVerdict classify(std::string_view text) const override {
    double s = score(text);
    std::string label = s > tau_ ? "positive" : s < -tau_ ? "negative" : "neutral";
    return {label, std::min(1.0, std::abs(s) / tau_)};
  }

  const std::vector<std::string>& symbols() const override {
    static const std::vector<std::string> s{"positive", "negative", "neutral"};
    return s;
  }
  std::string_view kind() const override { return "lexicon"; }

 private:
  double tau_;
  const Lexicon& positive_;
  const Lexicon& negative_;
};

/// Low-fidelity emotional-load heuristic: loaded iff the text has an
/// exclamation mark, a first/second-person pronoun together with an
/// emotion word, or a polarity score beyond 2 * tau.
class LexiconLoad : public ClassifierBackend {
 public:
  explicit LexiconLoad(double tau = k_lexicon_tau) : tau_(tau), polarity_(tau) {}

  ClassifierVerdict classify(std::string_view text) const override {
    static const Lexicon personal{"i",  "me",  "my",       "mine",  "myself", "we",   "us",        "our",
                                  "ours", "ourselves", "you", "your", "yours", "yourself", "yourselves"};
    auto t = segment(text);
    bool person = false, emotion = false;
    for (const auto& s : t.sentences) {
      for (const auto& w : s) {
        person = person || personal.contains(w.form);
        emotion = emotion || emotion_lexicon().contains(w.form);
      }
    }
    double score = std::abs(polarity_.score(text));
    bool loaded = text.find('!') != std::string_view::npos || (person && emotion) || score > 2 * tau_;
    if (loaded) return {"loaded", 1.0};
    return {"nonloaded", 1.0 - std::min(1.0, score / (2 * tau_))};
  }

  const std::vector<std::string>& symbols() const override {
    static const std::vector<std::string> s{"loaded", "nonloaded"};
    return s;
  }
  std::string_view kind() const override { return "lexicon"; }

 private:
  double tau_;
  LexiconPolarity polarity_;
};

struct RemoteOptions {
  std::chrono::milliseconds timeout{5000};
  int retries = 1;

  /// ONTO_CLF_TIMEOUT_MS and ONTO_CLF_RETRIES override the defaults.
  static RemoteOptions from_env() {
    RemoteOptions o;
    o.timeout = std::chrono::milliseconds(http::env_long("ONTO_CLF_TIMEOUT_MS", o.timeout.count()));
    o.retries = static_cast<int>(http::env_long("ONTO_CLF_RETRIES", o.retries));
    return o;
  }
};

/// Posts {"text": ...} and expects {"label": ..., "confidence": ...}.
class RemoteClassifier : public ClassifierBackend {
 public:
  RemoteClassifier(std::string url, std::vector<std::string> symbols, RemoteOptions opts = RemoteOptions::from_env())
      : url_(std::move(url)), endpoint_(http::parse_url(url_)), symbols_(std::move(symbols)), opts_(opts) {}

  ClassifierVerdict classify(std::string_view text) const override {
    std::string body = json{{"text", text}}.dump();
    std::string last;
    for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
      auto res = http::post_json(endpoint_, body, opts_.timeout);
      if (!res.status) {
        last = std::string(to_string(res.failure)) + " (" + res.detail + ")";
        continue;
      }
      if (*res.status != 200) {
        last = "HTTP " + std::to_string(*res.status);
        continue;
      }
      try {
        auto j = json::parse(res.body);
        ClassifierVerdict v{j.at("label").get<std::string>(), j.value("confidence", 1.0)};
        if (std::find(symbols_.begin(), symbols_.end(), v.label) == symbols_.end())
          throw Error(ErrorKind::BackendUnavailable, url_ + " returned undeclared label '" + v.label + "'");
        return v;
      } catch (const json::exception& e) {
        throw Error(ErrorKind::BackendUnavailable, url_ + " returned a malformed verdict: " + e.what());
      }
    }
    throw Error(ErrorKind::BackendUnavailable, url_ + ": " + last);
  }

  const std::vector<std::string>& symbols() const override { return symbols_; }
  std::string_view kind() const override { return "remote-http"; }

 private:
  std::string url_;
  http::Endpoint endpoint_;
  std::vector<std::string> symbols_;
  RemoteOptions opts_;
};

/// Maps utterance text to a class of one ontology.
class Annotator {
 public:
  virtual ~Annotator() = default;
  virtual std::string annotate(std::string_view text) const = 0;
  virtual const OntologySpec& ontology() const = 0;
};

using BackendMap = std::map<std::string, std::shared_ptr<const ClassifierBackend>, std::less<>>;

/// Computes every descriptor the ontology declares, then classifies.
class DescriptorAnnotator : public Annotator {
 public:
  DescriptorAnnotator(OntologySpec spec, BackendMap backends) : spec_(std::move(spec)), backends_(std::move(backends)) {
    for (const auto& d : spec_.descriptors) {
      if (d.kind == Descriptor::Kind::Numeric) {
        if (std::find(k_feature_names.begin(), k_feature_names.end(), d.name) == k_feature_names.end())
          throw Error(ErrorKind::UnknownDescriptor, "no text metric named '" + d.name + "'");
        numeric_ = true;
        continue;
      }
      auto it = backends_.find(d.name);
      if (it == backends_.end() || !it->second)
        throw Error(ErrorKind::UnknownDescriptor, "no classifier backend for '" + d.name + "'");
      for (const auto& s : it->second->symbols())
        if (std::find(d.symbols.begin(), d.symbols.end(), s) == d.symbols.end())
          throw Error(ErrorKind::UnknownDescriptor, "backend for '" + d.name + "' emits undeclared symbol '" + s + "'");
    }
  }

  DescriptorValues describe(std::string_view text) const {
    if (text.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos)
      throw Error(ErrorKind::BlankInput, "blank utterance");
    DescriptorValues v;
    if (numeric_) {
      auto f = features(text).values();
      for (std::size_t i = 0; i < k_feature_count; ++i) {
        std::string name(k_feature_names[i]);
        if (spec_.descriptor(name)) v.numeric[name] = f[i];
      }
    }
    for (const auto& d : spec_.descriptors)
      if (d.kind == Descriptor::Kind::Categorical) v.categorical[d.name] = backends_.at(d.name)->classify(text).label;
    return v;
  }

  std::string annotate(std::string_view text) const override { return classify(describe(text), spec_); }
  const OntologySpec& ontology() const override { return spec_; }

 private:
  OntologySpec spec_;
  BackendMap backends_;
  bool numeric_ = false;
};

inline std::string annotate_cefr(std::string_view text, const OntologySpec& ruleset) {
  auto f = features(text).values();
  DescriptorValues v;
  for (std::size_t i = 0; i < k_feature_count; ++i) v.numeric[std::string(k_feature_names[i])] = f[i];
  return classify(v, ruleset);
}

inline std::string annotate_polarity_profile(std::string_view text, const ClassifierBackend& load,
                                             const ClassifierBackend& polarity, const OntologySpec& spec) {
  if (text.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos)
    throw Error(ErrorKind::BlankInput, "blank utterance");
  DescriptorValues v;
  v.categorical["load"] = load.classify(text).label;
  v.categorical["polarity"] = polarity.classify(text).label;
  return classify(v, spec);
}

/// Backends for each categorical descriptor: a remote classifier when `urls`
/// names one or ONTO_CLF_<NAME>_URL is set, otherwise the lexicon stand-in
/// for `load` and `polarity`.
inline BackendMap default_backends(const OntologySpec& spec, const std::map<std::string, std::string, std::less<>>& urls = {}) {
  BackendMap out;
  for (const auto& d : spec.descriptors) {
    if (d.kind != Descriptor::Kind::Categorical) continue;
    std::string var = "ONTO_CLF_";
    for (char c : d.name) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    var += "_URL";
    if (auto it = urls.find(d.name); it != urls.end()) {
      out[d.name] = std::make_shared<RemoteClassifier>(it->second, d.symbols);
    } else if (auto url = http::env(var.c_str())) {
      out[d.name] = std::make_shared<RemoteClassifier>(*url, d.symbols);
    } else if (d.name == "load") {
      out[d.name] = std::make_shared<LexiconLoad>();
    } else if (d.name == "polarity") {
      out[d.name] = std::make_shared<LexiconPolarity>();
    } else {
      throw Error(ErrorKind::UnknownDescriptor, "descriptor '" + d.name + "' needs " + var);
    }
  }
  return out;
}

inline std::shared_ptr<Annotator> make_annotator(const OntologySpec& spec,
                                                 const std::map<std::string, std::string, std::less<>>& urls = {}) {
  return std::make_shared<DescriptorAnnotator>(spec, default_backends(spec, urls));
}

}  // namespace ontoctl
