#pragma once

// Zero-shot generation protocol and its metrics: accuracy, F1 (per class,
// macro, weighted, spread), ordinal MAE, multiclass MCC and the B_r
// generation-quality ratio.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ontoctl/annotators.hpp"
#include "ontoctl/error.hpp"
#include "ontoctl/gateway.hpp"
#include "ontoctl/http.hpp"
#include "ontoctl/ontology.hpp"
#include "ontoctl/parallel.hpp"
#include "ontoctl/text_metrics.hpp"

namespace ontoctl {

struct LabelPair {
  std::string requested;
  std::optional<std::string> detected;  // empty when the item failed
  std::string error;

  bool operator==(const LabelPair&) const = default;
};

// -- classification metrics --------------------------------------------------

struct Confusion {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> matrix;  // [requested][detected]
  std::size_t total = 0;

  std::size_t row_sum(std::size_t i) const {
    std::size_t s = 0;
    for (auto v : matrix[i]) s += v;
    return s;
  }
  std::size_t col_sum(std::size_t j) const {
    std::size_t s = 0;
    for (const auto& row : matrix) s += row[j];
    return s;
  }
  std::size_t trace() const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < matrix.size(); ++i) s += matrix[i][i];
    return s;
  }
};

/// Counts successful pairs only; failed items carry no detected class.
inline Confusion confusion_matrix(const std::vector<LabelPair>& pairs, const std::vector<std::string>& labels) {
  Confusion c{labels, std::vector<std::vector<std::size_t>>(labels.size(), std::vector<std::size_t>(labels.size(), 0)), 0};
  auto index = [&](const std::string& l) {
    auto it = std::find(labels.begin(), labels.end(), l);
    if (it == labels.end()) throw Error(ErrorKind::UnknownClass, "label '" + l + "' is not in the class list");
    return static_cast<std::size_t>(it - labels.begin());
  };
  for (const auto& p : pairs) {
    if (!p.detected) continue;
    ++c.matrix[index(p.requested)][index(*p.detected)];
    ++c.total;
  }
  if (c.total == 0) throw Error(ErrorKind::EmptyPairs, "no successful label pairs");
  return c;
}

inline double accuracy(const Confusion& c) { return static_cast<double>(c.trace()) / static_cast<double>(c.total); }

/// One-vs-rest F1 per label; 0 when precision + recall is 0.
inline std::vector<double> per_class_f1(const Confusion& c) {
  std::vector<double> f1(c.labels.size(), 0.0);
  for (std::size_t k = 0; k < c.labels.size(); ++k) {
    double tp = static_cast<double>(c.matrix[k][k]);
    double predicted = static_cast<double>(c.col_sum(k));
    double actual = static_cast<double>(c.row_sum(k));
    double precision = predicted > 0 ? tp / predicted : 0.0;
    double recall = actual > 0 ? tp / actual : 0.0;
    f1[k] = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return f1;
}

inline double f1_macro(const Confusion& c) {
  auto f = per_class_f1(c);
  double s = 0;
  for (double v : f) s += v;
  return s / static_cast<double>(f.size());
}

/// Weighted by requested-class support.
inline double f1_weighted(const Confusion& c) {
  auto f = per_class_f1(c);
  double s = 0;
  for (std::size_t k = 0; k < f.size(); ++k) s += f[k] * static_cast<double>(c.row_sum(k));
  return s / static_cast<double>(c.total);
}

/// Population standard deviation of the per-class F1 values.
inline double f1_std(const Confusion& c) {
  auto f = per_class_f1(c);
  double mean = 0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0;
  for (double v : f) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(f.size()));
}

/// Mean |index(requested) - index(detected)| over the ontology's class order.
inline double mae_ordinal(const std::vector<LabelPair>& pairs, const OntologySpec& spec) {
  if (!spec.ordinal) throw Error(ErrorKind::NotOrdinal, "'" + spec.concept_name + "' is not an ordinal concept");
  double sum = 0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    if (!p.detected) continue;
    auto a = spec.class_index(p.requested), b = spec.class_index(*p.detected);
    if (!a || !b) throw Error(ErrorKind::UnknownClass, "pair (" + p.requested + ", " + *p.detected + ") outside the class list");
    sum += std::abs(static_cast<double>(*a) - static_cast<double>(*b));
    ++n;
  }
  if (n == 0) throw Error(ErrorKind::EmptyPairs, "no successful label pairs");
  return sum / static_cast<double>(n);
}

/// Gorodkin's R_K; 0 when either denominator factor vanishes.
inline double mcc(const Confusion& c) {
  double s = static_cast<double>(c.total), correct = static_cast<double>(c.trace());
  double pt = 0, pp = 0, tt = 0;
  for (std::size_t k = 0; k < c.labels.size(); ++k) {
    double p = static_cast<double>(c.col_sum(k)), t = static_cast<double>(c.row_sum(k));
    pt += p * t;
    pp += p * p;
    tt += t * t;
  }
  double d1 = s * s - pp, d2 = s * s - tt;
  if (d1 <= 0 || d2 <= 0) return 0.0;
  return (correct * s - pt) / std::sqrt(d1 * d2);
}

// -- B_r ---------------------------------------------------------------------

class SimilarityBackend {
 public:
  virtual ~SimilarityBackend() = default;
  /// Symmetric, in [0, 1].
  virtual double similarity(std::string_view a, std::string_view b) const = 0;
  virtual std::string_view name() const = 0;
};

namespace detail {

inline std::vector<std::string> lower_words(std::string_view text) {
  std::vector<std::string> out;
  TokenizedText t;
  try {
    t = segment(text);
  } catch (const Error&) {
    return out;  // no words
  }
  for (const auto& s : t.sentences)
    for (const auto& w : s) out.push_back(w.form);
  return out;
}

}  // namespace detail

/// F1 of the lowercased word multisets.
class UnigramF1 : public SimilarityBackend {
 public:
  double similarity(std::string_view a, std::string_view b) const override {
    auto wa = detail::lower_words(a), wb = detail::lower_words(b);
    if (wa.empty() && wb.empty()) return 1.0;
    if (wa.empty() || wb.empty()) return 0.0;
    std::unordered_map<std::string, long> counts;
    for (const auto& w : wa) ++counts[w];
    double overlap = 0;
    for (const auto& w : wb)
      if (auto it = counts.find(w); it != counts.end() && it->second > 0) {
        --it->second;
        overlap += 1;
      }
    if (overlap == 0) return 0.0;
    double p = overlap / static_cast<double>(wb.size()), r = overlap / static_cast<double>(wa.size());
    return 2 * p * r / (p + r);
  }
  std::string_view name() const override { return "unigram-f1"; }
};

/// Greedy token matching over contextual token embeddings fetched from a
/// remote service: POST {"text"} -> {"embeddings": [[float...], ...]} with
/// one vector per token. Precision and recall average each side's best
/// cosine match; the score is their harmonic mean clipped to [0, 1].
class EmbeddingSimilarity : public SimilarityBackend {
 public:
  EmbeddingSimilarity(std::string url, RemoteOptions opts = RemoteOptions::from_env())
      : url_(std::move(url)), endpoint_(http::parse_url(url_)), opts_(opts) {}

  double similarity(std::string_view a, std::string_view b) const override {
    auto ea = embed(a), eb = embed(b);
    if (ea->empty() && eb->empty()) return 1.0;
    if (ea->empty() || eb->empty()) return 0.0;
    auto best_mean = [](const Matrix& from, const Matrix& to) {
      double sum = 0;
      for (const auto& u : from) {
        double best = -1;
        for (const auto& v : to) best = std::max(best, cosine(u, v));
        sum += best;
      }
      return sum / static_cast<double>(from.size());
    };
    double r = best_mean(*ea, *eb), p = best_mean(*eb, *ea);
    if (p + r <= 0) return 0.0;
    return std::clamp(2 * p * r / (p + r), 0.0, 1.0);
  }
  std::string_view name() const override { return "embedding-greedy"; }

 private:
  using Matrix = std::vector<std::vector<double>>;

  static double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < std::min(u.size(), v.size()); ++i) {
      dot += u[i] * v[i];
      nu += u[i] * u[i];
      nv += v[i] * v[i];
    }
    return nu > 0 && nv > 0 ? dot / std::sqrt(nu * nv) : 0.0;
  }

  std::shared_ptr<const Matrix> embed(std::string_view text) const {
    std::string key(text);
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    std::string body = json{{"text", key}}.dump(), last;
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
        auto m = std::make_shared<const Matrix>(json::parse(res.body).at("embeddings").get<Matrix>());
        std::lock_guard lock(mu_);
        return cache_.emplace(key, m).first->second;
      } catch (const json::exception& e) {
        throw Error(ErrorKind::BackendUnavailable, url_ + " returned malformed embeddings: " + e.what());
      }
    }
    throw Error(ErrorKind::BackendUnavailable, url_ + ": " + last);
  }

  std::string url_;
  http::Endpoint endpoint_;
  RemoteOptions opts_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, std::shared_ptr<const Matrix>> cache_;
};

inline constexpr double k_br_epsilon = 1e-6;

struct BrResult {
  double value = 0;        // numerator / denominator, 0 when degenerate
  double numerator = 0;    // post vs pre seeds
  double denominator = 0;  // pre seeds among themselves
  bool degenerate = false;
};

/// `pre[i]` holds the seeds generated for prompt i before fine-tuning,
/// `post[i]` the generation after. The denominator averages similarity over
/// distinct seed pairs only; self-pairs would pin it to 1.
inline BrResult br_score(const std::vector<std::vector<std::string>>& pre, const std::vector<std::string>& post,
                         const SimilarityBackend& sim) {
  if (pre.empty()) throw Error(ErrorKind::EmptyPairs, "no prompts");
  if (pre.size() != post.size())
    throw Error(ErrorKind::InvalidArgument, "pre has " + std::to_string(pre.size()) + " prompts, post has " +
                                                std::to_string(post.size()));
  BrResult r;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const auto& seeds = pre[i];
    if (seeds.size() < 2) throw Error(ErrorKind::InvalidArgument, "prompt " + std::to_string(i) + " needs at least 2 seeds");
    double num = 0;
    for (const auto& s : seeds) num += sim.similarity(post[i], s);
    r.numerator += num / static_cast<double>(seeds.size());
    double den = 0;
    std::size_t n = 0;
    for (std::size_t a = 0; a < seeds.size(); ++a)
      for (std::size_t b = a + 1; b < seeds.size(); ++b, ++n) den += sim.similarity(seeds[a], seeds[b]);
    r.denominator += den / static_cast<double>(n);
  }
  r.numerator /= static_cast<double>(pre.size());
  r.denominator /= static_cast<double>(pre.size());
  r.degenerate = r.denominator <= k_br_epsilon;
  r.value = r.degenerate ? 0.0 : r.numerator / r.denominator;
  return r;
}

inline json to_json(const BrResult& r) {
  return {{"value", r.degenerate ? json(nullptr) : json(r.value)},
          {"numerator", r.numerator},
          {"denominator", r.denominator},
          {"degenerate_denominator", r.degenerate}};
}

// -- zero-shot generation ----------------------------------------------------

struct EvalItem {
  std::size_t question = 0;
  std::string requested;
  std::string raw;
  std::string clean;
  std::optional<std::string> detected;
  std::string error;
  std::optional<FeatureVector> features;
};

struct EvalReport {
  std::string concept_name;
  std::vector<std::string> classes;
  std::string template_id;
  std::string endpoint;
  std::string question_set;
  std::vector<EvalItem> items;
  std::vector<LabelPair> pairs;
  std::size_t failures = 0;

  // Over successful pairs; absent when every item failed.
  std::optional<Confusion> confusion;
  double accuracy = 0;
  double f1_weighted = 0;
  double f1_macro = 0;
  std::vector<double> f1_per_class;
  double f1_std = 0;
  double f1_min = 0;
  double f1_max = 0;
  std::optional<double> mae;
  double mcc = 0;
  std::optional<BrResult> br;
  std::string br_caveat;  // set when B_r is reported for a non-ordinal concept
};

struct EvalOptions {
  std::string template_id = "zero-shot";
  std::size_t parallelism = 4;
  std::string endpoint;
  std::string question_set;
};

/// Fills the aggregate fields of a report from its pairs.
inline void aggregate(EvalReport& r, const OntologySpec& spec) {
  r.failures = 0;
  for (const auto& p : r.pairs)
    if (!p.detected) ++r.failures;
  r.confusion.reset();
  r.mae.reset();
  if (r.failures == r.pairs.size()) return;
  r.confusion = confusion_matrix(r.pairs, spec.classes);
  r.accuracy = accuracy(*r.confusion);
  r.f1_per_class = per_class_f1(*r.confusion);
  r.f1_macro = f1_macro(*r.confusion);
  r.f1_weighted = f1_weighted(*r.confusion);
  r.f1_std = f1_std(*r.confusion);
  r.f1_min = *std::min_element(r.f1_per_class.begin(), r.f1_per_class.end());
  r.f1_max = *std::max_element(r.f1_per_class.begin(), r.f1_per_class.end());
  if (spec.ordinal) r.mae = mae_ordinal(r.pairs, spec);
  r.mcc = mcc(*r.confusion);
}

/// Every question is asked once per class with that class's control code;
/// the clean reply is annotated and compared with the request. Item failures
/// are recorded and excluded from the metrics.
inline EvalReport zero_shot_eval(const std::vector<std::string>& questions, const OntologySpec& spec,
                                 const Annotator& annotator, const Gateway& gateway, const EvalOptions& opts = {}) {
  if (questions.empty()) throw Error(ErrorKind::EmptyPairs, "empty question set");
  if (!builtin_template_set().templates.contains(opts.template_id))
    throw Error(ErrorKind::UnknownTemplate, "no template '" + opts.template_id + "'");
  EvalReport r;
  r.concept_name = spec.concept_name;
  r.classes = spec.classes;
  r.template_id = opts.template_id;
  r.endpoint = opts.endpoint.empty() ? std::string(gateway.name()) : opts.endpoint;
  r.question_set = opts.question_set;
  for (std::size_t q = 0; q < questions.size(); ++q)
    for (const auto& c : spec.classes) r.items.push_back({q, c, {}, {}, {}, {}, {}});

  parallel_for(r.items.size(), opts.parallelism, [&](std::size_t i) {
    auto& item = r.items[i];
    try {
      auto bundle = build_control_prompt({{"user", questions[item.question]}}, item.requested, spec, opts.template_id);
      auto g = gateway.complete(bundle);
      item.raw = g.raw;
      item.clean = g.clean;
    } catch (const Error& e) {
      item.error = std::string("gateway: ") + e.what();
      return;
    }
    try {
      item.features = features(item.clean);
    } catch (const Error&) {
    }
    try {
      item.detected = annotator.annotate(item.clean);
    } catch (const Error& e) {
      item.error = std::string("annotation: ") + e.what();
    }
  });
  for (const auto& item : r.items) r.pairs.push_back({item.requested, item.detected, item.error});
  aggregate(r, spec);
  return r;
}

/// Attaches a B_r score. Control over a non-ordinal concept such as the
/// polarity profile is expected to move meaning, so the score is flagged there.
inline void attach_br(EvalReport& r, const BrResult& br, const OntologySpec& spec) {
  r.br = br;
  r.br_caveat = spec.ordinal ? std::string{}
                             : "B_r measures semantic shift; for '" + spec.concept_name +
                                   "' the controlled attribute itself changes meaning, so a low value is expected";
}

inline std::vector<std::string> load_questions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);)
    if (!detail::blank(line)) out.emplace_back(detail::trim(line));
  return out;
}

inline json to_json(const EvalReport& r) {
  json j;
  j["concept"] = r.concept_name;
  j["classes"] = r.classes;
  j["template"] = r.template_id;
  j["endpoint"] = r.endpoint;
  j["question_set"] = r.question_set;
  std::size_t evaluated = r.pairs.size() - r.failures;
  j["total_items"] = r.pairs.size();
  j["evaluated"] = evaluated;
  j["failures"] = r.failures;
  j["caveat"] = r.failures ? json("metrics cover " + std::to_string(evaluated) + " of " + std::to_string(r.pairs.size()) +
                                  " items; " + std::to_string(r.failures) + " failed")
                           : json(nullptr);
  if (r.confusion) {
    json per = json::object();
    for (std::size_t k = 0; k < r.classes.size(); ++k) per[r.classes[k]] = r.f1_per_class[k];
    j["metrics"] = {{"accuracy", r.accuracy},
                    {"f1_weighted", r.f1_weighted},
                    {"f1_macro", r.f1_macro},
                    {"f1_per_class", per},
                    {"f1_std", r.f1_std},
                    {"f1_range", {r.f1_min, r.f1_max}},
                    {"mae", r.mae ? json(*r.mae) : json(nullptr)},
                    {"mcc", r.mcc}};
    j["confusion"] = {{"labels", r.confusion->labels}, {"matrix", r.confusion->matrix}};
  } else {
    j["metrics"] = nullptr;
    j["confusion"] = nullptr;
  }
  j["br"] = r.br ? to_json(*r.br) : json(nullptr);
  if (r.br) j["br"]["caveat"] = r.br_caveat.empty() ? json(nullptr) : json(r.br_caveat);
  j["pairs"] = json::array();
  for (const auto& p : r.pairs) {
    json pj{{"requested", p.requested}, {"detected", p.detected ? json(*p.detected) : json(nullptr)}};
    if (!p.error.empty()) pj["error"] = p.error;
    j["pairs"].push_back(pj);
  }
  j["generations"] = json::array();
  json columns{{"question", json::array()}, {"requested", json::array()}, {"detected", json::array()}};
  for (auto name : k_feature_names) columns[std::string(name)] = json::array();
  for (const auto& it : r.items) {
    json g{{"question", it.question}, {"requested", it.requested}, {"raw", it.raw}, {"clean", it.clean},
           {"detected", it.detected ? json(*it.detected) : json(nullptr)}};
    if (!it.error.empty()) g["error"] = it.error;
    if (it.features) {
      json f = json::object();
      auto v = it.features->values();
      for (std::size_t k = 0; k < k_feature_count; ++k) f[std::string(k_feature_names[k])] = v[k];
      g["features"] = f;
      columns["question"].push_back(it.question);
      columns["requested"].push_back(it.requested);
      columns["detected"].push_back(it.detected ? json(*it.detected) : json(nullptr));
      for (std::size_t k = 0; k < k_feature_count; ++k) columns[std::string(k_feature_names[k])].push_back(v[k]);
    }
    j["generations"].push_back(g);
  }
  j["feature_columns"] = columns;
  return j;
}

}  // namespace ontoctl
