#pragma once

// CART induction with Gini impurity and extraction of leaf-path rules that
// can be used directly as ontology class definitions.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ontoctl/csv.hpp"
#include "ontoctl/error.hpp"
#include "ontoctl/ontology.hpp"
#include "ontoctl/text_metrics.hpp"

namespace ontoctl {

struct LabeledSample {
  std::vector<double> features;
  std::string label;
};

struct TreeConfig {
  int max_depth = 5;
  int min_leaf = 1;
  std::vector<std::string> label_set;
  std::vector<std::string> feature_names{k_feature_names.begin(), k_feature_names.end()};
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  std::string label;  // majority label (the prediction at leaves)
  std::size_t samples = 0;
  double gini = 0;
  std::vector<std::size_t> counts;  // per label_set entry

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
 public:
  DecisionTree() = default;
  DecisionTree(std::vector<TreeNode> nodes, std::vector<std::string> feature_names, std::vector<std::string> labels)
      : nodes_(std::move(nodes)), feature_names_(std::move(feature_names)), labels_(std::move(labels)) {}

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& root() const { return nodes_.front(); }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& labels() const { return labels_; }

  /// Index of the leaf reached by x (left iff x[feature] < threshold).
  std::size_t leaf_for(std::span<const double> x) const {
    std::size_t i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
    }
    return i;
  }

  const std::string& predict(std::span<const double> x) const { return nodes_[leaf_for(x)].label; }

  int depth() const { return depth_from(0); }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

 private:
  int depth_from(std::size_t i) const {
    const auto& n = nodes_[i];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(n.left)), depth_from(static_cast<std::size_t>(n.right)));
  }

  std::vector<TreeNode> nodes_;
  std::vector<std::string> feature_names_;
  std::vector<std::string> labels_;
};

/// 1 - sum of squared class proportions.
inline double gini(std::span<const std::string> labels) {
  if (labels.empty()) throw Error(ErrorKind::EmptyNode, "gini of an empty node");
  std::map<std::string_view, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  double n = static_cast<double>(labels.size());
  double sum = 0;
  for (const auto& [_, c] : counts) sum += (c / n) * (c / n);
  return 1.0 - sum;
}

namespace detail {

inline double gini_counts(const std::vector<std::size_t>& counts, std::size_t n) {
  double sum = 0;
  for (auto c : counts) {
    double p = static_cast<double>(c) / static_cast<double>(n);
    sum += p * p;
  }
  return 1.0 - sum;
}

// Threshold strictly above a and at most b, so that a goes left and b right.
inline double split_point(double a, double b) {
  double mid = a / 2 + b / 2;
  return (mid > a && mid <= b) ? mid : b;
}

class CartBuilder {
 public:
  CartBuilder(std::span<const LabeledSample> data, const TreeConfig& cfg) : data_(data), cfg_(cfg) {
    for (std::size_t i = 0; i < cfg.label_set.size(); ++i) label_id_[cfg.label_set[i]] = i;
    ids_.reserve(data.size());
    for (const auto& s : data) {
      auto it = label_id_.find(s.label);
      if (it == label_id_.end()) throw Error(ErrorKind::UnknownLabel, "label '" + s.label + "' not in label set");
      if (s.features.size() != cfg.feature_names.size())
        throw Error(ErrorKind::InvalidArgument, "sample has " + std::to_string(s.features.size()) +
                                                    " features, expected " + std::to_string(cfg.feature_names.size()));
      ids_.push_back(it->second);
    }
  }

  std::vector<TreeNode> build() {
    std::vector<std::size_t> all(data_.size());
    std::iota(all.begin(), all.end(), 0);
    grow(all, 0);
    return std::move(nodes_);
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0;
    // Maximised score sum_k nL_k^2 / nL + sum_k nR_k^2 / nR, kept as an exact
    // fraction so ties are detected without rounding.
    unsigned __int128 num = 0;
    unsigned __int128 den = 1;
  };

  int grow(const std::vector<std::size_t>& idx, int depth) {
    TreeNode node;
    node.samples = idx.size();
    node.counts.assign(cfg_.label_set.size(), 0);
    for (auto i : idx) ++node.counts[ids_[i]];
    node.gini = gini_counts(node.counts, idx.size());
    std::size_t best = 0;
    for (std::size_t k = 1; k < node.counts.size(); ++k)
      if (node.counts[k] > node.counts[best]) best = k;
    node.label = cfg_.label_set[best];

    int at = static_cast<int>(nodes_.size());
    nodes_.push_back(node);

    bool pure = node.counts[best] == idx.size();
    if (pure || depth >= cfg_.max_depth || idx.size() < 2 * static_cast<std::size_t>(cfg_.min_leaf)) return at;

    auto split = best_split(idx);
    if (split.feature < 0) return at;

    std::vector<std::size_t> left, right;
    for (auto i : idx)
      (data_[i].features[static_cast<std::size_t>(split.feature)] < split.threshold ? left : right).push_back(i);

    int l = grow(left, depth + 1);
    int r = grow(right, depth + 1);
    auto& n = nodes_[static_cast<std::size_t>(at)];
    n.feature = split.feature;
    n.threshold = split.threshold;
    n.left = l;
    n.right = r;
    return at;
  }

  Split best_split(const std::vector<std::size_t>& idx) const {
    Split best;
    bool found = false;
    const std::size_t n = idx.size();
    const std::size_t k = cfg_.label_set.size();
    const std::size_t min_leaf = static_cast<std::size_t>(cfg_.min_leaf);
    std::vector<std::size_t> order(idx);

    for (std::size_t f = 0; f < cfg_.feature_names.size(); ++f) {
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return data_[a].features[f] < data_[b].features[f]; });
      std::vector<std::size_t> lc(k, 0), rc(k, 0);
      for (auto i : order) ++rc[ids_[i]];
      unsigned __int128 a = 0, b = 0;
      for (auto c : rc) b += static_cast<unsigned __int128>(c) * c;

      for (std::size_t pos = 1; pos < n; ++pos) {
        std::size_t moved = ids_[order[pos - 1]];
        a += 2 * lc[moved] + 1;
        b -= 2 * rc[moved] - 1;
        ++lc[moved];
        --rc[moved];

        double lo = data_[order[pos - 1]].features[f];
        double hi = data_[order[pos]].features[f];
        if (!(lo < hi)) continue;
        std::size_t nl = pos, nr = n - pos;
        if (nl < min_leaf || nr < min_leaf) continue;

        unsigned __int128 num = a * nr + b * nl;
        unsigned __int128 den = static_cast<unsigned __int128>(nl) * nr;
        if (!found || num * best.den > best.num * den) {
          best = {static_cast<int>(f), split_point(lo, hi), num, den};
          found = true;
        }
      }
    }
    return best;
  }

  std::span<const LabeledSample> data_;
  const TreeConfig& cfg_;
  std::map<std::string, std::size_t, std::less<>> label_id_;
  std::vector<std::size_t> ids_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

/// Greedy CART. Candidate thresholds are midpoints between consecutive
/// distinct values; ties go to the lowest feature index, then the lowest
/// threshold. Leaves take the majority label, ties to the earliest label.
inline DecisionTree fit_tree(std::span<const LabeledSample> data, const TreeConfig& cfg) {
  if (data.empty()) throw Error(ErrorKind::EmptyDataset, "no training samples");
  if (cfg.max_depth < 1 || cfg.min_leaf < 1)
    throw Error(ErrorKind::InvalidArgument, "max_depth and min_leaf must be >= 1");
  if (cfg.label_set.empty()) throw Error(ErrorKind::InvalidArgument, "empty label set");
  auto nodes = detail::CartBuilder(data, cfg).build();
  return DecisionTree(std::move(nodes), cfg.feature_names, cfg.label_set);
}

/// One conjunctive rule per leaf, path bounds collapsed to the tightest
/// [lo, hi) interval per feature. The rules partition feature space.
inline std::vector<Rule> extract_rules(const DecisionTree& tree) {
  std::vector<Rule> rules;
  const auto& names = tree.feature_names();
  std::vector<Interval> box;
  for (const auto& name : names) box.push_back(Interval{name});

  auto walk = [&](auto&& self, std::size_t i) -> void {
    const auto& n = tree.nodes()[i];
    if (n.is_leaf()) {
      Rule r;
      r.label = n.label;
      for (const auto& iv : box)
        if (std::isfinite(iv.lo) || std::isfinite(iv.hi)) r.predicates.emplace_back(iv);
      rules.push_back(std::move(r));
      return;
    }
    auto f = static_cast<std::size_t>(n.feature);
    Interval saved = box[f];
    box[f].hi = std::min(box[f].hi, n.threshold);
    self(self, static_cast<std::size_t>(n.left));
    box[f] = saved;
    box[f].lo = std::max(box[f].lo, n.threshold);
    self(self, static_cast<std::size_t>(n.right));
    box[f] = saved;
  };
  walk(walk, 0);
  return rules;
}

/// Wraps a tree's rules as an ontology over its numeric features.
inline OntologySpec rules_to_ontology(const DecisionTree& tree, std::string concept_name, bool ordinal) {
  OntologySpec spec;
  spec.concept_name = std::move(concept_name);
  spec.classes = tree.labels();
  spec.ordinal = ordinal;
  spec.description = "Induced from a decision tree (" + std::to_string(tree.leaf_count()) + " leaves).";
  for (const auto& name : tree.feature_names()) spec.descriptors.push_back({name, Descriptor::Kind::Numeric, {}});
  spec.rules = extract_rules(tree);
  return spec;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline json to_json(const DecisionTree& tree) {
  auto node_json = [&](auto&& self, std::size_t i) -> json {
    const auto& n = tree.nodes()[i];
    json j;
    if (n.is_leaf()) {
      j["label"] = n.label;
    } else {
      j["feature"] = tree.feature_names()[static_cast<std::size_t>(n.feature)];
      j["threshold"] = n.threshold;
    }
    j["samples"] = n.samples;
    j["gini"] = n.gini;
    j["counts"] = n.counts;
    if (!n.is_leaf()) {
      j["left"] = self(self, static_cast<std::size_t>(n.left));
      j["right"] = self(self, static_cast<std::size_t>(n.right));
    }
    return j;
  };
  return {{"feature_names", tree.feature_names()}, {"labels", tree.labels()}, {"root", node_json(node_json, 0)}};
}

inline DecisionTree tree_from_json(const json& doc, const std::string& source = "<tree>") {
  auto names = detail::require<std::vector<std::string>>(doc, "feature_names", source);
  auto labels = detail::require<std::vector<std::string>>(doc, "labels", source);
  if (!doc.contains("root")) throw Error(ErrorKind::SyntaxError, source + ": missing field 'root'");
  std::vector<TreeNode> nodes;

  auto read = [&](auto&& self, const json& j, const std::string& where) -> int {
    int at = static_cast<int>(nodes.size());
    nodes.emplace_back();
    TreeNode n;
    n.samples = j.value("samples", std::size_t{0});
    n.gini = j.value("gini", 0.0);
    if (j.contains("counts")) n.counts = j.at("counts").get<std::vector<std::size_t>>();
    if (j.contains("feature")) {
      auto fname = detail::require<std::string>(j, "feature", where);
      auto it = std::find(names.begin(), names.end(), fname);
      if (it == names.end()) throw Error(ErrorKind::UnknownDescriptor, where + ": unknown feature '" + fname + "'");
      n.feature = static_cast<int>(it - names.begin());
      n.threshold = detail::require<double>(j, "threshold", where);
      if (!j.contains("left") || !j.contains("right"))
        throw Error(ErrorKind::SyntaxError, where + ": internal node needs left and right");
      n.left = self(self, j.at("left"), where + "/left");
      n.right = self(self, j.at("right"), where + "/right");
    } else {
      n.label = detail::require<std::string>(j, "label", where);
      if (std::find(labels.begin(), labels.end(), n.label) == labels.end())
        throw Error(ErrorKind::UnknownLabel, where + ": label '" + n.label + "' not in labels");
    }
    nodes[static_cast<std::size_t>(at)] = std::move(n);
    return at;
  };
  read(read, doc.at("root"), source + "/root");
  return DecisionTree(std::move(nodes), std::move(names), std::move(labels));
}

inline DecisionTree load_tree(const std::string& path) {
  std::string text = detail::read_file(path);
  return tree_from_json(detail::parse_document(text, path), path);
}

inline std::string training_csv_header() {
  std::string h;
  for (auto n : k_feature_names) h += std::string(n) + ",";
  return h + "label";
}

/// Reads six-feature training rows. Labels not in `label_set` raise
/// UnknownLabel; an empty `label_set` accepts everything.
inline std::vector<LabeledSample> read_training_csv(std::istream& in, const std::vector<std::string>& label_set = {},
                                                    const std::string& source = "<csv>") {
  std::size_t line = 1;
  auto header = csv::read_row(in, line);
  if (!header || csv::join(*header) != training_csv_header())
    throw Error(ErrorKind::SyntaxError, source + ": line 1: expected header '" + training_csv_header() + "'");
  std::vector<LabeledSample> out;
  while (true) {
    std::size_t row_line = line;
    auto row = csv::read_row(in, line);
    if (!row) break;
    if (row->size() == 1 && row->front().empty()) continue;
    std::string where = source + ": line " + std::to_string(row_line);
    if (row->size() != k_feature_count + 1)
      throw Error(ErrorKind::SyntaxError, where + ": expected " + std::to_string(k_feature_count + 1) + " fields");
    LabeledSample s;
    for (std::size_t i = 0; i < k_feature_count; ++i) {
      const auto& f = (*row)[i];
      double v = 0;
      auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v))
        throw Error(ErrorKind::SyntaxError, where + ": bad number '" + f + "'");
      s.features.push_back(v);
    }
    s.label = row->back();
    if (!label_set.empty() && std::find(label_set.begin(), label_set.end(), s.label) == label_set.end())
      throw Error(ErrorKind::UnknownLabel, where + ": label '" + s.label + "'");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw Error(ErrorKind::EmptyDataset, source + ": no rows");
  return out;
}

inline std::vector<LabeledSample> load_training_csv(const std::string& path,
                                                    const std::vector<std::string>& label_set = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  return read_training_csv(in, label_set, path);
}

}  // namespace ontoctl
