#pragma once

// Utterance corpora: ingestion, annotation, label wrapping and class
// balancing for constrained-generation fine-tuning data.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ontoctl/annotators.hpp"
#include "ontoctl/csv.hpp"
#include "ontoctl/error.hpp"
#include "ontoctl/ontology.hpp"
#include "ontoctl/parallel.hpp"

namespace ontoctl {

struct UtteranceRecord {
  std::string id;
  std::string text;
  std::optional<std::string> cls;
  std::string source;

  bool operator==(const UtteranceRecord&) const = default;
};

namespace detail {

inline constexpr std::string_view k_space = " \t\r\n\f\v";

inline std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(k_space);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(k_space) - b + 1);
}

inline bool blank(std::string_view s) { return trim(s).empty(); }

// Parses "[ concept : X ]" exactly spanning `group`; returns trimmed X.
inline std::optional<std::string> parse_label_group(std::string_view group, std::string_view concept_name) {
  if (group.size() < 2 || group.front() != '[' || group.back() != ']') return std::nullopt;
  auto inner = trim(group.substr(1, group.size() - 2));
  if (inner.substr(0, concept_name.size()) != concept_name) return std::nullopt;
  inner = trim(inner.substr(concept_name.size()));
  if (inner.empty() || inner.front() != ':') return std::nullopt;
  auto label = trim(inner.substr(1));
  if (label.empty() || label.find_first_of("[]") != std::string_view::npos) return std::nullopt;
  return std::string(label);
}

}  // namespace detail

struct Stripped {
  std::string text;
  std::optional<std::string> cls;  // class of the leading group

  bool operator==(const Stripped&) const = default;
};

/// Removes one leading and one trailing label group for `concept_name`, if
/// present. Either side may be missing; generations often drop the right one.
inline Stripped strip(std::string_view s, std::string_view concept_name) {
  Stripped out;
  std::string_view rest = s;
  bool touched = false;

  auto lead = detail::trim(rest);
  if (!lead.empty() && lead.front() == '[') {
    auto close = lead.find(']');
    if (close != std::string_view::npos) {
      if (auto label = detail::parse_label_group(lead.substr(0, close + 1), concept_name)) {
        out.cls = std::move(label);
        rest = lead.substr(close + 1);
        touched = true;
      }
    }
  }

  auto tail = detail::trim(rest);
  if (!tail.empty() && tail.back() == ']') {
    auto open = tail.rfind('[');
    if (open != std::string_view::npos && detail::parse_label_group(tail.substr(open), concept_name)) {
      rest = tail.substr(0, open);
      touched = true;
    }
  }

  out.text = touched ? std::string(detail::trim(rest)) : std::string(s);
  return out;
}

/// "[concept: class] text [concept: class]". Surrounding whitespace of the
/// text is dropped so the sample has exactly one space on each side.
inline std::string wrap(std::string_view text, std::string_view concept_name, std::string_view cls) {
  auto body = detail::trim(text);
  if (body.empty()) throw Error(ErrorKind::BlankInput, "cannot wrap blank text");
  std::string reserved = "[" + std::string(concept_name) + ":";
  if (text.find(reserved) != std::string_view::npos)
    throw Error(ErrorKind::ReservedPattern, "text contains the reserved pattern '" + reserved + "'");
  auto probe = strip(body, concept_name);
  if (probe.cls || probe.text != body)
    throw Error(ErrorKind::ReservedPattern, "text starts or ends with a label group for '" + std::string(concept_name) + "'");
  std::string code = "[" + std::string(concept_name) + ": " + std::string(cls) + "]";
  return code + " " + std::string(body) + " " + code;
}

// -- records ---------------------------------------------------------------

inline json to_json(const UtteranceRecord& r) {
  json j{{"id", r.id}, {"text", r.text}};
  if (r.cls) j["class"] = *r.cls;
  if (!r.source.empty()) j["source"] = r.source;
  return j;
}

/// One JSON object per line: {"id", "text", "class"?, "source"?}. Blank
/// lines are skipped; a missing id defaults to the 1-based line number.
inline std::vector<UtteranceRecord> read_jsonl_records(std::istream& in, const std::string& source = "<records>") {
  std::vector<UtteranceRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (detail::blank(line)) continue;
    std::string where = source + ":" + std::to_string(n);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::SyntaxError, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw Error(ErrorKind::SyntaxError, where + ": record needs a string \"text\"");
    UtteranceRecord r;
    r.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump()) : std::to_string(n);
    r.text = j["text"].get<std::string>();
    if (j.contains("class") && !j["class"].is_null()) r.cls = j["class"].get<std::string>();
    r.source = j.value("source", std::string{});
    if (detail::blank(r.text)) throw Error(ErrorKind::BlankInput, where + ": record " + r.id + " has blank text");
    out.push_back(std::move(r));
  }
  return out;
}

/// CSV with a header row naming at least "text"; "id", "class" and "source"
/// columns are optional. An empty class cell means unannotated.
inline std::vector<UtteranceRecord> read_csv_records(std::istream& in, const std::string& source = "<records>") {
  std::size_t line = 1;
  auto header = csv::read_row(in, line);
  if (!header) return {};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header->size(); ++i) col[std::string(detail::trim((*header)[i]))] = i;
  if (!col.contains("text")) throw Error(ErrorKind::SyntaxError, source + ": header has no \"text\" column");
  auto cell = [&](const csv::Row& row, const char* name) -> std::string {
    auto it = col.find(name);
    return it != col.end() && it->second < row.size() ? row[it->second] : std::string{};
  };
  std::vector<UtteranceRecord> out;
  for (std::size_t rowno = 1;; ++rowno) {
    std::size_t at = line;
    auto row = csv::read_row(in, line);
    if (!row) break;
    if (row->size() == 1 && detail::blank((*row)[0])) continue;
    UtteranceRecord r;
    r.id = cell(*row, "id");
    if (r.id.empty()) r.id = std::to_string(rowno);
    r.text = cell(*row, "text");
    if (auto c = cell(*row, "class"); !c.empty()) r.cls = c;
    r.source = cell(*row, "source");
    if (detail::blank(r.text))
      throw Error(ErrorKind::BlankInput, source + ": line " + std::to_string(at) + ": record " + r.id + " has blank text");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<UtteranceRecord> load_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  if (std::filesystem::path(path).extension() == ".csv") return read_csv_records(in, path);
  return read_jsonl_records(in, path);
}

/// Fills in the class of every unlabeled record (or every record with
/// `overwrite`). Errors carry the record id of the first failing record.
inline void annotate_records(std::vector<UtteranceRecord>& records, const Annotator& annotator,
                             std::size_t threads = default_parallelism(), bool overwrite = false) {
  auto errors = parallel_for(records.size(), threads, [&](std::size_t i) {
    if (!records[i].cls || overwrite) records[i].cls = annotator.annotate(records[i].text);
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), "record " + records[i].id + ": " + e.message());
    }
  }
}

// -- balancing and corpus emission ----------------------------------------

namespace detail {

// Fisher-Yates with modulo draws: identical sequences on every platform,
// unlike std::shuffle.
template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

inline std::map<std::string, std::size_t> class_counts(const std::vector<UtteranceRecord>& records,
                                                       const std::vector<std::string>& classes) {
  std::map<std::string, std::size_t> counts;
  for (const auto& c : classes) counts[c] = 0;
  for (const auto& r : records)
    if (r.cls) ++counts[*r.cls];
  return counts;
}

}  // namespace detail

/// Downsamples every class to the minority count. Selection is seeded;
/// survivors keep their input order.
inline std::vector<UtteranceRecord> balance(const std::vector<UtteranceRecord>& records,
                                            const std::vector<std::string>& classes, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (const auto& c : classes) by_class[c];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.cls) throw Error(ErrorKind::UnannotatedRecord, "record " + r.id + " has no class");
    auto it = by_class.find(*r.cls);
    if (it == by_class.end()) throw Error(ErrorKind::UnknownClass, "record " + r.id + " has unknown class '" + *r.cls + "'");
    it->second.push_back(i);
  }
  std::size_t m = records.size();
  for (const auto& c : classes) {
    if (by_class[c].empty()) throw Error(ErrorKind::UnannotatedCorpus, "no records of class '" + c + "'");
    m = std::min(m, by_class[c].size());
  }
  std::vector<std::size_t> keep;
  std::uint64_t salt = 0;
  for (const auto& c : classes) {
    auto idx = by_class[c];
    detail::seeded_shuffle(idx, seed + 0x9e3779b97f4a7c15ULL * ++salt);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<UtteranceRecord> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(records[i]);
  return out;
}

struct CorpusOptions {
  double train_ratio = 0.8;
  double val_ratio = 0.2;
  std::uint64_t seed = 7;
  bool balance = false;
  std::size_t threads = default_parallelism();
};

/// Annotates, optionally balances, splits and wraps a record file. Writes
/// train.txt, val.txt and manifest.json into `out_dir`; returns the manifest.
inline json build_corpus(const std::string& input_path, const Annotator& annotator, const std::string& out_dir,
                         const CorpusOptions& opts = {}) {
  if (opts.train_ratio < 0 || opts.val_ratio < 0 || std::abs(opts.train_ratio + opts.val_ratio - 1.0) > 1e-9)
    throw Error(ErrorKind::InvalidArgument, "split ratios must be non-negative and sum to 1");
  const auto& spec = annotator.ontology();
  auto records = load_records(input_path);
  if (records.empty()) throw Error(ErrorKind::EmptyDataset, input_path + " holds no records");
  for (const auto& r : records)
    if (r.cls && !spec.has_class(*r.cls))
      throw Error(ErrorKind::UnknownClass, "record " + r.id + " has unknown class '" + *r.cls + "'");
  annotate_records(records, annotator, opts.threads);
  if (opts.balance) records = balance(records, spec.classes, opts.seed);
  std::vector<std::string> wrapped;
  wrapped.reserve(records.size());
  for (const auto& r : records) {
    try {
      wrapped.push_back(wrap(r.text, spec.concept_name, *r.cls));
    } catch (const Error& e) {
      throw Error(e.kind(), "record " + r.id + ": " + e.message());
    }
  }

  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  detail::seeded_shuffle(order, opts.seed);
  auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(records.size()) * opts.train_ratio));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());

  std::filesystem::create_directories(out_dir);
  auto emit = [&](const std::vector<std::size_t>& idx, const std::string& name) {
    auto path = (std::filesystem::path(out_dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    std::map<std::string, std::size_t> counts;
    for (const auto& c : spec.classes) counts[c] = 0;
    for (auto i : idx) {
      out << wrapped[i] << '\n';
      ++counts[*records[i].cls];
    }
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
    json j{{"file", name}, {"count", idx.size()}, {"counts", json::object()}};
    for (const auto& c : spec.classes) j["counts"][c] = counts[c];
    return j;
  };

  json manifest;
  manifest["concept"] = spec.concept_name;
  manifest["input"] = std::filesystem::path(input_path).filename().string();
  manifest["seed"] = opts.seed;
  manifest["balanced"] = opts.balance;
  manifest["split"] = {{"train", opts.train_ratio}, {"val", opts.val_ratio}};
  manifest["total"] = records.size();
  manifest["counts"] = json::object();
  auto counts = detail::class_counts(records, spec.classes);
  for (const auto& c : spec.classes) manifest["counts"][c] = counts[c];
  manifest["train"] = emit(train, "train.txt");
  manifest["val"] = emit(val, "val.txt");

  auto path = (std::filesystem::path(out_dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << manifest.dump(2) << '\n';
  return manifest;
}

}  // namespace ontoctl
