// ontoctl: command-line front end for the ontology control engine.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error. Every subcommand
// accepts --json for machine-readable output on stdout; diagnostics go to
// stderr.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ontoctl/dataset.hpp"
#include "ontoctl/decision_tree.hpp"
#include "ontoctl/eval.hpp"
#include "ontoctl/server.hpp"
#include "ontoctl/text_metrics.hpp"

#ifndef ONTOCTL_RESOURCE_DIR
#define ONTOCTL_RESOURCE_DIR "resources"
#endif

namespace fs = std::filesystem;
using namespace ontoctl;

namespace {

struct Globals {
  bool json = false;
  std::string resources = ONTOCTL_RESOURCE_DIR;
};

std::string read_input(const std::string& path) {
  if (path == "-") return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  return ontoctl::detail::read_file(path);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
}

// A spec argument is a path; a bare bundled name ("cefr", "polarity",
// "harder_only", "debate") resolves into the resource directory.
std::string resolve(const Globals& g, const std::string& arg, const char* dir) {
  if (fs::exists(arg)) return arg;
  auto bundled = fs::path(g.resources) / dir / (arg + ".json");
  if (arg.find('/') == std::string::npos && fs::exists(bundled)) return bundled.string();
  throw Error(ErrorKind::Io, "no such file: " + arg);
}

json feature_json(const FeatureVector& f) {
  json j;
  auto v = f.values();
  for (std::size_t i = 0; i < k_feature_count; ++i) j[std::string(k_feature_names[i])] = v[i];
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::shared_ptr<const Gateway> gateway_for(const Globals& g, const std::vector<std::string>& mocks, const std::string& endpoint) {
  AppConfig c;
  c.resources = g.resources;
  for (const auto& m : mocks) c.mock_scripts.push_back(m);
  if (!endpoint.empty()) {
    auto gc = http::env("ONTO_LLM_URL") ? GatewayConfig::from_env() : GatewayConfig{};
    gc.url = endpoint;
    if (!http::env("ONTO_LLM_URL")) {
      gc.key = http::env("ONTO_LLM_KEY").value_or("");
      gc.model = http::env("ONTO_LLM_MODEL").value_or(gc.model);
    }
    c.gateway = gc;
  }
  return build_gateway(c);
}

// -- subcommands ---------------------------------------------------------------

int cmd_features(const Globals& g, const std::string& file, bool lines) {
  std::string text = read_input(file);
  if (!lines) {
    auto f = feature_json(features(text));
    if (g.json) {
      std::cout << f.dump(2) << '\n';
    } else {
      for (const auto& [name, v] : f.items()) std::cout << name << '\t' << v.get<double>() << '\n';
    }
    return 0;
  }
  std::istringstream in(text);
  std::size_t n = 0;
  if (!g.json) std::cout << training_csv_header().substr(0, training_csv_header().rfind(',')) << ",text\n";
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (ontoctl::detail::blank(line)) continue;
    auto f = features(line);
    if (g.json) {
      std::cout << json{{"line", n}, {"text", line}, {"features", feature_json(f)}}.dump() << '\n';
    } else {
      for (double v : f.values()) std::cout << v << ',';
      std::cout << csv::escape(line) << '\n';
    }
  }
  return 0;
}

int cmd_fit(const Globals& g, const std::string& train, int depth, int min_leaf, const std::string& labels,
            const std::string& out) {
  auto samples = load_training_csv(train);
  TreeConfig cfg;
  cfg.max_depth = depth;
  cfg.min_leaf = min_leaf;
  if (!labels.empty()) {
    cfg.label_set = split_list(labels);
  } else {
    static const std::vector<std::string> cefr{"A1", "A2", "B1", "B2", "C1", "C2"};
    bool all_cefr = std::all_of(samples.begin(), samples.end(), [&](const LabeledSample& s) {
      return std::find(cefr.begin(), cefr.end(), s.label) != cefr.end();
    });
    if (all_cefr) {
      cfg.label_set = cefr;
    } else {
      for (const auto& s : samples)
        if (std::find(cfg.label_set.begin(), cfg.label_set.end(), s.label) == cfg.label_set.end())
          cfg.label_set.push_back(s.label);
    }
  }
  auto tree = fit_tree(samples, cfg);
  std::size_t correct = 0;
  for (const auto& s : samples) correct += tree.predict(s.features) == s.label;
  double acc = static_cast<double>(correct) / static_cast<double>(samples.size());
  write_file(out, to_json(tree).dump(2) + "\n");
  json summary{{"tree", out},
               {"samples", samples.size()},
               {"depth", tree.depth()},
               {"leaves", tree.leaf_count()},
               {"labels", tree.labels()},
               {"training_accuracy", acc}};
  if (g.json) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::cout << "wrote " << out << ": " << tree.leaf_count() << " leaves, depth " << tree.depth()
              << ", training accuracy " << acc << '\n';
  }
  return 0;
}

int cmd_rules(const Globals& g, const std::string& tree_path, const std::string& concept_name, bool nominal,
              const std::string& out) {
  auto tree = load_tree(tree_path);
  auto spec = rules_to_ontology(tree, concept_name, !nominal);
  auto report = check_consistency(spec);
  write_file(out, to_json(spec).dump(2) + "\n");
  if (g.json) {
    std::cout << json{{"ontology", out}, {"rules", spec.rules.size()}, {"consistency", to_json(report, spec)}}.dump(2)
              << '\n';
  } else {
    std::cout << "wrote " << out << ": " << spec.rules.size() << " rules, "
              << (report.consistent() ? "consistent" : "INCONSISTENT") << '\n';
  }
  return report.consistent() ? 0 : 1;
}

int cmd_check(const Globals& g, const std::string& path) {
  auto spec = load_ontology(path);
  auto report = check_consistency(spec);
  if (g.json) {
    std::cout << to_json(report, spec).dump(2) << '\n';
  } else if (report.consistent()) {
    std::cout << "consistent\n";
    for (const auto& c : report.unused_classes) std::cout << "note: class '" << c << "' has no rule\n";
  } else {
    std::cout << "inconsistent: " << report.violations.size() << " violation(s)\n";
    for (const auto& v : report.violations)
      std::cout << "  " << v.message << "\n    witness: " << to_json(v.witness).dump() << '\n';
    if (report.gaps_truncated) std::cout << "  (gap listing truncated)\n";
  }
  return report.consistent() ? 0 : 1;
}

int cmd_annotate(const Globals& g, const std::string& onto, const std::string& corpus, const std::string& out,
                 std::size_t threads, bool overwrite) {
  auto spec = load_ontology(onto);
  auto annotator = make_annotator(spec);
  auto records = load_records(corpus);
  annotate_records(records, *annotator, threads, overwrite);
  std::ostringstream body;
  for (const auto& r : records) body << to_json(r).dump() << '\n';
  if (!out.empty()) write_file(out, body.str());
  auto counts = ontoctl::detail::class_counts(records, spec.classes);
  json summary{{"concept", spec.concept_name}, {"records", records.size()}, {"counts", json::object()}};
  for (const auto& c : spec.classes) summary["counts"][c] = counts[c];
  if (!out.empty()) summary["output"] = out;
  if (out.empty()) {
    std::cout << body.str();
  } else if (g.json) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::cout << "annotated " << records.size() << " records into " << out << '\n';
    for (const auto& c : spec.classes) std::cout << "  " << c << '\t' << counts[c] << '\n';
  }
  return 0;
}

int cmd_build_corpus(const Globals& g, const std::string& onto, const std::string& corpus, const std::string& out,
                     bool balanced, double split, std::uint64_t seed, std::size_t threads) {
  auto spec = load_ontology(onto);
  auto annotator = make_annotator(spec);
  CorpusOptions opts;
  opts.train_ratio = split;
  opts.val_ratio = std::round((1.0 - split) * 1e9) / 1e9;
  opts.seed = seed;
  opts.balance = balanced;
  opts.threads = threads;
  auto manifest = build_corpus(corpus, *annotator, out, opts);
  if (g.json) {
    std::cout << manifest.dump(2) << '\n';
  } else {
    std::cout << "wrote " << out << ": " << manifest["train"]["count"] << " train, " << manifest["val"]["count"]
              << " val\n";
  }
  return 0;
}

int cmd_converse(const Globals& g, const std::string& onto, const std::string& strategy, const std::vector<std::string>& mocks,
                 const std::string& endpoint, const std::string& template_id, const std::string& transcript_dir,
                 const std::string& resume, int noncompliance_retries) {
  auto spec = load_ontology(onto);
  auto report = check_consistency(spec);
  if (!report.consistent()) throw Error(ErrorKind::InvalidArgument, onto + ": ontology is inconsistent");
  auto strat = load_strategy(strategy);
  Registry registry;
  std::string concept_name = spec.concept_name;
  registry.add_ontology(std::move(spec));
  registry.add_strategy(strat);
  EngineOptions opts;
  opts.turn.template_id = template_id;
  opts.turn.max_retries_on_noncompliance = noncompliance_retries;
  if (!transcript_dir.empty()) opts.transcript_dir = transcript_dir;
  Engine engine(std::move(registry), gateway_for(g, mocks, endpoint), opts);

  std::string id = resume.empty() ? engine.create_session(concept_name, strat.name, template_id).id : engine.get(resume).id;
  if (!g.json) std::cerr << "session " << id << " (" << concept_name << ", " << strat.name << ")\n";
  const bool interactive = isatty(STDIN_FILENO);
  for (std::string line;;) {
    if (interactive && !g.json) std::cerr << "> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    if (ontoctl::detail::blank(line)) continue;
    auto turn = turn_response(engine.run_turn(id, line));
    if (g.json) {
      std::cout << turn.dump() << std::endl;
    } else {
      auto show = [](const json& v) { return v.is_null() ? std::string("?") : v.get<std::string>(); };
      std::cout << "user  [" << show(turn["detected"]) << "] -> target " << show(turn["target"]) << '\n'
                << "agent [" << show(turn["reply_detected"]) << "] " << (turn["compliant"] == true ? "ok" : "MISMATCH")
                << ": " << turn["reply"].get<std::string>() << std::endl;
    }
  }
  return 0;
}

BrResult br_from_file(const std::string& path, const std::string& embedding_url, std::string* backend = nullptr) {
  json doc = ontoctl::detail::parse_document(read_input(path), path);
  std::vector<std::vector<std::string>> pre;
  std::vector<std::string> post;
  try {
    pre = doc.at("pre").get<std::vector<std::vector<std::string>>>();
    post = doc.at("post").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SyntaxError, path + ": expected {\"pre\": [[...]], \"post\": [...]}: " + e.what());
  }
  std::unique_ptr<SimilarityBackend> sim;
  if (embedding_url.empty()) {
    sim = std::make_unique<UnigramF1>();
  } else {
    sim = std::make_unique<EmbeddingSimilarity>(embedding_url);
  }
  if (backend) *backend = std::string(sim->name());
  return br_score(pre, post, *sim);
}

int cmd_eval(const Globals& g, const std::string& onto, const std::string& questions_path, const std::vector<std::string>& mocks,
             const std::string& endpoint, const std::string& template_id, std::size_t parallel, const std::string& out,
             const std::string& br_input, const std::string& embedding_url) {
  auto spec = load_ontology(onto);
  auto annotator = make_annotator(spec);
  auto gateway = gateway_for(g, mocks, endpoint);
  EvalOptions opts;
  opts.template_id = template_id;
  opts.parallelism = parallel;
  opts.endpoint = !endpoint.empty() ? endpoint : mocks.empty() ? http::env("ONTO_LLM_URL").value_or("") : "mock";
  opts.question_set = fs::path(questions_path).filename().string();
  auto report = zero_shot_eval(load_questions(questions_path), spec, *annotator, *gateway, opts);
  if (!br_input.empty()) attach_br(report, br_from_file(br_input, embedding_url), spec);
  auto j = to_json(report);
  if (!out.empty()) write_file(out, j.dump(2) + "\n");
  if (g.json) {
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  std::cout << spec.concept_name << " / " << template_id << ": " << report.pairs.size() - report.failures << " of "
            << report.pairs.size() << " items evaluated\n";
  if (!report.confusion) {
    std::cout << "no successful items\n";
    return 1;
  }
  std::cout << "  accuracy     " << report.accuracy << '\n'
            << "  F1 weighted  " << report.f1_weighted << " +/- " << report.f1_std << '\n'
            << "  F1 macro     " << report.f1_macro << '\n';
  if (report.mae) std::cout << "  MAE          " << *report.mae << '\n';
  std::cout << "  MCC          " << report.mcc << '\n';
  if (report.br) {
    std::cout << "  B_r          ";
    if (report.br->degenerate) std::cout << "undefined (degenerate denominator)\n";
    else std::cout << report.br->value << '\n';
    if (!report.br_caveat.empty()) std::cout << "  note: " << report.br_caveat << '\n';
  }
  for (std::size_t i = 0; i < spec.classes.size(); ++i)
    std::cout << "  F1[" << spec.classes[i] << "] " << report.f1_per_class[i] << '\n';
  if (report.failures) std::cout << "  " << report.failures << " item(s) failed; metrics cover the rest\n";
  return 0;
}

int cmd_br(const Globals& g, const std::string& path, const std::string& embedding_url) {
  std::string backend;
  auto r = br_from_file(path, embedding_url, &backend);
  if (g.json) {
    auto j = to_json(r);
    j["backend"] = backend;
    std::cout << j.dump(2) << '\n';
  } else if (r.degenerate) {
    std::cout << "B_r undefined: pre-generation self-similarity " << r.denominator << " is degenerate\n";
  } else {
    std::cout << "B_r " << r.value << " (" << r.numerator << " / " << r.denominator << ", " << backend << ")\n";
  }
  return 0;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

int listen_until_signal(httplib::Server& server, const std::string& listen) {
  auto [host, port] = parse_listen(listen);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  if (port == 0) {
    port = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    throw Error(ErrorKind::Io, "cannot listen on " + listen);
  }
  if (port < 0) throw Error(ErrorKind::Io, "cannot listen on " + listen);
  std::cerr << "listening on " << host << ':' << port << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

int cmd_serve(const Globals& g, const std::string& config, const std::string& listen, const std::vector<std::string>& mocks,
              const std::string& transcript_dir, const std::string& cors) {
  AppConfig c = config.empty() ? AppConfig{} : load_app_config(config);
  if (config.empty()) c.resources = g.resources;
  else if (c.resources.empty()) c.resources = g.resources;
  for (const auto& m : mocks) c.mock_scripts.push_back(m);
  if (!transcript_dir.empty()) c.transcript_dir = transcript_dir;
  if (!cors.empty()) c.cors_origin = cors;
  apply_env(c);
  if (!listen.empty()) c.listen = listen;
  auto engine = make_engine(c);
  httplib::Server server;
  install_api(server, *engine, {c.cors_origin});
  return listen_until_signal(server, c.listen);
}

int cmd_mock_llm(const Globals& g, const std::string& listen, std::vector<std::string> fixtures) {
  if (fixtures.empty())
    fixtures = {(fs::path(g.resources) / "fixtures" / "mock_cefr.json").string(),
                (fs::path(g.resources) / "fixtures" / "mock_polarity.json").string()};
  std::vector<MockScript> scripts;
  for (const auto& f : fixtures) scripts.push_back(load_mock_script(f));
  httplib::Server server;
  install_mock_llm(server, std::move(scripts));
  return listen_until_signal(server, listen);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ontology-driven conversation control"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_flag("--json", g.json, "Machine-readable output");
  app.add_option("--resources", g.resources, "Directory with bundled ontologies, strategies and fixtures");

  std::string file, train, tree_path, out, onto, corpus, strategy, questions, config, listen, endpoint, embedding_url,
      transcript_dir, resume, cors, labels;
  std::string concept_name = "CEFR", template_id = "zero-shot";
  std::vector<std::string> mocks;
  bool lines = false, nominal = false, balanced = false, overwrite = false;
  int depth = 5, min_leaf = 1, retries = 0;
  double split = 0.8;
  std::uint64_t seed = 7;
  std::size_t threads = default_parallelism(), parallel = 4;

  auto* features = app.add_subcommand("features", "Six linguistic features of a text file ('-' for stdin)");
  features->add_option("file", file)->required();
  features->add_flag("--lines", lines, "One feature row per non-blank line");

  auto* fit = app.add_subcommand("fit", "Fit a CART tree on a feature CSV");
  fit->add_option("train", train, "CSV with the six feature columns and a label column")->required()->check(CLI::ExistingFile);
  fit->add_option("--max-depth", depth)->check(CLI::PositiveNumber);
  fit->add_option("--min-leaf", min_leaf)->check(CLI::PositiveNumber);
  fit->add_option("--labels", labels, "Comma-separated label order (default: CEFR levels or order of appearance)");
  fit->add_option("-o,--output", out)->required();

  auto* rules = app.add_subcommand("rules", "Turn a fitted tree into an ontology");
  rules->add_option("tree", tree_path)->required()->check(CLI::ExistingFile);
  rules->add_option("--concept", concept_name);
  rules->add_flag("--nominal", nominal, "Classes are not ordered");
  rules->add_option("-o,--output", out)->required();

  auto* check = app.add_subcommand("check", "Check an ontology for overlapping or missing rules");
  check->add_option("ontology", onto)->required();

  auto* annotate = app.add_subcommand("annotate", "Annotate a JSONL or CSV corpus");
  annotate->add_option("ontology", onto)->required();
  annotate->add_option("corpus", corpus)->required()->check(CLI::ExistingFile);
  annotate->add_option("-o,--output", out, "Annotated JSONL (default: stdout)");
  annotate->add_option("--threads", threads)->check(CLI::PositiveNumber);
  annotate->add_flag("--overwrite", overwrite, "Replace existing class labels");

  auto* build = app.add_subcommand("build-corpus", "Annotate, balance, split and label-wrap a corpus");
  build->add_option("ontology", onto)->required();
  build->add_option("corpus", corpus)->required()->check(CLI::ExistingFile);
  build->add_option("-o,--output", out, "Output directory")->required();
  build->add_flag("--balance", balanced, "Downsample every class to the rarest one");
  build->add_option("--split", split, "Train fraction; the rest is validation")->check(CLI::Range(0.0, 1.0));
  build->add_option("--seed", seed);
  build->add_option("--threads", threads)->check(CLI::PositiveNumber);

  auto* converse = app.add_subcommand("converse", "Interactive session: one user turn per stdin line");
  converse->add_option("ontology", onto)->required();
  converse->add_option("strategy", strategy)->required();
  converse->add_option("--mock", mocks, "Mock script(s) instead of the LLM");
  converse->add_option("--endpoint", endpoint, "Chat-completions URL (default ONTO_LLM_URL)");
  converse->add_option("--template", template_id);
  converse->add_option("--transcript-dir", transcript_dir);
  converse->add_option("--session", resume, "Resume a session from --transcript-dir");
  converse->add_option("--retries", retries, "Regenerate off-target replies up to this many times")->check(CLI::NonNegativeNumber);

  auto* eval = app.add_subcommand("eval", "Zero-shot generation evaluation");
  eval->add_option("ontology", onto)->required();
  eval->add_option("questions", questions, "One question per line")->required()->check(CLI::ExistingFile);
  eval->add_option("--mock", mocks, "Mock script(s) instead of the LLM");
  eval->add_option("--endpoint", endpoint, "Chat-completions URL (default ONTO_LLM_URL)");
  eval->add_option("--template", template_id);
  eval->add_option("--parallel", parallel)->check(CLI::PositiveNumber);
  eval->add_option("-o,--output", out, "Write the full report here");
  std::string br_input;
  eval->add_option("--br", br_input, "Pre/post generations for a B_r score (see the br subcommand)");
  eval->add_option("--embedding-url", embedding_url, "Token-embedding service for B_r (default: unigram F1)");

  auto* br = app.add_subcommand("br", "B_r similarity-shift score");
  br->add_option("file", file, "{\"pre\": [[seeds...]...], \"post\": [...]}")->required();
  br->add_option("--embedding-url", embedding_url, "Token-embedding service (default: unigram F1)");

  auto* serve = app.add_subcommand("serve", "HTTP API for sessions");
  serve->add_option("--config", config)->check(CLI::ExistingFile);
  serve->add_option("--listen", listen, "host:port (default ONTO_LISTEN or config)");
  serve->add_option("--mock", mocks, "Mock script(s) instead of the LLM");
  serve->add_option("--transcript-dir", transcript_dir);
  serve->add_option("--cors-origin", cors);

  auto* mock = app.add_subcommand("mock-llm", "Scripted OpenAI-compatible chat server");
  mock->add_option("fixtures", mocks, "Mock scripts (default: bundled)");
  std::string mock_listen = "127.0.0.1:8090";
  mock->add_option("--listen", mock_listen, "host:port")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*features) return cmd_features(g, file, lines);
    if (*fit) return cmd_fit(g, train, depth, min_leaf, labels, out);
    if (*rules) return cmd_rules(g, tree_path, concept_name, nominal, out);
    if (*check) return cmd_check(g, resolve(g, onto, "ontologies"));
    if (*annotate) return cmd_annotate(g, resolve(g, onto, "ontologies"), corpus, out, threads, overwrite);
    if (*build) return cmd_build_corpus(g, resolve(g, onto, "ontologies"), corpus, out, balanced, split, seed, threads);
    if (*converse)
      return cmd_converse(g, resolve(g, onto, "ontologies"), resolve(g, strategy, "strategies"), mocks, endpoint, template_id,
                          transcript_dir, resume, retries);
    if (*eval)
      return cmd_eval(g, resolve(g, onto, "ontologies"), questions, mocks, endpoint, template_id, parallel, out, br_input,
                      embedding_url);
    if (*br) return cmd_br(g, file, embedding_url);
    if (*serve) return cmd_serve(g, config, listen, mocks, transcript_dir, cors);
    if (*mock) return cmd_mock_llm(g, mock_listen, mocks);
  } catch (const Error& e) {
    if (g.json) std::cerr << error_body(e).dump() << '\n';
    else std::cerr << "ontoctl: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ontoctl: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
