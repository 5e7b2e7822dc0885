#include <gtest/gtest.h>

#include <atomic>
#include <mutex>
#include <random>
#include <thread>

#include "ontoctl/annotators.hpp"
#include "ontoctl/gateway.hpp"
#include "stub_server.hpp"
#include "test_support.hpp"

using namespace ontoctl;

namespace {

const OntologySpec& cefr() {
  static const auto spec = load_ontology(test_support::resource("ontologies/cefr.json"));
  return spec;
}
const OntologySpec& polarity() {
  static const auto spec = load_ontology(test_support::resource("ontologies/polarity.json"));
  return spec;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an ontoctl::Error";
  return ErrorKind::Io;
}

std::string completion(const std::string& text) {
  return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", text}}}}})}}.dump();
}

GatewayConfig config_for(const test_support::StubServer& srv, int timeout_ms = 2000, int retries = 1) {
  GatewayConfig c;
  c.url = srv.url("/v1/chat/completions");
  c.timeout = std::chrono::milliseconds(timeout_ms);
  c.retries = retries;
  return c;
}

PromptBundle sample_bundle() {
  return build_control_prompt({{"user", "What is machine learning?"}, {"agent", "A field of AI."}}, "B1", cefr(),
                              "zero-shot");
}

}  // namespace

TEST(ControlPrompt, EmbedsExactlyOneControlCode) {
  for (const char* id : {"zero-shot", "fine-tuned"}) {
    auto b = build_control_prompt({}, "C2", cefr(), id);
    EXPECT_NE(b.system.find("[CEFR: C2]"), std::string::npos) << id;
    EXPECT_EQ(detail::count_occurrences(b.system, "[CEFR:"), 1u) << id;
    EXPECT_EQ(b.target, "C2");
    EXPECT_EQ(b.concept_name, "CEFR");
    EXPECT_TRUE(b.history.empty());
  }
  EXPECT_EQ(build_control_prompt({}, "C2", cefr(), "fine-tuned").system, "[CEFR: C2]");
  auto zs = build_control_prompt({}, "~L0", polarity(), "zero-shot");
  EXPECT_NE(zs.system.find("emotionally loaded"), std::string::npos);
  EXPECT_NE(zs.system.find("[PolarityProfile: ~L0]"), std::string::npos);
}

TEST(ControlPrompt, DeterministicAndGuarded) {
  std::vector<Message> h{{"user", "hi"}};
  EXPECT_EQ(build_control_prompt(h, "A2", cefr(), "zero-shot"), build_control_prompt(h, "A2", cefr(), "zero-shot"));
  EXPECT_EQ(kind_of([] { build_control_prompt({}, "Z9", cefr(), "zero-shot"); }), ErrorKind::UnknownClass);
  EXPECT_EQ(kind_of([] { build_control_prompt({}, "A1", cefr(), "few-shot"); }), ErrorKind::UnknownTemplate);
  auto doubled = parse_templates(R"({"templates": {"twice": {"system": "{control_code} {control_code}"}}})");
  EXPECT_EQ(kind_of([&] { build_control_prompt({}, "A1", cefr(), "twice", doubled); }), ErrorKind::UnknownTemplate);
  EXPECT_EQ(kind_of([] { parse_templates(R"({"templates": {"x": {"system": "no code"}}})"); }), ErrorKind::SyntaxError);
}

TEST(ControlPrompt, BuiltinTemplatesMatchResourceFile) {
  auto file = detail::read_file(test_support::resource("templates/templates.json"));
  EXPECT_EQ(json::parse(file), json::parse(builtin_templates::k_document));
}

TEST(Generation, StripsLabels) {
  auto g = make_generation("[CEFR: B1] ok [CEFR: B1]", "CEFR", 1.5);
  EXPECT_EQ(g.clean, "ok");
  EXPECT_TRUE(g.right_label);
  EXPECT_EQ(g.raw, "[CEFR: B1] ok [CEFR: B1]");
  auto left = make_generation("[CEFR: B1] ok", "CEFR", 0);
  EXPECT_EQ(left.clean, "ok");
  EXPECT_FALSE(left.right_label);
  EXPECT_FALSE(make_generation("[CEFR: B1]", "CEFR", 0).right_label);
  EXPECT_EQ(make_generation("one [CEFR: A1] two [CEFR: C2] three", "CEFR", 0).clean, "one two three");
  EXPECT_EQ(make_generation("plain", "CEFR", 0).clean, "plain");
}

TEST(Generation, CleanNeverCarriesAControlCode) {
  const std::vector<std::string> pieces{"hello", " ", "[CEFR: B1]", "[CEFR:", "]", "[CEFR: ]", "[ CEFR: A2 ]",
                                        "world.", "[Other: A1]", "  ", "[CEFR: C2]"};
  std::mt19937_64 rng(83);
  for (int i = 0; i < 3000; ++i) {
    std::string raw;
    for (std::size_t k = 0, n = rng() % 8; k < n; ++k) raw += pieces[rng() % pieces.size()];
    auto clean = make_generation(raw, "CEFR", 0).clean;
    EXPECT_FALSE(find_control_code(clean, "CEFR")) << "raw: " << raw << "\nclean: " << clean;
  }
}

TEST(HttpGateway, CompletesAndStrips) {
  test_support::StubServer srv;
  std::mutex mu;
  json seen;
  std::string auth, request_id;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu);
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    request_id = req.get_header_value("X-Request-Id");
    res.set_content(completion("[CEFR: B1] ok [CEFR: B1]"), "application/json");
  });
  srv.start();
  auto cfg = config_for(srv);
  cfg.key = "sk-test";
  cfg.model = "tiny";
  HttpGateway gw(cfg);
  auto bundle = sample_bundle();
  bundle.seed = 42;
  const auto before = bundle;
  auto g = gw.complete(bundle);
  EXPECT_EQ(bundle, before);
  EXPECT_EQ(g.clean, "ok");
  EXPECT_TRUE(g.right_label);
  EXPECT_EQ(g.request_id, request_id);
  EXPECT_FALSE(request_id.empty());
  EXPECT_EQ(auth, "Bearer sk-test");
  EXPECT_EQ(seen["model"], "tiny");
  EXPECT_EQ(seen["seed"], 42);
  EXPECT_EQ(seen["max_tokens"], 128);
  ASSERT_EQ(seen["messages"].size(), 3u);
  EXPECT_EQ(seen["messages"][0]["role"], "system");
  EXPECT_EQ(seen["messages"][0]["content"], bundle.system);
  EXPECT_EQ(seen["messages"][1]["role"], "user");
  EXPECT_EQ(seen["messages"][2]["role"], "assistant");
}

TEST(HttpGateway, ErrorContract) {
  test_support::StubServer srv;
  srv.server().Post("/500", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  srv.server().Post("/nochoice", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"object": "chat.completion"})", "application/json");
  });
  srv.server().Post("/text", [](const httplib::Request&, httplib::Response& res) { res.set_content("<html>", "text/html"); });
  srv.start();
  auto call = [&](const std::string& path) {
    GatewayConfig c;
    c.url = srv.url(path);
    HttpGateway(c).complete(sample_bundle());
  };
  try {
    call("/500");
    FAIL();
  } catch (const GatewayError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::HttpError);
    EXPECT_EQ(e.status(), 500);
    EXPECT_FALSE(e.request_id().empty());
  }
  try {
    call("/nochoice");
    FAIL();
  } catch (const GatewayError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MalformedResponse);
    EXPECT_FALSE(e.request_id().empty());
  }
  EXPECT_EQ(kind_of([&] { call("/text"); }), ErrorKind::MalformedResponse);
}

TEST(HttpGateway, RetriesOnceOnTimeoutWithIdenticalBody) {
  test_support::StubServer srv;
  std::mutex mu;
  std::vector<std::string> bodies, ids;
  srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    std::size_t n;
    {
      std::lock_guard lock(mu);
      bodies.push_back(req.body);
      ids.push_back(req.get_header_value("X-Request-Id"));
      n = bodies.size();
    }
    if (n == 1) std::this_thread::sleep_for(std::chrono::milliseconds(500));
    res.set_content(completion("fine"), "application/json");
  });
  srv.start();
  HttpGateway gw(config_for(srv, 150, 1));
  auto g = gw.complete(sample_bundle());
  EXPECT_EQ(g.clean, "fine");
  srv.stop();
  ASSERT_EQ(bodies.size(), 2u);
  EXPECT_EQ(bodies[0], bodies[1]);
  EXPECT_NE(ids[0], ids[1]);
  EXPECT_EQ(g.request_id, ids[1]);
}

TEST(HttpGateway, TimeoutAfterRetriesAndNoRetryOnHttpError) {
  test_support::StubServer srv;
  std::atomic<int> slow{0}, failing{0};
  srv.server().Post("/slow", [&](const httplib::Request&, httplib::Response& res) {
    ++slow;
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    res.set_content(completion("late"), "application/json");
  });
  srv.server().Post("/503", [&](const httplib::Request&, httplib::Response& res) {
    ++failing;
    res.status = 503;
  });
  srv.start();
  GatewayConfig c;
  c.timeout = std::chrono::milliseconds(100);
  c.retries = 1;
  c.url = srv.url("/slow");
  EXPECT_EQ(kind_of([&] { HttpGateway(c).complete(sample_bundle()); }), ErrorKind::Timeout);
  c.url = srv.url("/503");
  EXPECT_EQ(kind_of([&] { HttpGateway(c).complete(sample_bundle()); }), ErrorKind::HttpError);
  srv.stop();
  EXPECT_EQ(slow.load(), 2);
  EXPECT_EQ(failing.load(), 1);
}

TEST(HttpGateway, ConnectionRefused) {
  test_support::StubServer srv;
  srv.start();
  auto cfg = config_for(srv, 300, 1);
  srv.stop();
  EXPECT_EQ(kind_of([&] { HttpGateway(cfg).complete(sample_bundle()); }), ErrorKind::ConnectionFailed);
}

TEST(GatewayConfig, FromEnvironment) {
  ::unsetenv("ONTO_LLM_URL");
  EXPECT_EQ(kind_of([] { GatewayConfig::from_env(); }), ErrorKind::InvalidArgument);
  ::setenv("ONTO_LLM_URL", "http://localhost:8000/v1/chat/completions", 1);
  ::setenv("ONTO_LLM_KEY", "k", 1);
  ::setenv("ONTO_LLM_RETRIES", "0", 1);
  auto c = GatewayConfig::from_env();
  EXPECT_EQ(c.url, "http://localhost:8000/v1/chat/completions");
  EXPECT_EQ(c.key, "k");
  EXPECT_EQ(c.retries, 0);
  EXPECT_EQ(c.timeout.count(), 30000);
  for (const char* v : {"ONTO_LLM_URL", "ONTO_LLM_KEY", "ONTO_LLM_RETRIES"}) ::unsetenv(v);
}

TEST(MockGateway, CompliantRepliesLandInTheirClass) {
  MockGateway cefr_mock(load_mock_script(test_support::resource("fixtures/mock_cefr.json")));
  for (const auto& c : cefr().classes) {
    auto g = cefr_mock.complete(build_control_prompt({}, c, cefr(), "fine-tuned"));
    EXPECT_EQ(annotate_cefr(g.clean, cefr()), c) << g.clean;
  }
  MockGateway pol_mock(load_mock_script(test_support::resource("fixtures/mock_polarity.json")));
  auto annotator = make_annotator(polarity());
  for (const auto& c : polarity().classes) {
    auto g = pol_mock.complete(build_control_prompt({}, c, polarity(), "zero-shot"));
    EXPECT_EQ(annotator->annotate(g.clean), c) << g.clean;
  }
}

TEST(MockGateway, ModesAndLabelStyles) {
  auto script = load_mock_script(test_support::resource("fixtures/mock_cefr.json"));
  script.mode = "shift";
  script.shift = 1;
  MockGateway shift(script);
  EXPECT_EQ(shift.complete(build_control_prompt({}, "A1", cefr(), "fine-tuned")).clean, script.texts.at("A2"));
  EXPECT_EQ(shift.complete(build_control_prompt({}, "C2", cefr(), "fine-tuned")).clean, script.texts.at("C2"));

  script.mode = "constant";
  script.constant_class = "B2";
  script.label_style = "both";
  MockGateway constant(script);
  auto g = constant.complete(build_control_prompt({}, "A1", cefr(), "fine-tuned"));
  EXPECT_EQ(g.raw, wrap(script.texts.at("B2"), "CEFR", "B2"));
  EXPECT_EQ(g.clean, script.texts.at("B2"));
  EXPECT_TRUE(g.right_label);

  EXPECT_EQ(kind_of([] { parse_mock_script(R"({"concept": "CEFR", "texts": {"A1": "x"}, "mode": "chaos"})"); }),
            ErrorKind::SyntaxError);
  EXPECT_EQ(kind_of([&] { constant.complete(build_control_prompt({}, "L0", polarity(), "fine-tuned")); }),
            ErrorKind::InvalidArgument);
}

TEST(MockLlmServer, ServesTheHttpContract) {
  auto cefr_script = load_mock_script(test_support::resource("fixtures/mock_cefr.json"));
  auto pol_script = load_mock_script(test_support::resource("fixtures/mock_polarity.json"));
  cefr_script.label_style = "both";
  test_support::StubServer srv;
  install_mock_llm(srv.server(), {cefr_script, pol_script});
  srv.start();
  HttpGateway gw(config_for(srv));
  MockGateway local_cefr(cefr_script), local_pol(pol_script);
  for (const auto& c : cefr().classes) {
    auto b = build_control_prompt({{"user", "hi"}}, c, cefr(), "zero-shot");
    auto remote = gw.complete(b);
    auto local = local_cefr.complete(b);
    EXPECT_EQ(remote.raw, local.raw);
    EXPECT_EQ(remote.clean, local.clean);
    EXPECT_TRUE(remote.right_label);
  }
  auto b = build_control_prompt({}, "~L-", polarity(), "fine-tuned");
  EXPECT_EQ(gw.complete(b).raw, local_pol.complete(b).raw);
}
