#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>
#include <unistd.h>

#include "ontoctl/server.hpp"
#include "stub_server.hpp"
#include "test_support.hpp"

using namespace ontoctl;
namespace fs = std::filesystem;

namespace {

const std::string k_technical_question =
    "Can you elaborate about the underlying mathematical models and algorithms that drive modern machine "
    "learning systems?";

AppConfig mock_config() {
  AppConfig c;
  c.resources = ONTOCTL_RESOURCE_DIR;
  c.mock_scripts = {test_support::resource("fixtures/mock_cefr.json"), test_support::resource("fixtures/mock_polarity.json")};
  return c;
}

// Fails while `down` is set, otherwise defers to the wrapped gateway.
class SwitchableGateway : public Gateway {
 public:
  explicit SwitchableGateway(std::shared_ptr<const Gateway> inner) : inner_(std::move(inner)) {}
  Generation complete(const PromptBundle& b) const override {
    if (down) throw GatewayError(ErrorKind::ConnectionFailed, "connection refused", "req-1");
    return inner_->complete(b);
  }
  std::string_view name() const override { return "switchable"; }
  std::atomic<bool> down{false};

 private:
  std::shared_ptr<const Gateway> inner_;
};

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("ontoctl_server_" + std::to_string(::getpid()) + "_" + std::to_string(++counter));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// An engine served on a loopback port for one test.
class Api {
 public:
  explicit Api(std::unique_ptr<Engine> engine, ApiOptions opts = {}) : engine_(std::move(engine)) {
    install_api(stub_.server(), *engine_, opts);
    stub_.start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", stub_.port());
  }

  httplib::Client& client() { return *client_; }
  Engine& engine() { return *engine_; }
  int port() const { return stub_.port(); }

  std::pair<int, json> post(const std::string& path, const json& body) {
    auto res = client_->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res) << path;
    return {res->status, json::parse(res->body)};
  }
  std::pair<int, json> get(const std::string& path) {
    auto res = client_->Get(path);
    EXPECT_TRUE(res) << path;
    return {res->status, json::parse(res->body)};
  }
  std::string create(const std::string& ontology, const std::string& strategy) {
    auto [status, body] = post("/sessions", {{"ontology", ontology}, {"strategy", strategy}});
    EXPECT_EQ(status, 200) << body.dump();
    return body.at("id").get<std::string>();
  }

 private:
  std::unique_ptr<Engine> engine_;
  test_support::StubServer stub_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST(AppConfig, ResolvesRelativePathsAgainstTheFile) {
  auto c = parse_app_config(R"({"ontologies": ["o.json"], "mock": ["m.json"], "transcript_dir": "sessions",
                                 "listen": ":9000", "cors_origin": "http://localhost:5173",
                                 "classifiers": {"load": "http://clf/load"}})",
                            "cfg", "/etc/onto");
  EXPECT_EQ(c.ontologies.at(0), fs::path("/etc/onto/o.json"));
  EXPECT_EQ(c.mock_scripts.at(0), fs::path("/etc/onto/m.json"));
  EXPECT_EQ(*c.transcript_dir, fs::path("/etc/onto/sessions"));
  EXPECT_EQ(c.classifiers.at("load"), "http://clf/load");
  EXPECT_EQ(c.cors_origin, "http://localhost:5173");
  EXPECT_EQ(parse_listen(c.listen), (std::pair<std::string, int>{"0.0.0.0", 9000}));
  EXPECT_EQ(parse_listen("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_EQ(parse_listen("8081"), (std::pair<std::string, int>{"127.0.0.1", 8081}));
  EXPECT_THROW(parse_listen("host:port"), Error);
  EXPECT_THROW(parse_app_config(R"({"ontologies": "o.json"})"), Error);
}

TEST(AppConfig, StartupRejectsInconsistentOntology) {
  auto c = mock_config();
  c.ontologies = {test_support::resource("fixtures/overlapping_polarity.json")};
  c.strategies = {test_support::resource("strategies/debate.json")};
  try {
    build_registry(c);
    FAIL() << "inconsistent ontology accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("inconsistent"), std::string::npos) << e.what();
  }
}

TEST(AppConfig, StartupRejectsStrategyForMissingOntology) {
  auto c = mock_config();
  c.ontologies = {test_support::resource("ontologies/cefr.json")};
  EXPECT_THROW(build_registry(c), Error);  // debate needs PolarityProfile
}

TEST(HttpApi, HealthAndOntologies) {
  Api api(make_engine(mock_config()));
  auto [hs, health] = api.get("/health");
  EXPECT_EQ(hs, 200);
  EXPECT_EQ(health["status"], "ok");
  auto [os, list] = api.get("/ontologies");
  EXPECT_EQ(os, 200);
  ASSERT_EQ(list["ontologies"].size(), 2u);
  std::set<std::string> concepts;
  for (const auto& o : list["ontologies"]) concepts.insert(o["concept"].get<std::string>());
  EXPECT_EQ(concepts, (std::set<std::string>{"CEFR", "PolarityProfile"}));
  EXPECT_EQ(list["strategies"].size(), 2u);
  EXPECT_EQ(list["templates"], (json{"fine-tuned", "zero-shot"}));
}

TEST(HttpApi, CreateSessionReturnsClassesAndState) {
  Api api(make_engine(mock_config()));
  auto [status, body] = api.post("/sessions", {{"ontology", "CEFR"}, {"strategy", "harder-only"}});
  ASSERT_EQ(status, 200) << body.dump();
  EXPECT_FALSE(body["id"].get<std::string>().empty());
  EXPECT_EQ(body["classes"], (json{"A1", "A2", "B1", "B2", "C1", "C2"}));
  EXPECT_EQ(body["state"]["current_max"], "A1");
  EXPECT_EQ(body["template"], "zero-shot");
}

TEST(HttpApi, HelloTurnHasAllFiveFields) {
  Api api(make_engine(mock_config()));
  auto id = api.create("CEFR", "harder-only");
  auto [status, body] = api.post("/sessions/" + id + "/turns", {{"text", "Hello"}});
  ASSERT_EQ(status, 200) << body.dump();
  for (const char* key : {"detected", "target", "reply", "reply_detected", "compliant"})
    EXPECT_TRUE(body.contains(key)) << key;
  // Whatever "Hello" lands on, the harder-only target starts there and the
  // compliant mock answers in kind.
  EXPECT_EQ(body["target"], body["detected"]);
  EXPECT_EQ(body["reply_detected"], body["target"]);
  EXPECT_EQ(body["compliant"], true);
}

TEST(HttpApi, ProficiencySessionOverHttp) {
  Api api(make_engine(mock_config()));
  auto id = api.create("CEFR", "harder-only");
  auto [s1, t1] = api.post("/sessions/" + id + "/turns", {{"text", "What is machine learning?"}});
  auto [s2, t2] = api.post("/sessions/" + id + "/turns", {{"text", k_technical_question}});
  ASSERT_EQ(s1, 200);
  EXPECT_EQ(t1["detected"], "A1");
  EXPECT_EQ(t1["target"], "A1");
  ASSERT_EQ(s2, 200) << t2.dump();
  EXPECT_EQ(t2["detected"], "C2");
  EXPECT_EQ(t2["target"], "C2");
  EXPECT_EQ(t2["compliant"], true);
  auto [gs, transcript] = api.get("/sessions/" + id);
  ASSERT_EQ(gs, 200);
  ASSERT_EQ(transcript["turns"].size(), 4u);
  EXPECT_EQ(transcript["turns"][3]["role"], "agent");
  EXPECT_EQ(transcript["turns"][3]["target"], "C2");
}

TEST(HttpApi, PolaritySessionOverHttp) {
  Api api(make_engine(mock_config()));
  auto id = api.create("PolarityProfile", "debate");
  const std::vector<std::pair<std::string, std::string>> steps{
      {"I love this wonderful idea!", "L-"},
      {"Listen to me right now!", "L+"},
      {"The meeting starts at noon in the main hall.", "~L-"},
      {"I hate this terrible plan!", "~L-"}};
  for (const auto& [text, target] : steps) {
    auto [status, body] = api.post("/sessions/" + id + "/turns", {{"text", text}});
    ASSERT_EQ(status, 200) << body.dump();
    EXPECT_EQ(body["target"], target) << text;
    EXPECT_EQ(body["compliant"], true) << text;
  }
}

TEST(HttpApi, ErrorStatuses) {
  Api api(make_engine(mock_config()));
  auto [s404, b404] = api.post("/sessions/deadbeef/turns", {{"text", "Hello"}});
  EXPECT_EQ(s404, 404);
  EXPECT_EQ(b404["error"]["kind"], "UnknownSession");
  EXPECT_EQ(api.get("/sessions/deadbeef").first, 404);
  EXPECT_EQ(api.get("/nowhere").first, 404);

  auto id = api.create("CEFR", "harder-only");
  auto [sb, bb] = api.post("/sessions/" + id + "/turns", {{"text", "   "}});
  EXPECT_EQ(sb, 400);
  EXPECT_EQ(bb["error"]["kind"], "BlankInput");
  EXPECT_EQ(api.post("/sessions/" + id + "/turns", json::object()).first, 400);
  EXPECT_EQ(api.post("/sessions/" + id + "/turns", {{"text", 5}}).first, 400);
  EXPECT_EQ(api.post("/sessions", {{"ontology", "Nope"}, {"strategy", "debate"}}).first, 400);
  EXPECT_EQ(api.post("/sessions", {{"ontology", "CEFR"}, {"strategy", "debate"}}).first, 400);
  EXPECT_EQ(api.post("/sessions", {{"ontology", "CEFR"}, {"strategy", "harder-only"}, {"template", "x"}}).first, 400);

  auto res = api.client().Post("/sessions", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["error"]["kind"], "SyntaxError");
  EXPECT_EQ(api.get("/sessions/" + id).second["turns"].size(), 0u);
}

TEST(HttpApi, GatewayDownIs502AndKeepsUserTurn) {
  auto c = mock_config();
  auto gateway = std::make_shared<SwitchableGateway>(build_gateway(c));
  Api api(std::make_unique<Engine>(build_registry(c), gateway));
  auto id = api.create("CEFR", "harder-only");
  gateway->down = true;
  auto [status, body] = api.post("/sessions/" + id + "/turns", {{"text", "What is machine learning?"}});
  EXPECT_EQ(status, 502);
  EXPECT_EQ(body["error"]["kind"], "ConnectionFailed");
  EXPECT_EQ(body["error"]["request_id"], "req-1");

  auto [gs, transcript] = api.get("/sessions/" + id);
  ASSERT_EQ(transcript["turns"].size(), 1u);
  EXPECT_EQ(transcript["turns"][0]["role"], "user");
  EXPECT_EQ(transcript["turns"][0]["text"], "What is machine learning?");

  // A new turn is refused until the pending one is retried.
  EXPECT_EQ(api.post("/sessions/" + id + "/turns", {{"text", "Hi"}}).first, 400);
  gateway->down = false;
  auto [rs, retried] = api.post("/sessions/" + id + "/retry", json::object());
  ASSERT_EQ(rs, 200) << retried.dump();
  EXPECT_EQ(retried["detected"], "A1");
  EXPECT_EQ(retried["target"], "A1");
  EXPECT_EQ(retried["compliant"], true);
}

TEST(HttpApi, CorsHeadersWhenConfigured) {
  Api api(make_engine(mock_config()), ApiOptions{"http://localhost:5173"});
  auto res = api.client().Get("/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  auto pre = api.client().Options("/sessions");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Methods"), "GET, POST, OPTIONS");

  Api plain(make_engine(mock_config()));
  auto res2 = plain.client().Get("/health");
  ASSERT_TRUE(res2);
  EXPECT_FALSE(res2->has_header("Access-Control-Allow-Origin"));
}

TEST(HttpApi, RestartRehydratesSessionsFromTranscripts) {
  TempDir dir;
  auto c = mock_config();
  c.transcript_dir = dir.path();
  std::string id;
  json before;
  {
    Api api(make_engine(c));
    id = api.create("CEFR", "harder-only");
    api.post("/sessions/" + id + "/turns", {{"text", "Hello"}});
    api.post("/sessions/" + id + "/turns", {{"text", k_technical_question}});
    before = api.get("/sessions/" + id).second;
  }
  Api api(make_engine(c));
  auto [status, after] = api.get("/sessions/" + id);
  ASSERT_EQ(status, 200);
  EXPECT_EQ(after["turns"], before["turns"]);
  EXPECT_EQ(after["state"], before["state"]);
  auto [ts, next] = api.post("/sessions/" + id + "/turns", {{"text", "Hello"}});
  ASSERT_EQ(ts, 200);
  EXPECT_EQ(next["target"], "C2");  // the running maximum survived the restart
}

TEST(HttpApi, ConcurrentSessions) {
  Api api(make_engine(mock_config()));
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(api.create("CEFR", "harder-only"));
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (const auto& id : ids) {
    threads.emplace_back([&, id] {
      httplib::Client client("127.0.0.1", api.port());
      for (int t = 0; t < 3; ++t) {
        auto res = client.Post("/sessions/" + id + "/turns", json{{"text", "Hello"}}.dump(), "application/json");
        if (res && res->status == 200) ++ok;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok, 12);
  for (const auto& id : ids) EXPECT_EQ(api.get("/sessions/" + id).second["turns"].size(), 6u);
}
