#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include <doctest.h>

#include "comal/agent.hpp"
#include "comal/errors.hpp"
#include "comal/llm_client.hpp"
#include "support.hpp"

using namespace comal;
using testing::StubServer;

namespace {

BackendConfig config_for(const StubServer& server, const char* key_env = "COMAL_TEST_KEY") {
  ::setenv(key_env, "secret", 1);
  BackendConfig c;
  c.endpoint = server.endpoint();
  c.model = "stub-model";
  c.api_key_env = key_env;
  c.timeout = 5.0;
  c.max_retries = 3;
  return c;
}

const std::vector<ChatTurn> kTurns{{ChatRole::system, "be brief"}, {ChatRole::user, "hi"}};

struct SleepLog {
  std::vector<double> delays;
  LlmClient::Sleeper sleeper() {
    return [this](std::chrono::duration<double> d) { delays.push_back(d.count()); };
  }
};

}  // namespace

TEST_SUITE("llm client") {
  TEST_CASE("echo stub returns the reply verbatim with the expected request") {
    nlohmann::json seen;
    std::string auth;
    StubServer server([&](const httplib::Request& req, httplib::Response& res) {
      seen = nlohmann::json::parse(req.body);
      auth = req.get_header_value("Authorization");
      res.set_content(testing::completion("fixed reply\nwith {\"v0\": 1}"), "application/json");
    });
    LlmClient client(config_for(server));
    CHECK(client.complete(kTurns) == "fixed reply\nwith {\"v0\": 1}");
    CHECK(server.requests == 1);
    CHECK(auth == "Bearer secret");
    CHECK(seen["model"] == "stub-model");
    CHECK(seen["temperature"] == 0.0);
    CHECK(seen["messages"] == nlohmann::json::array({{{"role", "system"}, {"content", "be brief"}},
                                                     {{"role", "user"}, {"content", "hi"}}}));
  }

  TEST_CASE("429 twice then success: three requests logged, two backoffs") {
    std::atomic<int> n{0};
    StubServer server([&](const httplib::Request&, httplib::Response& res) {
      if (++n <= 2) {
        res.status = 429;
        return;
      }
      res.set_content(testing::completion("finally"), "application/json");
    });
    LlmClient client(config_for(server));
    SleepLog sleeps;
    client.set_sleeper(sleeps.sleeper());
    TranscriptLog log;
    CallContext ctx{"run-1", "7", "planner_generation", &log};
    CHECK(client.complete(kTurns, ctx) == "finally");
    CHECK(server.requests == 3);
    REQUIRE(sleeps.delays.size() == 2);
    CHECK(sleeps.delays[0] >= 1.0);
    CHECK(sleeps.delays[0] < 1.25);
    CHECK(sleeps.delays[1] >= 2.0);
    CHECK(sleeps.delays[1] < 2.5);
    const auto entries = log.entries();
    REQUIRE(entries.size() == 3);
    CHECK(entries[0]["status"] == 429);
    CHECK(entries[0]["ok"] == false);
    CHECK(entries[2]["ok"] == true);
    CHECK(entries[2]["response"] == "finally");
    for (const auto& e : entries) {
      for (const char* key : {"timestamp", "run_id", "agent_id", "stage", "request", "response", "latency_ms"})
        CHECK(e.contains(key));
      CHECK(e["run_id"] == "run-1");
      CHECK(e["agent_id"] == "7");
      CHECK(e["stage"] == "planner_generation");
      CHECK(e["request"]["model"] == "stub-model");
    }
  }

  TEST_CASE("missing key fails before any request") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(testing::completion("x"), "application/json");
    });
    auto c = config_for(server);
    c.api_key_env = "COMAL_TEST_UNSET_KEY";
    ::unsetenv("COMAL_TEST_UNSET_KEY");
    CHECK_THROWS_AS(LlmClient{c}, ConfigError);
    ::setenv("COMAL_TEST_UNSET_KEY", "", 1);
    CHECK_THROWS_AS(LlmClient{c}, ConfigError);
    CHECK(server.requests == 0);
  }

  TEST_CASE("client errors are not retried") {
    StubServer server([](const httplib::Request&, httplib::Response& res) { res.status = 400; });
    LlmClient client(config_for(server));
    SleepLog sleeps;
    client.set_sleeper(sleeps.sleeper());
    CHECK_THROWS_AS(client.complete(kTurns), TransportError);
    CHECK(server.requests == 1);
    CHECK(sleeps.delays.empty());
  }

  TEST_CASE("a 200 without choices is a transport error") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"choices": []})", "application/json");
    });
    LlmClient client(config_for(server));
    CHECK_THROWS_AS(client.complete(kTurns), TransportError);
    CHECK(server.requests == 1);
  }

  TEST_CASE("server errors exhaust the retry budget") {
    StubServer server([](const httplib::Request&, httplib::Response& res) { res.status = 503; });
    auto c = config_for(server);
    c.max_retries = 2;
    c.jitter = 0.0;
    LlmClient client(c);
    SleepLog sleeps;
    client.set_sleeper(sleeps.sleeper());
    TranscriptLog log;
    CHECK_THROWS_AS(client.complete(kTurns, {"r", "1", "s", &log}), TransportError);
    CHECK(server.requests == 3);
    CHECK(sleeps.delays == std::vector<double>{1.0, 2.0});
    CHECK(log.size() == 3);
  }

  TEST_CASE("unreachable endpoint is retried then reported") {
    int port = 0;
    {
      httplib::Server probe;
      port = probe.bind_to_any_port("127.0.0.1");
    }
    ::setenv("COMAL_TEST_KEY", "secret", 1);
    BackendConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port);
    c.api_key_env = "COMAL_TEST_KEY";
    c.timeout = 1.0;
    c.max_retries = 1;
    LlmClient client(c);
    SleepLog sleeps;
    client.set_sleeper(sleeps.sleeper());
    CHECK_THROWS_AS(client.complete(kTurns), TransportError);
    CHECK(sleeps.delays.size() == 1);
  }

  TEST_CASE("a stalling server is bounded by the timeout budget") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1500));
      res.set_content(testing::completion("late"), "application/json");
    });
    auto c = config_for(server);
    c.timeout = 0.2;
    c.max_retries = 1;
    c.backoff_base = 0.05;
    c.jitter = 0.0;
    LlmClient client(c);
    const auto start = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(client.complete(kTurns), TransportError);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    // timeout * (retries + 1) + backoff, plus scheduling slack.
    CHECK(elapsed < 0.2 * 2 + 0.05 + 0.5);
    CHECK(server.requests == 2);
  }

  TEST_CASE("endpoint forms") {
    StubServer server([](const httplib::Request&, httplib::Response& res) {
      res.set_content(testing::completion("ok"), "application/json");
    });
    for (const auto& suffix : {"", "/", "/v1/chat/completions"}) {
      auto c = config_for(server);
      c.endpoint += suffix;
      LlmClient client(c);
      CHECK(client.complete(kTurns) == "ok");
    }
    auto bad = config_for(server);
    for (const char* e : {"ftp://example.com", "localhost:8080", ""}) {
      bad.endpoint = e;
      CHECK_THROWS_AS(LlmClient{bad}, ConfigError);
    }
  }

  TEST_CASE("empty turn content is rejected") {
    StubServer server([](const httplib::Request&, httplib::Response&) {});
    LlmClient client(config_for(server));
    const std::vector<ChatTurn> turns{{ChatRole::user, ""}};
    CHECK_THROWS_AS(client.complete(turns), InvalidArgument);
    CHECK(server.requests == 0);
  }

  TEST_CASE("backend config from JSON") {
    const auto c = backend_config_from_json(
        {{"endpoint", "http://h:1"}, {"model", "m"}, {"timeout", 3}, {"max_retries", 0}, {"temperature", 0.5}});
    CHECK(c.endpoint == "http://h:1");
    CHECK(c.model == "m");
    CHECK(c.timeout == 3.0);
    CHECK(c.max_retries == 0);
    CHECK(c.temperature == 0.5);
    CHECK(c.api_key_env == "COMAL_API_KEY");
    CHECK_THROWS_AS(backend_config_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(backend_config_from_json({{"timeout", "slow"}}), ConfigError);
    CHECK_THROWS_AS(backend_config_from_json({{"timeout", 0}}), ConfigError);
    CHECK_THROWS_AS(backend_config_from_json({{"max_retries", -1}}), ConfigError);
    CHECK_THROWS_AS(backend_config_from_json(nlohmann::json::array()), ConfigError);
  }
}

TEST_SUITE("transcripts") {
  TEST_CASE("jsonl round-trip") {
    TranscriptLog log;
    log.append({{"agent_id", "1"}, {"response", "line\nbreak"}});
    log.append({{"agent_id", "2"}, {"response", "ünïcode"}});
    const auto text = log.to_jsonl();
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    CHECK(TranscriptLog::parse_jsonl(text) == log.entries());

    testing::TempDir tmp;
    std::ofstream(tmp.path / "t.jsonl") << text << "\n";
    CHECK(TranscriptLog::load(tmp.path / "t.jsonl") == log.entries());
    CHECK_THROWS_AS(TranscriptLog::parse_jsonl("{}\n[1]\n"), ConfigError);
    CHECK_THROWS_AS(TranscriptLog::parse_jsonl("{oops\n"), ConfigError);
    CHECK_THROWS_AS(TranscriptLog::load(tmp.path / "missing.jsonl"), ConfigError);
  }

  TEST_CASE("timestamps are ISO 8601 UTC with milliseconds") {
    CHECK(std::regex_match(utc_timestamp(), std::regex(R"(\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d\.\d{3}Z)")));
  }

  TEST_CASE("replay serves successful entries in order") {
    ReplayBackend replay({{{"agent_id", "1"}, {"stage", "a"}, {"response", "first"}},
                          {{"agent_id", "1"}, {"stage", "b"}, {"response", "HTTP 429"}, {"ok", false}},
                          {{"agent_id", "1"}, {"stage", "b"}, {"response", "second"}, {"ok", true}}});
    CHECK(replay.remaining() == 2);
    TranscriptLog log;
    CHECK(replay.complete({"r", "1", "a", &log}, kTurns) == "first");
    CHECK(replay.complete({"r", "1", "b", &log}, kTurns) == "second");
    CHECK(replay.remaining() == 0);
    CHECK(log.size() == 2);
    CHECK_THROWS_AS(replay.complete({"r", "1", "c", nullptr}, kTurns), ReplayMismatch);
  }

  TEST_CASE("replay rejects out-of-order requests") {
    ReplayBackend replay(std::vector<nlohmann::json>{{{"agent_id", "1"}, {"stage", "a"}, {"response", "x"}}});
    CHECK_THROWS_AS(replay.complete({"r", "2", "a", nullptr}, kTurns), ReplayMismatch);
    CHECK_THROWS_AS(replay.complete({"r", "1", "b", nullptr}, kTurns), ReplayMismatch);
    CHECK(replay.remaining() == 1);
    ReplayBackend broken(std::vector<nlohmann::json>{{{"agent_id", "1"}, {"stage", "a"}}});
    CHECK_THROWS_AS(broken.complete({"r", "1", "a", nullptr}, kTurns), ReplayMismatch);
  }

  TEST_CASE("a recorded remote session replays to identical planners") {
    StubServer server(testing::scripted_handler());
    RemoteBackend remote(config_for(server));
    const auto prompts = Prompts::builtin();
    const std::vector<std::string> scenes{
        "[MAP] scenario=ring; route_length=230.00 m (cyclic); speed_limit=30.00 m/s; intersections=0\n"
        "[EGO] id=3; speed=8.00 m/s; headway=5.00 m; leader=4; leader_speed=2.00 m/s\n[NEIGHBORS] none",
        "[MAP] scenario=ring; route_length=230.00 m (cyclic); speed_limit=30.00 m/s; intersections=0\n"
        "[EGO] id=3; speed=3.00 m/s; headway=40.00 m; leader=4; leader_speed=3.50 m/s\n[NEIGHBORS] none",
    };
    TranscriptLog log;
    std::vector<PlannerSpec> live;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      CallContext ctx{"rec", std::to_string(i), "", &log};
      live.push_back(reason(Role::wave_dampener, scenes[i], {}, remote, prompts, 30, ctx).planner);
    }
    CHECK(server.requests == 8);
    CHECK(live[0].v0 == 2.0);
    CHECK(live[1].v0 == 30.0);

    testing::TempDir tmp;
    std::ofstream(tmp.path / "rec.jsonl") << log.to_jsonl();
    auto replay = ReplayBackend::from_file(tmp.path / "rec.jsonl");
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      CallContext ctx{"rec", std::to_string(i), "", nullptr};
      CHECK(reason(Role::wave_dampener, scenes[i], {}, replay, prompts, 30, ctx).planner == live[i]);
    }
    CHECK(replay.remaining() == 0);

    ScriptedBackend scripted;
    for (std::size_t i = 0; i < scenes.size(); ++i)
      CHECK(reason(Role::wave_dampener, scenes[i], {}, scripted, prompts, 30, {}).planner == live[i]);
  }
}
