#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "comal/agent.hpp"
#include "comal/chat.hpp"

namespace testing {

class FunctionBackend final : public comal::ReasonBackend {
 public:
  using Fn = std::function<std::string(const comal::CallContext&, std::span<const comal::ChatTurn>)>;
  explicit FunctionBackend(Fn fn, std::string name = "function") : fn_(std::move(fn)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::string complete(const comal::CallContext& ctx, std::span<const comal::ChatTurn> turns) override {
    ++calls;
    return fn_(ctx, turns);
  }
  int calls = 0;

 private:
  Fn fn_;
  std::string name_;
};

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("comal_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// Local chat-completion endpoint on an ephemeral port.
class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;
  explicit StubServer(Handler handler) {
    server_.Post(R"(/v1/chat/completions)", [this, handler](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      handler(req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> requests{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

inline std::string completion(const std::string& text) {
  return nlohmann::json{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump();
}

// Answers like the scripted backend, recovering the stage from the prompt.
inline StubServer::Handler scripted_handler() {
  return [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    std::vector<comal::ChatTurn> turns;
    for (const auto& m : body["messages"]) {
      const auto role = m["role"].get<std::string>();
      turns.push_back({role == "system" ? comal::ChatRole::system
                       : role == "user" ? comal::ChatRole::user
                                        : comal::ChatRole::assistant,
                       m["content"].get<std::string>()});
    }
    const auto& last = turns.back().content;
    comal::CallContext ctx;
    if (last.starts_with("Collaboration round")) ctx.stage = comal::kStageBrainstorm;
    else if (last.starts_with("Step 1")) ctx.stage = comal::kStageRole;
    else if (last.starts_with("Step 2")) ctx.stage = comal::kStageScene;
    else if (last.starts_with("Step 3")) ctx.stage = comal::kStageMotion;
    else ctx.stage = comal::kStagePlanner;
    comal::ScriptedBackend scripted;
    res.set_content(completion(scripted.complete(ctx, turns)), "application/json");
  };
}

}  // namespace testing
