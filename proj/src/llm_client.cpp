#include "comal/llm_client.hpp"

#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <fmt/core.h>
#include <httplib.h>

#include "comal/errors.hpp"

namespace comal {

void BackendConfig::validate() const {
  if (!(timeout > 0.0)) throw ConfigError("timeout must be positive");
  if (max_retries < 0) throw ConfigError("max_retries must be non-negative");
  if (!(backoff_base >= 0.0) || !(backoff_factor >= 1.0) || !(jitter >= 0.0))
    throw ConfigError("invalid backoff settings");
  if (model.empty()) throw ConfigError("model name is empty");
  if (api_key_env.empty()) throw ConfigError("api key variable name is empty");
}

BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig c;
  if (!j.is_object()) throw ConfigError("backend config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "endpoint") c.endpoint = value.get<std::string>();
      else if (key == "model") c.model = value.get<std::string>();
      else if (key == "api_key_env") c.api_key_env = value.get<std::string>();
      else if (key == "timeout") c.timeout = value.get<double>();
      else if (key == "max_retries") c.max_retries = value.get<int>();
      else if (key == "temperature") c.temperature = value.get<double>();
      else if (key == "backoff_base") c.backoff_base = value.get<double>();
      else if (key == "backoff_factor") c.backoff_factor = value.get<double>();
      else if (key == "jitter") c.jitter = value.get<double>();
      else throw ConfigError(fmt::format("unknown backend config key '{}'", key));
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(fmt::format("backend config key '{}' has the wrong type", key));
    }
  }
  c.validate();
  return c;
}

LlmClient::LlmClient(BackendConfig config)
    : config_(std::move(config)),
      sleeper_([](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }),
      jitter_rng_(std::random_device{}()) {
  config_.validate();
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (!key || !*key) throw ConfigError(fmt::format("environment variable {} is not set", config_.api_key_env));
  api_key_ = key;

  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, url))
    throw ConfigError(fmt::format("malformed endpoint '{}'", config_.endpoint));
  scheme_host_port_ = m[1];
  std::string path = m[2];
  while (!path.empty() && path.back() == '/') path.pop_back();
  constexpr std::string_view suffix = "/chat/completions";
  if (path.size() < suffix.size() || path.compare(path.size() - suffix.size(), suffix.size(), suffix) != 0)
    path += "/v1/chat/completions";
  path_ = path;
}

nlohmann::json LlmClient::request_body(std::span<const ChatTurn> turns) const {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& t : turns) messages.push_back({{"role", to_string(t.role)}, {"content", t.content}});
  return {{"model", config_.model}, {"messages", messages}, {"temperature", config_.temperature}};
}

double LlmClient::backoff_delay(int attempt) {
  std::uniform_real_distribution<double> u(0.0, config_.jitter);
  const double jitter = config_.jitter > 0.0 ? u(jitter_rng_) : 0.0;
  return config_.backoff_base * std::pow(config_.backoff_factor, attempt) * (1.0 + jitter);
}

std::string LlmClient::complete(std::span<const ChatTurn> turns, const CallContext& ctx) {
  for (const auto& t : turns) {
    if (t.content.empty()) throw InvalidArgument("chat turns must have non-empty content");
  }
  const auto body = request_body(turns);
  const auto payload = body.dump();
  const int attempts = config_.max_retries + 1;
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(config_.timeout));
  const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};

  std::string last_error;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path_, headers, payload, "application/json");
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    bool transient = false;
    bool ok = false;
    int status = 0;
    std::string text;
    if (!res) {
      last_error = fmt::format("request failed: {}", httplib::to_string(res.error()));
      transient = true;
    } else {
      status = res->status;
      if (status == 200) {
        auto j = nlohmann::json::parse(res->body, nullptr, false);
        const nlohmann::json* content = nullptr;
        if (!j.is_discarded() && j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
          const auto& first = j["choices"][0];
          if (first.contains("message") && first["message"].contains("content") &&
              first["message"]["content"].is_string())
            content = &first["message"]["content"];
        }
        if (content) {
          text = content->get<std::string>();
          ok = true;
        } else {
          last_error = "response has no choices[0].message.content";
        }
      } else {
        last_error = fmt::format("HTTP {}", status);
        transient = status == 429 || status >= 500;
      }
    }

    if (ctx.log) {
      ctx.log->append({{"timestamp", utc_timestamp()},
                       {"run_id", ctx.run_id},
                       {"agent_id", ctx.agent_id},
                       {"stage", ctx.stage},
                       {"request", body},
                       {"response", ok ? text : last_error},
                       {"latency_ms", latency},
                       {"status", status},
                       {"ok", ok},
                       {"attempt", attempt}});
    }
    if (ok) return text;
    if (!transient) throw TransportError(last_error);
    if (attempt + 1 < attempts) sleeper_(std::chrono::duration<double>(backoff_delay(attempt)));
  }
  throw TransportError(fmt::format("giving up after {} attempts: {}", attempts, last_error));
}

ReplayBackend::ReplayBackend(std::vector<nlohmann::json> entries) {
  for (auto& e : entries) {
    if (e.value("ok", true)) entries_.push_back(std::move(e));
  }
}

ReplayBackend ReplayBackend::from_file(const std::filesystem::path& path) {
  return ReplayBackend(TranscriptLog::load(path));
}

std::string ReplayBackend::complete(const CallContext& ctx, std::span<const ChatTurn> turns) {
  if (cursor_ >= entries_.size())
    throw ReplayMismatch(fmt::format("recording exhausted at agent {} stage {}", ctx.agent_id, ctx.stage));
  const auto& e = entries_[cursor_];
  const auto agent = e.value("agent_id", std::string{});
  const auto stage = e.value("stage", std::string{});
  if (agent != ctx.agent_id || stage != ctx.stage)
    throw ReplayMismatch(fmt::format("entry {} was recorded for agent {} stage {}, asked for agent {} stage {}",
                                     cursor_, agent, stage, ctx.agent_id, ctx.stage));
  if (!e.contains("response") || !e["response"].is_string())
    throw ReplayMismatch(fmt::format("entry {} has no response text", cursor_));
  ++cursor_;
  auto text = e["response"].get<std::string>();
  if (ctx.log) {
    nlohmann::json request = nlohmann::json::array();
    for (const auto& t : turns) request.push_back({{"role", to_string(t.role)}, {"content", t.content}});
    ctx.log->append({{"timestamp", utc_timestamp()},
                     {"run_id", ctx.run_id},
                     {"agent_id", ctx.agent_id},
                     {"stage", ctx.stage},
                     {"request", {{"messages", request}}},
                     {"response", text},
                     {"latency_ms", 0.0},
                     {"status", 200},
                     {"ok", true}});
  }
  return text;
}

}  // namespace comal
