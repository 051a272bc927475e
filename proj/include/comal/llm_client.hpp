#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "comal/chat.hpp"

namespace comal {

struct BackendConfig {
  std::string endpoint = "https://api.openai.com";  ///< base URL or full .../chat/completions URL
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "COMAL_API_KEY";
  double timeout = 60.0;  ///< per request [s]
  int max_retries = 3;
  double temperature = 0.0;
  double backoff_base = 1.0;  ///< [s]
  double backoff_factor = 2.0;
  double jitter = 0.25;  ///< each delay is scaled by 1 + U[0, jitter)

  void validate() const;
};

BackendConfig backend_config_from_json(const nlohmann::json& j);

/// OpenAI-compatible chat-completion client. Retries timeouts, connection
/// failures, 429 and 5xx with exponential backoff; every attempt is
/// appended to the transcript when one is given.
class LlmClient {
 public:
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  /// Reads the key from the environment. Throws ConfigError when it is unset
  /// or the endpoint is malformed.
  explicit LlmClient(BackendConfig config);

  const BackendConfig& config() const noexcept { return config_; }

  /// Replaces the real sleep (tests use this to skip or record delays).
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

  /// Text of the first choice. Throws TransportError when the retry budget
  /// is exhausted or the endpoint answers with a non-retryable error.
  std::string complete(std::span<const ChatTurn> turns, const CallContext& ctx = {});

  nlohmann::json request_body(std::span<const ChatTurn> turns) const;

 private:
  double backoff_delay(int attempt);

  BackendConfig config_;
  std::string api_key_;
  std::string scheme_host_port_;
  std::string path_;
  Sleeper sleeper_;
  std::mt19937_64 jitter_rng_;
};

class RemoteBackend final : public ReasonBackend {
 public:
  explicit RemoteBackend(BackendConfig config) : client_(std::move(config)) {}
  std::string name() const override { return "remote"; }
  std::string complete(const CallContext& ctx, std::span<const ChatTurn> turns) override {
    return client_.complete(turns, ctx);
  }
  LlmClient& client() noexcept { return client_; }

 private:
  LlmClient client_;
};

/// Serves the successful responses of a recorded transcript in order.
/// Throws ReplayMismatch when the requested (agent, stage) differs from the
/// next recorded entry or the recording is exhausted.
class ReplayBackend final : public ReasonBackend {
 public:
  explicit ReplayBackend(std::vector<nlohmann::json> entries);
  static ReplayBackend from_file(const std::filesystem::path& path);

  std::string name() const override { return "replay"; }
  std::string complete(const CallContext& ctx, std::span<const ChatTurn> turns) override;
  std::size_t remaining() const noexcept { return entries_.size() - cursor_; }

 private:
  std::vector<nlohmann::json> entries_;
  std::size_t cursor_ = 0;
};

}  // namespace comal
