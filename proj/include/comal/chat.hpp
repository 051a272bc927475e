#pragma once

#include <filesystem>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace comal {

enum class ChatRole { system, user, assistant };

std::string_view to_string(ChatRole role) noexcept;

struct ChatTurn {
  ChatRole role = ChatRole::user;
  std::string content;
};

/// Append-only record of backend calls for one run. One JSON object per
/// call: {timestamp, run_id, agent_id, stage, request, response, latency_ms}
/// plus `status` and `ok` so failed attempts can be told apart on replay.
class TranscriptLog {
 public:
  void append(nlohmann::json entry);
  std::vector<nlohmann::json> entries() const;
  std::size_t size() const;
  std::string to_jsonl() const;

  static std::vector<nlohmann::json> parse_jsonl(std::string_view text);
  static std::vector<nlohmann::json> load(const std::filesystem::path& path);

 private:
  mutable std::mutex mutex_;
  std::vector<nlohmann::json> entries_;
};

/// Who is asking and why. Backends that talk to (or impersonate) a model
/// append every exchange to `log` when it is set.
struct CallContext {
  std::string run_id;
  std::string agent_id;
  std::string stage;
  TranscriptLog* log = nullptr;
};

/// Given the ordered conversation so far, produce the next assistant message.
class ReasonBackend {
 public:
  virtual ~ReasonBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string complete(const CallContext& ctx, std::span<const ChatTurn> turns) = 0;
};

/// UTC wall-clock time as ISO 8601 with milliseconds.
std::string utc_timestamp();

}  // namespace comal
