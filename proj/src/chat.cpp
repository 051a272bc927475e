#include "comal/chat.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "comal/errors.hpp"

namespace comal {

std::string_view to_string(ChatRole role) noexcept {
  switch (role) {
    case ChatRole::system:
      return "system";
    case ChatRole::user:
      return "user";
    case ChatRole::assistant:
      return "assistant";
  }
  return "user";
}

void TranscriptLog::append(nlohmann::json entry) {
  std::lock_guard lock(mutex_);
  entries_.push_back(std::move(entry));
}

std::vector<nlohmann::json> TranscriptLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t TranscriptLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string TranscriptLog::to_jsonl() const {
  std::lock_guard lock(mutex_);
  std::string out;
  for (const auto& e : entries_) {
    out += e.dump();
    out += '\n';
  }
  return out;
}

std::vector<nlohmann::json> TranscriptLog::parse_jsonl(std::string_view text) {
  std::vector<nlohmann::json> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ConfigError(fmt::format("transcript line {} is not a JSON object", line_no));
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<nlohmann::json> TranscriptLog::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read transcript '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str());
}

std::string utc_timestamp() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
}

}  // namespace comal
