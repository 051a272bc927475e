#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "comal/agent.hpp"
#include "comal/errors.hpp"
#include "embedded.hpp"

namespace comal {

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::leader:
      return "leader";
    case Role::follower:
      return "follower";
    case Role::wave_dampener:
      return "wave_dampener";
  }
  return "wave_dampener";
}

std::optional<Role> role_from_string(std::string_view name) noexcept {
  if (name == "leader") return Role::leader;
  if (name == "follower") return Role::follower;
  if (name == "wave_dampener") return Role::wave_dampener;
  return std::nullopt;
}

Experience experience_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("scenario") || !j["scenario"].is_string() || !j.contains("text") ||
      !j["text"].is_string())
    throw ConfigError("experience needs string fields 'scenario' and 'text'");
  Experience e;
  try {
    e.scenario = topology_from_string(j["scenario"].get<std::string>());
  } catch (const InvalidArgument& err) {
    throw ConfigError(err.what());
  }
  if (j.contains("role") && !j["role"].is_null()) {
    if (!j["role"].is_string()) throw ConfigError("experience 'role' must be a string");
    e.role = role_from_string(j["role"].get<std::string>());
    if (!e.role) throw ConfigError(fmt::format("unknown role '{}'", j["role"].get<std::string>()));
  }
  e.text = j["text"].get<std::string>();
  return e;
}

nlohmann::json to_json(const Experience& e) {
  nlohmann::json j{{"scenario", to_string(e.scenario)}, {"text", e.text}};
  if (e.role) j["role"] = to_string(*e.role);
  return j;
}

MemoryStore MemoryStore::builtin() {
  MemoryStore store;
  for (const auto& f : detail::embedded_experiences()) {
    auto j = nlohmann::json::parse(f.content, nullptr, false);
    if (j.is_discarded()) throw ConfigError(fmt::format("built-in experience '{}' is not JSON", f.name));
    store.add(experience_from_json(j));
  }
  return store;
}

MemoryStore MemoryStore::load_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw ConfigError(fmt::format("memory directory '{}' not found", dir.string()));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  MemoryStore store;
  for (const auto& p : files) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read '{}'", p.string()));
    std::stringstream buf;
    buf << in.rdbuf();
    auto j = nlohmann::json::parse(buf.str(), nullptr, false);
    if (j.is_discarded()) throw ConfigError(fmt::format("'{}' is not valid JSON", p.string()));
    try {
      store.add(experience_from_json(j));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}: {}", p.string(), e.what()));
    }
  }
  return store;
}

void MemoryStore::append_to_dir(const std::filesystem::path& dir, Experience e) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::size_t n = 0;
  fs::path target;
  do {
    target = dir / fmt::format("run_{:06}.json", n++);
  } while (fs::exists(target));
  const auto tmp = fs::path(target).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", tmp.string()));
    out << to_json(e).dump(2) << '\n';
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", tmp.string()));
  }
  fs::rename(tmp, target);
  items_.push_back(std::move(e));
}

std::vector<Experience> recall(const MemoryStore& memory, Topology scenario, std::optional<Role> role) {
  std::vector<Experience> out;
  for (const auto& e : memory.items()) {
    if (e.scenario == scenario) out.push_back(e);
  }
  std::stable_partition(out.begin(), out.end(),
                        [&](const Experience& e) { return role && e.role && *e.role == *role; });
  return out;
}

}  // namespace comal
