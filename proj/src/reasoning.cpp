#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "comal/agent.hpp"
#include "comal/errors.hpp"
#include "embedded.hpp"

namespace comal {

namespace {

// Figure-eight queue.
constexpr PlannerSpec kLeader{6.75, 2.0, 2.0};
constexpr double kFollowerAccel = 2.6;
constexpr double kFollowerGap = 0.5;

// Wave dampener, per branch. Closed networks smooth the approach to the
// next wave; on the merge the recovery after each merge matters most.
struct DampenerConstants {
  double free_accel;
  double congested_accel;
  double gap;
  double min_speed;
};
constexpr DampenerConstants kRingDampener{0.2, 3.0, 2.0, 2.0};
constexpr DampenerConstants kMergeDampener{3.0, 0.1, 2.0, 2.0};

constexpr double kDefaultLimit = 30.0;

}  // namespace

PlannerSpec PlannerSpec::clamped(double speed_limit) const {
  return {std::clamp(v0, kPlannerMinV0, speed_limit), std::clamp(a_max, kPlannerMinAccel, kPlannerMaxAccel),
          std::clamp(s0, kPlannerMinGap, kPlannerMaxGap)};
}

bool PlannerSpec::within_bounds(double speed_limit) const {
  return v0 >= kPlannerMinV0 && v0 <= speed_limit && a_max >= kPlannerMinAccel && a_max <= kPlannerMaxAccel &&
         s0 >= kPlannerMinGap && s0 <= kPlannerMaxGap;
}

namespace {

// End of the balanced {...} starting at `open`, skipping string contents.
std::optional<std::size_t> matching_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<PlannerSpec> extract_planner_json(std::string_view text) {
  for (std::size_t start = text.rfind('{'); start != std::string_view::npos;
       start = start == 0 ? std::string_view::npos : text.rfind('{', start - 1)) {
    const auto end = matching_brace(text, start);
    if (!end) continue;
    auto j = nlohmann::json::parse(text.substr(start, *end - start + 1), nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    const auto num = [&](const char* key) -> std::optional<double> {
      auto it = j.find(key);
      if (it == j.end() || !it->is_number()) return std::nullopt;
      const double v = it->get<double>();
      if (!std::isfinite(v)) return std::nullopt;
      return v;
    };
    auto v0 = num("v0");
    auto a = num("a_max");
    auto s0 = num("s0");
    if (v0 && a && s0) return PlannerSpec{*v0, *a, *s0};
  }
  return std::nullopt;
}

PlannerSpec scripted_planner(Role role, const SceneFacts& scene) {
  const double limit = scene.speed_limit.value_or(kDefaultLimit);
  switch (role) {
    case Role::leader:
      return kLeader;
    case Role::follower:
      return {limit, kFollowerAccel, kFollowerGap};
    case Role::wave_dampener:
      break;
  }
  const auto& k = scene.scenario && *scene.scenario == "merge" ? kMergeDampener : kRingDampener;
  if (scene.speed && scene.headway && scene.leader_speed) {
    const double v = *scene.speed;
    const double ls = *scene.leader_speed;
    const bool congested =
        ls < v - 1.0 || *scene.headway < desired_gap(IdmParams::human_default(limit), v, 0.0);
    if (congested) return {std::max(k.min_speed, ls), k.congested_accel, k.gap};
  }
  return {limit, k.free_accel, k.gap};
}

std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    const char c = tpl[i];
    if (c != '{') {
      out += c;
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < tpl.size() && (std::islower(static_cast<unsigned char>(tpl[j])) || tpl[j] == '_' ||
                              std::isdigit(static_cast<unsigned char>(tpl[j]))))
      ++j;
    if (j == i + 1) {  // not a placeholder, e.g. a JSON brace
      out += c;
      ++i;
      continue;
    }
    if (j >= tpl.size() || tpl[j] != '}')
      throw InvalidArgument(fmt::format("unterminated placeholder at offset {}", i));
    const std::string key(tpl.substr(i + 1, j - i - 1));
    auto it = values.find(key);
    if (it == values.end()) throw InvalidArgument(fmt::format("no value for placeholder '{}'", key));
    out += it->second;
    i = j + 1;
  }
  return out;
}

namespace {

constexpr std::array<std::pair<std::string_view, std::string Prompts::*>, 7> kPromptFiles{{
    {"system.txt", &Prompts::system},
    {"brainstorm.txt", &Prompts::brainstorm},
    {"role_clarification.txt", &Prompts::role_clarification},
    {"scene_understanding.txt", &Prompts::scene_understanding},
    {"motion_instruction.txt", &Prompts::motion_instruction},
    {"planner_generation.txt", &Prompts::planner_generation},
    {"planner_retry.txt", &Prompts::planner_retry},
}};

}  // namespace

Prompts Prompts::builtin() {
  Prompts p;
  p.version = "v1";
  const auto files = detail::embedded_templates();
  for (const auto& [name, member] : kPromptFiles) {
    auto it = std::find_if(files.begin(), files.end(), [&](const auto& f) { return f.name == name; });
    if (it == files.end()) throw ConfigError(fmt::format("built-in template '{}' missing", name));
    p.*member = std::string(it->content);
  }
  return p;
}

Prompts Prompts::load_dir(const std::filesystem::path& dir, std::string version) {
  Prompts p;
  p.version = std::move(version);
  for (const auto& [name, member] : kPromptFiles) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read template '{}'", (dir / name).string()));
    std::stringstream buf;
    buf << in.rdbuf();
    p.*member = buf.str();
  }
  return p;
}

namespace {

std::string experiences_block(std::span<const Experience> experiences) {
  if (experiences.empty()) return "(none)";
  std::string out;
  for (const auto& e : experiences) {
    if (!out.empty()) out += '\n';
    out += "- ";
    out += e.text;
  }
  return out;
}

}  // namespace

ReasonOutcome reason(Role role, std::string_view scene, std::span<const Experience> experiences,
                     ReasonBackend& backend, const Prompts& prompts, double speed_limit,
                     const CallContext& base) {
  const auto facts = parse_scene(scene);
  const std::string role_name(to_string(role));
  std::vector<ChatTurn> turns{
      {ChatRole::system, render_template(prompts.system, {{"vehicle_id", base.agent_id},
                                                          {"scenario", facts.scenario.value_or("unknown")}})},
  };
  ReasonOutcome out;
  const auto fallback = [&] {
    out.planner = scripted_planner(role, facts).clamped(speed_limit);
    out.fallback = true;
    return out;
  };
  const auto ask = [&](std::string_view stage, std::string prompt) {
    turns.push_back({ChatRole::user, std::move(prompt)});
    CallContext ctx = base;
    ctx.stage = std::string(stage);
    auto reply = backend.complete(ctx, turns);
    turns.push_back({ChatRole::assistant, reply});
    return reply;
  };

  try {
    ask(kStageRole, render_template(prompts.role_clarification,
                                    {{"role", role_name}, {"experiences", experiences_block(experiences)}}));
    ask(kStageScene, render_template(prompts.scene_understanding, {{"scene", std::string(scene)}}));
    ask(kStageMotion, render_template(prompts.motion_instruction, {{"role", role_name}}));
    auto reply = ask(kStagePlanner, render_template(prompts.planner_generation,
                                                    {{"speed_limit", fmt::format("{:.2f}", speed_limit)}}));
    for (int retry = 0;; ++retry) {
      if (auto planner = extract_planner_json(reply)) {
        out.planner = planner->clamped(speed_limit);
        return out;
      }
      ++out.parse_failures;
      if (retry == 2) break;
      reply = ask(kStagePlanner, render_template(prompts.planner_retry, {}));
    }
  } catch (const TransportError&) {
    out.transport_failure = true;
  }
  return fallback();
}

IdmParams execute(const PlannerSpec& planner, const FixedIdm& fixed) {
  IdmParams p;
  p.v0 = planner.v0;
  p.a_max = planner.a_max;
  p.s0 = planner.s0;
  p.T = fixed.T;
  p.b = fixed.b;
  p.delta = fixed.delta;
  p.validate();
  return p;
}

// ------------------------------------------------------------ scripted backend

namespace {

std::string_view trim_copy(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string_view last_tagged_line(std::string_view text, std::string_view tag) {
  std::string_view found;
  std::size_t pos = 0;
  while ((pos = text.find(tag, pos)) != std::string_view::npos) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    found = text.substr(pos + tag.size(), end - pos - tag.size());
    pos = end;
  }
  return found;
}

std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr == s.data()) return std::nullopt;
  return v;
}

// "id=<n> arc=<x>" anywhere after `tag`; all occurrences, later ones win.
std::map<std::uint32_t, double> tagged_positions(std::string_view text, std::string_view tag) {
  std::map<std::uint32_t, double> out;
  std::size_t pos = 0;
  while ((pos = text.find(tag, pos)) != std::string_view::npos) {
    pos += tag.size();
    auto id_at = text.find("id=", pos);
    auto arc_at = text.find("arc=", pos);
    if (id_at == std::string_view::npos || arc_at == std::string_view::npos) break;
    std::uint32_t id = 0;
    auto idr = std::from_chars(text.data() + id_at + 3, text.data() + text.size(), id);
    auto arc = parse_number(text.substr(arc_at + 4, 32));
    if (idr.ec == std::errc() && arc) out[id] = *arc;
  }
  return out;
}

std::string full_text(std::span<const ChatTurn> turns) {
  std::string all;
  for (const auto& t : turns) {
    all += t.content;
    all += '\n';
  }
  return all;
}

std::string scripted_brainstorm(std::string_view prompt) {
  const auto scenario_name = std::string(trim_copy(last_tagged_line(prompt, "[SCENARIO]")));
  Topology scenario = Topology::ring;
  try {
    scenario = topology_from_string(scenario_name);
  } catch (const InvalidArgument&) {
  }
  const auto self = tagged_positions(prompt, "[SELF]");
  if (self.empty()) return "I could not find my own position in the prompt.";
  const auto [self_id, self_arc] = *self.rbegin();

  std::vector<std::uint32_t> participants;
  {
    const auto line = last_tagged_line(prompt, "[PARTICIPANTS]");
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && !std::isdigit(static_cast<unsigned char>(line[pos]))) ++pos;
      if (pos >= line.size()) break;
      std::uint32_t id = 0;
      auto r = std::from_chars(line.data() + pos, line.data() + line.size(), id);
      participants.push_back(id);
      pos = static_cast<std::size_t>(r.ptr - line.data());
    }
  }

  std::string msg = fmt::format("[POSITION] id={} arc={:.2f}\n", self_id, self_arc);
  msg += scenario == Topology::figure_eight
             ? "Proposal: the front-most vehicle leads at a steady pace and everyone else follows closely "
               "in one queue through the intersection."
             : "Proposal: every autonomous vehicle damps waves by approaching slower traffic gently.";
  if (participants.empty() || participants.back() != self_id) return msg;

  auto known = tagged_positions(prompt, "[POSITION]");
  known[self_id] = self_arc;
  std::vector<CavBrief> cavs;
  for (auto id : participants) {
    auto it = known.find(id);
    cavs.push_back({VehicleId{id}, it == known.end() ? -1e300 : it->second, {}});
  }
  msg += fmt::format("\n{}\n```roles\n", kRolesFinal);
  for (const auto& r : scripted_allocation(scenario, cavs))
    msg += fmt::format("{}: {} - {}\n", to_int(r.vehicle), to_string(r.role), r.rationale);
  msg += "```";
  return msg;
}

}  // namespace

std::string ScriptedBackend::complete(const CallContext& ctx, std::span<const ChatTurn> turns) {
  if (turns.empty()) return {};
  const auto& last = turns.back().content;
  if (ctx.stage == kStageBrainstorm) return scripted_brainstorm(last);

  const auto all = full_text(turns);
  const auto role = role_from_string(trim_copy(last_tagged_line(all, "[ROLE]"))).value_or(Role::wave_dampener);
  const auto facts = parse_scene(all);
  const auto planner = scripted_planner(role, facts);

  if (ctx.stage == kStageRole) {
    switch (role) {
      case Role::leader:
        return "I am the leader: I set a steady, moderate pace for the queue behind me.";
      case Role::follower:
        return "I am a follower: I stay close behind the vehicle ahead and react quickly.";
      case Role::wave_dampener:
        return "I am a wave dampener: I absorb speed fluctuations instead of passing them on.";
    }
  }
  if (ctx.stage == kStageScene) {
    if (!facts.speed) return "No perception is available; I assume free road ahead.";
    if (!facts.headway || !facts.leader_speed) return fmt::format("I drive at {:.2f} m/s with no vehicle ahead.", *facts.speed);
    return fmt::format("I drive at {:.2f} m/s; the vehicle ahead is {:.2f} m away at {:.2f} m/s.", *facts.speed,
                       *facts.headway, *facts.leader_speed);
  }
  if (ctx.stage == kStageMotion) {
    if (role == Role::wave_dampener && planner.v0 < facts.speed_limit.value_or(kDefaultLimit))
      return "There is congestion ahead, so I approach the lead vehicle slowly at its speed.";
    if (role == Role::leader) return "I hold a moderate speed so the queue stays together.";
    return "The road ahead is clear, so I accelerate to follow the lead vehicle closely.";
  }
  return fmt::format("{{\"v0\": {}, \"a_max\": {}, \"s0\": {}}}", planner.v0, planner.a_max, planner.s0);
}

}  // namespace comal
