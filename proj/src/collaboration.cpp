#include <algorithm>
#include <array>
#include <charconv>
#include <unordered_map>

#include <fmt/core.h>

#include "comal/agent.hpp"
#include "comal/errors.hpp"

namespace comal {

std::string MessagePool::transcript() const {
  if (messages_.empty()) return "(empty)";
  std::string out;
  for (const auto& m : messages_) {
    if (!out.empty()) out += '\n';
    out += fmt::format("[round {}] vehicle {}: {}", m.round, to_int(m.sender), m.content);
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::optional<std::vector<RoleAssignment>> parse_role_block(std::string_view message,
                                                            std::span<const CavBrief> cavs) {
  const auto term = message.rfind(kRolesFinal);
  if (term == std::string_view::npos) return std::nullopt;
  constexpr std::string_view fence = "```roles";
  const auto open = message.find(fence, term + kRolesFinal.size());
  if (open == std::string_view::npos) return std::nullopt;
  const auto body_start = message.find('\n', open);
  if (body_start == std::string_view::npos) return std::nullopt;
  const auto close = message.find("```", body_start);
  if (close == std::string_view::npos) return std::nullopt;
  const auto body = message.substr(body_start + 1, close - body_start - 1);

  std::unordered_map<std::uint32_t, RoleAssignment> parsed;
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto end = body.find('\n', pos);
    if (end == std::string_view::npos) end = body.size();
    const auto line = trim(body.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) return std::nullopt;
    const auto id_text = trim(line.substr(0, colon));
    std::uint32_t id = 0;
    auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), id);
    if (ec != std::errc() || ptr != id_text.data() + id_text.size()) return std::nullopt;
    auto rest = trim(line.substr(colon + 1));
    const auto role_end = rest.find_first_of(" \t");
    const auto role = role_from_string(rest.substr(0, role_end));
    if (!role) return std::nullopt;
    std::string rationale;
    if (role_end != std::string_view::npos) {
      auto r = trim(rest.substr(role_end));
      if (r.starts_with("-")) r = trim(r.substr(1));
      rationale = std::string(r);
    }
    if (!parsed.emplace(id, RoleAssignment{VehicleId{id}, *role, std::move(rationale)}).second) return std::nullopt;
  }
  if (parsed.size() != cavs.size()) return std::nullopt;
  std::vector<RoleAssignment> out;
  int leaders = 0;
  for (const auto& c : cavs) {
    auto it = parsed.find(to_int(c.id));
    if (it == parsed.end()) return std::nullopt;
    leaders += it->second.role == Role::leader;
    out.push_back(it->second);
  }
  if (leaders > 1) return std::nullopt;
  return out;
}

std::vector<RoleAssignment> scripted_allocation(Topology scenario, std::span<const CavBrief> cavs) {
  std::vector<RoleAssignment> out;
  if (scenario != Topology::figure_eight) {
    for (const auto& c : cavs)
      out.push_back({c.id, Role::wave_dampener, "smooth the flow by approaching slower traffic gently"});
    return out;
  }
  std::size_t front = 0;
  for (std::size_t i = 1; i < cavs.size(); ++i) {
    if (cavs[i].arc > cavs[front].arc) front = i;
  }
  for (std::size_t i = 0; i < cavs.size(); ++i) {
    if (i == front)
      out.push_back({cavs[i].id, Role::leader, "front-most vehicle; sets a steady pace for the queue"});
    else
      out.push_back({cavs[i].id, Role::follower, "closes up behind the leader to cross as one platoon"});
  }
  return out;
}

namespace {

std::string experiences_text(std::span<const Experience> experiences) {
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

BrainstormResult brainstorm(std::span<const CavBrief> cavs, MessagePool& pool, ReasonBackend& backend,
                            const Prompts& prompts, Topology scenario, int max_rounds,
                            std::span<const Experience> experiences, const CallContext& base) {
  if (cavs.empty()) throw InvalidArgument("brainstorm needs at least one CAV");
  if (max_rounds < 1) throw InvalidArgument("max_rounds must be at least 1");

  std::string participants;
  for (const auto& c : cavs) participants += fmt::format("{}{}", participants.empty() ? "" : ", ", to_int(c.id));
  const auto memory = experiences_text(experiences);

  for (int round = 1; round <= max_rounds; ++round) {
    for (const auto& c : cavs) {
      const auto id = std::to_string(to_int(c.id));
      const std::array<ChatTurn, 2> turns{
          ChatTurn{ChatRole::system,
                   render_template(prompts.system, {{"vehicle_id", id}, {"scenario", std::string(to_string(scenario))}})},
          ChatTurn{ChatRole::user, render_template(prompts.brainstorm, {{"round", std::to_string(round)},
                                                                        {"scenario", std::string(to_string(scenario))},
                                                                        {"max_rounds", std::to_string(max_rounds)},
                                                                        {"participants", participants},
                                                                        {"vehicle_id", id},
                                                                        {"arc", fmt::format("{:.2f}", c.arc)},
                                                                        {"scene", c.scene},
                                                                        {"experiences", memory},
                                                                        {"transcript", pool.transcript()},
                                                                        {"terminator", std::string(kRolesFinal)}})},
      };
      CallContext ctx = base;
      ctx.agent_id = id;
      ctx.stage = std::string(kStageBrainstorm);
      std::string reply;
      try {
        reply = backend.complete(ctx, turns);
      } catch (const TransportError&) {
        reply.clear();
      }
      pool.publish({c.id, round, reply});
      if (reply.find(kRolesFinal) != std::string::npos) {
        if (auto roles = parse_role_block(reply, cavs)) {
          pool.set_roles(*roles);
          return {std::move(*roles), round, false};
        }
      }
    }
  }
  auto roles = scripted_allocation(scenario, cavs);
  pool.set_roles(roles);
  return {std::move(roles), max_rounds, true};
}

}  // namespace comal
