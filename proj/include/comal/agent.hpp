#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comal/chat.hpp"
#include "comal/dynamics.hpp"
#include "comal/network.hpp"
#include "comal/types.hpp"

namespace comal {

// ---------------------------------------------------------------- perception

struct Neighbor {
  VehicleId id{};
  VehicleKind kind = VehicleKind::human;
  double gap = 0.0;  ///< bumper gap ahead of the ego [m]
  double speed = 0.0;
};

struct SceneDescription {
  std::string map_text;
  std::string ego_text;
  std::vector<Neighbor> neighbors;  ///< ascending gap
  std::string neighbors_text;

  /// The three lines joined with '\n' (no trailing newline).
  std::string text() const;
};

/// Renders the v1 perception template for `ego`. Pure: identical worlds give
/// identical bytes. Neighbors are vehicles ahead on the ego's route (other
/// routes count where they share edges) whose bumper gap is within
/// `horizon`. Throws InvalidArgument for an unknown ego.
SceneDescription perceive(const World& world, VehicleId ego, double horizon, std::string_view scenario_tag);

/// Fields a policy can read back out of rendered perception text. Anything
/// absent from the text stays empty.
struct SceneFacts {
  std::optional<std::string> scenario;
  std::optional<double> speed_limit;
  std::optional<double> speed;
  std::optional<double> headway;
  std::optional<double> leader_speed;
};

/// Scans `text` for the last [MAP] and [EGO] lines.
SceneFacts parse_scene(std::string_view text);

// -------------------------------------------------------------------- memory

enum class Role { leader, follower, wave_dampener };

std::string_view to_string(Role role) noexcept;
std::optional<Role> role_from_string(std::string_view name) noexcept;

struct Experience {
  Topology scenario = Topology::ring;
  std::optional<Role> role;
  std::string text;

  bool operator==(const Experience&) const = default;
};

Experience experience_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Experience& e);

class MemoryStore {
 public:
  MemoryStore() = default;
  explicit MemoryStore(std::vector<Experience> experiences) : items_(std::move(experiences)) {}

  /// Built-in experiences shipped with the library.
  static MemoryStore builtin();
  /// Every *.json file in `dir`, in file-name order. Throws ConfigError on
  /// unreadable or malformed files.
  static MemoryStore load_dir(const std::filesystem::path& dir);

  void add(Experience e) { items_.push_back(std::move(e)); }
  const std::vector<Experience>& items() const noexcept { return items_; }

  /// Writes `e` as a new file in `dir` and adds it to the store.
  void append_to_dir(const std::filesystem::path& dir, Experience e);

 private:
  std::vector<Experience> items_;
};

/// All experiences for `scenario`; those tagged with `role` come first.
/// Order is otherwise the store order.
std::vector<Experience> recall(const MemoryStore& memory, Topology scenario, std::optional<Role> role);

// ------------------------------------------------------------- collaboration

struct Message {
  VehicleId sender{};
  int round = 0;
  std::string content;
};

struct RoleAssignment {
  VehicleId vehicle{};
  Role role = Role::wave_dampener;
  std::string rationale;

  bool operator==(const RoleAssignment&) const = default;
};

class MessagePool {
 public:
  void publish(Message m) { messages_.push_back(std::move(m)); }
  const std::vector<Message>& messages() const noexcept { return messages_; }
  /// The pool rendered as "[round r] vehicle id: content" lines.
  std::string transcript() const;

  void set_roles(std::vector<RoleAssignment> roles) { roles_ = std::move(roles); }
  const std::vector<RoleAssignment>& roles() const noexcept { return roles_; }

 private:
  std::vector<Message> messages_;
  std::vector<RoleAssignment> roles_;
};

inline constexpr std::string_view kRolesFinal = "[ROLES FINAL]";

/// One participant as seen by the collaboration protocol.
struct CavBrief {
  VehicleId id{};
  double arc = 0.0;  ///< position along its route at collaboration time
  std::string scene;
};

/// Parses the fenced ```roles block following the terminator in `message`.
/// Returns nullopt unless every id in `cavs` gets exactly one valid role,
/// no unknown ids appear and there is at most one leader.
std::optional<std::vector<RoleAssignment>> parse_role_block(std::string_view message,
                                                            std::span<const CavBrief> cavs);

/// Deterministic allocation used by the scripted backend and as the fallback:
/// on a figure-eight the front-most CAV leads and the rest follow; elsewhere
/// every CAV damps waves.
std::vector<RoleAssignment> scripted_allocation(Topology scenario, std::span<const CavBrief> cavs);

struct BrainstormResult {
  std::vector<RoleAssignment> roles;
  int rounds = 0;
  bool fallback = false;
};

struct Prompts;

/// Round-robin over `cavs` in order. Ends on the first message carrying the
/// terminator and a valid role block, or after `max_rounds` full rounds, in
/// which case scripted_allocation applies and `fallback` is set. Backend
/// transport failures count as an empty message.
BrainstormResult brainstorm(std::span<const CavBrief> cavs, MessagePool& pool, ReasonBackend& backend,
                            const Prompts& prompts, Topology scenario, int max_rounds,
                            std::span<const Experience> experiences, const CallContext& base);

// ----------------------------------------------------------------- reasoning

struct PlannerSpec {
  double v0 = 30.0;
  double a_max = 1.0;
  double s0 = 2.0;

  /// Bounds: 0.1 <= v0 <= speed_limit, 0.1 <= a_max <= 3, 0.5 <= s0 <= 10.
  PlannerSpec clamped(double speed_limit) const;
  bool within_bounds(double speed_limit) const;

  bool operator==(const PlannerSpec&) const = default;
};

inline constexpr double kPlannerMinV0 = 0.1;
inline constexpr double kPlannerMinAccel = 0.1;
inline constexpr double kPlannerMaxAccel = 3.0;
inline constexpr double kPlannerMinGap = 0.5;
inline constexpr double kPlannerMaxGap = 10.0;

/// The last JSON object in `text` with numeric v0, a_max and s0 (code
/// fences and prose around it are ignored). Values are returned unclamped.
std::optional<PlannerSpec> extract_planner_json(std::string_view text);

/// Scripted reasoning policy. Figure-eight: the leader holds a moderate
/// speed for queue stability, followers close up with a short gap and
/// brisk acceleration. Ring and merge wave dampeners: congestion ahead
/// (leader more than 1 m/s slower, or gap below the human desired gap)
/// means matching the leader's speed; otherwise cruise at the limit.
PlannerSpec scripted_planner(Role role, const SceneFacts& scene);

/// Versioned prompt templates. Placeholders are written {name}.
struct Prompts {
  std::string version;
  std::string system;
  std::string brainstorm;
  std::string role_clarification;
  std::string scene_understanding;
  std::string motion_instruction;
  std::string planner_generation;
  std::string planner_retry;

  static Prompts builtin();
  /// Loads the same file names from `dir`.
  static Prompts load_dir(const std::filesystem::path& dir, std::string version);
};

/// Replaces every {key} in `tpl`. Throws InvalidArgument on an unknown or
/// unterminated placeholder.
std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& values);

inline constexpr std::string_view kStageRole = "role_clarification";
inline constexpr std::string_view kStageScene = "scene_understanding";
inline constexpr std::string_view kStageMotion = "motion_instruction";
inline constexpr std::string_view kStagePlanner = "planner_generation";
inline constexpr std::string_view kStageBrainstorm = "brainstorm";

struct ReasonOutcome {
  PlannerSpec planner;
  int parse_failures = 0;
  bool fallback = false;
  bool transport_failure = false;
};

/// The four-stage chain: role clarification, scene understanding, motion
/// instruction, planner generation. The last stage is retried twice when no
/// planner JSON can be extracted; after that, or on a transport failure,
/// the scripted planner for `role` is used and `fallback` is set.
ReasonOutcome reason(Role role, std::string_view scene, std::span<const Experience> experiences,
                     ReasonBackend& backend, const Prompts& prompts, double speed_limit,
                     const CallContext& base);

/// The constants the planner never touches.
struct FixedIdm {
  double T = 1.0;
  double b = 1.5;
  double delta = 4.0;
};

IdmParams execute(const PlannerSpec& planner, const FixedIdm& fixed);

/// Backend that answers by parsing the prompts and applying the scripted
/// policies. Stateless and pure in the conversation.
class ScriptedBackend final : public ReasonBackend {
 public:
  std::string name() const override { return "scripted"; }
  std::string complete(const CallContext& ctx, std::span<const ChatTurn> turns) override;
};

}  // namespace comal
