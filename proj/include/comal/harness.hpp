#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "comal/agent.hpp"
#include "comal/chat.hpp"
#include "comal/scenario.hpp"

namespace comal {

struct TrajectorySample {
  double time = 0.0;
  VehicleId vehicle{};
  double position = 0.0;  ///< arc along the vehicle's route
  double speed = 0.0;

  bool operator==(const TrajectorySample&) const = default;
};

struct RunFlags {
  bool role_fallback = false;
  int planner_fallbacks = 0;
  int parse_failures = 0;
  int transport_failures = 0;
  bool collision = false;
  std::string collision_message;
};

struct PlannerEvent {
  double time = 0.0;
  VehicleId vehicle{};
  Role role = Role::wave_dampener;
  PlannerSpec planner;

  bool operator==(const PlannerEvent&) const = default;
};

struct RunResult {
  double avg_speed = 0.0;
  double speed_std = 0.0;
  std::vector<TrajectorySample> samples;
  RunFlags flags;
  std::uint64_t seed = 0;
  ScenarioConfig config;
  std::string backend;
  std::vector<RoleAssignment> roles;
  std::vector<PlannerEvent> planners;
  std::vector<Message> messages;
  std::shared_ptr<TranscriptLog> transcript;  ///< set for remote and replay backends
};

struct RunOptions {
  std::optional<MemoryStore> memory;  ///< builtin() when empty
  std::optional<Prompts> prompts;     ///< builtin() when empty
  FixedIdm fixed{};
  bool log_transcript = false;  ///< record backend exchanges in RunResult::transcript
  /// Appends a run-summary experience to this directory after the run.
  std::optional<std::filesystem::path> memory_writeback;
};

struct SpeedStats {
  double avg = 0.0;
  double std = 0.0;
};

/// Mean and population standard deviation of every sample with
/// time >= warmup. Throws InvalidArgument when none qualify.
SpeedStats metrics(std::span<const TrajectorySample> samples, double warmup);

/// Warmup, then one brainstorm, then a planner refresh every replan
/// interval; arrivals on open networks are released before each step and
/// CAVs arriving after the brainstorm are reasoned on entry as wave
/// dampeners. A collision ends the run early with the flag set and the
/// samples recorded so far.
RunResult run(const ScenarioConfig& config, ReasonBackend& backend, const RunOptions& options = {});

nlohmann::json metrics_json(const RunResult& result);
std::string trajectories_csv(std::span<const TrajectorySample> samples);
std::vector<TrajectorySample> parse_trajectories_csv(std::string_view text);

/// Writes metrics.json, trajectories.csv and (when present) transcript.jsonl.
/// All files are staged as temporaries first; on any failure the
/// temporaries are removed and nothing is left behind.
void export_result(const RunResult& result, const std::filesystem::path& directory);

/// Writes `files` (name -> content) into `directory` atomically as a set.
void write_files_atomic(const std::filesystem::path& directory,
                        std::span<const std::pair<std::string, std::string>> files);

using BackendFactory = std::function<std::unique_ptr<ReasonBackend>(const ScenarioConfig&)>;

struct SweepCell {
  std::string scenario;
  double penetration = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> avgs;  ///< successful runs only
  std::vector<double> stds;
  std::vector<std::string> errors;
  double avg_mean = 0.0;
  double avg_se = 0.0;
  double std_mean = 0.0;
  double std_se = 0.0;
  bool failed = false;
};

struct SweepSpec {
  std::vector<ScenarioConfig> scenarios;
  std::vector<std::uint64_t> seeds;
  std::vector<double> penetrations;  ///< merge only; empty keeps each config's own
  unsigned threads = 0;              ///< 0 = hardware concurrency
};

/// Runs every (scenario, penetration, seed) combination, in parallel across
/// runs. A run that throws or collides is recorded in its cell; a cell with
/// no successful run is marked failed.
std::vector<SweepCell> sweep(const SweepSpec& spec, const BackendFactory& factory,
                             const RunOptions& options = {});

std::string sweep_csv(std::span<const SweepCell> cells);
std::string sweep_table(std::span<const SweepCell> cells);

}  // namespace comal
