#include "comal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>
#include <unistd.h>

#include <fmt/core.h>

#include "comal/errors.hpp"

namespace comal {

SpeedStats metrics(std::span<const TrajectorySample> samples, double warmup) {
  const double cutoff = warmup - 1e-9;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (s.time >= cutoff) {
      sum += s.speed;
      ++n;
    }
  }
  if (n == 0) throw InvalidArgument("no samples after warmup");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const auto& s : samples) {
    if (s.time >= cutoff) ss += (s.speed - mean) * (s.speed - mean);
  }
  return {mean, std::sqrt(ss / static_cast<double>(n))};
}

namespace {

constexpr std::string_view kNoScene = "[SCENE] perception disabled";

class Runner {
 public:
  Runner(const ScenarioConfig& config, ReasonBackend& backend, const RunOptions& options)
      : config_(config),
        backend_(backend),
        options_(options),
        memory_(options.memory ? *options.memory : MemoryStore::builtin()),
        prompts_(options.prompts ? *options.prompts : Prompts::builtin()),
        instance_(instantiate(config)),
        world_(*instance_.world),
        human_(IdmParams::human_default(config.network.speed_limit)),
        tag_(to_string(config.topology)) {
    result_.seed = config.seed;
    result_.config = config;
    result_.backend = backend.name();
    if (options.log_transcript) result_.transcript = std::make_shared<TranscriptLog>();
    base_.run_id = fmt::format("{}-seed{}", config.name, config.seed);
    base_.log = result_.transcript.get();
  }

  RunResult run() {
    const auto steps = std::llround(config_.horizon / config_.dt);
    const auto warm = std::llround(config_.warmup / config_.dt);
    const auto every = std::max<long long>(1, std::llround(config_.replan_interval / config_.dt));
    try {
      for (long long k = 0; k < steps; ++k) {
        release();
        if (k == 0) sample();
        if (k == warm) {
          collaborate();
          replan();
        } else if (k > warm && (k - warm) % every == 0) {
          replan();
        }
        world_.step();
        sample();
      }
    } catch (const CollisionError& e) {
      result_.flags.collision = true;
      result_.flags.collision_message = e.what();
    }
    try {
      const auto stats = metrics(result_.samples, config_.warmup);
      result_.avg_speed = stats.avg;
      result_.speed_std = stats.std;
    } catch (const InvalidArgument&) {
      result_.avg_speed = result_.speed_std = std::numeric_limits<double>::quiet_NaN();
    }
    result_.messages = pool_.messages();
    for (const auto& [id, a] : roles_) result_.roles.push_back(a);
    if (options_.memory_writeback) writeback();
    return std::move(result_);
  }

 private:
  void sample() {
    for (const auto& v : world_.vehicles()) result_.samples.push_back({world_.time(), v.id, v.arc, v.speed});
  }

  std::string scene(VehicleId id) const {
    if (!config_.features.perception) return std::string(kNoScene);
    return perceive(world_, id, config_.perception_horizon, tag_).text();
  }

  std::vector<Experience> experiences(std::optional<Role> role) const {
    if (!config_.features.memory) return {};
    return recall(memory_, config_.topology, role);
  }

  void release() {
    if (config_.topology != Topology::merge) return;
    for (auto id : instance_.arrivals.release(world_, human_, config_.vehicle_length)) {
      const auto* v = world_.find(id);
      if (!collaborated_ || v->kind != VehicleKind::cav) continue;
      roles_.emplace(to_int(id), RoleAssignment{id, Role::wave_dampener, "joined after role allocation"});
      reason_for(id);
    }
  }

  void collaborate() {
    collaborated_ = true;
    std::vector<CavBrief> cavs;
    for (const auto& v : world_.vehicles()) {
      if (v.kind == VehicleKind::cav) cavs.push_back({v.id, v.arc, scene(v.id)});
    }
    if (cavs.empty()) return;
    std::vector<RoleAssignment> roles;
    if (config_.features.collaboration) {
      const auto memory = experiences(std::nullopt);
      auto outcome =
          brainstorm(cavs, pool_, backend_, prompts_, config_.topology, config_.max_rounds, memory, base_);
      result_.flags.role_fallback = outcome.fallback;
      roles = std::move(outcome.roles);
    } else {
      for (const auto& c : cavs) roles.push_back({c.id, Role::wave_dampener, "collaboration disabled"});
    }
    for (auto& r : roles) roles_.insert_or_assign(to_int(r.vehicle), std::move(r));
  }

  void replan() {
    std::vector<VehicleId> ids;
    for (const auto& v : world_.vehicles()) {
      if (v.kind == VehicleKind::cav && roles_.contains(to_int(v.id))) ids.push_back(v.id);
    }
    for (auto id : ids) reason_for(id);
  }

  void reason_for(VehicleId id) {
    const Role role = roles_.at(to_int(id)).role;
    CallContext ctx = base_;
    ctx.agent_id = std::to_string(to_int(id));
    const auto memory = experiences(role);
    const auto outcome =
        reason(role, scene(id), memory, backend_, prompts_, world_.network().speed_limit(), ctx);
    result_.flags.parse_failures += outcome.parse_failures;
    result_.flags.planner_fallbacks += outcome.fallback;
    result_.flags.transport_failures += outcome.transport_failure;
    world_.set_params(id, execute(outcome.planner, options_.fixed));
    result_.planners.push_back({world_.time(), id, role, outcome.planner});
  }

  void writeback() {
    Experience e;
    e.scenario = config_.topology;
    if (!roles_.empty()) e.role = roles_.begin()->second.role;
    std::string roles;
    for (const auto& [id, a] : roles_) roles += fmt::format("{}{}={}", roles.empty() ? "" : ", ", id, to_string(a.role));
    e.text = fmt::format("{} (seed {}): average speed {:.2f} m/s, speed std {:.2f} m/s with roles [{}]{}",
                         config_.name, config_.seed, result_.avg_speed, result_.speed_std,
                         roles.empty() ? "none" : roles, result_.flags.collision ? "; the run collided" : "");
    MemoryStore store;
    store.append_to_dir(*options_.memory_writeback, std::move(e));
  }

  const ScenarioConfig& config_;
  ReasonBackend& backend_;
  const RunOptions& options_;
  MemoryStore memory_;
  Prompts prompts_;
  Instance instance_;
  World& world_;
  IdmParams human_;
  std::string tag_;
  CallContext base_;
  MessagePool pool_;
  std::map<std::uint32_t, RoleAssignment> roles_;
  bool collaborated_ = false;
  RunResult result_;
};

}  // namespace

RunResult run(const ScenarioConfig& config, ReasonBackend& backend, const RunOptions& options) {
  config.validate();
  return Runner(config, backend, options).run();
}

nlohmann::json metrics_json(const RunResult& r) {
  nlohmann::json roles = nlohmann::json::array();
  for (const auto& a : r.roles)
    roles.push_back({{"vehicle", to_int(a.vehicle)}, {"role", to_string(a.role)}, {"rationale", a.rationale}});
  const auto number = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return nullptr;
  };
  return {
      {"scenario", r.config.name},
      {"seed", r.seed},
      {"backend", r.backend},
      {"avg_speed", number(r.avg_speed)},
      {"speed_std", number(r.speed_std)},
      {"warmup", r.config.warmup},
      {"horizon", r.config.horizon},
      {"samples", r.samples.size()},
      {"planner_updates", r.planners.size()},
      {"messages", r.messages.size()},
      {"flags",
       {{"role_fallback", r.flags.role_fallback},
        {"planner_fallbacks", r.flags.planner_fallbacks},
        {"parse_failures", r.flags.parse_failures},
        {"transport_failures", r.flags.transport_failures},
        {"collision", r.flags.collision},
        {"collision_message", r.flags.collision_message}}},
      {"roles", roles},
      {"config", to_json(r.config)},
  };
}

std::string trajectories_csv(std::span<const TrajectorySample> samples) {
  std::string out = "time,vehicle_id,position,speed\n";
  for (const auto& s : samples) out += fmt::format("{},{},{},{}\n", s.time, to_int(s.vehicle), s.position, s.speed);
  return out;
}

namespace {

template <typename T>
T parse_field(std::string_view text, std::size_t line) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw InvalidArgument(fmt::format("trajectory line {}: bad field '{}'", line, text));
  return value;
}

}  // namespace

std::vector<TrajectorySample> parse_trajectories_csv(std::string_view text) {
  std::vector<TrajectorySample> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      if (line != "time,vehicle_id,position,speed") throw InvalidArgument("trajectory header mismatch");
      continue;
    }
    if (line.empty()) continue;
    std::string_view fields[4];
    std::size_t start = 0;
    for (int f = 0; f < 4; ++f) {
      const auto comma = f < 3 ? line.find(',', start) : line.size();
      if (comma == std::string_view::npos) throw InvalidArgument(fmt::format("trajectory line {}: too few fields", line_no));
      fields[f] = line.substr(start, comma - start);
      start = comma + 1;
    }
    if (fields[3].find(',') != std::string_view::npos)
      throw InvalidArgument(fmt::format("trajectory line {}: too many fields", line_no));
    out.push_back({parse_field<double>(fields[0], line_no), VehicleId{parse_field<std::uint32_t>(fields[1], line_no)},
                   parse_field<double>(fields[2], line_no), parse_field<double>(fields[3], line_no)});
  }
  if (line_no == 0) throw InvalidArgument("empty trajectory file");
  return out;
}

void write_files_atomic(const std::filesystem::path& directory,
                        std::span<const std::pair<std::string, std::string>> files) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  std::vector<fs::path> staged;
  std::vector<fs::path> placed;
  const auto cleanup = [&] {
    std::error_code ec;
    for (const auto& p : staged) fs::remove(p, ec);
    for (const auto& p : placed) fs::remove(p, ec);
  };
  try {
    for (const auto& [name, content] : files) {
      const auto tmp = directory / fmt::format(".{}.tmp.{}", name, ::getpid());
      staged.push_back(tmp);
      std::ofstream out(tmp, std::ios::binary);
      out.write(content.data(), static_cast<std::streamsize>(content.size()));
      out.close();
      if (!out) throw Error(fmt::format("cannot write '{}'", tmp.string()));
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
      const auto target = directory / files[i].first;
      fs::rename(staged[i], target);
      placed.push_back(target);
    }
  } catch (const fs::filesystem_error& e) {
    cleanup();
    throw Error(e.what());
  } catch (...) {
    cleanup();
    throw;
  }
}

void export_result(const RunResult& result, const std::filesystem::path& directory) {
  std::vector<std::pair<std::string, std::string>> files{
      {"metrics.json", metrics_json(result).dump(2) + "\n"},
      {"trajectories.csv", trajectories_csv(result.samples)},
  };
  if (result.transcript) files.emplace_back("transcript.jsonl", result.transcript->to_jsonl());
  write_files_atomic(directory, files);
}

std::vector<SweepCell> sweep(const SweepSpec& spec, const BackendFactory& factory, const RunOptions& options) {
  if (spec.seeds.empty()) throw InvalidArgument("sweep needs at least one seed");
  std::vector<SweepCell> cells;
  std::vector<ScenarioConfig> configs;
  for (const auto& base : spec.scenarios) {
    if (base.topology == Topology::merge && !spec.penetrations.empty()) {
      for (double p : spec.penetrations) {
        auto c = base;
        c.penetration = p;
        c.validate();
        configs.push_back(c);
      }
    } else {
      base.validate();
      configs.push_back(base);
    }
  }
  for (const auto& c : configs) {
    SweepCell cell;
    cell.scenario = c.name;
    cell.penetration = c.penetration;
    cell.seeds = spec.seeds;
    cells.push_back(std::move(cell));
  }

  struct Slot {
    double avg = 0.0;
    double std = 0.0;
    std::string error;
  };
  const std::size_t jobs = configs.size() * spec.seeds.size();
  std::vector<Slot> slots(jobs);
  std::atomic<std::size_t> next{0};
  auto local = options;
  local.memory_writeback.reset();
  const auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      auto cfg = configs[j / spec.seeds.size()];
      cfg.seed = spec.seeds[j % spec.seeds.size()];
      try {
        auto backend = factory(cfg);
        const auto r = run(cfg, *backend, local);
        if (r.flags.collision) slots[j].error = "collision: " + r.flags.collision_message;
        else if (!std::isfinite(r.avg_speed)) slots[j].error = "no samples after warmup";
        else slots[j] = {r.avg_speed, r.speed_std, {}};
      } catch (const std::exception& e) {
        slots[j].error = e.what();
      }
    }
  };
  unsigned n = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, jobs));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();

  const auto mean_se = [](const std::vector<double>& xs) -> std::pair<double, double> {
    if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double m = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    if (xs.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()))};
  };
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cell = cells[c];
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      const auto& slot = slots[c * spec.seeds.size() + s];
      if (!slot.error.empty()) {
        cell.errors.push_back(fmt::format("seed {}: {}", spec.seeds[s], slot.error));
        continue;
      }
      cell.avgs.push_back(slot.avg);
      cell.stds.push_back(slot.std);
    }
    std::tie(cell.avg_mean, cell.avg_se) = mean_se(cell.avgs);
    std::tie(cell.std_mean, cell.std_se) = mean_se(cell.stds);
    cell.failed = cell.avgs.empty();
  }
  return cells;
}

std::string sweep_csv(std::span<const SweepCell> cells) {
  std::string out = "scenario,penetration,runs,errors,avg_mean,avg_se,std_mean,std_se\n";
  for (const auto& c : cells) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", c.scenario, c.penetration, c.avgs.size(), c.errors.size(),
                       c.avg_mean, c.avg_se, c.std_mean, c.std_se);
  }
  return out;
}

std::string sweep_table(std::span<const SweepCell> cells) {
  std::string out = fmt::format("{:<10} {:>6} {:>5}  {:>16}  {:>16}\n", "scenario", "pen", "runs", "avg speed", "speed std");
  for (const auto& c : cells) {
    if (c.failed) {
      out += fmt::format("{:<10} {:>6.3f} {:>5}  {:>16}  {:>16}\n", c.scenario, c.penetration, 0, "failed", "failed");
      continue;
    }
    out += fmt::format("{:<10} {:>6.3f} {:>5}  {:>16}  {:>16}\n", c.scenario, c.penetration, c.avgs.size(),
                       fmt::format("{:.3f} ± {:.3f}", c.avg_mean, c.avg_se),
                       fmt::format("{:.3f} ± {:.3f}", c.std_mean, c.std_se));
  }
  return out;
}

}  // namespace comal
