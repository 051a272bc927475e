#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "comal/errors.hpp"
#include "comal/harness.hpp"
#include "comal/llm_client.hpp"

namespace {

using namespace comal;

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open '{}'", path));
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(fmt::format("'{}' is not valid JSON", path));
  return j;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw InvalidArgument(fmt::format("bad seed '{}'", s));
  return v;
}

// "3", "1..5" or "1,4,9"
std::vector<std::uint64_t> parse_seeds(std::string_view text) {
  std::vector<std::uint64_t> out;
  if (auto dots = text.find(".."); dots != std::string_view::npos) {
    const auto a = parse_u64(text.substr(0, dots));
    const auto b = parse_u64(text.substr(dots + 2));
    if (b < a) throw InvalidArgument(fmt::format("empty seed range '{}'", text));
    for (auto s = a; s <= b; ++s) out.push_back(s);
    return out;
  }
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    out.push_back(parse_u64(text.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

struct BackendArgs {
  std::string kind = "scripted";
  std::string replay;
  std::string config;
};

BackendFactory make_factory(const BackendArgs& args) {
  if (args.kind == "scripted")
    return [](const ScenarioConfig&) { return std::make_unique<ScriptedBackend>(); };
  if (args.kind == "replay") {
    if (args.replay.empty()) throw ConfigError("--replay FILE is required for the replay backend");
    auto entries = TranscriptLog::load(args.replay);
    return [entries](const ScenarioConfig&) { return std::make_unique<ReplayBackend>(entries); };
  }
  if (args.kind == "remote") {
    const auto cfg = args.config.empty() ? BackendConfig{} : backend_config_from_json(read_json(args.config));
    LlmClient probe(cfg);
    return [cfg](const ScenarioConfig&) { return std::make_unique<RemoteBackend>(cfg); };
  }
  throw ConfigError(fmt::format("unknown backend '{}'", args.kind));
}

void add_backend_options(CLI::App* cmd, BackendArgs& args) {
  cmd->add_option("--backend", args.kind, "scripted, replay or remote")
      ->check(CLI::IsMember({"scripted", "replay", "remote"}));
  cmd->add_option("--replay", args.replay, "transcript.jsonl to serve (replay backend)");
  cmd->add_option("--backend-config", args.config, "JSON endpoint settings (remote backend)");
}

int list_catalog() {
  fmt::print("{:<9} {:<13} {:>8} {:>7} {:>5} {:>12}\n", "name", "topology", "horizon", "humans", "cavs",
             "penetration");
  for (const auto& c : catalog()) {
    if (c.topology == Topology::merge)
      fmt::print("{:<9} {:<13} {:>8.0f} {:>7} {:>5} {:>12.3f}\n", c.name, to_string(c.topology), c.horizon, "-", "-",
                 c.penetration);
    else
      fmt::print("{:<9} {:<13} {:>8.0f} {:>7} {:>5} {:>12}\n", c.name, to_string(c.topology), c.horizon, c.humans,
                 c.cavs, "-");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-autonomy traffic benchmark runner"};
  app.require_subcommand(1);

  std::string scenario;
  std::string overrides;
  std::uint64_t seed = 0;
  std::string out;
  bool no_collab = false, no_memory = false, no_perception = false;
  std::string memory_dir, prompts_dir, writeback;
  BackendArgs backend;

  auto* run_cmd = app.add_subcommand("run", "Run one scenario");
  run_cmd->add_option("--scenario", scenario, "catalog name, e.g. ring_1")->required();
  run_cmd->add_option("--config", overrides, "JSON file overriding catalog values");
  run_cmd->add_option("--seed", seed, "random seed");
  run_cmd->add_option("--out", out, "output directory")->required();
  run_cmd->add_flag("--no-collab", no_collab, "skip brainstorming; every CAV damps waves");
  run_cmd->add_flag("--no-memory", no_memory, "no experiences in prompts");
  run_cmd->add_flag("--no-perception", no_perception, "no scene text in prompts");
  run_cmd->add_option("--memory-dir", memory_dir, "experience directory instead of the built-in set");
  run_cmd->add_option("--prompts-dir", prompts_dir, "prompt template directory instead of the built-in v1");
  run_cmd->add_option("--write-memory", writeback, "append a run summary experience to this directory");
  add_backend_options(run_cmd, backend);

  app.add_subcommand("list", "Print the scenario catalog");

  std::vector<std::string> scenarios;
  std::string seeds = "1..5";
  std::vector<double> penetrations;
  unsigned threads = 0;
  std::string sweep_out;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run scenarios over a seed range");
  sweep_cmd->add_option("--scenarios", scenarios, "catalog names")->required();
  sweep_cmd->add_option("--seeds", seeds, "a..b or a comma list");
  sweep_cmd->add_option("--penetrations", penetrations, "merge penetration rates");
  sweep_cmd->add_option("--threads", threads, "worker threads, 0 = all cores");
  sweep_cmd->add_option("--out", sweep_out, "directory for sweep.csv");
  BackendArgs sweep_backend;
  add_backend_options(sweep_cmd, sweep_backend);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("list")) return list_catalog();

    if (app.got_subcommand("run")) {
      auto config = find_scenario(scenario);
      if (!overrides.empty()) config = apply_overrides(config, read_json(overrides));
      config.seed = seed;
      config.features.collaboration = !no_collab;
      config.features.memory = !no_memory;
      config.features.perception = !no_perception;
      RunOptions options;
      options.log_transcript = backend.kind != "scripted";
      if (!memory_dir.empty()) options.memory = MemoryStore::load_dir(memory_dir);
      if (!prompts_dir.empty()) options.prompts = Prompts::load_dir(prompts_dir, prompts_dir);
      if (!writeback.empty()) options.memory_writeback = writeback;
      auto engine = make_factory(backend)(config);
      const auto result = comal::run(config, *engine, options);
      export_result(result, out);
      fmt::print("{} seed {}: avg speed {:.3f} m/s, speed std {:.3f} m/s\n", config.name, seed, result.avg_speed,
                 result.speed_std);
      if (result.flags.collision) {
        fmt::print(stderr, "collision: {}\n", result.flags.collision_message);
        return 3;
      }
      return 0;
    }

    SweepSpec spec;
    for (const auto& name : scenarios) spec.scenarios.push_back(find_scenario(name));
    spec.seeds = parse_seeds(seeds);
    spec.penetrations = penetrations;
    spec.threads = threads;
    const auto cells = sweep(spec, make_factory(sweep_backend));
    fmt::print("{}", sweep_table(cells));
    for (const auto& c : cells)
      for (const auto& e : c.errors) fmt::print(stderr, "{}: {}\n", c.scenario, e);
    if (!sweep_out.empty()) {
      const std::pair<std::string, std::string> file{"sweep.csv", sweep_csv(cells)};
      write_files_atomic(sweep_out, std::span(&file, 1));
    }
    return 0;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
