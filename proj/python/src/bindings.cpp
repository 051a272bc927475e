#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <json.hpp>

#include "comal/errors.hpp"
#include "comal/harness.hpp"
#include "comal/llm_client.hpp"

namespace py = pybind11;
using namespace comal;

namespace {

ScenarioConfig resolve(const std::string& name, const std::string& overrides) {
  auto config = find_scenario(name);
  if (!overrides.empty()) config = apply_overrides(config, nlohmann::json::parse(overrides));
  return config;
}

BackendFactory factory_for(const std::string& backend, const std::string& replay, const std::string& config) {
  if (backend == "scripted")
    return [](const ScenarioConfig&) { return std::make_unique<ScriptedBackend>(); };
  if (backend == "replay") {
    if (replay.empty()) throw ConfigError("the replay backend needs a transcript path");
    auto entries = TranscriptLog::load(replay);
    return [entries](const ScenarioConfig&) { return std::make_unique<ReplayBackend>(entries); };
  }
  if (backend == "remote") {
    const auto cfg = config.empty() ? BackendConfig{} : backend_config_from_json(nlohmann::json::parse(config));
    return [cfg](const ScenarioConfig&) { return std::make_unique<RemoteBackend>(cfg); };
  }
  throw ConfigError("unknown backend '" + backend + "'");
}

std::vector<TrajectorySample> samples_from(const std::vector<std::tuple<double, int, double, double>>& rows) {
  std::vector<TrajectorySample> out;
  out.reserve(rows.size());
  for (const auto& [t, id, pos, v] : rows)
    out.push_back({t, static_cast<VehicleId>(id), pos, v});
  return out;
}

}  // namespace

PYBIND11_MODULE(_comal, m) {
  m.doc() = "Native core of the comal traffic benchmark";

  static py::exception<Error> base(m, "Error");
  static py::exception<InvalidArgument> invalid(m, "InvalidArgument", base.ptr());
  static py::exception<CollisionError> collision(m, "CollisionError", base.ptr());
  static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
  static py::exception<TransportError> transport(m, "TransportError", base.ptr());
  static py::exception<ReplayMismatch> mismatch(m, "ReplayMismatch", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      py::set_error(invalid, e.what());
    } catch (const CollisionError& e) {
      py::set_error(collision, e.what());
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const TransportError& e) {
      py::set_error(transport, e.what());
    } catch (const ReplayMismatch& e) {
      py::set_error(mismatch, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    } catch (const nlohmann::json::exception& e) {
      py::set_error(PyExc_ValueError, e.what());
    }
  });

  py::class_<IdmParams>(m, "IdmParams")
      .def(py::init([](double v0, double T, double a_max, double b, double delta, double s0) {
             IdmParams p{v0, T, a_max, b, delta, s0};
             p.validate();
             return p;
           }),
           py::arg("v0") = 30.0, py::arg("T") = 1.0, py::arg("a_max") = 1.0, py::arg("b") = 1.5,
           py::arg("delta") = 4.0, py::arg("s0") = 2.0)
      .def_readwrite("v0", &IdmParams::v0)
      .def_readwrite("T", &IdmParams::T)
      .def_readwrite("a_max", &IdmParams::a_max)
      .def_readwrite("b", &IdmParams::b)
      .def_readwrite("delta", &IdmParams::delta)
      .def_readwrite("s0", &IdmParams::s0)
      .def_static("human_default", &IdmParams::human_default, py::arg("speed_limit"))
      .def("__repr__", [](const IdmParams& p) {
        return "IdmParams(v0=" + std::to_string(p.v0) + ", T=" + std::to_string(p.T) +
               ", a_max=" + std::to_string(p.a_max) + ", b=" + std::to_string(p.b) +
               ", delta=" + std::to_string(p.delta) + ", s0=" + std::to_string(p.s0) + ")";
      });

  m.def("desired_gap", &desired_gap, py::arg("params"), py::arg("v"), py::arg("dv"));
  m.def("idm_accel", &idm_accel, py::arg("params"), py::arg("v"), py::arg("dv"), py::arg("s"));
  m.def("equilibrium_speed", &equilibrium_speed, py::arg("params"), py::arg("gap"));

  m.def("extract_planner_json", [](const std::string& text) -> std::optional<std::tuple<double, double, double>> {
    const auto p = extract_planner_json(text);
    if (!p) return std::nullopt;
    return std::make_tuple(p->v0, p->a_max, p->s0);
  }, py::arg("text"));

  m.def("catalog_json", [] {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : catalog()) out.push_back(to_json(c));
    return out.dump();
  });
  m.def("scenario_json", [](const std::string& name, const std::string& overrides) {
    return to_json(resolve(name, overrides)).dump();
  }, py::arg("name"), py::arg("overrides") = "");

  m.def("metrics", [](const std::vector<std::tuple<double, int, double, double>>& rows, double warmup) {
    const auto s = samples_from(rows);
    const auto stats = metrics(s, warmup);
    return std::make_pair(stats.avg, stats.std);
  }, py::arg("samples"), py::arg("warmup"));

  py::class_<RunResult>(m, "RunResult")
      .def_readonly("avg_speed", &RunResult::avg_speed)
      .def_readonly("speed_std", &RunResult::speed_std)
      .def_readonly("seed", &RunResult::seed)
      .def_readonly("backend", &RunResult::backend)
      .def_property_readonly("collision", [](const RunResult& r) { return r.flags.collision; })
      .def_property_readonly("samples", [](const RunResult& r) {
        std::vector<std::tuple<double, int, double, double>> rows;
        rows.reserve(r.samples.size());
        for (const auto& s : r.samples) rows.emplace_back(s.time, static_cast<int>(s.vehicle), s.position, s.speed);
        return rows;
      })
      .def_property_readonly("roles", [](const RunResult& r) {
        std::vector<std::pair<int, std::string>> out;
        for (const auto& a : r.roles) out.emplace_back(static_cast<int>(a.vehicle), std::string(to_string(a.role)));
        return out;
      })
      .def("metrics_json", [](const RunResult& r) { return metrics_json(r).dump(); })
      .def("trajectories_csv", [](const RunResult& r) { return trajectories_csv(r.samples); })
      .def("export", [](const RunResult& r, const std::filesystem::path& dir) { export_result(r, dir); },
           py::arg("directory"));

  m.def("run", [](const std::string& name, std::uint64_t seed, const std::string& backend, const std::string& replay,
                  const std::string& backend_config, const std::string& overrides, bool collaboration, bool memory,
                  bool perception) {
    auto config = resolve(name, overrides);
    config.seed = seed;
    config.features = {perception, memory, collaboration};
    auto engine = factory_for(backend, replay, backend_config)(config);
    RunOptions options;
    options.log_transcript = backend != "scripted";
    py::gil_scoped_release release;
    return comal::run(config, *engine, options);
  }, py::arg("scenario"), py::arg("seed") = 0, py::arg("backend") = "scripted", py::arg("replay") = "",
     py::arg("backend_config") = "", py::arg("overrides") = "", py::arg("collaboration") = true,
     py::arg("memory") = true, py::arg("perception") = true);

  m.def("sweep_json", [](const std::vector<std::string>& names, const std::vector<std::uint64_t>& seeds,
                         const std::vector<double>& penetrations, unsigned threads, const std::string& backend,
                         const std::string& replay) {
    SweepSpec spec;
    for (const auto& n : names) spec.scenarios.push_back(find_scenario(n));
    spec.seeds = seeds;
    spec.penetrations = penetrations;
    spec.threads = threads;
    const auto factory = factory_for(backend, replay, "");
    std::vector<SweepCell> cells;
    {
      py::gil_scoped_release release;
      cells = sweep(spec, factory);
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& c : cells) {
      out.push_back({{"scenario", c.scenario}, {"penetration", c.penetration}, {"seeds", c.seeds},
                     {"avgs", c.avgs}, {"stds", c.stds}, {"errors", c.errors}, {"avg_mean", c.avg_mean},
                     {"avg_se", c.avg_se}, {"std_mean", c.std_mean}, {"std_se", c.std_se}, {"failed", c.failed}});
    }
    return out.dump();
  }, py::arg("scenarios"), py::arg("seeds"), py::arg("penetrations") = std::vector<double>{},
     py::arg("threads") = 0u, py::arg("backend") = "scripted", py::arg("replay") = "");

  m.def("backend_config_json", [](const std::string& text) {
    const auto c = backend_config_from_json(nlohmann::json::parse(text));
    return nlohmann::json{{"endpoint", c.endpoint}, {"model", c.model}, {"api_key_env", c.api_key_env},
                          {"timeout", c.timeout}, {"max_retries", c.max_retries},
                          {"temperature", c.temperature}, {"backoff_base", c.backoff_base},
                          {"backoff_factor", c.backoff_factor}, {"jitter", c.jitter}}
        .dump();
  }, py::arg("text") = "{}");
}
