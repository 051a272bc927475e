"""Mixed-autonomy traffic benchmark: scenarios, runs, sweeps and metrics."""

import json

from ._comal import (
    CollisionError,
    ConfigError,
    Error,
    IdmParams,
    InvalidArgument,
    ReplayMismatch,
    RunResult,
    TransportError,
    desired_gap,
    equilibrium_speed,
    extract_planner_json,
    idm_accel,
    metrics,
    run,
)
from . import _comal

__all__ = [
    "CollisionError",
    "ConfigError",
    "Error",
    "IdmParams",
    "InvalidArgument",
    "ReplayMismatch",
    "RunResult",
    "TransportError",
    "backend_config",
    "catalog",
    "desired_gap",
    "equilibrium_speed",
    "extract_planner_json",
    "idm_accel",
    "metrics",
    "run",
    "run_metrics",
    "scenario",
    "sweep",
]


def catalog():
    """Every catalog scenario as a dict."""
    return json.loads(_comal.catalog_json())


def scenario(name, overrides=None):
    """One catalog scenario with optional overrides applied."""
    return json.loads(_comal.scenario_json(name, json.dumps(overrides) if overrides else ""))


def run_metrics(result):
    """The metrics.json content of a run as a dict."""
    return json.loads(result.metrics_json())


def sweep(scenarios, seeds, penetrations=(), threads=0, backend="scripted", replay=""):
    """Runs every scenario over every seed; one dict per cell."""
    return json.loads(
        _comal.sweep_json(list(scenarios), list(seeds), list(penetrations), threads, backend, str(replay))
    )


def backend_config(settings=None):
    """Remote backend settings after defaults and validation."""
    return json.loads(_comal.backend_config_json(json.dumps(settings or {})))
