"""Scenario files: one TOML document describing a coupled-pair experiment.

A scenario names the region, the two processes (start point, drift vector,
diffusion matrix as expression strings in y1..yn), the time stepping, and
the grid controls.  Loading validates shapes and expressions eagerly so a
bad file fails with a pointed message before any numerics start.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import expr as ex
from . import geometry as geo
from .geometry import Region
from .pde import DiffusionSpec
from .sde import CoupledPair

__all__ = ["Scenario", "ScenarioError", "load_scenario", "parse_scenario"]

DEFAULT_RESOLUTION = 257
DEFAULT_REFINEMENTS = 2
DEFAULT_LAMBDA_MIN = 1e-6


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario file."""


@dataclass(frozen=True)
class Scenario:
    """Validated experiment description."""

    label: str
    region: Region
    pair: CoupledPair
    dt: float
    n_replicates: int
    coupling: str
    bridge: bool
    seed: int
    t_max: float | None  # None means: derived from the solved fields
    resolution: int
    refinements: int
    lambda_min: float
    allow_degenerate: bool
    path: str | None = None


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ScenarioError(f"[{where}] is missing required key {key!r}")
    return table[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"[{where}] must be a number")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"[{where}] must be an integer")
    return value


def _start_point(raw, n: int, where: str) -> tuple[float, ...]:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        raw = [raw]
    if not isinstance(raw, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise ScenarioError(f"[{where}] must be a list of numbers")
    if len(raw) != n:
        raise ScenarioError(f"[{where}] must have {n} coordinates, got {len(raw)}")
    return tuple(float(v) for v in raw)


def _expr_list(raw, n: int, count: int, where: str) -> tuple[ex.Expr, ...]:
    if not isinstance(raw, list) or not all(isinstance(s, str) for s in raw):
        raise ScenarioError(f"[{where}] must be a list of expression strings")
    if len(raw) != count:
        raise ScenarioError(f"[{where}] must have {count} entries, got {len(raw)}")
    out = []
    for k, text in enumerate(raw):
        try:
            out.append(ex.parse(text, n))
        except ex.ExprError as err:
            raise ScenarioError(f"[{where}][{k}] {err}") from err
    return tuple(out)


def _process(table: dict, name: str, region: Region) -> tuple[DiffusionSpec, tuple]:
    n = geo.dimension(region)
    start = _start_point(_require(table, "start", name), n, f"{name}.start")
    point = np.asarray(start, dtype=float)
    if not geo.contains(region, point):
        if geo.closure_contains(region, point):
            raise ScenarioError(
                f"[{name}] start lies on the boundary; it must be strictly inside"
            )
        raise ScenarioError(f"[{name}] start lies outside the closure of the region")

    raw_beta = _require(table, "diffusion", name)
    if (
        not isinstance(raw_beta, list)
        or not raw_beta
        or not all(isinstance(row, list) for row in raw_beta)
    ):
        raise ScenarioError(f"[{name}.diffusion] must be a list of expression rows")
    if len(raw_beta) != n:
        raise ScenarioError(f"[{name}.diffusion] must have {n} rows, got {len(raw_beta)}")
    d = len(raw_beta[0])
    if d < 1:
        raise ScenarioError(f"[{name}.diffusion] rows must not be empty")
    beta = tuple(
        _expr_list(row, n, d, f"{name}.diffusion[{j}]") for j, row in enumerate(raw_beta)
    )
    drift = _expr_list(_require(table, "drift", name), n, n, f"{name}.drift")
    extra = set(table) - {"start", "drift", "diffusion"}
    if extra:
        raise ScenarioError(f"[{name}] has unknown keys {sorted(extra)}")
    return DiffusionSpec(n=n, d=d, drift=drift, diffusion=beta, label=name), start


def parse_scenario(data: dict, path: str | None = None) -> Scenario:
    """Validate a decoded scenario document."""
    if not isinstance(data, dict):
        raise ScenarioError("scenario document must be a table")
    unknown = set(data) - {"label", "region", "process1", "process2", "simulation", "pde"}
    if unknown:
        raise ScenarioError(f"scenario has unknown sections {sorted(unknown)}")

    label = data.get("label", Path(path).stem if path else "scenario")
    if not isinstance(label, str) or not label:
        raise ScenarioError("[label] must be a non-empty string")

    try:
        region = geo.region_from_dict(_require(data, "region", "scenario"))
    except ValueError as err:
        raise ScenarioError(f"[region] {err}") from err

    spec1, start1 = _process(_require(data, "process1", "scenario"), "process1", region)
    spec2, start2 = _process(_require(data, "process2", "scenario"), "process2", region)
    if spec1.d != spec2.d:
        raise ScenarioError(
            "process1 and process2 must drive the same number of noise channels"
        )
    pair = CoupledPair(spec1=spec1, spec2=spec2, start1=start1, start2=start2)

    sim = _require(data, "simulation", "scenario")
    dt = _number(_require(sim, "dt", "simulation"), "simulation.dt")
    if not dt > 0:
        raise ScenarioError("[simulation.dt] must be positive")
    n_replicates = _integer(
        _require(sim, "n_replicates", "simulation"), "simulation.n_replicates"
    )
    if n_replicates < 1:
        raise ScenarioError("[simulation.n_replicates] must be >= 1")
    coupling = sim.get("coupling", "shared")
    if coupling not in ("shared", "independent"):
        raise ScenarioError("[simulation.coupling] must be 'shared' or 'independent'")
    bridge = sim.get("bridge", False)
    if not isinstance(bridge, bool):
        raise ScenarioError("[simulation.bridge] must be a boolean")
    seed = _integer(sim.get("seed", 0), "simulation.seed")
    t_max = sim.get("t_max")
    if t_max is not None:
        t_max = _number(t_max, "simulation.t_max")
        if not t_max >= dt:
            raise ScenarioError("[simulation.t_max] must be at least dt")
    extra = set(sim) - {"dt", "n_replicates", "coupling", "bridge", "seed", "t_max"}
    if extra:
        raise ScenarioError(f"[simulation] has unknown keys {sorted(extra)}")

    grid = data.get("pde", {})
    if not isinstance(grid, dict):
        raise ScenarioError("[pde] must be a table")
    resolution = _integer(grid.get("resolution", DEFAULT_RESOLUTION), "pde.resolution")
    if resolution < 8:
        raise ScenarioError("[pde.resolution] must be >= 8")
    refinements = _integer(grid.get("refinements", DEFAULT_REFINEMENTS), "pde.refinements")
    if refinements < 0:
        raise ScenarioError("[pde.refinements] must be >= 0")
    lambda_min = _number(grid.get("lambda_min", DEFAULT_LAMBDA_MIN), "pde.lambda_min")
    if not lambda_min > 0:
        raise ScenarioError("[pde.lambda_min] must be positive")
    allow_degenerate = grid.get("allow_degenerate", False)
    if not isinstance(allow_degenerate, bool):
        raise ScenarioError("[pde.allow_degenerate] must be a boolean")
    extra = set(grid) - {"resolution", "refinements", "lambda_min", "allow_degenerate"}
    if extra:
        raise ScenarioError(f"[pde] has unknown keys {sorted(extra)}")

    return Scenario(
        label=label,
        region=region,
        pair=pair,
        dt=dt,
        n_replicates=n_replicates,
        coupling=coupling,
        bridge=bridge,
        seed=seed,
        t_max=t_max,
        resolution=resolution,
        refinements=refinements,
        lambda_min=lambda_min,
        allow_degenerate=allow_degenerate,
        path=path,
    )


def load_scenario(path) -> Scenario:
    """Read and validate a .scn scenario file (TOML syntax)."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as err:
        raise ScenarioError(f"cannot read scenario file {p}: {err}") from err
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as err:
        raise ScenarioError(f"{p}: not valid scenario syntax: {err}") from err
    return parse_scenario(data, path=str(p))
