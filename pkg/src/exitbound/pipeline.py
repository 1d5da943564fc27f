"""Command implementations behind the console script.

Each command takes a validated Scenario plus run options, writes its
artifacts under <out>/<label>/, prints a short summary, and returns the
process exit code.  bound_report.json contains only quantities that are a
pure function of the scenario and the seed, so it is byte-identical across
worker counts; volatile facts (timestamps, worker count, host paths) go to
run_metadata.json instead.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import bound as bnd
from . import geometry as geo
from . import pde
from . import sde
from .scenario import Scenario, ScenarioError

__all__ = [
    "SolvedFields",
    "prepare_fields",
    "resolve_t_max",
    "cmd_solve_pde",
    "cmd_simulate",
    "cmd_verify_bound",
    "cmd_convergence",
]

T_MAX_MULTIPLE = 50.0
TEMPORAL_LADDER = (1.0, 0.25, 0.0625)
TEMPORAL_MAX_REPLICATES = 60_000
ROUNDOFF_FLOOR = 1e-11


@dataclass
class SolvedFields:
    """Both processes' mean-exit-time fields plus derived time scales."""

    field1: pde.MeanExitField
    field2: pde.MeanExitField
    ellipticity: tuple[pde.EllipticityReport, pde.EllipticityReport]
    v_at_start: tuple[float, float]
    t_scale: float
    t_max: float


def _same_generator(s1: pde.DiffusionSpec, s2: pde.DiffusionSpec) -> bool:
    return (s1.n, s1.d, s1.drift, s1.diffusion) == (s2.n, s2.d, s2.drift, s2.diffusion)


def prepare_fields(scn: Scenario, resolution: int | None = None) -> SolvedFields:
    """Ellipticity gate plus one Dirichlet solve per distinct generator."""
    res = scn.resolution if resolution is None else resolution
    specs = (scn.pair.spec1, scn.pair.spec2)
    reports = []
    for spec in specs:
        report = pde.check_ellipticity(spec, scn.region, lambda_min=scn.lambda_min)
        reports.append(report)
        if not report.passed and not scn.allow_degenerate:
            point = ", ".join(f"{x:.6g}" for x in report.argmin_point)
            raise ScenarioError(
                f"[{spec.label}] diffusion is degenerate: min eigenvalue of "
                f"beta beta^T is {report.min_eigenvalue:.3e} < {report.lambda_min:g} "
                f"near ({point}); set pde.allow_degenerate = true to proceed anyway"
            )
    field1 = pde.solve_mean_exit(scn.region, specs[0], res)
    if _same_generator(*specs):
        field2 = field1
    else:
        field2 = pde.solve_mean_exit(scn.region, specs[1], res)
    v1 = float(field1.value_at(np.asarray(scn.pair.start1, dtype=float))[0])
    v2 = float(field2.value_at(np.asarray(scn.pair.start2, dtype=float))[0])
    t_scale = max(v1, v2, scn.dt)
    t_max = scn.t_max if scn.t_max is not None else T_MAX_MULTIPLE * t_scale
    return SolvedFields(
        field1=field1,
        field2=field2,
        ellipticity=(reports[0], reports[1]),
        v_at_start=(v1, v2),
        t_scale=t_scale,
        t_max=t_max,
    )


def resolve_t_max(scn: Scenario, solved: SolvedFields) -> float:
    return solved.t_max


def _out_dir(scn: Scenario, out: Path) -> Path:
    path = Path(out) / scn.label
    path.mkdir(parents=True, exist_ok=True)
    return path


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not serializable: {type(value)!r}")


def _finite_or_none(x: float | None):
    if x is None or not math.isfinite(x):
        return None
    return float(x)


def _write_json(path: Path, document: dict):
    text = json.dumps(document, sort_keys=True, indent=2, default=_json_default)
    path.write_text(text + "\n")


def _write_metadata(directory: Path, scn: Scenario, command: str, workers: int, t0: float):
    _write_json(
        directory / "run_metadata.json",
        {
            "command": command,
            "scenario_path": scn.path,
            "label": scn.label,
            "workers": workers,
            "elapsed_seconds": time.perf_counter() - t0,
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "package_version": __version__,
            "numpy_version": np.__version__,
        },
    )


def _config(scn: Scenario, solved: SolvedFields, seed: int | None) -> sde.PathConfig:
    return sde.PathConfig(
        dt=scn.dt,
        t_max=solved.t_max,
        bridge=scn.bridge,
        coupling=scn.coupling,
        base_seed=scn.seed if seed is None else seed,
    )


def _ellipticity_dict(report: pde.EllipticityReport) -> dict:
    return {
        "min_eigenvalue": report.min_eigenvalue,
        "argmin_point": list(report.argmin_point),
        "n_samples": report.n_samples,
        "lambda_min": report.lambda_min,
        "passed": report.passed,
    }


def _field_dict(field: pde.MeanExitField, v_start: float) -> dict:
    return {
        "resolution": field.grid.resolution,
        "h": list(field.h),
        "n_interior": field.grid.n_interior,
        "solver": field.solver,
        "relative_residual": field.residual,
        "iterations": field.iterations,
        "upwind_node_axes": field.upwind_nodes,
        "v_at_start": v_start,
        "sup_grad": pde.sup_grad_norm(field),
        "min_interior_value": field.min_interior(),
    }


def cmd_solve_pde(scn: Scenario, out: Path, workers: int, seed: int | None) -> int:
    t0 = time.perf_counter()
    solved = prepare_fields(scn)
    directory = _out_dir(scn, out)
    document = {
        "label": scn.label,
        "region": geo.region_to_dict(scn.region),
        "start1": list(scn.pair.start1),
        "start2": list(scn.pair.start2),
        "process1": _field_dict(solved.field1, solved.v_at_start[0]),
        "process2": _field_dict(solved.field2, solved.v_at_start[1]),
        "ellipticity": [_ellipticity_dict(r) for r in solved.ellipticity],
        "t_scale": solved.t_scale,
        "t_max": solved.t_max,
    }
    _write_json(directory / "pde.json", document)
    np.savez_compressed(
        directory / "fields.npz",
        values1=solved.field1.values,
        values2=solved.field2.values,
        kind=solved.field1.grid.kind,
        **{f"axis{j}": ax for j, ax in enumerate(solved.field1.grid.axes)},
    )
    _write_metadata(directory, scn, "solve-pde", workers, t0)
    for name, v, field in (
        ("process1", solved.v_at_start[0], solved.field1),
        ("process2", solved.v_at_start[1], solved.field2),
    ):
        print(
            f"{name}: v(start) = {v:.8g}, sup|grad v| = "
            f"{pde.sup_grad_norm(field):.8g}, residual = {field.residual:.2e}"
        )
    print(f"artifacts written to {directory}")
    return 0


def cmd_simulate(scn: Scenario, out: Path, workers: int, seed: int | None) -> int:
    t0 = time.perf_counter()
    solved = prepare_fields(scn)
    config = _config(scn, solved, seed)
    batch = sde.run_replicates(
        scn.region, scn.pair, config, scn.n_replicates, workers=workers
    )
    directory = _out_dir(scn, out)
    t1 = bnd.mean_se(batch.T[0])
    t2 = bnd.mean_se(batch.T[1])
    disp = bnd.estimate_displacement(batch)
    document = {
        "label": scn.label,
        "n_replicates": batch.n_replicates,
        "dt": batch.dt,
        "t_max": batch.t_max,
        "base_seed": batch.base_seed,
        "coupling": batch.coupling,
        "bridge": batch.bridge,
        "censored_fraction": batch.censored_fraction,
        "bridge_exit_fraction": [
            float(batch.bridge_exit[0].mean()),
            float(batch.bridge_exit[1].mean()),
        ],
        "mean_T1": t1.to_dict(),
        "mean_T2": t2.to_dict(),
        "displacement": disp.to_dict(),
    }
    _write_json(directory / "simulate.json", document)
    np.savez_compressed(
        directory / "outcomes.npz",
        replicates=batch.replicates,
        T=batch.T,
        censored=batch.censored,
        bridge_exit=batch.bridge_exit,
        steps=batch.steps,
        exit_pos=batch.exit_pos,
        y_first=batch.y_first,
    )
    _write_metadata(directory, scn, "simulate", workers, t0)
    print(
        f"{batch.n_replicates} replicates: E T1 = {t1.mean:.6g} (se {t1.se:.2g}), "
        f"E T2 = {t2.mean:.6g} (se {t2.se:.2g})"
    )
    print(
        f"displacement at first exit = {disp.mean:.6g} (se {disp.se:.2g}), "
        f"censored = {batch.censored_fraction:.3%}"
    )
    print(f"artifacts written to {directory}")
    if batch.censored_fraction > bnd.CENSOR_LIMIT:
        print(
            f"numerical failure: censored fraction exceeds {bnd.CENSOR_LIMIT:.0%}; "
            "raise t_max"
        )
        return 4
    return 0


def cmd_verify_bound(scn: Scenario, out: Path, workers: int, seed: int | None) -> int:
    t0 = time.perf_counter()
    solved = prepare_fields(scn)
    config = _config(scn, solved, seed)
    batch = sde.run_replicates(
        scn.region, scn.pair, config, scn.n_replicates, workers=workers
    )
    report = bnd.verify_bound(
        batch,
        solved.field1,
        solved.field2,
        scn.pair.start1,
        scn.pair.start2,
        label=scn.label,
    )
    directory = _out_dir(scn, out)
    document = {
        "region": geo.region_to_dict(scn.region),
        "start1": list(scn.pair.start1),
        "start2": list(scn.pair.start2),
        **report.to_dict(),
    }
    _write_json(directory / "bound_report.json", document)
    _write_metadata(directory, scn, "verify-bound", workers, t0)
    print(bnd.render_table(report))
    print(f"artifacts written to {directory}")
    if not report.holds:
        print("bound violation: lhs exceeds rhs beyond the sampling allowance")
        return 2
    if not report.checks_passed:
        print("numerical failure: a structural cross-check failed; see report")
        return 4
    return 0


def _probe_points(grid0: pde.Grid, region) -> np.ndarray:
    """Off-node probes at (k + 1/3) h offsets of the coarsest grid.

    Keeping probes at a fixed fractional offset of every level's cells makes
    the interpolation error scale cleanly with h^2, so order fits stay
    meaningful even where the discretization itself is exact.
    """
    n = grid0.n
    per_axis = max(4, int(round(400 ** (1.0 / n))))
    axes = []
    for j in range(n):
        cells = grid0.axes[j][:-1] + grid0.h[j] / 3.0
        take = np.unique(np.linspace(0, cells.size - 1, per_axis).astype(int))
        axes.append(cells[take])
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts[geo.contains_many(region, pts)]


def _fit_order(h_list, diffs) -> float:
    logs_h = np.log(np.asarray(h_list, dtype=float))
    logs_d = np.log(np.asarray(diffs, dtype=float))
    return float(np.polyfit(logs_h, logs_d, 1)[0])


def _spatial_study(scn: Scenario) -> dict:
    levels = max(2, scn.refinements)
    base = ((scn.resolution - 1) >> levels) + 1
    if base < 8:
        raise ScenarioError(
            "pde.resolution is too small to coarsen for a convergence study"
        )
    resolutions = [(base - 1) * 2**k + 1 for k in range(levels + 1)]
    fields = []
    for res in resolutions:
        fields.append(pde.solve_mean_exit(scn.region, scn.pair.spec1, res))
    grid0 = fields[0].grid
    probes = _probe_points(grid0, scn.region)
    if probes.shape[0] < 8:
        raise ScenarioError("too few interior probe points for a convergence study")
    values = [f.value_at(probes) for f in fields]
    scale = max(float(np.max(np.abs(values[-1]))), 1e-300)
    band = geo.boundary_distance_many(scn.region, probes) <= 3.0 * float(
        np.max(grid0.h)
    )

    def diffs_for(mask) -> list[float]:
        return [
            float(np.max(np.abs(values[k][mask] - values[k + 1][mask])))
            for k in range(len(values) - 1)
        ]

    h_coarse = [float(np.max(f.h)) for f in fields[:-1]]
    all_mask = np.ones(probes.shape[0], dtype=bool)
    out = {
        "resolutions": resolutions,
        "h": [float(np.max(f.h)) for f in fields],
        "probe_count": int(probes.shape[0]),
        "boundary_probe_count": int(band.sum()),
    }
    for name, mask in (("overall", all_mask), ("boundary", band)):
        if mask.sum() < 2:
            out[f"diff_{name}"] = None
            out[f"order_{name}"] = None
            out[f"exact_to_roundoff_{name}"] = None
            continue
        diffs = diffs_for(mask)
        exact = max(diffs) < ROUNDOFF_FLOOR * scale
        order = math.inf if exact else _fit_order(h_coarse, diffs)
        out[f"diff_{name}"] = diffs
        out[f"order_{name}"] = _finite_or_none(order)
        out[f"exact_to_roundoff_{name}"] = exact
    return out


def _temporal_study(scn: Scenario, solved: SolvedFields, seed: int | None, workers: int) -> dict:
    """Exit-time bias of the raw scheme against the solved field.

    The bridge correction is forced off so the step-size bias is visible;
    the reference value is v1 at the first start point.
    """
    reference = solved.v_at_start[0]
    n_reps = min(scn.n_replicates, TEMPORAL_MAX_REPLICATES)
    dts, means, ses, biases = [], [], [], []
    for factor in TEMPORAL_LADDER:
        dt = solved.t_scale / 16.0 * factor
        config = sde.PathConfig(
            dt=dt,
            t_max=solved.t_max,
            bridge=False,
            coupling=scn.coupling,
            base_seed=scn.seed if seed is None else seed,
        )
        batch = sde.run_replicates(
            scn.region, scn.pair, config, n_reps, workers=workers
        )
        est = bnd.mean_se(batch.T[0])
        dts.append(dt)
        means.append(est.mean)
        ses.append(est.se)
        biases.append(est.mean - reference)
    abs_bias = [abs(b) for b in biases]
    below_noise = abs_bias[-1] < 2.0 * ses[-1]
    order = _fit_order(dts, [max(b, 1e-300) for b in abs_bias])
    return {
        "n_replicates": n_reps,
        "reference": reference,
        "dts": dts,
        "means": means,
        "ses": ses,
        "biases": biases,
        "order": _finite_or_none(order),
        "bias_below_noise": below_noise,
    }


def cmd_convergence(scn: Scenario, out: Path, workers: int, seed: int | None) -> int:
    t0 = time.perf_counter()
    solved = prepare_fields(scn)
    spatial = _spatial_study(scn)
    temporal = _temporal_study(scn, solved, seed, workers)
    directory = _out_dir(scn, out)
    _write_json(
        directory / "convergence.json", {"spatial": spatial, "temporal": temporal}
    )
    _write_metadata(directory, scn, "convergence", workers, t0)
    res = " -> ".join(str(r) for r in spatial["resolutions"])
    print(f"spatial refinement {res} over {spatial['probe_count']} probes")
    for name in ("overall", "boundary"):
        order = spatial[f"order_{name}"]
        if spatial[f"exact_to_roundoff_{name}"]:
            shown = "exact to roundoff"
        elif order is None:
            shown = "not measurable"
        else:
            shown = f"{order:.3f}"
        print(f"  fitted {name} order: {shown}")
    print(
        "temporal bias vs dt "
        + ", ".join(f"{d:.3g}" for d in temporal["dts"])
        + f": order {temporal['order']:.3f}"
        + (" (bias below noise)" if temporal["bias_below_noise"] else "")
    )
    print(f"artifacts written to {directory}")
    return 0
