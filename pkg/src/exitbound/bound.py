"""Statistical verification of the exit-time perturbation bound.

Given simulated exits of a coupled pair and the solved mean-exit-time
fields v1, v2, this module estimates both sides of

    E|T1 - T2|  <=  C * E|y1 - y2|  at the first exit instant,
    C = max_i sup |grad v_i|

with standard errors, and runs three structural cross-checks: the pathwise
decomposition of |T1 - T2| into the one-sided terms, the identity matching
each one-sided term against the field expectation E{e_i v_i(y_i)}, and the
mean exit time at the start against v_i(start).

All sums use math.fsum, so every statistic is independent of replicate
batching and worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .pde import MeanExitField, sup_grad_norm
from .sde import OutcomeBatch

__all__ = [
    "Estimate",
    "PointCheck",
    "IdentityCheck",
    "DecompositionCheck",
    "BoundReport",
    "NumericalFailure",
    "mean_se",
    "estimate_abs_gap",
    "estimate_displacement",
    "decomposition_check",
    "point_check",
    "identity_check",
    "verify_bound",
    "render_table",
]

CENSOR_LIMIT = 0.01
DECOMPOSITION_TOL_PER_REPLICATE = 1e-12


class NumericalFailure(RuntimeError):
    """The run cannot support a verdict (e.g. too many censored paths)."""


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error."""

    mean: float
    se: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n}


def mean_se(values) -> Estimate:
    """Exactly-summed sample mean and standard error of the mean."""
    x = np.asarray(values, dtype=float).ravel()
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot average zero values")
    mean = math.fsum(x) / n
    if n == 1:
        return Estimate(mean=mean, se=0.0, n=1)
    var = math.fsum((x - mean) ** 2) / (n - 1)
    se = math.sqrt(max(var, 0.0) / n)
    return Estimate(mean=mean, se=se, n=n)


def estimate_abs_gap(batch: OutcomeBatch) -> Estimate:
    """Left-hand side E|T1 - T2|."""
    return mean_se(np.abs(batch.T[0] - batch.T[1]))


def estimate_displacement(batch: OutcomeBatch) -> Estimate:
    """E of the chain gap |y1 - y2| at the first exit instant."""
    return mean_se(batch.displacement())


@dataclass(frozen=True)
class DecompositionCheck:
    """Pathwise |T1-T2| = e1 (T1-T2) + e2 (T2-T1), summed residual."""

    residual: float
    threshold: float
    max_abs_t: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "threshold": self.threshold,
            "max_abs_t": self.max_abs_t,
            "passed": self.passed,
        }


def decomposition_check(batch: OutcomeBatch) -> DecompositionCheck:
    t1, t2 = batch.T[0], batch.T[1]
    e1 = batch.e1.astype(float)
    e2 = batch.e2.astype(float)
    per_path = np.abs(t1 - t2) - e1 * (t1 - t2) - e2 * (t2 - t1)
    residual = abs(math.fsum(per_path))
    max_abs_t = float(np.max(batch.T))
    threshold = DECOMPOSITION_TOL_PER_REPLICATE * batch.n_replicates * max(max_abs_t, 1.0)
    return DecompositionCheck(
        residual=residual,
        threshold=threshold,
        max_abs_t=max_abs_t,
        passed=residual <= threshold,
    )


@dataclass(frozen=True)
class PointCheck:
    """Mean exit time of one chain against the field value at its start."""

    process: int
    estimate: Estimate
    predicted: float
    abs_error: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "process": self.process,
            "estimate": self.estimate.to_dict(),
            "predicted": self.predicted,
            "abs_error": self.abs_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def point_check(
    batch: OutcomeBatch, field: MeanExitField, chain: int, start
) -> PointCheck:
    """Check E[T_i] against v_i(start) within 3 SE plus the sqrt(dt) bias term."""
    est = mean_se(batch.T[chain])
    predicted = float(field.value_at(np.asarray(start, dtype=float))[0])
    abs_error = abs(est.mean - predicted)
    tolerance = 3.0 * est.se + math.sqrt(batch.dt)
    return PointCheck(
        process=chain + 1,
        estimate=est,
        predicted=predicted,
        abs_error=abs_error,
        tolerance=tolerance,
        passed=abs_error <= tolerance,
    )


@dataclass(frozen=True)
class IdentityCheck:
    """E{e_i (T_i - T_j)} against E{e_i v_i(y_i at the first exit)}."""

    process: int
    time_side: Estimate
    field_side: Estimate
    diff_mean: float
    diff_se: float
    allowance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "process": self.process,
            "time_side": self.time_side.to_dict(),
            "field_side": self.field_side.to_dict(),
            "diff_mean": self.diff_mean,
            "diff_se": self.diff_se,
            "allowance": self.allowance,
            "passed": self.passed,
        }


def identity_check(
    batch: OutcomeBatch, field: MeanExitField, chain: int, t_scale: float
) -> IdentityCheck:
    """Survivor's residual exit time matches the field at its position.

    The discretization allowance scales with (h^2 + sqrt(dt)) times the
    problem's time scale; the sampling allowance is 3 SE of the paired
    difference.
    """
    j = 1 - chain
    e = (batch.T[chain] > batch.T[j]).astype(float)
    time_vals = e * (batch.T[chain] - batch.T[j])
    field_vals = np.zeros(batch.n_replicates)
    rows = np.flatnonzero(e > 0.0)
    if rows.size:
        field_vals[rows] = field.value_at(batch.y_first[chain, rows])
    diff = mean_se(time_vals - field_vals)
    h = float(np.max(field.h))
    allowance = (h * h + math.sqrt(batch.dt)) * t_scale
    tol = 3.0 * diff.se + allowance
    return IdentityCheck(
        process=chain + 1,
        time_side=mean_se(time_vals),
        field_side=mean_se(field_vals),
        diff_mean=diff.mean,
        diff_se=diff.se,
        allowance=allowance,
        passed=abs(diff.mean) <= tol,
    )


@dataclass
class BoundReport:
    """Full verdict record; serializes to a stable dictionary."""

    label: str
    n_replicates: int
    dt: float
    t_max: float
    base_seed: int
    coupling: str
    bridge: bool
    censored_fraction: float
    bridge_exit_fraction: tuple[float, float]
    grid_resolution: tuple[int, int]
    grid_h: tuple[float, float]
    grad_sup: tuple[float, float]
    grad_constant: float
    lhs: Estimate
    displacement: Estimate
    rhs: Estimate
    margin: float
    combined_se: float
    holds: bool
    decomposition: DecompositionCheck
    point_checks: tuple[PointCheck, PointCheck]
    identity_checks: tuple[IdentityCheck, IdentityCheck]
    checks_passed: bool

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n_replicates": self.n_replicates,
            "dt": self.dt,
            "t_max": self.t_max,
            "base_seed": self.base_seed,
            "coupling": self.coupling,
            "bridge": self.bridge,
            "censored_fraction": self.censored_fraction,
            "bridge_exit_fraction": list(self.bridge_exit_fraction),
            "grid_resolution": list(self.grid_resolution),
            "grid_h": list(self.grid_h),
            "grad_sup": list(self.grad_sup),
            "grad_constant": self.grad_constant,
            "lhs": self.lhs.to_dict(),
            "displacement": self.displacement.to_dict(),
            "rhs": self.rhs.to_dict(),
            "margin": self.margin,
            "combined_se": self.combined_se,
            "holds": self.holds,
            "decomposition": self.decomposition.to_dict(),
            "point_checks": [c.to_dict() for c in self.point_checks],
            "identity_checks": [c.to_dict() for c in self.identity_checks],
            "checks_passed": self.checks_passed,
        }


def verify_bound(
    batch: OutcomeBatch,
    field1: MeanExitField,
    field2: MeanExitField,
    start1,
    start2,
    label: str = "",
    censor_limit: float = CENSOR_LIMIT,
) -> BoundReport:
    """Estimate both sides of the bound and assemble the verdict.

    Raises NumericalFailure when more than ``censor_limit`` of the
    replicates hit t_max without exiting; estimates would be untrustworthy.
    """
    frac = batch.censored_fraction
    if frac > censor_limit:
        raise NumericalFailure(
            f"{frac:.2%} of replicates were censored at t_max "
            f"(limit {censor_limit:.2%}); raise t_max"
        )

    g1 = sup_grad_norm(field1)
    g2 = sup_grad_norm(field2)
    grad_constant = max(g1, g2)

    lhs = estimate_abs_gap(batch)
    disp = estimate_displacement(batch)
    rhs = Estimate(
        mean=grad_constant * disp.mean, se=grad_constant * disp.se, n=disp.n
    )
    combined_se = math.hypot(lhs.se, rhs.se)
    margin = rhs.mean - lhs.mean
    holds = lhs.mean <= rhs.mean + 3.0 * combined_se

    starts = (start1, start2)
    fields = (field1, field2)
    t_scale = max(
        float(field1.value_at(np.asarray(start1, dtype=float))[0]),
        float(field2.value_at(np.asarray(start2, dtype=float))[0]),
        batch.dt,
    )
    points = tuple(
        point_check(batch, fields[i], i, starts[i]) for i in (0, 1)
    )
    identities = tuple(
        identity_check(batch, fields[i], i, t_scale) for i in (0, 1)
    )
    decomp = decomposition_check(batch)
    checks_passed = (
        decomp.passed
        and all(c.passed for c in points)
        and all(c.passed for c in identities)
    )
    return BoundReport(
        label=label,
        n_replicates=batch.n_replicates,
        dt=batch.dt,
        t_max=batch.t_max,
        base_seed=batch.base_seed,
        coupling=batch.coupling,
        bridge=batch.bridge,
        censored_fraction=frac,
        bridge_exit_fraction=(
            float(batch.bridge_exit[0].mean()),
            float(batch.bridge_exit[1].mean()),
        ),
        grid_resolution=(field1.grid.resolution, field2.grid.resolution),
        grid_h=(float(np.max(field1.h)), float(np.max(field2.h))),
        grad_sup=(g1, g2),
        grad_constant=grad_constant,
        lhs=lhs,
        displacement=disp,
        rhs=rhs,
        margin=margin,
        combined_se=combined_se,
        holds=holds,
        decomposition=decomp,
        point_checks=points,
        identity_checks=identities,
        checks_passed=checks_passed,
    )


def render_table(report: BoundReport) -> str:
    """Human-readable summary of a verdict for terminal output."""
    rows = [
        ("scenario", report.label),
        ("replicates", f"{report.n_replicates}"),
        ("dt / t_max", f"{report.dt:g} / {report.t_max:g}"),
        ("coupling", report.coupling + (" + bridge" if report.bridge else "")),
        ("censored", f"{report.censored_fraction:.3%}"),
        (
            "E|T1 - T2|",
            f"{report.lhs.mean:.6g} (se {report.lhs.se:.2g})",
        ),
        (
            "E|y1 - y2| at exit",
            f"{report.displacement.mean:.6g} (se {report.displacement.se:.2g})",
        ),
        (
            "sup|grad v|",
            f"{report.grad_sup[0]:.6g} / {report.grad_sup[1]:.6g}",
        ),
        ("bound rhs", f"{report.rhs.mean:.6g} (se {report.rhs.se:.2g})"),
        ("margin", f"{report.margin:.6g} (+/- {report.combined_se:.2g})"),
        ("bound holds", "yes" if report.holds else "NO"),
        ("cross checks", "pass" if report.checks_passed else "FAIL"),
    ]
    width = max(len(k) for k, _ in rows)
    lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
    return "\n".join(lines)
