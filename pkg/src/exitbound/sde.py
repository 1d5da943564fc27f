"""Coupled first-exit simulation for pairs of diffusions.

Both chains advance on one shared time lattice by Euler-Maruyama.  Under
shared coupling they consume identical Wiener increments; under independent
coupling each chain has its own.  A chain exits when its proposal leaves the
region (exit time = first lattice time outside, exit position = the linear
crossing point snapped onto the boundary) or, with the bridge correction on,
when the within-step Brownian bridge is deemed to have touched the boundary
even though both endpoints are inside.

Randomness is counter-based: replicate r draws its normals from
Philox(key=[seed, r]) and its bridge uniforms from the same key at a
disjoint counter offset.  Each active replicate consumes exactly d normals
per step (2d under independent coupling) and one 2-lane uniform row per step
when the bridge is on, so every replicate's path is a pure function of
(seed, r) no matter how replicates are batched or distributed over workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from . import geometry as geo
from .geometry import Region
from .pde import DiffusionSpec

__all__ = [
    "PathConfig",
    "CoupledPair",
    "OutcomeBatch",
    "BridgeUnsupportedError",
    "bridge_crossing_probability",
    "replicate_rng",
    "replicate_bridge_rng",
    "simulate_pair",
    "run_replicates",
]

BLOCK_STEPS = 256
BATCH_REPLICATES = 8192
_BRIDGE_COUNTER_OFFSET = 1 << 63


class BridgeUnsupportedError(ValueError):
    """Bridge correction requested outside its supported model class."""


@dataclass(frozen=True)
class PathConfig:
    """Time stepping and coupling choices for one simulation run.

    ``block_steps`` and ``batch_size`` only trade memory against speed; they
    never change any sampled value.
    """

    dt: float
    t_max: float
    bridge: bool = False
    coupling: str = "shared"
    base_seed: int = 0
    block_steps: int = BLOCK_STEPS
    batch_size: int = BATCH_REPLICATES

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError("dt must be a positive finite number")
        if not (self.t_max >= self.dt):
            raise ValueError("t_max must be at least one step dt")
        if self.coupling not in ("shared", "independent"):
            raise ValueError("coupling must be 'shared' or 'independent'")
        if self.block_steps < 1 or self.batch_size < 1:
            raise ValueError("block_steps and batch_size must be >= 1")

    @property
    def n_steps(self) -> int:
        # tolerate t_max/dt landing a hair above an integer
        return max(1, int(math.ceil(self.t_max / self.dt - 1e-9)))


@dataclass(frozen=True)
class CoupledPair:
    """Two diffusions with start points, sharing one state space."""

    spec1: DiffusionSpec
    spec2: DiffusionSpec
    start1: tuple[float, ...]
    start2: tuple[float, ...]

    def __post_init__(self):
        if self.spec1.n != self.spec2.n or self.spec1.d != self.spec2.d:
            raise ValueError("both processes must share state and noise dimensions")
        for name, start in (("start1", self.start1), ("start2", self.start2)):
            if len(start) != self.spec1.n:
                raise ValueError(f"{name} must have {self.spec1.n} coordinates")

    @property
    def n(self) -> int:
        return self.spec1.n

    @property
    def d(self) -> int:
        return self.spec1.d


def replicate_rng(base_seed: int, replicate: int) -> np.random.Generator:
    """Normal-increment stream of one replicate."""
    key = np.array([base_seed, replicate], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def replicate_bridge_rng(base_seed: int, replicate: int) -> np.random.Generator:
    """Bridge-uniform stream of one replicate, disjoint from the normals."""
    key = np.array([base_seed, replicate], dtype=np.uint64)
    counter = np.array([0, 0, 0, _BRIDGE_COUNTER_OFFSET], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def bridge_crossing_probability(delta0, delta1, sigma: float, dt: float):
    """P(bridge between two interior points touched the boundary).

    For a scalar Brownian segment with diffusion sigma and endpoint boundary
    distances delta0, delta1 the within-step crossing probability is
    exp(-2 delta0 delta1 / (sigma^2 dt)).
    """
    d0 = np.asarray(delta0, dtype=float)
    d1 = np.asarray(delta1, dtype=float)
    coef = -2.0 / (sigma * sigma * dt)
    return np.exp(coef * d0 * d1)


def _bridge_sigmas(pair: CoupledPair) -> tuple[float, float]:
    """Validate the bridge model class: scalar state, constant diffusion."""
    if pair.n != 1 or pair.d != 1:
        raise BridgeUnsupportedError(
            "bridge correction supports scalar processes only (n = d = 1)"
        )
    sigmas = []
    for spec in (pair.spec1, pair.spec2):
        beta = spec.constant_diffusion()
        if beta is None:
            raise BridgeUnsupportedError(
                "bridge correction requires a constant diffusion coefficient"
            )
        s = float(beta[0, 0])
        if s == 0.0:
            raise BridgeUnsupportedError("bridge correction requires nonzero diffusion")
        sigmas.append(s)
    return sigmas[0], sigmas[1]


@dataclass
class OutcomeBatch:
    """Struct-of-arrays record of simulated exits, one row per replicate.

    Chain axis comes first: T[0] belongs to the first process.  ``y_first``
    holds both chains' positions at the first-exit instant; the exiting
    chain sits on the boundary there, the surviving chain strictly inside.
    Censored chains carry T = t_max and their last interior position.
    """

    replicates: np.ndarray  # (m,) global replicate ids
    T: np.ndarray  # (2, m) exit times on the lattice
    censored: np.ndarray  # (2, m) bool
    bridge_exit: np.ndarray  # (2, m) bool
    steps: np.ndarray  # (2, m) steps consumed
    exit_pos: np.ndarray  # (2, m, n) boundary exit positions
    y_first: np.ndarray  # (2, m, n) both chains at min(T1, T2)
    dt: float
    t_max: float
    base_seed: int
    coupling: str
    bridge: bool

    @property
    def n_replicates(self) -> int:
        return self.replicates.shape[0]

    @property
    def T1(self) -> np.ndarray:
        return self.T[0]

    @property
    def T2(self) -> np.ndarray:
        return self.T[1]

    @property
    def e1(self) -> np.ndarray:
        """Indicator of the first process outliving the second; ties are off."""
        return self.T[0] > self.T[1]

    @property
    def e2(self) -> np.ndarray:
        return self.T[1] > self.T[0]

    @property
    def t_first(self) -> np.ndarray:
        return np.minimum(self.T[0], self.T[1])

    @property
    def censored_any(self) -> np.ndarray:
        return self.censored[0] | self.censored[1]

    @property
    def censored_fraction(self) -> float:
        return float(self.censored_any.mean()) if self.n_replicates else 0.0

    def displacement(self) -> np.ndarray:
        """Euclidean gap |y1 - y2| at the first-exit instant."""
        return np.linalg.norm(self.y_first[0] - self.y_first[1], axis=-1)

    @classmethod
    def merge(cls, batches: list["OutcomeBatch"]) -> "OutcomeBatch":
        if not batches:
            raise ValueError("no batches to merge")
        batches = sorted(batches, key=lambda b: int(b.replicates[0]))
        reps = np.concatenate([b.replicates for b in batches])
        if np.any(np.diff(reps) != 1):
            raise ValueError("replicate ranges do not tile contiguously")
        first = batches[0]
        return cls(
            replicates=reps,
            T=np.concatenate([b.T for b in batches], axis=1),
            censored=np.concatenate([b.censored for b in batches], axis=1),
            bridge_exit=np.concatenate([b.bridge_exit for b in batches], axis=1),
            steps=np.concatenate([b.steps for b in batches], axis=1),
            exit_pos=np.concatenate([b.exit_pos for b in batches], axis=1),
            y_first=np.concatenate([b.y_first for b in batches], axis=1),
            dt=first.dt,
            t_max=first.t_max,
            base_seed=first.base_seed,
            coupling=first.coupling,
            bridge=first.bridge,
        )


def _simulate_batch(
    region: Region,
    pair: CoupledPair,
    config: PathConfig,
    rep_start: int,
    rep_count: int,
) -> OutcomeBatch:
    """Advance replicates [rep_start, rep_start + rep_count) to exit or t_max."""
    n, d = pair.n, pair.d
    m = rep_count
    shared = config.coupling == "shared"
    d_draw = d if shared else 2 * d
    dt, sqrt_dt = config.dt, math.sqrt(config.dt)
    n_steps = config.n_steps

    specs = (pair.spec1, pair.spec2)
    const_f = [s.constant_drift() for s in specs]
    const_beta = [s.constant_diffusion() for s in specs]
    sigmas = _bridge_sigmas(pair) if config.bridge else (1.0, 1.0)
    # -2 / (sigma^2 dt), the bridge log-probability prefactor, per chain
    bridge_coef = tuple(-2.0 / (s * s * dt) for s in sigmas)
    interval = region if isinstance(region, geo.Interval) else None

    y = np.empty((2, m, n))
    y[0] = np.asarray(pair.start1, dtype=float)
    y[1] = np.asarray(pair.start2, dtype=float)
    alive = np.ones((2, m), dtype=bool)
    T = np.zeros((2, m))
    censored = np.zeros((2, m), dtype=bool)
    bridge_exit = np.zeros((2, m), dtype=bool)
    steps = np.zeros((2, m), dtype=np.int64)
    exit_pos = np.zeros((2, m, n))
    y_first = np.zeros((2, m, n))

    reps = np.arange(rep_start, rep_start + rep_count, dtype=np.int64)
    gens = [replicate_rng(config.base_seed, int(r)) for r in reps]
    gens_u = (
        [replicate_bridge_rng(config.base_seed, int(r)) for r in reps]
        if config.bridge
        else None
    )

    normals = np.empty((m, config.block_steps, d_draw))
    uniforms = np.empty((m, config.block_steps, 2)) if config.bridge else None

    # m-wide scratch, touched only on the rare steps where something exits
    exited_now = np.zeros((2, m), dtype=bool)
    lattice_now = np.zeros((2, m), dtype=bool)
    theta_now = np.ones((2, m))
    point_now = np.zeros((2, m, n))
    ynew_now = np.zeros((2, m, n))

    fdt = [None if cf is None else cf * dt for cf in const_f]
    zero_drift = [cf is not None and not np.any(cf) for cf in const_f]
    scalar_beta = [
        float(cb[0, 0]) if (cb is not None and n == 1 and d == 1) else None
        for cb in const_beta
    ]
    rows_cache: list[np.ndarray | None] = [None, None]

    for block_start in range(0, n_steps, config.block_steps):
        block_len = min(config.block_steps, n_steps - block_start)
        active = np.flatnonzero(alive[0] | alive[1])
        if active.size == 0:
            break
        for idx in active:
            normals[idx, :block_len] = gens[idx].standard_normal((block_len, d_draw))
            if config.bridge:
                uniforms[idx, :block_len] = gens_u[idx].random((block_len, 2))

        for k_local in range(block_len):
            k = block_start + k_local
            t_next = (k + 1) * dt
            if not alive.any():
                break
            per_chain: list[tuple | None] = [None, None]
            any_exit = False

            for i in (0, 1):
                rows = rows_cache[i]
                if rows is None:
                    rows = np.flatnonzero(alive[i])
                    rows_cache[i] = rows
                if rows.size == 0:
                    continue
                lanes = slice(0, d) if (shared or i == 0) else slice(d, 2 * d)
                dW = sqrt_dt * normals[rows, k_local, lanes]
                yi = y[i, rows]
                if const_f[i] is None:
                    base = yi + specs[i].drift_at(yi) * dt
                elif zero_drift[i]:
                    base = yi
                else:
                    base = yi + fdt[i]
                if scalar_beta[i] is not None:
                    y_new = base + scalar_beta[i] * dW
                elif const_beta[i] is not None:
                    y_new = base + dW @ const_beta[i].T
                else:
                    beta = specs[i].diffusion_at(yi)
                    y_new = base + np.einsum("rjk,rk->rj", beta, dW)

                if interval is not None:
                    x = y_new[:, 0]
                    outside = (x <= interval.lo) | (x >= interval.hi)
                else:
                    outside = ~geo.contains_many(region, y_new)
                has_lattice = bool(outside.any())
                theta = None
                point = None
                exit_mask = None
                if has_lattice:
                    theta = np.ones(rows.size)
                    point = y_new.copy()
                    th, pt = geo.boundary_crossing(
                        region, yi[outside], y_new[outside]
                    )
                    theta[outside] = th
                    point[outside] = pt
                    exit_mask = outside.copy()

                if config.bridge and not (has_lattice and outside.all()):
                    if has_lattice:
                        ins = np.flatnonzero(~outside)
                        p0 = yi[ins]
                        p1 = y_new[ins]
                        urows = rows[ins]
                    else:
                        ins = None
                        p0 = yi
                        p1 = y_new
                        urows = rows
                    if interval is not None:
                        a, b = interval.lo, interval.hi
                        d0 = np.minimum(p0[:, 0] - a, b - p0[:, 0])
                        d1 = np.minimum(p1[:, 0] - a, b - p1[:, 0])
                    else:
                        d0 = geo.boundary_distance_many(region, p0)
                        d1 = geo.boundary_distance_many(region, p1)
                    p = np.exp(bridge_coef[i] * d0 * d1)
                    lane_u = 0 if (shared or i == 0) else 1
                    u = uniforms[urows, k_local, lane_u]
                    hit = u < p
                    if hit.any():
                        hit_rows = np.flatnonzero(hit) if ins is None else ins[hit]
                        if point is None:
                            point = y_new.copy()
                            exit_mask = np.zeros(rows.size, dtype=bool)
                        mid = 0.5 * (yi[hit_rows] + y_new[hit_rows])
                        point[hit_rows] = geo.nearest_boundary_point(region, mid)
                        exit_mask[hit_rows] = True

                per_chain[i] = (rows, y_new, outside, theta, point, exit_mask, has_lattice)
                if exit_mask is not None:
                    any_exit = True

            if not any_exit:
                for i in (0, 1):
                    data = per_chain[i]
                    if data is not None:
                        y[i, data[0]] = data[1]
                continue

            # something exited: scatter this step's results into the m-wide
            # scratch so the pairwise bookkeeping below can align replicates
            exited_now[:] = False
            lattice_now[:] = False
            for i in (0, 1):
                data = per_chain[i]
                if data is None:
                    continue
                rows, y_new, outside, theta, point, exit_mask, has_lattice = data
                if exit_mask is not None:
                    exited_now[i, rows] = exit_mask
                if has_lattice:
                    lattice_now[i, rows] = outside
                    theta_now[i, rows] = theta
                if point is not None:
                    point_now[i, rows] = point
                ynew_now[i, rows] = y_new

            both_alive = alive[0] & alive[1]
            newly = exited_now[0] | exited_now[1]
            rec = both_alive & newly
            if rec.any():
                only = [
                    rec & exited_now[0] & ~exited_now[1],
                    rec & exited_now[1] & ~exited_now[0],
                ]
                for i, solo in enumerate(only):
                    if not solo.any():
                        continue
                    j = 1 - i
                    y_first[i, solo] = point_now[i, solo]
                    lat = solo & lattice_now[i]
                    if lat.any():
                        # survivor interpolated at the same crossing instant
                        th = theta_now[i, lat][:, None]
                        y_first[j, lat] = y[j, lat] + th * (
                            ynew_now[j, lat] - y[j, lat]
                        )
                    brg = solo & ~lattice_now[i]
                    if brg.any():
                        if shared:
                            # transfer the exiter's implied increment through
                            # the shared noise (scalar constant-sigma class)
                            ratio = sigmas[j] / sigmas[i]
                            y_first[j, brg] = y[j, brg] + ratio * (
                                point_now[i, brg] - y[i, brg]
                            )
                        else:
                            y_first[j, brg] = ynew_now[j, brg]
                both = rec & exited_now[0] & exited_now[1]
                if both.any():
                    for i in (0, 1):
                        y_first[i, both] = point_now[i, both]

            for i in (0, 1):
                died = exited_now[i]
                if died.any():
                    T[i, died] = t_next
                    exit_pos[i, died] = point_now[i, died]
                    bridge_exit[i, died] = ~lattice_now[i, died]
                    steps[i, died] = k + 1
                    alive[i, died] = False
                    rows_cache[i] = None
                data = per_chain[i]
                if data is not None:
                    # advance every proposed row; rows that just exited are
                    # dead and their state is never read again
                    y[i, data[0]] = data[1]

    t_end = n_steps * dt
    both_censored = alive[0] & alive[1]
    for i in (0, 1):
        c = alive[i]
        if c.any():
            T[i, c] = t_end
            censored[i, c] = True
            steps[i, c] = n_steps
            exit_pos[i, c] = y[i, c]
            y_first[i, both_censored] = y[i, both_censored]
        alive[i, c] = False

    return OutcomeBatch(
        replicates=reps,
        T=T,
        censored=censored,
        bridge_exit=bridge_exit,
        steps=steps,
        exit_pos=exit_pos,
        y_first=y_first,
        dt=config.dt,
        t_max=config.t_max,
        base_seed=config.base_seed,
        coupling=config.coupling,
        bridge=config.bridge,
    )


def _simulate_batch_star(args) -> OutcomeBatch:
    return _simulate_batch(*args)


def _validate_run(region: Region, pair: CoupledPair, config: PathConfig):
    if geo.dimension(region) != pair.n:
        raise geo.DimensionMismatchError(
            f"region dimension {geo.dimension(region)} != process dimension {pair.n}"
        )
    for name, start in (("start1", pair.start1), ("start2", pair.start2)):
        if not geo.contains(region, np.asarray(start, dtype=float)):
            raise ValueError(f"{name} must lie strictly inside the region")
    if config.bridge:
        _bridge_sigmas(pair)


def simulate_pair(
    region: Region, pair: CoupledPair, config: PathConfig, replicate: int = 0
) -> OutcomeBatch:
    """Simulate a single replicate (bitwise identical to its batched run)."""
    _validate_run(region, pair, config)
    return _simulate_batch(region, pair, config, replicate, 1)


def run_replicates(
    region: Region,
    pair: CoupledPair,
    config: PathConfig,
    n_replicates: int,
    workers: int = 1,
) -> OutcomeBatch:
    """Simulate replicates 0..n-1, optionally across worker processes.

    Work splits into fixed-size replicate batches whose boundaries do not
    depend on the worker count, and every replicate's path depends only on
    (base_seed, replicate), so results are byte-identical for any workers.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    _validate_run(region, pair, config)
    bounds = [
        (start, min(config.batch_size, n_replicates - start))
        for start in range(0, n_replicates, config.batch_size)
    ]
    if workers == 1 or len(bounds) == 1:
        batches = [
            _simulate_batch(region, pair, config, start, count)
            for start, count in bounds
        ]
    else:
        args = [(region, pair, config, start, count) for start, count in bounds]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_simulate_batch_star, args))
    return OutcomeBatch.merge(batches)
