"""Mean-exit-time Dirichlet problem on a grid.

Discretizes the generator

    L = sum_j f_j d/dy_j + (1/2) sum_{j,k} b_{jk} d2/dy_j dy_k,   b = beta beta^T

on a uniform tensor grid over the region's bounding box and solves L v = -1
with v = 0 on the boundary.  Pure second derivatives use 3-point stencils
(with Shortley-Weller unequal arms against curved boundaries), mixed
derivatives the 4-point cross stencil, and drift terms central differences
with a per-node per-axis upwind fallback when |f_j| h > b_jj, which keeps
the discrete maximum principle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.stats import qmc

from . import expr as ex
from . import geometry as geo
from .geometry import Ball, Box, Interval, Region

__all__ = [
    "DiffusionSpec",
    "Grid",
    "LinearSystem",
    "MeanExitField",
    "EllipticityReport",
    "GridError",
    "CoefficientError",
    "SolverError",
    "build_grid",
    "assemble",
    "solve_dirichlet",
    "solve_mean_exit",
    "sup_grad_norm",
    "check_ellipticity",
    "refined_resolution",
]

KIND_EXTERIOR, KIND_BOUNDARY, KIND_INTERIOR = 0, 1, 2

DIRECT_SOLVE_LIMIT = 200_000
SOLVE_TOLERANCE = 1e-10
DEFAULT_INTERIOR_CAP = 2_000_000


class GridError(ValueError):
    """Bad grid request (resolution too small, node cap exceeded)."""


class CoefficientError(RuntimeError):
    """Coefficient expression failed to evaluate at a grid node."""


class SolverError(RuntimeError):
    """Linear solve did not reach the required residual."""


@dataclass(frozen=True)
class DiffusionSpec:
    """Drift vector and diffusion matrix of one process, as expressions.

    ``drift`` holds n expressions, ``diffusion`` n rows of d expressions; all
    are validated against the state dimension n.  ``b = diffusion @
    diffusion.T`` is symmetric positive semidefinite by construction; use
    :func:`check_ellipticity` to confirm it stays away from singular.
    """

    n: int
    d: int
    drift: tuple[ex.Expr, ...]
    diffusion: tuple[tuple[ex.Expr, ...], ...]
    label: str = ""

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("state and noise dimensions must be >= 1")
        if len(self.drift) != self.n:
            raise ValueError(f"drift must have {self.n} components")
        if len(self.diffusion) != self.n or any(
            len(row) != self.d for row in self.diffusion
        ):
            raise ValueError(f"diffusion must be {self.n}x{self.d}")
        for node in list(self.drift) + [e for row in self.diffusion for e in row]:
            _check_var_range(node, self.n)

    @classmethod
    def from_strings(cls, n, d, drift, diffusion, label=""):
        f = tuple(ex.parse(s, n) for s in drift)
        beta = tuple(tuple(ex.parse(s, n) for s in row) for row in diffusion)
        return cls(n=n, d=d, drift=f, diffusion=beta, label=label)

    def drift_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.n))
        for j, node in enumerate(self.drift):
            out[:, j] = ex.eval_many(node, pts)
        return out

    def diffusion_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.n, self.d))
        for j, row in enumerate(self.diffusion):
            for k, node in enumerate(row):
                out[:, j, k] = ex.eval_many(node, pts)
        return out

    def b_matrix_at(self, points: np.ndarray) -> np.ndarray:
        beta = self.diffusion_at(points)
        return np.einsum("mjk,mlk->mjl", beta, beta)

    def constant_drift(self) -> np.ndarray | None:
        if all(ex.is_constant(node) for node in self.drift):
            return np.array([ex.constant_value(node) for node in self.drift])
        return None

    def constant_diffusion(self) -> np.ndarray | None:
        flat = [node for row in self.diffusion for node in row]
        if all(ex.is_constant(node) for node in flat):
            vals = [ex.constant_value(node) for node in flat]
            return np.array(vals).reshape(self.n, self.d)
        return None


def _check_var_range(node: ex.Expr, n: int):
    if isinstance(node, ex.Var):
        if node.index > n:
            raise ValueError(f"expression references y{node.index} but n = {n}")
    elif isinstance(node, ex.Neg):
        _check_var_range(node.operand, n)
    elif isinstance(node, ex.Call):
        _check_var_range(node.arg, n)
    elif isinstance(node, ex.BinOp):
        _check_var_range(node.left, n)
        _check_var_range(node.right, n)


@dataclass
class Grid:
    """Uniform tensor grid over the bounding box of a region.

    ``kind`` classifies every node as exterior / boundary / interior; for
    curved boundaries ``arms`` stores, per interior node and axis, the
    fraction (0, 1] of a full spacing at which the minus/plus arm meets the
    boundary (1.0 means the neighbor node itself carries the value).
    """

    region: Region
    resolution: int
    axes: tuple[np.ndarray, ...]
    h: np.ndarray  # (n,) spacing per axis
    shape: tuple[int, ...]
    kind: np.ndarray  # int8 over shape
    interior_index: np.ndarray  # int64 over shape; -1 outside the interior
    interior_multi: np.ndarray  # (N, n) node multi-indices
    interior_points: np.ndarray  # (N, n) node coordinates
    arms: np.ndarray  # (N, n, 2) arm fractions; all ones for aligned regions

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def n_interior(self) -> int:
        return self.interior_points.shape[0]

    def node_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def build_grid(
    region: Region, resolution: int, *, interior_cap: int = DEFAULT_INTERIOR_CAP
) -> Grid:
    """Classify a ``resolution``-per-axis grid over the region's bounding box."""
    if resolution < 8:
        raise GridError(f"resolution must be >= 8 nodes per axis, got {resolution}")
    lo, hi = geo.bounding_box(region)
    n = lo.shape[0]
    if resolution**n > 50_000_000:
        raise GridError("total grid node count exceeds memory cap")
    axes = tuple(np.linspace(lo[j], hi[j], resolution) for j in range(n))
    h = (hi - lo) / (resolution - 1)
    shape = (resolution,) * n

    if isinstance(region, (Interval, Box)):
        kind = np.full(shape, KIND_INTERIOR, dtype=np.int8)
        for j in range(n):
            idx = [slice(None)] * n
            for edge in (0, resolution - 1):
                idx[j] = edge
                kind[tuple(idx)] = KIND_BOUNDARY
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        inside = geo.contains_many(region, pts).reshape(shape)
        kind = np.where(inside, KIND_INTERIOR, KIND_EXTERIOR).astype(np.int8)
        # Exterior axis-neighbors of interior nodes act as Dirichlet anchors.
        for j in range(n):
            interior = kind == KIND_INTERIOR
            for shift in (1, -1):
                rolled = np.roll(interior, shift, axis=j)
                # roll wraps; wrapping cannot mark spurious nodes because the
                # bounding box touches the sphere only at axis poles, which
                # are non-interior.
                edge = [slice(None)] * n
                edge[j] = 0 if shift == 1 else resolution - 1
                rolled[tuple(edge)] = False
                kind[rolled & (kind == KIND_EXTERIOR)] = KIND_BOUNDARY

    interior_mask = kind == KIND_INTERIOR
    n_interior = int(interior_mask.sum())
    if n_interior == 0:
        raise GridError("grid has no interior nodes; increase resolution")
    if n_interior > interior_cap:
        raise GridError(
            f"{n_interior} interior nodes exceed the configured cap {interior_cap}"
        )
    interior_index = np.full(shape, -1, dtype=np.int64)
    interior_index[interior_mask] = np.arange(n_interior)
    interior_multi = np.argwhere(interior_mask)
    interior_points = np.stack(
        [axes[j][interior_multi[:, j]] for j in range(n)], axis=1
    )

    arms = np.ones((n_interior, n, 2), dtype=float)
    if isinstance(region, Ball):
        for j in range(n):
            for side, step in ((0, -1), (1, +1)):
                nb = interior_multi.copy()
                nb[:, j] += step
                nb_kind = kind[tuple(nb.T)]
                cut = nb_kind == KIND_BOUNDARY
                if not cut.any():
                    continue
                p0 = interior_points[cut]
                p1 = p0.copy()
                p1[:, j] += step * h[j]
                outside = ~geo.contains_many(region, p1)
                # A boundary-marked neighbor may still be numerically inside
                # when it sits exactly on the sphere; treat theta as 1 there.
                theta = np.ones(p0.shape[0])
                if outside.any():
                    theta_out, _ = geo.boundary_crossing(
                        region, p0[outside], p1[outside]
                    )
                    theta[outside] = theta_out
                arms[cut, j, side] = theta
    return Grid(
        region=region,
        resolution=resolution,
        axes=axes,
        h=np.asarray(h, dtype=float),
        shape=shape,
        kind=kind,
        interior_index=interior_index,
        interior_multi=interior_multi,
        interior_points=interior_points,
        arms=arms,
    )


@dataclass
class LinearSystem:
    """Sparse discretization A v = rhs of L v = -1 at the interior nodes."""

    A: sp.csr_matrix
    rhs: np.ndarray
    grid: Grid
    spec: DiffusionSpec
    upwind_nodes: int  # node-axis pairs where the Peclet guard fired


def _coefficients(grid: Grid, spec: DiffusionSpec):
    pts = grid.interior_points
    try:
        f_vals = spec.drift_at(pts)
        b_vals = spec.b_matrix_at(pts)
    except ex.ExprDomainError as err:
        raise CoefficientError(f"coefficient evaluation failed on the grid: {err}") from err
    return f_vals, b_vals


def assemble(grid: Grid, spec: DiffusionSpec) -> LinearSystem:
    """Assemble the interior-node linear system for L v = -1.

    Boundary values are zero, so eliminating them changes only the sparsity
    structure; rhs stays -1 at every interior row.
    """
    if spec.n != grid.n:
        raise ValueError("grid and diffusion spec dimensions differ")
    n = grid.n
    N = grid.n_interior
    h = grid.h
    f_vals, b_vals = _coefficients(grid, spec)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    diag = np.zeros(N)
    row_ids = np.arange(N)
    upwind_count = 0

    def neighbor_rows(step_axis: int, step: int, multi=None) -> np.ndarray:
        nb = (grid.interior_multi if multi is None else multi).copy()
        nb[:, step_axis] += step
        valid = (nb[:, step_axis] >= 0) & (nb[:, step_axis] < grid.resolution)
        out = np.full(nb.shape[0], -1, dtype=np.int64)
        out[valid] = grid.interior_index[tuple(nb[valid].T)]
        return out

    for j in range(n):
        hm = grid.arms[:, j, 0] * h[j]
        hp = grid.arms[:, j, 1] * h[j]
        bjj = b_vals[:, j, j]
        fj = f_vals[:, j]

        cm = bjj / (hm * (hm + hp))  # second-derivative pair, times b/2
        cp = bjj / (hp * (hm + hp))

        upwind = np.abs(fj) * h[j] > bjj
        upwind_count += int(upwind.sum())
        fwd = fj > 0
        # Central (nonuniform) first derivative by default; one-sided in the
        # drift direction when the cell-Peclet guard trips.
        d_m = np.where(upwind, np.where(fwd, 0.0, -1.0 / hm), -hp / (hm * (hm + hp)))
        d_p = np.where(upwind, np.where(fwd, 1.0 / hp, 0.0), hm / (hp * (hm + hp)))
        d_c = np.where(
            upwind, np.where(fwd, -1.0 / hp, 1.0 / hm), (hp - hm) / (hm * hp)
        )

        coef_m = cm + fj * d_m
        coef_p = cp + fj * d_p
        diag += -(cm + cp) + fj * d_c

        for coef, step in ((coef_m, -1), (coef_p, +1)):
            nb_rows = neighbor_rows(j, step)
            keep = nb_rows >= 0  # boundary neighbors carry v = 0
            rows.append(row_ids[keep])
            cols.append(nb_rows[keep])
            vals.append(coef[keep])

    for j in range(n):
        for k in range(j + 1, n):
            bjk = b_vals[:, j, k]
            if not np.any(bjk != 0.0):
                continue
            scale = bjk / (4.0 * h[j] * h[k])
            for sj, sk, sign in ((1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)):
                multi = grid.interior_multi.copy()
                multi[:, j] += sj
                nb_rows = neighbor_rows(k, sk, multi=multi)
                # Non-interior diagonal neighbors are treated as v = 0
                # (snapped); fine for aligned regions, O(h) local error on
                # curved boundaries, guarded by the max-principle check.
                keep = (nb_rows >= 0) & (scale != 0.0)
                rows.append(row_ids[keep])
                cols.append(nb_rows[keep])
                vals.append(sign * scale[keep])

    rows.append(row_ids)
    cols.append(row_ids)
    vals.append(diag)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    ).tocsr()
    rhs = np.full(N, -1.0)
    return LinearSystem(A=A, rhs=rhs, grid=grid, spec=spec, upwind_nodes=upwind_count)


@dataclass
class MeanExitField:
    """Solved mean-exit-time field v with nodal gradients.

    ``values`` covers the full grid with exact zeros at boundary nodes (and
    at exterior nodes, which extends v by zero for interpolation near curved
    boundaries).  ``gradients`` has shape grid.shape + (n,) and is NaN where
    undefined (exterior everywhere; boundary nodes of curved regions).
    """

    grid: Grid
    values: np.ndarray
    gradients: np.ndarray
    residual: float
    iterations: int
    solver: str
    upwind_nodes: int

    @property
    def h(self) -> np.ndarray:
        return self.grid.h

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.kind == KIND_INTERIOR]

    def min_interior(self) -> float:
        return float(self.interior_values().min())

    def value_at(self, points) -> np.ndarray:
        """Multilinear interpolation of v at (m, n) query points."""
        return _interpolate(self.grid, self.values, points)

    def grad_at(self, points) -> np.ndarray:
        """Multilinear interpolation of the gradient (diagnostics only)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.grid.n))
        for j in range(self.grid.n):
            out[:, j] = _interpolate(self.grid, self.gradients[..., j], pts)
        return out


def _interpolate(grid: Grid, values: np.ndarray, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.n:
        raise geo.DimensionMismatchError(
            f"query dimension {pts.shape[1]} != grid dimension {grid.n}"
        )
    n = grid.n
    idx = np.empty((pts.shape[0], n), dtype=np.int64)
    frac = np.empty((pts.shape[0], n))
    for j in range(n):
        ax = grid.axes[j]
        slack = 1e-9 * grid.h[j]
        x = pts[:, j]
        if np.any(x < ax[0] - slack) or np.any(x > ax[-1] + slack):
            raise ValueError("interpolation query outside the grid hull")
        x = np.clip(x, ax[0], ax[-1])
        cell = np.clip(((x - ax[0]) / grid.h[j]).astype(np.int64), 0, len(ax) - 2)
        idx[:, j] = cell
        frac[:, j] = (x - ax[cell]) / grid.h[j]
    out = np.zeros(pts.shape[0])
    for corner in range(2**n):
        weight = np.ones(pts.shape[0])
        offset = np.zeros((pts.shape[0], n), dtype=np.int64)
        for j in range(n):
            bit = (corner >> j) & 1
            offset[:, j] = bit
            weight = weight * (frac[:, j] if bit else 1.0 - frac[:, j])
        nodes = idx + offset
        out += weight * values[tuple(nodes.T)]
    return out


def _gradients_aligned(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Second-order gradients on a boundary-aligned grid.

    Central differences at interior nodes, one-sided second-order stencils at
    the two faces of each axis (where the sup of |grad v| typically sits).
    """
    grads = np.empty(grid.shape + (grid.n,))
    for j in range(grid.n):
        grads[..., j] = np.gradient(v, grid.h[j], axis=j, edge_order=2)
    return grads


def _gradients_ball(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Gradients at the interior nodes of a curved-boundary grid.

    Uses the 3-point nonuniform central formula with Shortley-Weller arm
    lengths; the boundary value 0 enters at the exact crossing distance, so
    the stencil stays second order up to the boundary.
    """
    grads = np.full(grid.shape + (grid.n,), np.nan)
    N = grid.n_interior
    interior_tuple = tuple(grid.interior_multi.T)
    for j in range(grid.n):
        hm = grid.arms[:, j, 0] * grid.h[j]
        hp = grid.arms[:, j, 1] * grid.h[j]
        vm = np.zeros(N)
        vp = np.zeros(N)
        for side, step, arr in ((0, -1, vm), (1, +1, vp)):
            nb = grid.interior_multi.copy()
            nb[:, j] += step
            full = grid.arms[:, j, side] == 1.0
            # Full arms read the neighbor nodal value (interior value, or 0
            # at an on-sphere boundary node); cut arms read 0 at the crossing.
            if full.any():
                arr[full] = v[tuple(nb[full].T)]
        vc = v[interior_tuple]
        g = (
            -hp / (hm * (hm + hp)) * vm
            + (hp - hm) / (hm * hp) * vc
            + hm / (hp * (hm + hp)) * vp
        )
        grads[interior_tuple + (j,)] = g
    return grads


def solve_dirichlet(system: LinearSystem) -> MeanExitField:
    """Solve A v = rhs to relative residual <= 1e-10 and attach gradients.

    Direct sparse LU up to DIRECT_SOLVE_LIMIT unknowns, BiCGSTAB with
    diagonal preconditioning beyond; one step of iterative refinement is
    applied before declaring failure.
    """
    A, rhs = system.A, system.rhs
    N = rhs.shape[0]
    rhs_norm = float(np.linalg.norm(rhs))
    iterations = 1
    if N <= DIRECT_SOLVE_LIMIT:
        solver = "direct-lu"
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as err:
            raise SolverError(f"sparse factorization failed: {err}") from err
        sol = lu.solve(rhs)
        resid = rhs - A @ sol
        if np.linalg.norm(resid) / rhs_norm > SOLVE_TOLERANCE:
            sol = sol + lu.solve(resid)
            iterations = 2
    else:
        solver = "bicgstab"
        M = sp.diags(1.0 / A.diagonal())
        counter = {"it": 0}

        def _cb(_):
            counter["it"] += 1

        sol, info = spla.bicgstab(
            A, rhs, rtol=SOLVE_TOLERANCE, atol=0.0, M=M, maxiter=20 * N, callback=_cb
        )
        iterations = counter["it"]
        if info != 0:
            achieved = float(np.linalg.norm(rhs - A @ sol) / rhs_norm)
            raise SolverError(
                f"iterative solver did not converge (info={info}, "
                f"relative residual {achieved:.3e})"
            )
    residual = float(np.linalg.norm(rhs - A @ sol) / rhs_norm)
    if not np.isfinite(residual) or residual > SOLVE_TOLERANCE:
        raise SolverError(f"relative residual {residual:.3e} exceeds {SOLVE_TOLERANCE}")

    grid = system.grid
    v = np.zeros(grid.shape)
    v[tuple(grid.interior_multi.T)] = sol
    if isinstance(grid.region, Ball):
        grads = _gradients_ball(grid, v)
    else:
        grads = _gradients_aligned(grid, v)
    return MeanExitField(
        grid=grid,
        values=v,
        gradients=grads,
        residual=residual,
        iterations=iterations,
        solver=solver,
        upwind_nodes=system.upwind_nodes,
    )


def solve_mean_exit(region: Region, spec: DiffusionSpec, resolution: int) -> MeanExitField:
    """Convenience: build grid, assemble, solve."""
    return solve_dirichlet(assemble(build_grid(region, resolution), spec))


def sup_grad_norm(field: MeanExitField) -> float:
    """Max Euclidean norm of the nodal gradient over all nodes carrying one.

    For aligned regions this includes the boundary nodes (one-sided
    stencils), where the supremum is typically attained; for curved regions
    it runs over the interior nodes.  Solve at two nested resolutions to see
    the grid-convergence of this value.
    """
    norms = np.sqrt(np.sum(field.gradients**2, axis=-1))
    finite = norms[np.isfinite(norms)]
    if finite.size == 0:
        raise ValueError("field has no gradient values")
    return float(finite.max())


def refined_resolution(resolution: int) -> int:
    """Next nested refinement: halves h, keeps existing nodes."""
    return 2 * resolution - 1


@dataclass
class EllipticityReport:
    min_eigenvalue: float
    argmin_point: np.ndarray
    n_samples: int
    lambda_min: float
    passed: bool


def _min_eigenvalues(b: np.ndarray) -> np.ndarray:
    n = b.shape[1]
    if n == 1:
        return b[:, 0, 0]
    if n == 2:
        half_tr = 0.5 * (b[:, 0, 0] + b[:, 1, 1])
        gap = np.sqrt(0.25 * (b[:, 0, 0] - b[:, 1, 1]) ** 2 + b[:, 0, 1] ** 2)
        return half_tr - gap
    return np.linalg.eigvalsh(b)[:, 0]


def check_ellipticity(
    spec: DiffusionSpec,
    region: Region,
    n_samples: int = 512,
    lambda_min: float = 1e-6,
) -> EllipticityReport:
    """Smallest eigenvalue of b = beta beta^T over quasi-random interior points.

    PASS iff the minimum over samples stays >= lambda_min; degenerate
    diffusions (some direction carries no noise) fail here before any solve.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    if not lambda_min > 0:
        raise ValueError("lambda_min must be positive")
    lo, hi = geo.bounding_box(region)
    sampler = qmc.Halton(d=spec.n, scramble=True, seed=201711)
    pts = np.empty((0, spec.n))
    attempts = 0
    while pts.shape[0] < n_samples:
        raw = sampler.random(2 * n_samples)
        cand = lo + raw * (hi - lo)
        cand = cand[geo.contains_many(region, cand)]
        pts = np.vstack([pts, cand])
        attempts += 1
        if attempts > 64:
            raise RuntimeError("could not draw enough interior sample points")
    pts = pts[:n_samples]
    try:
        b = spec.b_matrix_at(pts)
    except ex.ExprDomainError as err:
        raise CoefficientError(
            f"coefficient evaluation failed at an ellipticity sample: {err}"
        ) from err
    eigs = _min_eigenvalues(b)
    k = int(np.argmin(eigs))
    min_eig = float(eigs[k])
    return EllipticityReport(
        min_eigenvalue=min_eig,
        argmin_point=pts[k].copy(),
        n_samples=n_samples,
        lambda_min=lambda_min,
        passed=bool(min_eig >= lambda_min),
    )
