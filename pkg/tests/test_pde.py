from __future__ import annotations

import math

import numpy as np
import pytest

from exitbound import geometry as geo
from exitbound import pde

UNIT_INTERVAL = geo.Interval(0.0, 1.0)
UNIT_DISK = geo.Ball((0.0, 0.0), 1.0)

BM_1D = pde.DiffusionSpec.from_strings(1, 1, ["0"], [["1"]])
BM_2D = pde.DiffusionSpec.from_strings(2, 2, ["0", "0"], [["1", "0"], ["0", "1"]])


def test_driftless_interval_is_grid_exact():
    # v(y) = y(1-y) is quadratic, so the three-point stencil reproduces it
    # to solver roundoff at every node.
    field = pde.solve_mean_exit(UNIT_INTERVAL, BM_1D, 101)
    y = field.grid.interior_points[:, 0]
    err = np.max(np.abs(field.interior_values() - y * (1.0 - y)))
    assert err <= 1e-12
    assert pde.sup_grad_norm(field) == pytest.approx(1.0, abs=1e-12)
    assert field.residual <= pde.SOLVE_TOLERANCE


def test_unit_disk_is_grid_exact():
    # v(y) = (1-|y|^2)/2 is quadratic; the cut-cell stencil keeps nodal
    # exactness even though boundary arms are fractional.
    field = pde.solve_mean_exit(UNIT_DISK, BM_2D, 51)
    pts = field.grid.interior_points
    exact = (1.0 - (pts**2).sum(axis=1)) / 2.0
    assert np.max(np.abs(field.interior_values() - exact)) <= 1e-10
    center = field.value_at([[0.0, 0.0]])[0]
    assert center == pytest.approx(0.5, abs=1e-10)
    sup = pde.sup_grad_norm(field)
    # nodal gradient magnitude approaches 1 from below as nodes near the rim
    assert 0.98 <= sup <= 1.0 + 1e-9


def test_constant_drift_matches_closed_form():
    # 1/2 v'' + v' = -1 on (0,1): v(y) = (1 - e^{-2y})/(1 - e^{-2}) - y.
    spec = pde.DiffusionSpec.from_strings(1, 1, ["1"], [["1"]])
    amp = 1.0 / (1.0 - math.exp(-2.0))

    def exact(y):
        return amp * (1.0 - np.exp(-2.0 * y)) - y

    errs = []
    for res in (101, 201):
        field = pde.solve_mean_exit(UNIT_INTERVAL, spec, res)
        y = field.grid.interior_points[:, 0]
        errs.append(np.max(np.abs(field.interior_values() - exact(y))))
    assert errs[1] <= 1e-5
    # halving h divides the error by about four
    assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.5)


def test_strong_drift_uses_upwinding_and_stays_positive():
    # |f| h > b triggers one-sided first differences; the matrix stays an
    # M-matrix so the solution cannot oscillate below zero.
    spec = pde.DiffusionSpec.from_strings(1, 1, ["200"], [["1"]])
    field = pde.solve_mean_exit(UNIT_INTERVAL, spec, 51)
    assert field.upwind_nodes > 0
    assert field.min_interior() >= 0.0


def test_weak_drift_keeps_central_differences():
    spec = pde.DiffusionSpec.from_strings(1, 1, ["1"], [["1"]])
    field = pde.solve_mean_exit(UNIT_INTERVAL, spec, 101)
    assert field.upwind_nodes == 0


def test_cross_derivative_stencil_against_generator():
    # Apply the assembled operator to g = y1 y2.  Away from the boundary
    # the discrete rows must equal L g = b12 + f1 y2 + f2 y1 exactly since
    # the stencils are exact on bilinear functions.
    rho = 0.4
    box = geo.Box((0.0, 0.0), (1.0, 1.0))
    root = math.sqrt(1.0 - rho**2)
    spec = pde.DiffusionSpec.from_strings(
        2, 2, ["0.3", "-0.2"], [["1", "0"], [repr(rho), repr(root)]]
    )
    grid = pde.build_grid(box, 21)
    system = pde.assemble(grid, spec)
    pts = grid.interior_points
    g = pts[:, 0] * pts[:, 1]
    applied = system.A @ g
    expected = rho + 0.3 * pts[:, 1] - 0.2 * pts[:, 0]
    deep = geo.boundary_distance_many(box, pts) > 1.5 * grid.h.max()
    assert deep.sum() > 100
    assert np.max(np.abs(applied - expected)[deep]) <= 1e-10


def test_interpolation_reproduces_nodes_and_midpoints():
    field = pde.solve_mean_exit(UNIT_INTERVAL, BM_1D, 51)
    nodes = field.grid.interior_points
    np.testing.assert_allclose(
        field.value_at(nodes), field.interior_values(), rtol=0, atol=0
    )
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    want = 0.5 * (field.interior_values()[:-1] + field.interior_values()[1:])
    np.testing.assert_allclose(field.value_at(mid), want, atol=1e-15)


def test_gradient_interpolation():
    field = pde.solve_mean_exit(UNIT_INTERVAL, BM_1D, 101)
    g = field.grad_at([[0.31]])[0, 0]
    assert g == pytest.approx(1.0 - 2.0 * 0.31, abs=1e-12)


def test_ball_grid_classification_invariants():
    grid = pde.build_grid(UNIT_DISK, 51)
    counts = [(grid.kind == k).sum() for k in range(3)]
    assert sum(counts) == grid.kind.size
    assert geo.contains_many(UNIT_DISK, grid.interior_points).all()
    assert grid.arms.shape == (grid.n_interior, 2, 2)
    assert (grid.arms > 0.0).all() and (grid.arms <= 1.0).all()
    # interior nodes one step from the rim must have a shortened arm
    assert (grid.arms < 1.0).any()


def test_aligned_grid_has_full_arms():
    grid = pde.build_grid(geo.Box((0.0, 0.0), (1.0, 2.0)), 16)
    assert (grid.arms == 1.0).all()
    # spacing differs per axis for an anisotropic box
    assert grid.h[1] == pytest.approx(2.0 * grid.h[0])


def test_resolution_floor():
    with pytest.raises(pde.GridError):
        pde.build_grid(UNIT_INTERVAL, 7)


def test_dimension_mismatch_rejected():
    grid = pde.build_grid(UNIT_INTERVAL, 16)
    with pytest.raises(ValueError):
        pde.assemble(grid, BM_2D)


def test_refined_resolution_nests_nodes():
    assert pde.refined_resolution(101) == 201
    assert pde.refined_resolution(8) == 15


def test_ellipticity_pass_and_fail():
    ok = pde.check_ellipticity(BM_2D, geo.Box((0.0, 0.0), (1.0, 1.0)))
    assert ok.passed
    assert ok.min_eigenvalue == pytest.approx(1.0, abs=1e-12)

    degenerate = pde.DiffusionSpec.from_strings(1, 1, ["0"], [["0"]])
    bad = pde.check_ellipticity(degenerate, UNIT_INTERVAL)
    assert not bad.passed
    assert bad.min_eigenvalue == 0.0

    # rank-deficient in 2D: both rows driven by the same noise direction
    flat = pde.DiffusionSpec.from_strings(2, 1, ["0", "0"], [["1"], ["1"]])
    rep = pde.check_ellipticity(flat, geo.Box((0.0, 0.0), (1.0, 1.0)))
    assert not rep.passed

    with pytest.raises(ValueError):
        pde.check_ellipticity(BM_2D, geo.Box((0.0, 0.0), (1.0, 1.0)), n_samples=10)


def test_variable_coefficients_evaluate_on_grid():
    # smooth nondegenerate variable diffusion solves without error and
    # stays positive (exit times are positive)
    spec = pde.DiffusionSpec.from_strings(1, 1, ["-y1"], [["1+y1/2"]])
    field = pde.solve_mean_exit(UNIT_INTERVAL, spec, 101)
    assert field.min_interior() > 0.0
    assert field.residual <= pde.SOLVE_TOLERANCE


def test_spec_validation():
    with pytest.raises(ValueError):
        pde.DiffusionSpec.from_strings(0, 1, [], [[]])
    with pytest.raises(ValueError):
        pde.DiffusionSpec.from_strings(2, 1, ["0"], [["1"], ["1"]])  # drift length
    with pytest.raises(ValueError):
        pde.DiffusionSpec.from_strings(1, 2, ["0"], [["1"]])  # diffusion row width
