from __future__ import annotations

import json
import math

import numpy as np
import pytest

from exitbound import bound as bnd
from exitbound import geometry as geo
from exitbound import pde, sde

UNIT_INTERVAL = geo.Interval(0.0, 1.0)
BM = pde.DiffusionSpec.from_strings(1, 1, ["0"], [["1"]], label="bm")
PAIR = sde.CoupledPair(BM, BM, (0.3,), (0.7,))
CONFIG = sde.PathConfig(
    dt=1e-3, t_max=12.0, bridge=True, coupling="shared", base_seed=7
)


@pytest.fixture(scope="module")
def batch() -> sde.OutcomeBatch:
    return sde.run_replicates(UNIT_INTERVAL, PAIR, CONFIG, 4000)


@pytest.fixture(scope="module")
def field() -> pde.MeanExitField:
    return pde.solve_mean_exit(UNIT_INTERVAL, BM, 101)


def synthetic_batch(t1, t2) -> sde.OutcomeBatch:
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    m = t1.shape[0]
    return sde.OutcomeBatch(
        replicates=np.arange(m),
        T=np.stack([t1, t2]),
        censored=np.zeros((2, m), dtype=bool),
        bridge_exit=np.zeros((2, m), dtype=bool),
        steps=np.ones((2, m), dtype=np.int64),
        exit_pos=np.zeros((2, m, 1)),
        y_first=np.zeros((2, m, 1)),
        dt=1e-3,
        t_max=1.0,
        base_seed=0,
        coupling="shared",
        bridge=False,
    )


def test_mean_se_oracle():
    est = bnd.mean_se([1.0, 2.0, 3.0, 4.0])
    assert est.mean == 2.5
    assert est.se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0, rel=1e-15)
    assert est.n == 4


def test_mean_se_single_sample():
    est = bnd.mean_se([3.25])
    assert est.mean == 3.25
    assert est.se == 0.0


def test_mean_se_is_compensated():
    # 10^8 spread against unit offsets loses the offsets under naive
    # summation order; fsum keeps them
    vals = np.array([1e8, 1.0, -1e8, 1.0, 1e-8, -1e-8] * 100)
    est = bnd.mean_se(vals)
    assert est.mean == pytest.approx(200.0 / 600.0, rel=1e-15)


def test_abs_gap_and_displacement(batch):
    gap = bnd.estimate_abs_gap(batch)
    manual = np.abs(batch.T[0] - batch.T[1])
    assert gap.mean == pytest.approx(manual.mean(), rel=1e-12)
    disp = bnd.estimate_displacement(batch)
    assert disp.mean == pytest.approx(0.4, abs=1e-13)


def test_decomposition_identity_exact(batch):
    check = bnd.decomposition_check(batch)
    assert check.passed
    assert check.residual <= check.threshold
    assert check.threshold == pytest.approx(
        1e-12 * batch.n_replicates * max(check.max_abs_t, 1.0)
    )


def test_decomposition_synthetic_ties():
    t1 = np.array([1.0, 2.0, 3.0, 3.0])
    t2 = np.array([2.0, 1.0, 3.0, 0.5])
    check = bnd.decomposition_check(synthetic_batch(t1, t2))
    assert check.residual == 0.0
    assert check.max_abs_t == 3.0
    assert check.passed


def test_point_check_formula(batch, field):
    check = bnd.point_check(batch, field, 0, (0.3,))
    est = bnd.mean_se(batch.T[0])
    assert check.predicted == pytest.approx(0.21, abs=1e-12)
    assert check.abs_error == pytest.approx(abs(est.mean - 0.21), rel=1e-12)
    assert check.tolerance == pytest.approx(3.0 * est.se + math.sqrt(batch.dt))
    assert check.passed == (check.abs_error <= check.tolerance)
    assert check.passed


def test_identity_check_consistency(batch, field):
    for chain, start in ((0, (0.3,)), (1, (0.7,))):
        check = bnd.identity_check(batch, field, chain, t_scale=0.21)
        expected_allowance = (float(np.max(field.h)) ** 2 + math.sqrt(batch.dt)) * 0.21
        assert check.allowance == pytest.approx(expected_allowance, rel=1e-12)
        assert check.passed == (
            abs(check.diff_mean) <= 3.0 * check.diff_se + check.allowance
        )
        assert check.passed


def test_verify_bound_report(batch, field):
    report = bnd.verify_bound(batch, field, field, (0.3,), (0.7,), label="t")
    sup = pde.sup_grad_norm(field)
    assert report.grad_constant == pytest.approx(max(sup, sup), rel=1e-15)
    assert report.rhs.mean == pytest.approx(
        report.grad_constant * report.displacement.mean, rel=1e-15
    )
    assert report.combined_se == pytest.approx(
        math.hypot(report.lhs.se, report.rhs.se), rel=1e-15
    )
    assert report.margin == pytest.approx(report.rhs.mean - report.lhs.mean, rel=1e-12)
    assert report.holds == (
        report.lhs.mean <= report.rhs.mean + 3.0 * report.combined_se
    )
    assert report.holds
    assert report.checks_passed


def test_report_serializes_to_stable_json(batch, field):
    report = bnd.verify_bound(batch, field, field, (0.3,), (0.7,), label="t")
    d = report.to_dict()
    text = json.dumps(d, sort_keys=True)
    again = json.dumps(report.to_dict(), sort_keys=True)
    assert text == again
    for key in (
        "label",
        "lhs",
        "rhs",
        "displacement",
        "margin",
        "holds",
        "decomposition",
        "point_checks",
        "identity_checks",
    ):
        assert key in d
    assert d["lhs"]["n"] == batch.n_replicates


def test_censoring_gate(field):
    cfg = sde.PathConfig(
        dt=1e-3, t_max=5e-3, bridge=True, coupling="shared", base_seed=7
    )
    censored = sde.run_replicates(UNIT_INTERVAL, PAIR, cfg, 50)
    with pytest.raises(bnd.NumericalFailure):
        bnd.verify_bound(censored, field, field, (0.3,), (0.7,))


def test_render_table_lists_verdict(batch, field):
    report = bnd.verify_bound(batch, field, field, (0.3,), (0.7,), label="demo")
    text = bnd.render_table(report)
    assert "E|T1 - T2|" in text
    assert "bound rhs" in text
    assert "bound holds         yes" in text
    assert "demo" in text
