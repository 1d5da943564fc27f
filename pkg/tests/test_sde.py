from __future__ import annotations

import math

import numpy as np
import pytest

from exitbound import bound as bnd
from exitbound import geometry as geo
from exitbound import pde, sde

UNIT_INTERVAL = geo.Interval(0.0, 1.0)
BM = pde.DiffusionSpec.from_strings(1, 1, ["0"], [["1"]], label="bm")
PAIR = sde.CoupledPair(BM, BM, (0.3,), (0.7,))


def config(**overrides) -> sde.PathConfig:
    base = dict(
        dt=1e-3, t_max=12.0, bridge=True, coupling="shared", base_seed=7
    )
    base.update(overrides)
    return sde.PathConfig(**base)


def batches_equal(a: sde.OutcomeBatch, b: sde.OutcomeBatch) -> bool:
    for name in ("replicates", "T", "censored", "bridge_exit", "steps", "exit_pos", "y_first"):
        if not np.array_equal(getattr(a, name), getattr(b, name)):
            return False
    return True


def test_runs_are_bitwise_reproducible():
    a = sde.run_replicates(UNIT_INTERVAL, PAIR, config(), 300)
    b = sde.run_replicates(UNIT_INTERVAL, PAIR, config(), 300)
    assert batches_equal(a, b)


def test_block_size_does_not_change_results():
    a = sde.run_replicates(UNIT_INTERVAL, PAIR, config(block_steps=256), 200)
    b = sde.run_replicates(UNIT_INTERVAL, PAIR, config(block_steps=17), 200)
    assert batches_equal(a, b)


def test_batch_size_does_not_change_results():
    a = sde.run_replicates(UNIT_INTERVAL, PAIR, config(batch_size=8192), 200)
    b = sde.run_replicates(UNIT_INTERVAL, PAIR, config(batch_size=23), 200)
    assert batches_equal(a, b)


def test_worker_count_does_not_change_results():
    cfg = config(batch_size=64)
    a = sde.run_replicates(UNIT_INTERVAL, PAIR, cfg, 256, workers=1)
    b = sde.run_replicates(UNIT_INTERVAL, PAIR, cfg, 256, workers=3)
    assert batches_equal(a, b)


def test_single_replicate_matches_batch_row():
    batch = sde.run_replicates(UNIT_INTERVAL, PAIR, config(), 50)
    for rep in (0, 7, 49):
        solo = sde.simulate_pair(UNIT_INTERVAL, PAIR, config(), replicate=rep)
        assert solo.T[0, 0] == batch.T[0, rep]
        assert solo.T[1, 0] == batch.T[1, rep]
        np.testing.assert_array_equal(solo.y_first[:, 0], batch.y_first[:, rep])


def test_identical_processes_share_every_exit():
    pair = sde.CoupledPair(BM, BM, (0.5,), (0.5,))
    batch = sde.run_replicates(UNIT_INTERVAL, pair, config(base_seed=3), 400)
    assert np.array_equal(batch.T[0], batch.T[1])
    assert not batch.e1.any() and not batch.e2.any()
    assert batch.displacement().max() == 0.0


def test_shared_noise_preserves_start_gap():
    # equal diffusions driven by one Wiener path keep y1 - y2 frozen, so
    # the displacement at the first exit is |a1 - a2| on every path
    batch = sde.run_replicates(UNIT_INTERVAL, PAIR, config(), 500)
    disp = batch.displacement()
    assert np.ptp(disp) <= 5e-15
    assert disp.mean() == pytest.approx(0.4, abs=1e-13)


def test_independent_coupling_differs():
    pair = sde.CoupledPair(BM, BM, (0.5,), (0.5,))
    batch = sde.run_replicates(
        UNIT_INTERVAL, pair, config(coupling="independent", base_seed=3), 300
    )
    assert (batch.T[0] != batch.T[1]).mean() > 0.9


def test_exit_indicators_partition_ties_to_neither():
    batch = sde.run_replicates(UNIT_INTERVAL, PAIR, config(), 500)
    e1 = batch.e1
    e2 = batch.e2
    assert not (e1 & e2).any()
    ties = batch.T[0] == batch.T[1]
    assert not e1[ties].any() and not e2[ties].any()
    assert (e1 | e2 | ties).all()


def test_exit_positions_lie_on_or_outside_boundary():
    batch = sde.run_replicates(UNIT_INTERVAL, PAIR, config(), 300)
    for chain in (0, 1):
        pos = batch.exit_pos[chain][~batch.censored[chain]]
        d = geo.boundary_distance_many(UNIT_INTERVAL, pos)
        assert d.max() <= 1e-12


def test_mean_exit_time_matches_field_value():
    batch = sde.run_replicates(UNIT_INTERVAL, PAIR, config(), 4000)
    est = bnd.mean_se(batch.T[0])
    assert abs(est.mean - 0.21) <= 3.0 * est.se + math.sqrt(1e-3)
    est2 = bnd.mean_se(batch.T[1])
    assert abs(est2.mean - 0.21) <= 3.0 * est2.se + math.sqrt(1e-3)


def test_bridge_correction_reduces_step_bias():
    # without the correction every exit waits for a lattice point outside,
    # inflating the mean by O(sqrt(dt)); the correction recovers most of it
    on = sde.run_replicates(UNIT_INTERVAL, PAIR, config(bridge=True), 4000)
    off = sde.run_replicates(UNIT_INTERVAL, PAIR, config(bridge=False), 4000)
    bias_on = abs(bnd.mean_se(on.T[0]).mean - 0.21)
    bias_off = abs(bnd.mean_se(off.T[0]).mean - 0.21)
    assert bias_off > 3.0 * bias_on
    assert on.bridge_exit.any()
    assert not off.bridge_exit.any()


def test_censoring_at_t_max():
    cfg = config(dt=1e-3, t_max=5e-3)
    batch = sde.run_replicates(UNIT_INTERVAL, PAIR, cfg, 100)
    assert batch.censored.all()
    assert batch.censored_fraction == 1.0
    np.testing.assert_allclose(batch.T, cfg.n_steps * cfg.dt)
    # censored paths report their last interior position
    assert geo.contains_many(UNIT_INTERVAL, batch.exit_pos[0]).all()


def test_merge_equals_contiguous_run():
    cfg = config()
    parts = [
        sde._simulate_batch(UNIT_INTERVAL, PAIR, cfg, 0, 60),
        sde._simulate_batch(UNIT_INTERVAL, PAIR, cfg, 60, 40),
    ]
    merged = sde.OutcomeBatch.merge(parts)
    whole = sde.run_replicates(UNIT_INTERVAL, PAIR, cfg, 100)
    assert batches_equal(merged, whole)


def test_replicate_streams_are_distinct():
    r0 = sde.replicate_rng(7, 0).standard_normal(4)
    r0_again = sde.replicate_rng(7, 0).standard_normal(4)
    r1 = sde.replicate_rng(7, 1).standard_normal(4)
    bridge0 = sde.replicate_bridge_rng(7, 0).standard_normal(4)
    np.testing.assert_array_equal(r0, r0_again)
    assert not np.array_equal(r0, r1)
    assert not np.array_equal(r0, bridge0)


def test_bridge_crossing_probability_formula():
    # distances 0.05 on both ends, sigma 1, dt 0.01: exp(-2*0.0025/0.01)
    p = sde.bridge_crossing_probability(0.05, 0.05, 1.0, 0.01)
    assert p == pytest.approx(math.exp(-0.5), rel=1e-15)
    # touching the boundary at either end forces a crossing
    assert sde.bridge_crossing_probability(0.0, 0.3, 1.0, 0.01) == 1.0
    # far from the boundary the probability vanishes
    assert sde.bridge_crossing_probability(3.0, 3.0, 1.0, 0.01) < 1e-300


def test_bridge_requires_scalar_constant_diffusion():
    with pytest.raises(sde.BridgeUnsupportedError):
        spec2 = pde.DiffusionSpec.from_strings(
            2, 2, ["0", "0"], [["1", "0"], ["0", "1"]]
        )
        pair2 = sde.CoupledPair(spec2, spec2, (0.3, 0.5), (0.7, 0.5))
        sde.run_replicates(geo.Box((0.0, 0.0), (1.0, 1.0)), pair2, config(), 10)
    with pytest.raises(sde.BridgeUnsupportedError):
        varying = pde.DiffusionSpec.from_strings(1, 1, ["0"], [["1+y1"]])
        pair_v = sde.CoupledPair(varying, varying, (0.3,), (0.7,))
        sde.run_replicates(UNIT_INTERVAL, pair_v, config(), 10)


def test_config_validation():
    with pytest.raises(ValueError):
        config(dt=0.0)
    with pytest.raises(ValueError):
        config(t_max=0.0)
    with pytest.raises(ValueError):
        config(coupling="entangled")
    with pytest.raises(ValueError):
        config(dt=2.0, t_max=1.0)


def test_start_point_validation():
    bad = sde.CoupledPair(BM, BM, (0.0,), (0.7,))
    with pytest.raises(ValueError):
        sde.run_replicates(UNIT_INTERVAL, bad, config(), 10)
    outside = sde.CoupledPair(BM, BM, (0.3,), (1.5,))
    with pytest.raises(ValueError):
        sde.run_replicates(UNIT_INTERVAL, outside, config(), 10)


def test_drifted_chain_exits_downstream_more_often():
    drifty = pde.DiffusionSpec.from_strings(1, 1, ["4"], [["1"]], label="push")
    pair = sde.CoupledPair(drifty, drifty, (0.5,), (0.5,))
    batch = sde.run_replicates(UNIT_INTERVAL, pair, config(base_seed=11), 400)
    upper = batch.exit_pos[0][:, 0] > 0.5
    assert upper.mean() > 0.8
