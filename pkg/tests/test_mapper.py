import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_world
from semreach.domain import GridGeometry, RobotState
from semreach.mapper import BeliefMap, MapperConfig, observed_cells, pmf_of, update
from semreach.sensor import Measurement, SensorConfig, diagonal_confusion, sense

GEOM = GridGeometry(6, 5)


def meas(hits=(), trav=()):
    """Hand-built scan: ``hits`` are (cell, label) rays, ``trav`` lists of free cells per extra ray."""
    hit_cell = [c for c, _ in hits] + [-1] * len(trav)
    labels = [y for _, y in hits] + [-1] * len(trav)
    cells = [[] for _ in hits] + [list(t) for t in trav]
    ptr = np.concatenate([[0], np.cumsum([len(c) for c in cells])]).astype(np.int64)
    n = len(hit_cell)
    return Measurement(
        bearings=np.zeros(n),
        hit_cell=np.asarray(hit_cell, dtype=np.int64),
        hit_range=np.ones(n),
        labels=np.asarray(labels, dtype=np.int64),
        trav_ptr=ptr,
        trav_cells=np.asarray([c for cs in cells for c in cs], dtype=np.int64),
        n_cells=GEOM.n_cells,
    )


def test_one_step_bayes_example():
    cfg = MapperConfig(diagonal_confusion(5, 0.8))
    b = update(BeliefMap.fresh(GEOM, cfg), meas([(7, 4)]), cfg)
    np.testing.assert_allclose(pmf_of(b, 7), [0.05, 0.05, 0.05, 0.05, 0.8], atol=1e-12)


def test_untouched_cells_unchanged_and_independent():
    cfg = MapperConfig(diagonal_confusion(5, 0.9))
    b0 = BeliefMap.fresh(GEOM, cfg)
    b0 = update(b0, meas([(3, 2), (9, 1)], [[10, 11]]), cfg)
    b1 = update(b0, meas([(3, 4)]), cfg)
    others = np.arange(GEOM.n_cells) != 3
    np.testing.assert_array_equal(b1.pmf[others], b0.pmf[others])
    assert not np.array_equal(b1.pmf[3], b0.pmf[3])


def test_batching_commutes():
    cfg = MapperConfig(diagonal_confusion(5, 0.85))
    b = BeliefMap.fresh(GEOM, cfg)
    two = update(update(b, meas([(4, 3)]), cfg), meas([(4, 3)]), cfg)
    batched = update(b, meas([(4, 3), (4, 3)]), cfg)
    np.testing.assert_allclose(two.pmf, batched.pmf, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, GEOM.n_cells - 1), st.integers(0, 4)), max_size=30),
    st.lists(st.lists(st.integers(0, GEOM.n_cells - 1), max_size=5), max_size=8),
    st.floats(0.3, 0.99),
)
def test_pmfs_stay_normalized_and_floored(hits, trav, diag):
    cfg = MapperConfig(diagonal_confusion(5, diag))
    b = BeliefMap.fresh(GEOM, cfg)
    for _ in range(3):
        b = update(b, meas(hits, trav), cfg)
    np.testing.assert_allclose(b.pmf.sum(axis=1), 1.0, atol=1e-9)
    assert b.pmf.min() >= cfg.pmf_floor / (1 + 5 * cfg.pmf_floor) - 1e-18
    touched = {c for c, _ in hits} | {c for t in trav for c in t}
    assert set(observed_cells(b).tolist()) == touched


def test_repeated_observation_is_monotone():
    cfg = MapperConfig(diagonal_confusion(5, 0.7))
    b = BeliefMap.fresh(GEOM, cfg)
    prev = 0.2
    for _ in range(12):
        b = update(b, meas([(0, 3)]), cfg)
        p = pmf_of(b, 0)[3]
        assert p >= prev
        prev = p
    assert prev > 1 - 1e-5


def test_floor_allows_recovery():
    cfg = MapperConfig(diagonal_confusion(5, 0.95))
    b = BeliefMap.fresh(GEOM, cfg)
    for _ in range(10):
        b = update(b, meas([(0, 1)]), cfg)
    for _ in range(12):
        b = update(b, meas([(0, 3)]), cfg)
    assert np.argmax(pmf_of(b, 0)) == 3


def test_fresh_and_observed_union():
    cfg = MapperConfig(diagonal_confusion(5, 0.9))
    b = BeliefMap.fresh(GEOM, cfg)
    assert observed_cells(b).size == 0
    scans = [meas([(2, 1)], [[3, 4]]), meas([(20, 2)]), meas([], [[5, 6, 7]])]
    union = set()
    for m in scans:
        b = update(b, m, cfg)
        union |= set(m.touched_cells().tolist())
        assert set(observed_cells(b).tolist()) == union


def test_pmf_of_is_read_only():
    cfg = MapperConfig(diagonal_confusion(5, 0.9))
    v = pmf_of(BeliefMap.fresh(GEOM, cfg), 0)
    with pytest.raises(ValueError):
        v[0] = 1.0
    with pytest.raises(IndexError):
        pmf_of(BeliefMap.fresh(GEOM, cfg), GEOM.n_cells)


def test_bad_label_and_config_errors():
    cfg = MapperConfig(diagonal_confusion(5, 0.9))
    with pytest.raises(ValueError):
        update(BeliefMap.fresh(GEOM, cfg), meas([(0, 7)]), cfg)
    with pytest.raises(ValueError):
        MapperConfig(diagonal_confusion(5, 0.9), pmf_floor=0.0)
    with pytest.raises(ValueError):
        MapperConfig(diagonal_confusion(5, 0.9), prior=np.array([0.5, 0.5, 0.5, 0.0, 0.0]))


def test_identity_model_recovers_truth():
    objs = [(3, 3, 1), (3, 4, 1), (8, 9, 2), (12, 5, 3), (6, 12, 4)]
    world = make_world(16, 16, objs)
    eye = np.eye(5)
    cfg = MapperConfig(eye, pmf_floor=1e-18)
    sensor = SensorConfig(eye, r_max=10.0)
    b = BeliefMap.fresh(world.geometry, cfg)
    g = np.random.default_rng(0)
    for r in range(0, 16, 3):
        for c in range(0, 16, 3):
            if world.truth[r * 16 + c] == 0:
                b = update(b, sense(world, RobotState(r, c), sensor, g), cfg)
    assert b.observed.all()
    np.testing.assert_array_equal(np.argmax(b.pmf, axis=1), world.truth)
