import math

import numpy as np
import pytest

from conftest import make_world
from semreach.domain import RobotState
from semreach.sensor import SensorConfig, dda_cells, diagonal_confusion, ray_template, sense

EYE = np.eye(5)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_empty_world_covers_disc():
    world = make_world(31, 31)
    x = RobotState(15, 15)
    m = sense(world, x, SensorConfig(EYE), rng())
    assert np.all(m.hit_cell == -1)
    rows, cols = np.divmod(np.arange(31 * 31), 31)
    disc = np.flatnonzero(np.hypot(rows - 15, cols - 15) <= 10.0 + 1e-9)
    assert set(m.touched_cells().tolist()) == set(disc.tolist())


def _segment_hits_box(theta, cx, cy, reach):
    # slab test: does the open segment from the origin cross the unit box at (cx, cy)?
    dx, dy = math.cos(theta), math.sin(theta)
    lo, hi = 0.0, reach
    for d, c in ((dx, cx), (dy, cy)):
        if abs(d) < 1e-15:
            if not c - 0.5 < 0.0 < c + 0.5:
                return False
            continue
        t1, t2 = sorted(((c - 0.5) / d, (c + 0.5) / d))
        lo, hi = max(lo, t1), min(hi, t2)
    return hi - lo > 1e-9


def test_truck_three_metres_east():
    world = make_world(21, 21, [(10, 13, 2)])
    m = sense(world, RobotState(10, 10), SensorConfig(EYE), rng())
    hits = np.flatnonzero(m.hit_cell >= 0)
    expect = [b for b, th in enumerate(m.bearings) if _segment_hits_box(th, 3.0, 0.0, 10.0)]
    assert hits.tolist() == expect
    assert 0 in expect
    assert np.all(m.hit_range[hits] == 3.0)
    assert np.all(m.labels[hits] == 2)
    assert np.all(m.hit_cell[hits] == 10 * 21 + 13)


def test_hits_are_first_occupied_cell_and_traversal_stops_before():
    r = np.random.default_rng(4)
    for trial in range(5):
        objs = [(int(r.integers(25)), int(r.integers(25)), int(r.integers(1, 5))) for _ in range(15)]
        objs = [o for o in objs if (o[0], o[1]) != (12, 12)]
        world = make_world(25, 25, objs)
        m = sense(world, RobotState(12, 12), SensorConfig(EYE, ray_count=180, detect_occluded=False), rng(trial))
        assert len(m.bearings) == 180
        for theta, hit, trav in m.rays():
            cells = []
            for dr, dc, _ in dda_cells(theta, 10.0):
                rr, cc = 12 + dr, 12 + dc
                if not (0 <= rr < 25 and 0 <= cc < 25):
                    break
                cells.append((rr * 25 + cc, math.hypot(dr, dc)))
            first = next(((j, d) for j, d in cells if world.truth[j] != 0), None)
            if first is not None and first[1] <= 10.0:
                assert hit is not None and hit[2] == first[0] and hit[0] == pytest.approx(first[1])
                assert hit[0] <= 10.0
                expect = [j for j, d in cells[: [c for c, _ in cells].index(first[0])] if d <= 10.0]
            else:
                assert hit is None
                expect = [j for j, d in cells if d <= 10.0 and world.truth[j] == 0]
            assert trav == expect


def test_occluded_objects_still_return_a_measurement():
    # person directly behind a tree, both east of the robot
    world = make_world(25, 25, [(12, 15, 4), (12, 16, 3)])
    x = RobotState(12, 12)
    plain = sense(world, x, SensorConfig(EYE, detect_occluded=False), rng())
    assert 12 * 25 + 16 not in plain.hit_cell
    m = sense(world, x, SensorConfig(EYE), rng())
    extra = np.flatnonzero(m.hit_cell == 12 * 25 + 16)
    assert extra.tolist() == [720]
    assert m.labels[720] == 3 and m.hit_range[720] == 4.0 and m.bearings[720] == 0.0
    theta, hit, trav = list(m.rays())[720]
    assert trav == []
    # everything else is unchanged
    np.testing.assert_array_equal(m.hit_cell[:720], plain.hit_cell)
    np.testing.assert_array_equal(m.trav_cells, plain.trav_cells)


def test_every_object_in_range_is_measured():
    r = np.random.default_rng(8)
    for trial in range(10):
        objs = [(int(r.integers(25)), int(r.integers(25)), int(r.integers(1, 5))) for _ in range(40)]
        objs = [o for o in objs if (o[0], o[1]) != (12, 12)]
        world = make_world(25, 25, objs)
        m = sense(world, RobotState(12, 12), SensorConfig(EYE, ray_count=90), rng(trial))
        in_range = {j for j in world.object_cells.tolist() if np.hypot(j // 25 - 12, j % 25 - 12) <= 10.0}
        assert in_range == set(m.hit_cell[m.hit_cell >= 0].tolist())


def test_label_frequencies_match_row():
    row = [0.1, 0.1, 0.05, 0.6, 0.15]
    conf = diagonal_confusion(5, 0.8)
    conf[3] = row
    world = make_world(21, 21, [(10, 13, 3)])
    cfg = SensorConfig(conf)
    g = rng(11)
    labels = []
    while len(labels) < 10_000:
        m = sense(world, RobotState(10, 10), cfg, g)
        labels.extend(m.labels[m.hit_cell >= 0].tolist())
    freq = np.bincount(labels[:10_000], minlength=5) / 10_000
    assert np.all(np.abs(freq - row) <= 0.02)


def test_more_rays_never_shrink_coverage():
    world = make_world(25, 25, [(12, 15, 4), (9, 12, 1), (14, 10, 3)])
    x = RobotState(12, 12)
    prev = set()
    for n in (90, 180, 360, 720, 1440):
        cells = set(sense(world, x, SensorConfig(EYE, ray_count=n), rng()).touched_cells().tolist())
        assert prev <= cells
        prev = cells


def test_default_rays_reach_every_cell_in_range():
    tm = ray_template(720, 10.0)
    seen = set(zip(tm.dr[tm.in_range].tolist(), tm.dc[tm.in_range].tolist()))
    disc = {(r, c) for r in range(-10, 11) for c in range(-10, 11) if math.hypot(r, c) <= 10.0}
    assert seen == disc


def test_severity_interpolates_to_uniform():
    t = diagonal_confusion(5, 0.75)
    np.testing.assert_array_equal(SensorConfig(t).effective_confusion(), t)
    np.testing.assert_allclose(SensorConfig(t, severity_scale=1.0).effective_confusion(), np.full((5, 5), 0.2))
    half = SensorConfig(t, severity_scale=0.5).effective_confusion()
    np.testing.assert_allclose(half.sum(axis=1), 1.0)


def test_sense_is_deterministic_per_seed():
    world = make_world(25, 25, [(12, 15, 4), (9, 12, 1)])
    cfg = SensorConfig(diagonal_confusion(5, 0.6))
    a = sense(world, RobotState(12, 12), cfg, rng(5))
    b = sense(world, RobotState(12, 12), cfg, rng(5))
    assert a.digest() == b.digest()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_cell_mode_shares_one_label_per_cell():
    world = make_world(25, 25, [(12, 14, 3)])
    cfg = SensorConfig(diagonal_confusion(5, 0.3), label_mode="cell")
    for s in range(10):
        m = sense(world, RobotState(12, 12), cfg, rng(s))
        assert len(set(m.labels[m.hit_cell >= 0].tolist())) == 1


def test_fov_restricts_rays():
    world = make_world(25, 25, [(12, 15, 4), (12, 9, 4)])
    m = sense(world, RobotState(12, 12), SensorConfig(EYE, fov_deg=90.0), rng(), heading=0.0)
    assert set(m.hit_cell[m.hit_cell >= 0].tolist()) == {12 * 25 + 15}


@pytest.mark.parametrize(
    "kw",
    [
        {"true_confusion": np.full((5, 5), 0.3)},
        {"true_confusion": EYE, "ray_count": 0},
        {"true_confusion": EYE, "severity_scale": 1.5},
        {"true_confusion": EYE, "label_mode": "pixel"},
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SensorConfig(**kw)


def test_config_json_roundtrip():
    cfg = SensorConfig(diagonal_confusion(5, 0.7), r_max=8.0, ray_count=360, free_miss_rate=0.1)
    back = SensorConfig.from_json(cfg.to_json())
    assert back.to_json() == cfg.to_json()
