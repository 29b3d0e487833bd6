"""Scenario distribution: fixed tree rows, a randomly placed car and truck,
a person biased toward the trees, and random start/goal cells."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .domain import (
    FREE,
    GridGeometry,
    GroundTruthWorld,
    RobotState,
    Scenario,
    SemanticClassTable,
    Task,
    default_classes,
    validate_scenario,
)

WORLDGEN_STREAM = 0x5EED


class ScenarioGenerationError(RuntimeError):
    pass


def _default_trees() -> tuple[tuple[int, int], ...]:
    return tuple((r, c) for r in (6, 12, 18) for c in (27, 35, 43))


@dataclass(frozen=True)
class DistributionConfig:
    width: int = 70
    height: int = 25
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)
    classes: SemanticClassTable = field(default_factory=default_classes)
    tree_positions: tuple[tuple[int, int], ...] = field(default_factory=_default_trees)
    n_cars: int = 1
    car_length: int = 2
    n_trucks: int = 1
    truck_length: int = 3
    n_persons: int = 1
    person_bias: float = 0.7
    person_bias_radius: int = 2
    min_start_goal_m: float = 40.0
    goal_radius_m: float = 1.0
    retry_budget: int = 1000
    randomize_tree_layout: bool = False
    tree_count_range: tuple[int, int] = (6, 12)

    def __post_init__(self):
        if not 0.0 <= self.person_bias <= 1.0:
            raise ValueError("person_bias must lie in [0, 1]")
        if self.retry_budget < 1:
            raise ValueError("retry_budget must be >= 1")
        lo, hi = self.tree_count_range
        if lo < 0 or hi < lo:
            raise ValueError("bad tree_count_range")
        geom = self.geometry
        for r, c in self.tree_positions:
            if not geom.in_bounds(r, c):
                raise ValueError(f"tree at ({r}, {c}) outside grid")
        for name in ("car", "truck", "person", "tree"):
            if name not in self.classes.names:
                raise ValueError(f"class table lacks {name!r}")

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.width, self.height, self.resolution, tuple(self.origin))

    def with_ood(self, randomize_tree_layout: bool = True) -> "DistributionConfig":
        return replace(self, randomize_tree_layout=randomize_tree_layout)

    def to_json(self) -> dict:
        return {
            "geometry": self.geometry.to_json(),
            "classes": self.classes.to_json(),
            "tree_positions": [list(p) for p in self.tree_positions],
            "n_cars": self.n_cars,
            "car_length": self.car_length,
            "n_trucks": self.n_trucks,
            "truck_length": self.truck_length,
            "n_persons": self.n_persons,
            "person_bias": self.person_bias,
            "person_bias_radius": self.person_bias_radius,
            "min_start_goal_m": self.min_start_goal_m,
            "goal_radius_m": self.goal_radius_m,
            "retry_budget": self.retry_budget,
            "ood": {"randomize_tree_layout": self.randomize_tree_layout, "tree_count_range": list(self.tree_count_range)},
        }

    @classmethod
    def from_json(cls, d: dict) -> "DistributionConfig":
        kw = {}
        if "geometry" in d:
            g = GridGeometry.from_json(d["geometry"])
            kw.update(width=g.width, height=g.height, resolution=g.resolution, origin=g.origin)
        if "classes" in d:
            kw["classes"] = SemanticClassTable.from_json(d["classes"])
        if "tree_positions" in d:
            kw["tree_positions"] = tuple((int(r), int(c)) for r, c in d["tree_positions"])
        for key in (
            "n_cars", "car_length", "n_trucks", "truck_length", "n_persons",
            "person_bias_radius", "retry_budget",
        ):
            if key in d:
                kw[key] = int(d[key])
        for key in ("person_bias", "min_start_goal_m", "goal_radius_m"):
            if key in d:
                kw[key] = float(d[key])
        ood = d.get("ood", {})
        if "randomize_tree_layout" in ood:
            kw["randomize_tree_layout"] = bool(ood["randomize_tree_layout"])
        if "tree_count_range" in ood:
            kw["tree_count_range"] = tuple(int(v) for v in ood["tree_count_range"])
        return cls(**kw)


def load_distribution(path: str | Path) -> DistributionConfig:
    d = json.loads(Path(path).read_text())
    return DistributionConfig.from_json(d.get("distribution", d))


def clearance_cells(classes: SemanticClassTable, resolution: float) -> np.ndarray:
    """Per-class planning clearance ``d_k + r_m`` expressed in cells; 0 for free."""
    c = (classes.distances + resolution) / resolution
    c[FREE] = 0.0
    return c


class _Reject(Exception):
    pass


def _place_bar(truth, rng, geom, cls_id, length, reason):
    for _ in range(50):
        vertical = bool(rng.integers(2))
        h, w = (length, 1) if vertical else (1, length)
        r = int(rng.integers(0, geom.height - h + 1))
        c = int(rng.integers(0, geom.width - w + 1))
        block = truth[r:r + h, c:c + w]
        if np.all(block == FREE):
            block[...] = cls_id
            return
    raise _Reject(reason)


def _try_sample(cfg: DistributionConfig, rng: np.random.Generator) -> Scenario:
    geom = cfg.geometry
    classes = cfg.classes
    truth = np.zeros((geom.height, geom.width), dtype=np.int8)
    tree = classes.id_of("tree")

    if cfg.randomize_tree_layout:
        lo, hi = cfg.tree_count_range
        n_trees = int(rng.integers(lo, hi + 1))
        cells = rng.choice(geom.n_cells, size=min(n_trees, geom.n_cells), replace=False)
        truth.reshape(-1)[cells] = tree
    else:
        for r, c in cfg.tree_positions:
            truth[r, c] = tree

    for _ in range(cfg.n_cars):
        _place_bar(truth, rng, geom, classes.id_of("car"), cfg.car_length, "car does not fit without overlap")
    for _ in range(cfg.n_trucks):
        _place_bar(truth, rng, geom, classes.id_of("truck"), cfg.truck_length, "truck does not fit without overlap")

    person = classes.id_of("person")
    for _ in range(cfg.n_persons):
        free = truth == FREE
        pool = free
        tree_mask = truth == tree
        if tree_mask.any() and rng.random() < cfg.person_bias:
            rad = cfg.person_bias_radius
            near = np.zeros_like(free)
            for r, c in zip(*np.nonzero(tree_mask)):
                near[max(r - rad, 0):r + rad + 1, max(c - rad, 0):c + rad + 1] = True
            if np.any(near & free):
                pool = near & free
        cells = np.flatnonzero(pool)
        if cells.size == 0:
            raise _Reject("no free cell left for the person")
        truth.reshape(-1)[cells[rng.integers(cells.size)]] = person

    flat = truth.reshape(-1)
    world = GroundTruthWorld(geom, flat.copy(), classes)
    adm = kernels.admissible_mask(world.truth.astype(np.int64), clearance_cells(classes, geom.resolution), geom.width, geom.height)
    cand = np.flatnonzero(adm & (flat == FREE))
    if cand.size == 0:
        raise _Reject("no free cell keeps the planning clearance")
    start = int(cand[rng.integers(cand.size)])

    centers = geom.centers
    sep = np.hypot(*(centers[cand] - centers[start]).T)
    goals = cand[sep >= cfg.min_start_goal_m - 1e-9]
    if goals.size == 0:
        raise _Reject("no goal candidate at the minimum start-goal separation")
    goal = int(goals[rng.integers(goals.size)])
    task = Task(goal // geom.width, goal % geom.width, cfg.goal_radius_m)
    gmask = task.goal_mask(geom)
    if not np.all(adm[gmask]):
        raise _Reject("goal region intersects a clearance zone")

    dist, _ = kernels.dijkstra(adm, geom.width, geom.height, start)
    if not np.any(np.isfinite(dist[gmask])):
        raise _Reject("goal not reachable from start under ground-truth clearance")

    return Scenario(0, RobotState(start // geom.width, start % geom.width), world, task)


def sample_scenario(config: DistributionConfig, seed: int) -> Scenario:
    """Deterministic in (config, seed). Rejection-samples whole scenarios."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), WORLDGEN_STREAM]))
    reason = "unknown"
    for _ in range(config.retry_budget):
        try:
            s = _try_sample(config, rng)
        except _Reject as exc:
            reason = str(exc)
            continue
        s = Scenario(int(seed), s.start, s.world, s.task)
        validate_scenario(s)
        return s
    raise ScenarioGenerationError(f"seed {seed}: retry budget of {config.retry_budget} exhausted; last failure: {reason}")


def sample_batch(config: DistributionConfig, base_seed: int, n: int) -> list[Scenario]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [sample_scenario(config, base_seed + i) for i in range(n)]
