"""Core value types: grid geometry, semantic classes, scenarios and the
ground-truth reach-avoid check."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
FREE = 0
# tolerance on metric comparisons between cell centres
DIST_TOL = 1e-9


@dataclass(frozen=True)
class SemanticClassTable:
    """Ordered class table. Class 0 is free space with safety distance 0."""

    names: tuple[str, ...]
    safety_distances: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) != len(self.safety_distances):
            raise ValueError("names and safety_distances differ in length")
        if len(self.names) < 2:
            raise ValueError("need free space plus at least one semantic class")
        if self.safety_distances[FREE] != 0.0:
            raise ValueError("class 0 must be free space with safety distance 0")
        if any(d < 0 for d in self.safety_distances):
            raise ValueError("safety distances must be non-negative")
        if sum(d == 0.0 for d in self.safety_distances) != 1:
            raise ValueError("exactly one class may have safety distance 0 (free space)")

    @property
    def n_classes(self) -> int:
        return len(self.names)

    @property
    def free_class_id(self) -> int:
        return FREE

    @property
    def max_distance(self) -> float:
        return max(self.safety_distances)

    @cached_property
    def distances(self) -> np.ndarray:
        return np.asarray(self.safety_distances, dtype=float)

    def id_of(self, name: str) -> int:
        return self.names.index(name)

    def to_json(self) -> list[dict]:
        return [{"id": i, "name": n, "d_m": d} for i, (n, d) in enumerate(zip(self.names, self.safety_distances))]

    @classmethod
    def from_json(cls, rows: Sequence[dict]) -> "SemanticClassTable":
        rows = sorted(rows, key=lambda r: r["id"])
        if [r["id"] for r in rows] != list(range(len(rows))):
            raise ValueError("class ids must be contiguous from 0")
        return cls(tuple(r["name"] for r in rows), tuple(float(r["d_m"]) for r in rows))


def default_classes() -> SemanticClassTable:
    return SemanticClassTable(
        names=("free", "car", "truck", "person", "tree"),
        safety_distances=(0.0, 1.0, 2.0, 4.0, 0.5),
    )


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def index(self, row: int, col: int) -> int:
        if not self.in_bounds(row, col):
            raise IndexError(f"cell ({row}, {col}) outside {self.height}x{self.width} grid")
        return row * self.width + col

    def rowcol(self, j: int) -> tuple[int, int]:
        if not 0 <= j < self.n_cells:
            raise IndexError(f"cell index {j} out of range")
        return divmod(int(j), self.width)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    @cached_property
    def centers(self) -> np.ndarray:
        """(M, 2) array of cell centres in metres, ordered (x, y)."""
        rows, cols = np.divmod(np.arange(self.n_cells), self.width)
        return np.column_stack([self.origin[0] + cols * self.resolution, self.origin[1] + rows * self.resolution])

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height, "resolution_m": self.resolution, "origin": list(self.origin)}

    @classmethod
    def from_json(cls, d: dict) -> "GridGeometry":
        return cls(int(d["width"]), int(d["height"]), float(d["resolution_m"]), tuple(float(v) for v in d["origin"]))


def cell_center(geometry: GridGeometry, j: int) -> tuple[float, float]:
    row, col = geometry.rowcol(j)
    return (geometry.origin[0] + col * geometry.resolution, geometry.origin[1] + row * geometry.resolution)


def index_of(geometry: GridGeometry, position: tuple[float, float]) -> int:
    """Index of the cell containing a world position (metres)."""
    col = int(np.floor((position[0] - geometry.origin[0]) / geometry.resolution + 0.5))
    row = int(np.floor((position[1] - geometry.origin[1]) / geometry.resolution + 0.5))
    return geometry.index(row, col)


@dataclass(frozen=True)
class RobotState:
    row: int
    col: int

    def index(self, geometry: GridGeometry) -> int:
        return geometry.index(self.row, self.col)

    def position(self, geometry: GridGeometry) -> tuple[float, float]:
        return cell_center(geometry, self.index(geometry))


@dataclass(frozen=True, eq=False)
class GroundTruthWorld:
    geometry: GridGeometry
    truth: np.ndarray
    classes: SemanticClassTable = field(default_factory=default_classes)

    def __post_init__(self):
        truth = np.asarray(self.truth, dtype=np.int8).reshape(-1)
        if truth.shape[0] != self.geometry.n_cells:
            raise ValueError("truth length does not match grid")
        if truth.size and (truth.min() < 0 or truth.max() >= self.classes.n_classes):
            raise ValueError("truth contains an unknown class id")
        truth.setflags(write=False)
        object.__setattr__(self, "truth", truth)

    def __eq__(self, other):
        return (
            isinstance(other, GroundTruthWorld)
            and self.geometry == other.geometry
            and self.classes == other.classes
            and np.array_equal(self.truth, other.truth)
        )

    @cached_property
    def object_cells(self) -> np.ndarray:
        return np.flatnonzero(self.truth != FREE)


@dataclass(frozen=True)
class Task:
    """Reach the disc of ``radius_m`` around the goal cell centre."""

    goal_row: int
    goal_col: int
    radius_m: float = 1.0

    def goal_mask(self, geometry: GridGeometry) -> np.ndarray:
        cx, cy = cell_center(geometry, geometry.index(self.goal_row, self.goal_col))
        d = np.hypot(geometry.centers[:, 0] - cx, geometry.centers[:, 1] - cy)
        return d <= self.radius_m + DIST_TOL

    def contains(self, state: RobotState, geometry: GridGeometry) -> bool:
        d = np.hypot(state.row - self.goal_row, state.col - self.goal_col) * geometry.resolution
        return bool(d <= self.radius_m + DIST_TOL)


@dataclass(frozen=True, eq=False)
class Scenario:
    seed: int
    start: RobotState
    world: GroundTruthWorld
    task: Task

    @property
    def geometry(self) -> GridGeometry:
        return self.world.geometry

    @property
    def classes(self) -> SemanticClassTable:
        return self.world.classes

    def __eq__(self, other):
        return (
            isinstance(other, Scenario)
            and self.seed == other.seed
            and self.start == other.start
            and self.task == other.task
            and self.world == other.world
        )


def _safety_margins(states: Iterable[RobotState], world: GroundTruthWorld) -> np.ndarray:
    """Per state, min over object cells of (distance - d_k). +inf if no objects."""
    geom = world.geometry
    idx = np.array([s.index(geom) for s in states], dtype=np.int64)
    obj = world.object_cells
    if obj.size == 0:
        return np.full(idx.shape[0], np.inf)
    pos = geom.centers[idx]
    opos = geom.centers[obj]
    dist = np.hypot(pos[:, None, 0] - opos[None, :, 0], pos[:, None, 1] - opos[None, :, 1])
    need = world.classes.distances[world.truth[obj]]
    return (dist - need[None, :]).min(axis=1)


def states_safe(states: Sequence[RobotState], world: GroundTruthWorld) -> bool:
    if len(states) == 0:
        return True
    return bool(np.all(_safety_margins(states, world) >= -DIST_TOL))


def path_satisfies_task(path: Sequence[RobotState], world: GroundTruthWorld, task: Task) -> bool:
    """Ground-truth reach-avoid check: end in the goal disc and keep every class
    distance from every occupied cell centre along the way."""
    if len(path) == 0:
        raise ValueError("path must be nonempty")
    if not task.contains(path[-1], world.geometry):
        return False
    return states_safe(path, world)


def scenario_problems(scenario: Scenario) -> list[str]:
    geom = scenario.geometry
    problems = []
    if not geom.in_bounds(scenario.start.row, scenario.start.col):
        return ["start outside grid"]
    if not geom.in_bounds(scenario.task.goal_row, scenario.task.goal_col):
        return ["goal outside grid"]
    if not states_safe([scenario.start], scenario.world):
        problems.append("start violates a safety distance")
    if scenario.world.truth[scenario.start.index(geom)] != FREE:
        problems.append("start cell is occupied")
    goal = np.flatnonzero(scenario.task.goal_mask(geom))
    if goal.size == 0:
        problems.append("goal region is empty")
    elif np.any(scenario.world.truth[goal] != FREE):
        problems.append("goal region contains occupied cells")
    else:
        states = [RobotState(*geom.rowcol(j)) for j in goal]
        if not states_safe(states, scenario.world):
            problems.append("goal region violates a safety distance")
    return problems


def validate_scenario(scenario: Scenario) -> None:
    problems = scenario_problems(scenario)
    if problems:
        raise ValueError(f"invalid scenario (seed {scenario.seed}): " + "; ".join(problems))


# ---- JSON ---------------------------------------------------------------

def scenario_to_json(s: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": int(s.seed),
        "geometry": s.geometry.to_json(),
        "truth": s.world.truth.astype(int).tolist(),
        "classes": s.classes.to_json(),
        "start": {"row": s.start.row, "col": s.start.col},
        "goal": {"row": s.task.goal_row, "col": s.task.goal_col, "radius_m": s.task.radius_m},
    }


def scenario_from_json(d: dict) -> Scenario:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema_version {d.get('schema_version')!r}")
    geom = GridGeometry.from_json(d["geometry"])
    classes = SemanticClassTable.from_json(d["classes"])
    world = GroundTruthWorld(geom, np.asarray(d["truth"], dtype=np.int8), classes)
    g = d["goal"]
    return Scenario(
        seed=int(d["seed"]),
        start=RobotState(int(d["start"]["row"]), int(d["start"]["col"])),
        world=world,
        task=Task(int(g["row"]), int(g["col"]), float(g["radius_m"])),
    )


def dump_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_json(s), separators=(",", ":")))


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_json(json.loads(Path(path).read_text()))
