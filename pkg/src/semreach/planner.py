"""Online planning over conformalized maps.

Each iteration senses, updates the belief, builds prediction sets, assigns the
most conservative label per cell, and executes the first step of either an
exploit plan (A* to the goal) or an explore plan (toward uncertain cells).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from . import kernels
from .conformal import PredictionSetMap, conformalize, ua_sets, ui_sets
from .domain import (
    DIST_TOL,
    FREE,
    GridGeometry,
    RobotState,
    Scenario,
    SemanticClassTable,
    Task,
    path_satisfies_task,
    scenario_from_json,
    scenario_to_json,
)
from .mapper import BeliefMap, MapperConfig, update
from .sensor import SensorConfig, sense
from .worldgen import clearance_cells

MISSION_STREAM = 0x7E57
FRAMEWORKS = ("ours", "ui", "ua")
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PlannerConfig:
    h_max: Optional[int] = None  # None -> 20 * (width + height)
    # refuse to plan from a vertex that is itself inside a clearance zone
    strict_start: bool = False
    # consecutive in-place rescans allowed when neither planner finds a path
    max_wait: int = 5

    def __post_init__(self):
        if self.h_max is not None and self.h_max < 1:
            raise ValueError("h_max must be >= 1")
        if self.max_wait < 0:
            raise ValueError("max_wait must be >= 0")

    def horizon(self, geometry: GridGeometry) -> int:
        return self.h_max if self.h_max is not None else 20 * (geometry.width + geometry.height)

    def to_json(self) -> dict:
        return {"h_max": self.h_max, "strict_start": self.strict_start, "max_wait": self.max_wait}

    @classmethod
    def from_json(cls, d: dict) -> "PlannerConfig":
        return cls(
            h_max=d.get("h_max"),
            strict_start=bool(d.get("strict_start", False)),
            max_wait=int(d.get("max_wait", 5)),
        )


def assign_worst_case_labels(sets: PredictionSetMap, classes: SemanticClassTable) -> np.ndarray:
    """Per cell, the member class with the largest safety distance (lowest id on ties)."""
    score = np.where(sets.member, classes.distances[None, :], -1.0)
    return np.argmax(score, axis=1)


def admissible(labels: np.ndarray, geometry: GridGeometry, classes: SemanticClassTable) -> np.ndarray:
    return kernels.admissible_mask(
        np.asarray(labels, dtype=np.int64),
        clearance_cells(classes, geometry.resolution),
        geometry.width,
        geometry.height,
    )


def plan_exploit(
    x: RobotState,
    task: Task,
    labels: np.ndarray,
    geometry: GridGeometry,
    classes: SemanticClassTable,
    strict_start: bool = False,
    adm: Optional[np.ndarray] = None,
) -> Optional[np.ndarray]:
    """Cost-optimal 8-connected A* path (cell indices) to the goal disc through
    vertices keeping ``d_k + r_m`` from every labelled cell, or None."""
    if adm is None:
        adm = admissible(labels, geometry, classes)
    start = x.index(geometry)
    if strict_start and not adm[start]:
        return None
    path = kernels.astar(
        adm,
        geometry.width,
        geometry.height,
        start,
        task.goal_mask(geometry),
        float(task.goal_row),
        float(task.goal_col),
        task.radius_m / geometry.resolution,
    )
    return path if path.size else None


def _nearest(dist: np.ndarray, mask: np.ndarray) -> Optional[int]:
    cand = np.flatnonzero(mask & np.isfinite(dist))
    if cand.size == 0:
        return None
    d = dist[cand]
    return int(cand[d <= d.min() + 1e-9][0])


def plan_explore(
    x: RobotState,
    sets: PredictionSetMap,
    labels: np.ndarray,
    geometry: GridGeometry,
    classes: SemanticClassTable,
    adm: Optional[np.ndarray] = None,
    visited: Optional[np.ndarray] = None,
) -> Optional[np.ndarray]:
    """Path to the nearest admissible vertex bordering the clearance zone of
    a cell with a non-singleton set; failing that, to the nearest admissible
    vertex next to unobserved space; else None.

    ``visited`` (boolean per cell) removes already-visited vertices from the
    first tier, so the robot cannot shuttle between two vertices that both
    fail to resolve an occluded cell."""
    if adm is None:
        adm = admissible(labels, geometry, classes)
    w, h = geometry.width, geometry.height
    start = x.index(geometry)
    dist, parent = kernels.dijkstra(adm, w, h, start)
    reach = adm.copy()
    reach[start] = False

    target = None
    uncertain = np.flatnonzero(sets.observed & (sets.sizes > 1))
    if uncertain.size:
        clear = clearance_cells(classes, geometry.resolution)[labels[uncertain]]
        rows, cols = np.divmod(np.arange(w * h), w)
        ur, uc = np.divmod(uncertain, w)
        near = np.zeros(w * h, dtype=bool)
        for r, c, cl in zip(ur, uc, clear):
            near |= np.hypot(rows - r, cols - c) <= cl + SQRT2 + 1e-9
        if visited is not None:
            near &= ~visited
        target = _nearest(dist, reach & near)
    if target is None:
        unobs = (~sets.observed).reshape(h, w)
        if unobs.any():
            pad = np.pad(unobs, 1)
            frontier = np.zeros((h, w), dtype=bool)
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    frontier |= pad[1 + di:1 + di + h, 1 + dj:1 + dj + w]
            target = _nearest(dist, reach & frontier.reshape(-1) & sets.observed)
    if target is None:
        return None
    out = [target]
    while out[-1] != start:
        out.append(int(parent[out[-1]]))
    return np.asarray(out[::-1], dtype=np.int64)


# ---- traces -------------------------------------------------------------

@dataclass
class StepRecord:
    t: int
    state: tuple[int, int]
    mode: Optional[str]  # "exploit" | "explore" | "wait" (rescan in place) | None when stuck
    next_state: Optional[tuple[int, int]]
    set_hist: list[int]
    covered: bool
    labels_near: list[tuple[int, int]]  # non-free labelled cells that could constrain next_state
    meas: str

    def to_json(self) -> dict:
        return {
            "kind": "step",
            "t": self.t,
            "state": list(self.state),
            "mode": self.mode,
            "next": None if self.next_state is None else list(self.next_state),
            "set_hist": self.set_hist,
            "covered": self.covered,
            "labels": [list(p) for p in self.labels_near],
            "meas": self.meas,
        }

    @classmethod
    def from_json(cls, d: dict) -> "StepRecord":
        return cls(
            t=d["t"],
            state=tuple(d["state"]),
            mode=d["mode"],
            next_state=None if d["next"] is None else tuple(d["next"]),
            set_hist=list(d["set_hist"]),
            covered=bool(d["covered"]),
            labels_near=[tuple(p) for p in d["labels"]],
            meas=d["meas"],
        )


@dataclass
class MissionTrace:
    scenario_seed: int
    framework: str
    alpha: Optional[float]
    s_hat: Optional[float]
    sensor_seed: int
    states: list[tuple[int, int]] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    termination: str = "timeout"  # goal | timeout | stuck | error
    error: Optional[str] = None

    @property
    def modes(self) -> list[Optional[str]]:
        return [s.mode for s in self.steps]

    def robot_states(self) -> list[RobotState]:
        return [RobotState(*s) for s in self.states]

    def header(self) -> dict:
        return {
            "kind": "header",
            "scenario_seed": self.scenario_seed,
            "framework": self.framework,
            "alpha": self.alpha,
            "s_hat": self.s_hat,
            "sensor_seed": self.sensor_seed,
        }

    def footer(self) -> dict:
        return {"kind": "end", "termination": self.termination, "states": [list(s) for s in self.states], "error": self.error}


def write_traces(path: str | Path, items: Iterable[tuple[Scenario, MissionTrace]]) -> None:
    with open(path, "w") as fh:
        for scenario, trace in items:
            head = trace.header()
            head["scenario"] = scenario_to_json(scenario)
            fh.write(json.dumps(head, separators=(",", ":")) + "\n")
            for step in trace.steps:
                fh.write(json.dumps(step.to_json(), separators=(",", ":")) + "\n")
            fh.write(json.dumps(trace.footer(), separators=(",", ":")) + "\n")


def read_traces(path: str | Path) -> Iterator[tuple[Scenario, MissionTrace]]:
    scenario = trace = None
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            kind = d["kind"]
            if kind == "header":
                scenario = scenario_from_json(d["scenario"])
                trace = MissionTrace(d["scenario_seed"], d["framework"], d["alpha"], d["s_hat"], d["sensor_seed"])
            elif kind == "step":
                trace.steps.append(StepRecord.from_json(d))
            elif kind == "end":
                trace.termination = d["termination"]
                trace.states = [tuple(s) for s in d["states"]]
                trace.error = d.get("error")
                yield scenario, trace
                scenario = trace = None
            else:
                raise ValueError(f"unknown trace record kind {kind!r}")
    if trace is not None:
        raise ValueError("trace file ends inside a mission")


def verify_trace(trace: MissionTrace, scenario: Scenario) -> list[str]:
    """Re-check the trace invariants from recorded data alone."""
    geom = scenario.geometry
    classes = scenario.classes
    out = []
    if trace.termination == "error":
        return out
    states = trace.robot_states()
    if not states:
        return ["empty state sequence"]
    if states[0] != scenario.start:
        out.append("trace does not begin at the scenario start")
    for a, b in zip(states, states[1:]):
        if not geom.in_bounds(b.row, b.col):
            out.append(f"state {b} outside grid")
        if max(abs(a.row - b.row), abs(a.col - b.col)) != 1:
            out.append(f"step {a} -> {b} is not an 8-neighbour move")
    in_goal = scenario.task.contains(states[-1], geom)
    if in_goal != (trace.termination == "goal"):
        out.append(f"termination {trace.termination!r} inconsistent with final state")
    moves = [s for s in trace.steps if s.next_state is not None]
    if [tuple(s.next_state) for s in moves] != [tuple(s) for s in trace.states[1:]]:
        out.append("step records disagree with the state sequence")
    res = geom.resolution
    for s in moves:
        nr, nc = s.next_state
        for j, k in s.labels_near:
            r, c = divmod(j, geom.width)
            need = classes.safety_distances[k] + res
            if math.hypot(nr - r, nc - c) * res < need - DIST_TOL:
                out.append(f"t={s.t}: next state {s.next_state} within {need} m of cell {j} labelled {k}")
    if trace.termination == "goal" and all(s.covered for s in trace.steps):
        if not path_satisfies_task(states, scenario.world, scenario.task):
            out.append("all sets covered the truth and the goal was reached, yet the path is unsafe")
    return out


# ---- mission loop -------------------------------------------------------

def mission_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), MISSION_STREAM]))


def run_mission(
    scenario: Scenario,
    framework: str,
    sensor: SensorConfig,
    mapper: MapperConfig,
    planner: PlannerConfig = PlannerConfig(),
    s_hat: Optional[float] = None,
    alpha: Optional[float] = None,
    sensor_seed: Optional[int] = None,
) -> MissionTrace:
    """Run one mission. ``framework`` is "ours" (needs ``s_hat``), "ui"
    (needs ``alpha``) or "ua". The noise stream depends only on
    ``sensor_seed`` (default: scenario seed), so frameworks are paired."""
    geom = scenario.geometry
    classes = scenario.classes
    if framework not in FRAMEWORKS:
        raise ValueError(f"unknown framework {framework!r}")
    if framework == "ours" and s_hat is None:
        raise ValueError("framework 'ours' needs a calibrated s_hat")
    if framework == "ui" and alpha is None:
        raise ValueError("framework 'ui' needs alpha")
    if sensor.n_classes != classes.n_classes or mapper.n_classes != classes.n_classes:
        raise ValueError("sensor/mapper class count does not match the scenario class table")
    if classes.max_distance > sensor.r_max + 1e-9:
        raise ValueError("sensor range is below the largest safety distance")

    seed = scenario.seed if sensor_seed is None else sensor_seed
    rng = mission_rng(seed)
    trace = MissionTrace(scenario.seed, framework, alpha, s_hat, seed)
    truth = scenario.world.truth.astype(np.int64)
    task = scenario.task
    w = geom.width
    clear = clearance_cells(classes, geom.resolution)
    reach = int(math.ceil(clear.max()))
    belief = BeliefMap.fresh(geom, mapper)
    visited = np.zeros(geom.n_cells, dtype=bool)
    waited = 0

    x = scenario.start
    trace.states.append((x.row, x.col))
    heading = 0.0
    for t in range(planner.horizon(geom)):
        if task.contains(x, geom):
            break
        visited[x.index(geom)] = True
        meas = sense(scenario.world, x, sensor, rng, heading)
        belief = update(belief, meas, mapper)
        if framework == "ours":
            sets = conformalize(belief, s_hat, classes)
        elif framework == "ui":
            sets = ui_sets(belief, alpha)
        else:
            sets = ua_sets(belief)
        labels = assign_worst_case_labels(sets, classes)
        adm = admissible(labels, geom, classes)

        mode = "exploit"
        path = plan_exploit(x, task, labels, geom, classes, planner.strict_start, adm)
        if path is None:
            mode = "explore"
            path = plan_explore(x, sets, labels, geom, classes, adm, visited)
        if path is None:
            mode = "wait" if waited < planner.max_wait else None
        step = StepRecord(
            t=t,
            state=(x.row, x.col),
            mode=mode,
            next_state=None,
            set_hist=sets.size_histogram(),
            covered=sets.covers(truth),
            labels_near=[],
            meas=meas.digest(),
        )
        trace.steps.append(step)
        if path is None:
            if mode == "wait":
                waited += 1
                continue
            trace.termination = "stuck"
            return trace
        waited = 0
        nxt = int(path[1])
        nr, nc = divmod(nxt, w)
        r0, r1 = max(nr - reach, 0), min(nr + reach + 1, geom.height)
        c0, c1 = max(nc - reach, 0), min(nc + reach + 1, w)
        box = labels.reshape(geom.height, w)[r0:r1, c0:c1]
        br, bc = np.nonzero(box != FREE)
        step.labels_near = [(int((r0 + a) * w + c0 + b), int(box[a, b])) for a, b in zip(br, bc)]
        step.next_state = (nr, nc)
        heading = math.atan2(nr - x.row, nc - x.col)
        x = RobotState(nr, nc)
        trace.states.append((nr, nc))

    trace.termination = "goal" if task.contains(x, geom) else "timeout"
    return trace
