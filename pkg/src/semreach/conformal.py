"""Conformal calibration of semantic maps, plus the UA/UI baseline sets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .domain import FREE, RobotState, Scenario, SemanticClassTable
from .mapper import BeliefMap, MapperConfig, update
from .sensor import SensorConfig, sense
from .stats import beta_ppf
from .worldgen import clearance_cells

CALIB_STREAM = 0xCA1
PATHS_STREAM = 0xBA7
ARTIFACT_SCHEMA = 1
# guards 1 - (1 - p) round-off when thresholding at 1 - s_hat
MEMBERSHIP_TOL = 1e-12


# ---- prediction sets ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictionSetMap:
    """Membership matrix (M, K). Unobserved cells hold the implicit {free}."""

    member: np.ndarray
    observed: np.ndarray

    def set_of(self, j: int) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.member[j]).tolist())

    @property
    def sizes(self) -> np.ndarray:
        return self.member.sum(axis=1)

    def size_histogram(self) -> list[int]:
        """Counts of observed cells by set size 1..K."""
        k = self.member.shape[1]
        return np.bincount(self.sizes[self.observed], minlength=k + 1)[1:].tolist()

    def covers(self, truth: np.ndarray) -> bool:
        obs = np.flatnonzero(self.observed)
        return bool(np.all(self.member[obs, truth[obs]]))


def _finish(member: np.ndarray, observed: np.ndarray) -> PredictionSetMap:
    member[~observed] = False
    member[~observed, FREE] = True
    empty = ~member.any(axis=1)
    member[empty] = True
    return PredictionSetMap(member, observed.copy())


def conformalize(belief: BeliefMap, s_hat: float, classes: Optional[SemanticClassTable] = None) -> PredictionSetMap:
    """Keep every class whose probability reaches ``1 - s_hat``. Empty sets
    fall back to the full class set."""
    if not 0.0 <= s_hat <= 1.0:
        raise ValueError("s_hat must lie in [0, 1]")
    if classes is not None and classes.n_classes != belief.pmf.shape[1]:
        raise ValueError("class table does not match belief")
    member = belief.pmf >= (1.0 - s_hat) - MEMBERSHIP_TOL
    return _finish(member, belief.observed)


def ua_labels(belief: BeliefMap) -> np.ndarray:
    """Argmax label per cell (lowest id on ties); unobserved cells are free."""
    labels = np.argmax(belief.pmf, axis=1)
    labels[~belief.observed] = FREE
    return labels


def ua_sets(belief: BeliefMap) -> PredictionSetMap:
    member = np.zeros(belief.pmf.shape, dtype=bool)
    member[np.arange(member.shape[0]), ua_labels(belief)] = True
    return _finish(member, belief.observed)


def ui_sets(belief: BeliefMap, alpha: float) -> PredictionSetMap:
    """Shortest most-likely-first prefix reaching mass 1 - alpha, treating the
    PMFs as calibrated."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    pmf = belief.pmf
    order = np.argsort(-pmf, axis=1, kind="stable")
    cum = np.cumsum(np.take_along_axis(pmf, order, axis=1), axis=1)
    count = (cum < (1.0 - alpha) - MEMBERSHIP_TOL).sum(axis=1) + 1
    count = np.minimum(count, pmf.shape[1])
    in_prefix = np.arange(pmf.shape[1])[None, :] < count[:, None]
    member = np.zeros(pmf.shape, dtype=bool)
    np.put_along_axis(member, order, in_prefix, axis=1)
    return _finish(member, belief.observed)


# ---- quantiles ----------------------------------------------------------

def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """The ceil((D+1)(1-alpha))-th smallest score, or 1.0 past the end."""
    s = np.sort(np.asarray(scores, dtype=float))
    d = s.size
    if d == 0:
        raise ValueError("need at least one calibration score")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    k = math.ceil((d + 1) * (1.0 - alpha) - 1e-9)
    if k > d:
        return 1.0
    return float(s[max(k, 1) - 1])


def coverage_bound(d: int, v: int, delta: float) -> float:
    """delta-quantile of Beta(D+1-v, v): the coverage that holds with
    probability 1 - delta over the calibration draw."""
    return beta_ppf(delta, d + 1 - v, v)


def dataset_conditional_alpha(d: int, delta: float, target: float) -> float:
    """Largest alpha_hat = v/(D+1) whose Beta coverage bound reaches ``target``."""
    if d < 1:
        raise ValueError("D must be >= 1")
    if not 0.0 < delta < 1.0 or not 0.0 < target < 1.0:
        raise ValueError("delta and target must lie in (0, 1)")
    best = None
    for v in range(1, d + 1):
        if coverage_bound(d, v, delta) >= target:
            best = v
        else:
            break
    if best is None:
        raise ValueError(
            f"D={d} cannot certify coverage {target} at delta={delta}; "
            f"best achievable is {coverage_bound(d, 1, delta):.6f}"
        )
    return best / (d + 1)


# ---- calibration --------------------------------------------------------

def path_error(
    scenario: Scenario,
    path: Sequence[RobotState],
    sensor: SensorConfig,
    mapper: MapperConfig,
    rng: np.random.Generator,
) -> float:
    """Worst 1 - p_t(true label) over observed cells and steps along one path."""
    geom = scenario.geometry
    truth = scenario.world.truth.astype(np.int64)
    belief = BeliefMap.fresh(geom, mapper)
    worst = 0.0
    for x in path:
        if not geom.in_bounds(x.row, x.col):
            raise ValueError(f"calibration path leaves the grid at {x}")
        belief = update(belief, sense(scenario.world, x, sensor, rng), mapper)
        obs = np.flatnonzero(belief.observed)
        if obs.size:
            worst = max(worst, float(np.max(1.0 - belief.pmf[obs, truth[obs]])))
    return worst


def ncs_for_scenario(
    scenario: Scenario,
    paths: Sequence[Sequence[RobotState]],
    sensor: SensorConfig,
    mapper: MapperConfig,
    seed: Optional[int] = None,
) -> float:
    """Nonconformity score: worst mapping error over a finite path set.

    Each path replays with its own noise stream spawned from ``seed``
    (default: the scenario seed)."""
    if len(paths) == 0:
        raise ValueError("need at least one path")
    seed = scenario.seed if seed is None else seed
    streams = np.random.SeedSequence([int(seed) & (2**64 - 1), CALIB_STREAM]).spawn(len(paths))
    return max(path_error(scenario, p, sensor, mapper, np.random.default_rng(ss)) for p, ss in zip(paths, streams))


def _to_states(idx: np.ndarray, width: int) -> list[RobotState]:
    return [RobotState(int(j) // width, int(j) % width) for j in idx]


def generate_calibration_paths(scenario: Scenario, count: int, rng: Optional[np.random.Generator] = None) -> list[list[RobotState]]:
    """Ground-truth shortest safe path plus ``count - 1`` distinct detours
    through random free waypoints."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence([int(scenario.seed) & (2**64 - 1), PATHS_STREAM]))
    geom = scenario.geometry
    w, h = geom.width, geom.height
    truth = scenario.world.truth.astype(np.int64)
    adm = kernels.admissible_mask(truth, clearance_cells(scenario.classes, geom.resolution), w, h)
    start = scenario.start.index(geom)
    gmask = scenario.task.goal_mask(geom)
    t = scenario.task
    radius = t.radius_m / geom.resolution

    first = kernels.astar(adm, w, h, start, gmask, float(t.goal_row), float(t.goal_col), radius)
    if first.size == 0:
        raise ValueError(f"scenario {scenario.seed}: no ground-truth feasible path")
    paths = [first]
    seen = {first.tobytes()}

    dist, _ = kernels.dijkstra(adm, w, h, start)
    pool = np.flatnonzero(np.isfinite(dist) & adm)
    tries = 0
    while len(paths) < count:
        tries += 1
        if tries > 50 * count:
            raise ValueError(f"scenario {scenario.seed}: could not find {count} distinct calibration paths")
        wp = int(pool[rng.integers(pool.size)])
        wmask = np.zeros(w * h, dtype=bool)
        wmask[wp] = True
        leg1 = kernels.astar(adm, w, h, start, wmask, float(wp // w), float(wp % w), 0.0)
        leg2 = kernels.astar(adm, w, h, wp, gmask, float(t.goal_row), float(t.goal_col), radius)
        if leg1.size == 0 or leg2.size == 0:
            continue
        p = np.concatenate([leg1, leg2[1:]])
        key = p.tobytes()
        if key in seen:
            continue
        seen.add(key)
        paths.append(p)
    return [_to_states(p, w) for p in paths]


# ---- artifact -----------------------------------------------------------

@dataclass
class CalibrationArtifact:
    scores: list[float]
    alpha: float
    alpha_used: float
    quantile: float
    mode: str = "marginal"
    delta: Optional[float] = None
    paths_per_scenario: int = 10
    config_hash: str = ""
    base_seed: int = 0
    schema_version: int = ARTIFACT_SCHEMA
    extra: dict = field(default_factory=dict)

    @property
    def D(self) -> int:
        return len(self.scores)

    def quantile_for(self, alpha: float) -> float:
        """Recompute the quantile for another miscoverage level, same mode."""
        return conformal_quantile(self.scores, resolve_alpha(len(self.scores), alpha, self.mode, self.delta))

    def to_json(self) -> dict:
        d = asdict(self)
        d["D"] = self.D
        if not d["extra"]:
            del d["extra"]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CalibrationArtifact":
        if d.get("schema_version") != ARTIFACT_SCHEMA:
            raise ValueError(f"unsupported artifact schema_version {d.get('schema_version')!r}")
        d = dict(d)
        d.pop("D", None)
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationArtifact":
        return cls.from_json(json.loads(Path(path).read_text()))


def resolve_alpha(d: int, alpha: float, mode: str, delta: Optional[float]) -> float:
    if mode == "marginal":
        return alpha
    if mode == "dataset_conditional":
        if delta is None:
            raise ValueError("dataset_conditional mode needs delta")
        return dataset_conditional_alpha(d, delta, 1.0 - alpha)
    raise ValueError(f"unknown calibration mode {mode!r}")


def make_artifact(scores, alpha, mode="marginal", delta=None, **meta) -> CalibrationArtifact:
    scores = [float(s) for s in scores]
    alpha_used = resolve_alpha(len(scores), alpha, mode, delta)
    return CalibrationArtifact(
        scores=scores,
        alpha=alpha,
        alpha_used=alpha_used,
        quantile=conformal_quantile(scores, alpha_used),
        mode=mode,
        delta=delta,
        **meta,
    )
