"""Experiment orchestration: calibration, paired test campaigns, OOD runs."""
from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing as mp
import os
import traceback
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .conformal import CalibrationArtifact, generate_calibration_paths, make_artifact, ncs_for_scenario
from .domain import Scenario
from .mapper import MapperConfig
from .metrics import MissionMetrics, ReportRow, aggregate, metrics_to_dicts, rows_to_csv, score_mission
from .planner import FRAMEWORKS, MissionTrace, PlannerConfig, run_mission, verify_trace, write_traces
from .sensor import SensorConfig, diagonal_confusion
from .worldgen import DistributionConfig, sample_scenario

log = logging.getLogger(__name__)

CONFIG_SCHEMA = 1
WORKERS_ENV = "SEMREACH_WORKERS"


class ConfigMismatchError(RuntimeError):
    pass


def default_true_confusion() -> np.ndarray:
    # rows: true class (free, car, truck, person, tree); columns: reported label
    return np.array([
        [0.75, 0.0625, 0.0625, 0.0625, 0.0625],
        [0.05, 0.75, 0.10, 0.05, 0.05],
        [0.05, 0.15, 0.75, 0.03, 0.02],
        [0.05, 0.05, 0.03, 0.75, 0.12],
        [0.05, 0.05, 0.05, 0.10, 0.75],
    ])


@dataclass(frozen=True)
class CalibrationSettings:
    D: int = 50
    paths_per_scenario: int = 10
    alpha: float = 0.1
    mode: str = "dataset_conditional"
    delta: Optional[float] = 0.1

    def to_json(self) -> dict:
        return {"D": self.D, "paths_per_scenario": self.paths_per_scenario, "alpha": self.alpha, "mode": self.mode, "delta": self.delta}

    @classmethod
    def from_json(cls, d: dict) -> "CalibrationSettings":
        return cls(
            D=int(d.get("D", 50)),
            paths_per_scenario=int(d.get("paths_per_scenario", 10)),
            alpha=float(d.get("alpha", 0.1)),
            mode=d.get("mode", "dataset_conditional"),
            delta=d.get("delta", 0.1),
        )


@dataclass(frozen=True)
class OODSettings:
    randomize_tree_layout: bool = False
    tree_count_range: tuple[int, int] = (6, 12)
    severity_scale: float = 0.0

    @property
    def active(self) -> bool:
        return self.randomize_tree_layout or self.severity_scale > 0

    def to_json(self) -> dict:
        return {
            "randomize_tree_layout": self.randomize_tree_layout,
            "tree_count_range": list(self.tree_count_range),
            "severity_scale": self.severity_scale,
        }

    @classmethod
    def from_json(cls, d: dict) -> "OODSettings":
        return cls(
            bool(d.get("randomize_tree_layout", False)),
            tuple(int(v) for v in d.get("tree_count_range", (6, 12))),
            float(d.get("severity_scale", 0.0)),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: DistributionConfig = field(default_factory=DistributionConfig)
    sensor: SensorConfig = field(default_factory=lambda: SensorConfig(default_true_confusion()))
    mapper: MapperConfig = field(default_factory=lambda: MapperConfig(diagonal_confusion(5, 0.95)))
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    ood: OODSettings = field(default_factory=OODSettings)
    workers: Optional[int] = None

    def to_json(self) -> dict:
        dist = self.distribution.to_json()
        dist.pop("ood")
        sensor = self.sensor.to_json()
        sensor.pop("severity_scale")
        return {
            "schema_version": CONFIG_SCHEMA,
            "distribution": dist,
            "sensor": sensor,
            "mapper": self.mapper.to_json(),
            "planner": self.planner.to_json(),
            "calibration": self.calibration.to_json(),
            "ood": self.ood.to_json(),
            "workers": self.workers,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        if d.get("schema_version", CONFIG_SCHEMA) != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config schema_version {d.get('schema_version')!r}")
        dist = dict(d.get("distribution", {}))
        dist.pop("ood", None)
        kw = {"distribution": DistributionConfig.from_json(dist)}
        if "sensor" in d:
            sensor = dict(d["sensor"])
            sensor.pop("severity_scale", None)
            kw["sensor"] = SensorConfig.from_json(sensor)
        if "mapper" in d:
            kw["mapper"] = MapperConfig.from_json(d["mapper"])
        if "planner" in d:
            kw["planner"] = PlannerConfig.from_json(d["planner"])
        if "calibration" in d:
            kw["calibration"] = CalibrationSettings.from_json(d["calibration"])
        if "ood" in d:
            kw["ood"] = OODSettings.from_json(d["ood"])
        kw["workers"] = d.get("workers")
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @property
    def config_hash(self) -> str:
        """Hash of everything that determines the scenario and noise
        distribution (distribution, sensor, mapper). OOD knobs are excluded."""
        d = self.to_json()
        core = {k: d[k] for k in ("distribution", "sensor", "mapper")}
        blob = json.dumps(core, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def effective(self, ood: bool) -> tuple[DistributionConfig, SensorConfig]:
        if not ood:
            return self.distribution, self.sensor
        dist = replace(
            self.distribution,
            randomize_tree_layout=self.ood.randomize_tree_layout,
            tree_count_range=self.ood.tree_count_range,
        )
        return dist, replace(self.sensor, severity_scale=self.ood.severity_scale)


def n_workers(config: ExperimentConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    if config.workers:
        return max(1, int(config.workers))
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


# ---- worker side --------------------------------------------------------

_W: dict = {}


def _init_worker(cfg_json: dict, ood: bool) -> None:
    cfg = ExperimentConfig.from_json(cfg_json)
    dist, sensor = cfg.effective(ood)
    _W.clear()
    _W.update(cfg=cfg, dist=dist, sensor=sensor)
    _scenario.cache_clear()


@lru_cache(maxsize=64)
def _scenario(seed: int) -> Scenario:
    return sample_scenario(_W["dist"], seed)


def _calib_job(seed: int) -> float:
    cfg = _W["cfg"]
    try:
        s = _scenario(seed)
        paths = generate_calibration_paths(s, cfg.calibration.paths_per_scenario)
        return ncs_for_scenario(s, paths, _W["sensor"], cfg.mapper)
    except Exception as exc:
        raise RuntimeError(f"calibration scenario seed {seed}: {exc}") from exc


def _mission_job(item):
    idx, seed, fw, alpha, s_hat, keep = item
    cfg = _W["cfg"]
    scenario = _scenario(seed)
    try:
        trace = run_mission(scenario, fw, _W["sensor"], cfg.mapper, cfg.planner, s_hat=s_hat, alpha=alpha)
    except Exception:
        trace = MissionTrace(seed, fw, alpha, s_hat, seed, states=[(scenario.start.row, scenario.start.col)])
        trace.termination = "error"
        trace.error = traceback.format_exc(limit=5)
    metrics = score_mission(trace, scenario)
    return idx, metrics, (trace if keep else None), verify_trace(trace, scenario)


def _map(fn, items, cfg: ExperimentConfig, ood: bool, workers: Optional[int] = None):
    workers = n_workers(cfg) if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        _init_worker(cfg.to_json(), ood)
        return [fn(it) for it in items]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    with ctx.Pool(workers, initializer=_init_worker, initargs=(cfg.to_json(), ood)) as pool:
        return pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers)))


# ---- coordinator side ---------------------------------------------------

def calibration_scores(config: ExperimentConfig, base_seed: int, workers: Optional[int] = None) -> list[float]:
    seeds = [base_seed + i for i in range(config.calibration.D)]
    return _map(_calib_job, seeds, config, False, workers)


def calibrate(config: ExperimentConfig, base_seed: int, out: Optional[str | Path] = None, workers: Optional[int] = None) -> CalibrationArtifact:
    cal = config.calibration
    scores = calibration_scores(config, base_seed, workers)
    art = make_artifact(
        scores,
        cal.alpha,
        mode=cal.mode,
        delta=cal.delta if cal.mode == "dataset_conditional" else None,
        paths_per_scenario=cal.paths_per_scenario,
        config_hash=config.config_hash,
        base_seed=base_seed,
    )
    if out is not None:
        art.save(out)
    return art


@dataclass
class CampaignResult:
    metrics: list[MissionMetrics]
    rows: list[ReportRow]
    csv: str
    s_hats: dict
    traces: list = field(default_factory=list)  # (Scenario, MissionTrace) pairs when kept
    ood: bool = False
    violations: dict = field(default_factory=dict)  # (seed, framework, alpha) -> verify_trace messages


def _alpha_key(alpha: Optional[float]) -> str:
    return "NA" if alpha is None else f"{alpha:.2f}"


def run_campaign(
    config: ExperimentConfig,
    artifact: Optional[CalibrationArtifact],
    frameworks: Sequence[str] = FRAMEWORKS,
    alphas: Sequence[float] = (0.1,),
    n_test: int = 61,
    base_seed: int = 1_000_000,
    out_dir: Optional[str | Path] = None,
    keep_traces: bool = False,
    ood: bool = False,
    workers: Optional[int] = None,
) -> CampaignResult:
    """Run every framework/alpha on the same test scenarios and noise seeds."""
    for fw in frameworks:
        if fw not in FRAMEWORKS:
            raise ValueError(f"unknown framework {fw!r}")
    if n_test < 1:
        raise ValueError("n_test must be >= 1")
    s_hats = {}
    if "ours" in frameworks:
        if artifact is None:
            raise ValueError("framework 'ours' needs a calibration artifact")
        if artifact.config_hash != config.config_hash:
            raise ConfigMismatchError(
                f"artifact config hash {artifact.config_hash} does not match test config {config.config_hash}"
            )
        s_hats = {a: artifact.quantile_for(a) for a in alphas}

    keep = keep_traces or out_dir is not None
    items = []
    for i in range(n_test):
        seed = base_seed + i
        for fw in frameworks:
            for a in ([None] if fw == "ua" else alphas):
                items.append((len(items), seed, fw, a, s_hats.get(a) if fw == "ours" else None, keep))
    results = sorted(_map(_mission_job, items, config, ood, workers), key=lambda r: r[0])
    metrics = [r[1] for r in results]
    rows = aggregate(metrics)
    csv_text = rows_to_csv(rows)
    traces = []
    if keep:
        by_seed = {}
        for r in results:
            seed = r[2].scenario_seed
            if seed not in by_seed:
                by_seed[seed] = sample_scenario(config.effective(ood)[0], seed)
            traces.append((by_seed[seed], r[2]))
    errored = sum(m.termination == "error" for m in metrics)
    if errored:
        log.warning("%d of %d missions errored", errored, len(metrics))

    violations = {(m.seed, m.framework, m.alpha): r[3] for m, r in zip(metrics, results) if r[3]}
    if violations:
        log.warning("%d missions failed trace verification", len(violations))
    result = CampaignResult(
        metrics, rows, csv_text, {_alpha_key(a): v for a, v in s_hats.items()}, traces if keep_traces else [], ood, violations
    )
    if out_dir is not None:
        _write_campaign(Path(out_dir), config, result, traces, frameworks, alphas, n_test, base_seed)
    return result


def _write_campaign(out: Path, config, result: CampaignResult, traces, frameworks, alphas, n_test, base_seed) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.csv)
    with open(out / "missions.jsonl", "w") as fh:
        for d in metrics_to_dicts(result.metrics):
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    meta = {
        "frameworks": list(frameworks),
        "alphas": list(alphas),
        "n_test": n_test,
        "base_seed": base_seed,
        "config_hash": config.config_hash,
        "s_hat": result.s_hats,
        "ood": result.ood,
    }
    (out / "campaign.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    groups: dict = {}
    for scenario, trace in traces:
        groups.setdefault((trace.framework, _alpha_key(trace.alpha)), []).append((scenario, trace))
    for (fw, a), items in groups.items():
        name = fw if fw == "ua" else f"{fw}_a{a}"
        write_traces(tdir / f"{name}.jsonl", items)


def run_ood(
    config: ExperimentConfig,
    artifact: Optional[CalibrationArtifact],
    **kwargs,
) -> CampaignResult:
    """Same as ``run_campaign`` but with the config's OOD knobs applied. The
    artifact hash is checked against the in-distribution part of the config."""
    return run_campaign(config, artifact, ood=True, **kwargs)
