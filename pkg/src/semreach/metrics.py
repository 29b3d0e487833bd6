"""Per-mission metrics and per-framework aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from .domain import Scenario, path_satisfies_task
from .planner import FRAMEWORKS, MissionTrace
from .stats import wilson_interval

CSV_COLUMNS = ["framework", "alpha", "n", "sr_map_pct", "sr_mission_pct", "path_len_m", "explore_pct", "ci_low", "ci_high"]


@dataclass(frozen=True)
class MissionMetrics:
    framework: str
    alpha: Optional[float]
    seed: int
    sr_map: int
    sr_mission: int
    path_length_m: float
    exploration_proportion: float
    termination: str
    n_steps: int = 0


def score_mission(trace: MissionTrace, scenario: Scenario) -> MissionMetrics:
    geom = scenario.geometry
    if trace.scenario_seed != scenario.seed:
        raise ValueError("trace and scenario seeds differ")
    if trace.termination == "error":
        return MissionMetrics(trace.framework, trace.alpha, scenario.seed, 0, 0, 0.0, 0.0, "error")
    for r, c in trace.states:
        if not geom.in_bounds(r, c):
            raise ValueError("trace state outside the scenario grid")
    states = trace.robot_states()
    sr_map = int(all(s.covered for s in trace.steps))
    ok = trace.termination == "goal" and path_satisfies_task(states, scenario.world, scenario.task)
    length = sum(math.hypot(a[0] - b[0], a[1] - b[1]) for a, b in zip(trace.states, trace.states[1:])) * geom.resolution
    moves = [s for s in trace.steps if s.next_state is not None]
    explore = sum(s.mode == "explore" for s in moves) / len(moves) if moves else 0.0
    return MissionMetrics(
        trace.framework, trace.alpha, scenario.seed, sr_map, int(ok), length, explore, trace.termination, len(moves)
    )


@dataclass(frozen=True)
class ReportRow:
    framework: str
    alpha: Optional[float]
    n: int
    sr_map_pct: float
    sr_mission_pct: float
    path_len_m: Optional[float]
    explore_pct: Optional[float]
    ci_low: float
    ci_high: float
    path_len_se: Optional[float] = None
    explore_se: Optional[float] = None


def _mean_se(xs: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    if not xs:
        return None, None
    m = sum(xs) / len(xs)
    if len(xs) < 2:
        return m, 0.0
    var = sum((x - m) ** 2 for x in xs) / (len(xs) - 1)
    return m, math.sqrt(var / len(xs))


def _group_key(m: MissionMetrics):
    order = FRAMEWORKS.index(m.framework) if m.framework in FRAMEWORKS else len(FRAMEWORKS)
    alpha = None if m.framework == "ua" else m.alpha
    return order, m.framework, -1.0 if alpha is None else alpha


def aggregate(metrics: Sequence[MissionMetrics]) -> list[ReportRow]:
    """One row per (framework, alpha); UA is alpha-independent. Path length and
    exploration share average over successful missions only."""
    if not metrics:
        raise ValueError("nothing to aggregate")
    groups: dict = {}
    for m in metrics:
        groups.setdefault(_group_key(m), []).append(m)
    rows = []
    for key in sorted(groups):
        ms = sorted(groups[key], key=lambda m: m.seed)
        n = len(ms)
        wins = sum(m.sr_mission for m in ms)
        lo, hi = wilson_interval(wins, n)
        good = [m for m in ms if m.sr_mission]
        plen, plen_se = _mean_se([m.path_length_m for m in good])
        expl, expl_se = _mean_se([m.exploration_proportion for m in good])
        rows.append(
            ReportRow(
                framework=key[1],
                alpha=None if key[2] < 0 else key[2],
                n=n,
                sr_map_pct=100.0 * sum(m.sr_map for m in ms) / n,
                sr_mission_pct=100.0 * wins / n,
                path_len_m=plen,
                explore_pct=None if expl is None else 100.0 * expl,
                ci_low=100.0 * lo,
                ci_high=100.0 * hi,
                path_len_se=plen_se,
                explore_se=None if expl_se is None else 100.0 * expl_se,
            )
        )
    return rows


def _fmt(v) -> str:
    return "" if v is None else f"{v:.2f}"


def rows_to_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([
            r.framework,
            "NA" if r.alpha is None else _fmt(r.alpha),
            r.n,
            _fmt(r.sr_map_pct),
            _fmt(r.sr_mission_pct),
            _fmt(r.path_len_m),
            _fmt(r.explore_pct),
            _fmt(r.ci_low),
            _fmt(r.ci_high),
        ])
    return buf.getvalue()


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def metrics_to_dicts(metrics: Sequence[MissionMetrics]) -> list[dict]:
    return [asdict(m) for m in metrics]


def plot_svg(rows: Sequence[dict], path: str | Path) -> None:
    """Success rates against alpha, one line per framework (UA as a flat line)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    alphas = sorted({float(r["alpha"]) for r in rows if r["alpha"] != "NA"})
    for fw in FRAMEWORKS:
        sel = [r for r in rows if r["framework"] == fw]
        if not sel:
            continue
        if fw == "ua":
            for col, ls in (("sr_mission_pct", "-"), ("sr_map_pct", ":")):
                ax.axhline(float(sel[0][col]), color="grey", ls=ls, label=f"ua {col[:-4]}")
            continue
        sel.sort(key=lambda r: float(r["alpha"]))
        xs = [1 - float(r["alpha"]) for r in sel]
        ax.plot(xs, [float(r["sr_mission_pct"]) for r in sel], "o-", label=f"{fw} mission")
        ax.plot(xs, [float(r["sr_map_pct"]) for r in sel], "s:", label=f"{fw} map")
    if alphas:
        ax.plot([1 - a for a in alphas], [100 * (1 - a) for a in alphas], "k--", lw=0.8, label="1 - alpha")
    ax.set_xlabel("1 - alpha")
    ax.set_ylabel("success rate (%)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
