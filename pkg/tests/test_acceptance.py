"""End-to-end acceptance checks. Heavy campaigns run once per module and are
shared between criteria; each criterion prints one PASS/FAIL line."""
import math
import random
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from oracles import beta_ppf_quadrature, dataset_conditional_alpha_oracle, order_statistic_quantile
from semreach.conformal import conformal_quantile, coverage_bound, dataset_conditional_alpha
from semreach.harness import ExperimentConfig, calibrate, run_campaign

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
REPS = 20
N_TEST = 100
PAIRED_N = 200
ALPHAS = (0.15, 0.1, 0.05)


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")


def _row(res, fw, alpha=None):
    [row] = [r for r in res.rows if r.framework == fw and (fw == "ua" or r.alpha == alpha)]
    return row


@pytest.fixture(scope="module")
def default_cfg():
    return ExperimentConfig.load(CONFIGS / "default.json")


@pytest.fixture(scope="module")
def coverage_runs(default_cfg):
    """R independent marginal calibrations at D=100, each followed by a paired
    100-scenario campaign of all three frameworks at alpha=0.1."""
    cfg = replace(default_cfg, calibration=replace(default_cfg.calibration, D=100, mode="marginal", delta=None))
    runs = []
    for r in range(REPS):
        art = calibrate(cfg, 10_000_000 + 1000 * r)
        runs.append(run_campaign(cfg, art, alphas=(0.1,), n_test=N_TEST, base_seed=20_000_000 + 1000 * r))
    return runs


@pytest.fixture(scope="module")
def paired_run(default_cfg):
    """Default (dataset-conditional) calibration, then every framework and alpha
    on the same PAIRED_N test scenarios."""
    art = calibrate(default_cfg, 30_000_000)
    return run_campaign(default_cfg, art, alphas=ALPHAS, n_test=PAIRED_N, base_seed=40_000_000)


def test_c1_marginal_coverage(coverage_runs, capsys):
    rates = [_row(res, "ours", 0.1).sr_map_pct / 100 for res in coverage_runs]
    mean = float(np.mean(rates))
    ok = mean >= 0.87
    report(capsys, 1, ok, f"mean sr_map {mean:.4f} over {len(rates)} reps, min {min(rates):.2f}, need >= 0.87")
    assert ok


def test_c2_mission_dominates_mapping(coverage_runs, paired_run, capsys):
    campaigns = list(coverage_runs) + [paired_run]
    bad_rows = [
        (i, r.framework, r.alpha, r.sr_map_pct, r.sr_mission_pct)
        for i, res in enumerate(campaigns)
        for r in res.rows
        if r.sr_mission_pct < r.sr_map_pct
    ]
    missions = [m for res in campaigns for m in res.metrics]
    counter = [m for m in missions if m.sr_map and m.termination == "goal" and not m.sr_mission]
    ok = not bad_rows and not counter and len(missions) >= 4000
    report(
        capsys, 2, ok,
        f"{len(missions)} missions, {len(counter)} counterexamples, {len(bad_rows)} rows with sr_mission < sr_map {bad_rows[:3]}",
    )
    assert len(missions) >= 4000
    assert counter == []
    assert bad_rows == []


def test_c3_baseline_ordering(paired_run, capsys):
    ours = _row(paired_run, "ours", 0.1).sr_mission_pct
    ui = _row(paired_run, "ui", 0.1).sr_mission_pct
    ua = _row(paired_run, "ua").sr_mission_pct
    n = _row(paired_run, "ua").n
    ok = n >= 200 and ours >= ui >= ua and ours - ua >= 5.0
    report(capsys, 3, ok, f"n={n} mission success ours {ours:.2f} ui {ui:.2f} ua {ua:.2f}, gap {ours - ua:.2f} pp, need >= 5")
    assert n >= 200
    assert ours >= ui >= ua
    assert ours - ua >= 5.0


def test_c4_conservatism_monotone(paired_run, capsys):
    rows = [_row(paired_run, "ours", a) for a in ALPHAS]  # 1 - alpha increasing
    problems = []
    for lo, hi in zip(rows, rows[1:]):
        for name, se in (("path_len_m", "path_len_se"), ("explore_pct", "explore_se")):
            a, b = getattr(lo, name), getattr(hi, name)
            tol = math.hypot(getattr(lo, se), getattr(hi, se))
            if b < a - tol:
                problems.append(f"{name} {a:.3f}@{lo.alpha} -> {b:.3f}@{hi.alpha} (se {tol:.3f})")
    summary = ", ".join(f"a={r.alpha}: len {r.path_len_m:.2f} expl {r.explore_pct:.2f}%" for r in rows)
    ok = not problems
    report(capsys, 4, ok, summary + ("" if ok else "; " + "; ".join(problems)))
    assert problems == []


def test_c5_quantile_and_beta(capsys):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        d = int(rng.integers(1, 60))
        scores = np.round(rng.random(d), int(rng.integers(1, 4))).tolist()  # ties included
        alpha = float(rng.uniform(0.01, 0.5))
        if conformal_quantile(scores, alpha) != order_statistic_quantile(scores, alpha):
            mismatches += 1
    worst = 0.0
    alpha_mismatch = 0
    py = random.Random(7)
    for _ in range(50):
        d = py.randint(20, 300)
        delta = py.uniform(0.01, 0.3)
        target = py.uniform(0.7, 0.95)
        try:
            a = dataset_conditional_alpha(d, delta, target)
        except ValueError:
            a = None
        alpha_mismatch += a != dataset_conditional_alpha_oracle(d, delta, target)
        v = max(1, round((a or 1 / (d + 1)) * (d + 1)))
        for vv in {v, min(v + 1, d)}:
            worst = max(worst, abs(coverage_bound(d, vv, delta) - beta_ppf_quadrature(delta, d + 1 - vv, vv)))
    ok = mismatches == 0 and alpha_mismatch == 0 and worst <= 1e-6
    report(capsys, 5, ok, f"quantile mismatches {mismatches}/1000, alpha mismatches {alpha_mismatch}/50, max |beta inverse error| {worst:.2e}")
    assert mismatches == 0
    assert alpha_mismatch == 0
    assert worst <= 1e-6


def test_c6_executed_states_admissible(coverage_runs, paired_run, capsys):
    campaigns = list(coverage_runs) + [paired_run]
    n = sum(len(res.metrics) for res in campaigns)
    violations = {k: v for res in campaigns for k, v in res.violations.items()}
    ok = not violations
    report(capsys, 6, ok, f"{n} traces checked, {len(violations)} with violations")
    assert violations == {}


def test_c7_noiseless_degeneracy(capsys):
    cfg = ExperimentConfig.load(CONFIGS / "noiseless.json")
    art = calibrate(cfg, 50_000_000)
    res = run_campaign(cfg, art, frameworks=["ours"], alphas=(0.1,), n_test=100, base_seed=60_000_000, keep_traces=True)
    row = _row(res, "ours", 0.1)
    singleton = all(
        st.covered and sum(st.set_hist[1:]) == 0 for _, tr in res.traces for st in tr.steps
    )
    explore = max(m.exploration_proportion for m in res.metrics)
    ok = art.quantile == 0.0 and singleton and explore == 0.0 and row.sr_map_pct == 100.0 and row.sr_mission_pct == 100.0
    report(
        capsys, 7, ok,
        f"s_hat {art.quantile}, singleton sets {singleton}, max explore {explore}, sr_map {row.sr_map_pct}, sr_mission {row.sr_mission_pct}",
    )
    assert art.quantile == 0.0
    assert singleton
    assert explore == 0.0
    assert row.sr_map_pct == 100.0 and row.sr_mission_pct == 100.0


def test_c8_deterministic_csv(default_cfg, tmp_path, capsys):
    art = calibrate(default_cfg, 70_000_000)
    kw = dict(alphas=(0.1, 0.05), n_test=30, base_seed=80_000_000)
    run_campaign(default_cfg, art, out_dir=tmp_path / "a", **kw)
    run_campaign(default_cfg, art, out_dir=tmp_path / "b", workers=2, **kw)
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    again = calibrate(default_cfg, 70_000_000)
    ok = a == b and again == art
    report(capsys, 8, ok, f"metrics.csv {len(a)} bytes, identical {a == b}, artifact identical {again == art}")
    assert a == b
    assert again == art
