"""Compare the numba kernels against the numpy fallback.

Per-kernel timings on a default-sized world, then one end-to-end mission in a
subprocess per backend (the backend is fixed at import time by
SEMREACH_DISABLE_NUMBA).

    python benchmarks/bench_kernels.py [--repeat N] [--no-mission]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from semreach.kernels import _numba as nb
from semreach.kernels import _numpy as npk
from semreach.mapper import MapperConfig
from semreach.sensor import diagonal_confusion, ray_template
from semreach.worldgen import DistributionConfig, sample_scenario

MISSION = """
import time
from semreach.harness import ExperimentConfig
from semreach.kernels import BACKEND
from semreach.planner import run_mission
from semreach.worldgen import sample_scenario
cfg = ExperimentConfig()
s = sample_scenario(cfg.distribution, 1)
run_mission(s, "ua", cfg.sensor, cfg.mapper, cfg.planner)  # warm-up / JIT
t = time.perf_counter()
tr = run_mission(s, "ours", cfg.sensor, cfg.mapper, cfg.planner, s_hat=0.99, alpha=0.1)
print(BACKEND, len(tr.steps), time.perf_counter() - t)
"""


def kernel_inputs():
    s = sample_scenario(DistributionConfig(), 1)
    geom = s.geometry
    w, h = geom.width, geom.height
    truth = s.world.truth
    tm = ray_template(720, 7.5)
    row, col = s.start.row, s.start.col
    hit, _, _, trav = nb.cast_rays(truth, w, h, row, col, tm.dr, tm.dc, tm.dist, tm.in_range, tm.ptr)
    pmf = np.full((geom.n_cells, 5), 0.2)
    log_lik = MapperConfig(diagonal_confusion(5, 0.95)).log_likelihood
    labels = np.where(hit >= 0, truth[np.maximum(hit, 0)], 0).astype(np.int64)
    clearance = np.array([0.0, 2.0, 3.0, 5.0, 1.5])
    lab = truth.astype(np.int64)
    adm = nb.admissible_mask(lab, clearance, w, h)
    start = s.start.index(geom)
    gmask = s.task.goal_mask(geom)
    return {
        "cast_rays": (truth, w, h, row, col, tm.dr, tm.dc, tm.dist, tm.in_range, tm.ptr),
        "bayes_update": (pmf, log_lik, hit, labels, trav, 0, 1e-6),
        "admissible_mask": (lab, clearance, w, h),
        "astar": (adm, w, h, start, gmask, float(s.task.goal_row), float(s.task.goal_col), s.task.radius_m / geom.resolution),
        "dijkstra": (adm, w, h, start),
    }


def bench_kernels(repeat):
    inputs = kernel_inputs()
    print(f"{'kernel':<16}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, args in inputs.items():
        fast, slow = getattr(nb, name), getattr(npk, name)
        fast(*args)  # compile
        t_fast = min(timeit.repeat(lambda: fast(*args), number=repeat, repeat=3)) / repeat
        t_slow = min(timeit.repeat(lambda: slow(*args), number=max(1, repeat // 10), repeat=3)) / max(1, repeat // 10)
        print(f"{name:<16}{t_fast * 1e6:>12.1f}{t_slow * 1e6:>12.1f}{t_slow / t_fast:>9.1f}x")


def bench_mission():
    for flag in ("0", "1"):
        env = dict(os.environ, SEMREACH_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", MISSION], env=env, capture_output=True, text=True, check=True).stdout
        backend, steps, secs = out.split()
        print(f"mission ({backend}): {steps} steps in {float(secs):.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--no-mission", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if not args.no_mission:
        bench_mission()


if __name__ == "__main__":
    main()
