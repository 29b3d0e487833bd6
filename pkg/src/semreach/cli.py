"""Command-line entry point: ``semreach <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .conformal import CalibrationArtifact
from .domain import dump_scenario
from .harness import ConfigMismatchError, ExperimentConfig, calibrate, run_campaign
from .metrics import plot_svg, read_csv
from .planner import FRAMEWORKS, read_traces, verify_trace
from .worldgen import sample_batch

log = logging.getLogger("semreach")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _names(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    bad = [n for n in names if n not in FRAMEWORKS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown framework(s): {', '.join(bad)}")
    return names


def cmd_calibrate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    art = calibrate(cfg, args.seed, out=args.out)
    print(f"D={art.D} alpha={art.alpha} alpha_used={art.alpha_used:.6f} s_hat={art.quantile:.6f} -> {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    art = CalibrationArtifact.load(args.artifact) if args.artifact else None
    try:
        res = run_campaign(
            cfg, art, frameworks=args.frameworks, alphas=args.alphas, n_test=args.n,
            base_seed=args.seed, out_dir=args.out, ood=args.ood,
        )
    except ConfigMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(res.csv)
    for key, msgs in sorted(res.violations.items(), key=str):
        for m in msgs:
            print(f"violation {key}: {m}", file=sys.stderr)
    return 1 if res.violations else 0


def cmd_report(args) -> int:
    src = Path(args.inp)
    csv_path = src / "metrics.csv" if src.is_dir() else src
    if args.format == "csv":
        sys.stdout.write(csv_path.read_text())
        return 0
    out = Path(args.out) if args.out else csv_path.with_suffix(".svg")
    plot_svg(read_csv(csv_path), out)
    print(out)
    return 0


def cmd_worldgen(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dist = cfg.effective(args.ood)[0]
    for s in sample_batch(dist, args.seed, args.n):
        dump_scenario(s, out / f"scenario_{s.seed}.json")
    print(f"wrote {args.n} scenarios to {out}")
    return 0


def cmd_replay(args) -> int:
    n = bad = 0
    for scenario, trace in read_traces(args.trace):
        n += 1
        problems = verify_trace(trace, scenario)
        if problems:
            bad += 1
            for p in problems:
                print(f"seed {trace.scenario_seed} {trace.framework}: {p}")
    print(f"{n} traces checked, {bad} with violations")
    return 1 if bad or n == 0 else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semreach", description="Conformal semantic reach-avoid planning experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="score calibration scenarios and write an artifact")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="run a paired test campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--artifact")
    p.add_argument("--frameworks", type=_names, default=list(FRAMEWORKS))
    p.add_argument("--alphas", type=_floats, default=[0.1])
    p.add_argument("--n", type=int, default=61)
    p.add_argument("--seed", type=int, default=1_000_000)
    p.add_argument("--ood", action="store_true", help="apply the config's OOD knobs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="print the CSV report or plot it")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("worldgen", help="write sampled scenarios as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ood", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_worldgen)

    p = sub.add_parser("replay", help="re-verify every trace in a JSONL file")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
