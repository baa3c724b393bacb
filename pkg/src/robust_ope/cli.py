"""``robust-ope`` command line: run, report, cdf, gradcheck, export-scenario."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .core import FeatureMap
from .robust_reward import BaseDistribution, RobustParams, _objective, batch_gradient
from .scenarios import ClassificationData, export_scenario, generate


def gradient_check(draws: int = 100, seed: int = 0, h: float = 1e-5) -> float:
    """Worst relative error between :func:`batch_gradient` and central differences.

    The ``theta_x`` block of the analytic gradient is half the derivative of
    the log-likelihood objective, so it is compared against half the
    finite difference.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        d, k, n = int(rng.integers(1, 5)), int(rng.integers(2, 5)), 20
        fm = FeatureMap(d, k, "concat")
        base = BaseDistribution(float(rng.normal(0.6, 0.2)), float(rng.uniform(0.5, 2.0)))
        theta = np.concatenate([[rng.uniform(0.0, 1.0)], rng.normal(0, 0.5, fm.output_dim)])
        X, A = rng.normal(size=(n, d)), rng.integers(0, k, n)
        r, W = rng.uniform(0, 1, n), rng.uniform(0.05, 3.0, n)
        Phi = fm.batch(X, A)
        g_r, g_x = batch_gradient(RobustParams.unpack(theta), base, fm, X, A, r, W)
        analytic = np.concatenate([[g_r], g_x])
        fd = np.empty_like(theta)
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            fd[j] = (_objective(theta + e, base, Phi, r, W) - _objective(theta - e, base, Phi, r, W)) / (2 * h)
        fd[1:] *= 0.5
        err = np.abs(analytic - fd) / np.maximum(np.abs(fd), 1e-8)
        worst = max(worst, float(err.max()))
    return worst


def _cmd_run(args) -> int:
    cfg = bench.ExperimentConfig.from_yaml(args.config)
    if args.workers is not None:
        cfg = bench.replace(cfg, workers=args.workers)
    out = args.out or cfg.output_dir
    results = bench.run(cfg, out)
    print(f"{len(results)} condition(s) written to {Path(out) / 'results.csv'}")
    return 0


def _cmd_report(args) -> int:
    rows = bench.read_results(args.results)
    print(bench.report(rows).format())
    if args.baseline:
        cdf = bench.relative_cdf(rows, args.baseline)
        print(f"\nmedian MSE ratio w.r.t. {args.baseline}")
        for name, pts in cdf.items():
            ratios = [r for r, _ in pts]
            print(f"  {name:<10} {float(np.median(ratios)):.4f}")
    return 0


def _cmd_cdf(args) -> int:
    rows = bench.read_results(args.results)
    cdf = bench.relative_cdf(rows, args.baseline, families=args.families)
    out = Path(args.out) if args.out else Path(args.results).with_name("cdf.csv")
    bench.write_cdf(cdf, out)
    print(f"wrote {out}")
    return 0


def _cmd_gradcheck(args) -> int:
    worst = gradient_check(args.draws, args.seed)
    ok = worst <= args.tol
    print(f"max relative error {worst:.3e} over {args.draws} draws: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_export(args) -> int:
    cfg = bench.ExperimentConfig.from_yaml(args.config)
    conds = cfg.conditions
    if args.condition.isdigit():
        cond = conds[int(args.condition)]
    else:
        match = [c for c in conds if c.condition_id == args.condition]
        if not match:
            raise SystemExit(f"no condition {args.condition!r} in {args.config}")
        cond = match[0]
    data = ClassificationData.from_csv(cfg.datasets[cond.dataset], cond.dataset)
    out = export_scenario(generate(cond, data, args.rep), args.out)
    print(f"exported {cond.condition_id} rep {args.rep} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-ope", description="Off-policy evaluation benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="run an experiment config")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default: config output_dir)")
    s.add_argument("--workers", type=int)
    s.set_defaults(fn=_cmd_run)

    s = sub.add_parser("report", help="family win counts")
    s.add_argument("results")
    s.add_argument("--baseline")
    s.set_defaults(fn=_cmd_report)

    s = sub.add_parser("cdf", help="relative-MSE CDF table")
    s.add_argument("results")
    s.add_argument("--baseline", required=True)
    s.add_argument("--families", action="store_true", help="best-of-family curves")
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_cdf)

    s = sub.add_parser("gradcheck", help="finite-difference check of the robust gradient")
    s.add_argument("--draws", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(fn=_cmd_gradcheck)

    s = sub.add_parser("export-scenario", help="write one generated scenario as CSV")
    s.add_argument("condition", help="condition index or condition id")
    s.add_argument("--config", required=True)
    s.add_argument("--rep", type=int, default=0)
    s.add_argument("--out", default="scenario")
    s.set_defaults(fn=_cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
