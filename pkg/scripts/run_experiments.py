"""Run the benchmark configs and write win-count reports and relative-MSE CDFs.

Usage::

    python scripts/run_experiments.py                     # all configs in configs/
    python scripts/run_experiments.py configs/gcs_tweak1.yaml --workers 4

For each config the results land in ``<output_dir>/results.csv`` (resumable),
with ``report.txt`` and ``cdf.csv`` next to it. The CDF baseline is SnIPS for
policy-shift runs and SnIPS-GCS for covariate-shift runs.
"""
from __future__ import annotations

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from robust_ope import bench
from robust_ope.estimators import FAMILIES

ROOT = Path(__file__).resolve().parents[1]

# logging policies grouped by how far they sit from the target policies
TIERS = {
    "small": ("softened(0.95,0.0)", "softened(0.7,0.1)"),
    "large": ("softened(0.5,0.1)", "softened(0.1,0.0)"),
    "tweak1": ("tweak1(0.91)", "tweak1(0.95)", "tweak1(0.99)"),
}


def summarize(cfg: bench.ExperimentConfig, out: Path) -> str:
    rows = bench.read_results(out / "results.csv")
    gcs = any(c.regime == "gcs" for c in cfg.conditions)
    baseline = "SnIPS-GCS" if gcs else "SnIPS"
    bench.write_cdf(bench.relative_cdf(rows, baseline, families=True), out / "cdf.csv")

    parts = ["all families", bench.report(rows).format()]
    if gcs:
        pair = {"DM-GCS": FAMILIES["DM-GCS"], "SnIPS-GCS": ("SnIPS-GCS",)}
        parts += ["\nDM-GCS family vs SnIPS-GCS", bench.report(rows, pair).format()]
    else:
        pair = {f: FAMILIES[f] for f in ("DM-PS", "DM")}
        for tier, pols in TIERS.items():
            sub = [r for r in rows if r["logging_policy"] in pols]
            if sub:
                parts += [f"\nDM-PS vs DM, {tier} tier", bench.report(sub, pair).format()]
    text = "\n".join(parts) + "\n"
    (out / "report.txt").write_text(text)
    return text


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out-root", type=Path, default=ROOT, help="output_dir is resolved against this")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    for path in args.configs or sorted((ROOT / "configs").glob("*.yaml")):
        cfg = bench.ExperimentConfig.from_yaml(path)
        if args.workers:
            cfg = replace(cfg, workers=args.workers)
        out = args.out_root / cfg.output_dir
        bench.run(cfg, out)
        print(f"== {path.name} -> {out}\n{summarize(cfg, out)}")


if __name__ == "__main__":
    main()
