"""Rebuild the multiclass Glass and Ecoli CSVs from the KEEL partitions.

The ``keel-ds`` wheel ships only one-vs-rest / subset-vs-subset binarizations
of both datasets. Every instance appears (with identical feature values) in
several of those files, so the original class of each row is recovered by
matching feature tuples across partitions.

Usage::

    pip install keel-ds
    python scripts/build_datasets.py --out data
"""
from __future__ import annotations

import argparse
import csv
from collections import Counter
from pathlib import Path

GLASS_FEATURES = ["RI", "Na", "Mg", "Al", "Si", "K", "Ca", "Ba", "Fe"]
ECOLI_FEATURES = ["mcg", "gvh", "lip", "chg", "aac", "alm1", "alm2"]

# positive rows of each file belong to the named class; glass2.dat is stored
# at a different precision from the other glass files, so the vehicle-float
# class is read from a subset partition instead
GLASS_ONE_VS_REST = {
    "glass0": "building_windows_float",
    "glass1": "building_windows_non_float",
    "glass-0-1-6_vs_2": "vehicle_windows_float",
    "glass4": "containers",
    "glass5": "tableware",
    "glass6": "headlamps",
}
ECOLI_ONE_VS_REST = {"ecoli1": "im", "ecoli2": "pp", "ecoli3": "imU", "ecoli4": "om"}


def _raw_dir() -> Path:
    import keel_ds

    return Path(keel_ds.__file__).parent / "data" / "imbalanced" / "raw"


def _read(path: Path) -> list[tuple[tuple[str, ...], str]]:
    rows = []
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("@"):
            continue
        parts = [p.strip() for p in line.split(",")]
        key = tuple(repr(float(v)) for v in parts[:-1])
        rows.append((key, parts[-1]))
    return rows


def _positives(path: Path) -> Counter:
    return Counter(k for k, lab in _read(path) if lab == "positive")


def _assign(universe: list[tuple[str, ...]], groups: list[tuple[str, Counter]]) -> list[str]:
    """Give each row the first group that still has an unclaimed copy of it."""
    remaining = {name: Counter(c) for name, c in groups}
    labels = []
    for key in universe:
        for name, _ in groups:
            if remaining[name][key] > 0:
                remaining[name][key] -= 1
                labels.append(name)
                break
        else:
            raise RuntimeError(f"row {key} matched no class")
    leftover = {n: sum(c.values()) for n, c in remaining.items() if sum(c.values())}
    if leftover:
        raise RuntimeError(f"unassigned class members: {leftover}")
    return labels


def build_glass(raw: Path) -> tuple[list[tuple[str, ...]], list[str]]:
    universe = [k for k, _ in _read(raw / "glass0.dat")]
    groups = [(name, _positives(raw / f"{f}.dat")) for f, name in GLASS_ONE_VS_REST.items()]
    return universe, _assign(universe, groups)


def _keel_int_key(key: tuple[str, ...], cols: list[int]) -> tuple[float, ...]:
    # some ecoli subset files drop the leading "0." of two-decimal values
    # (0.78 -> 78, 0.40 -> 4) and omit the near-constant chg column
    out = []
    for c in cols:
        s = f"{float(key[c]):.2f}".rstrip("0").rstrip(".")
        out.append(float(s[2:] if s.startswith("0.") else s))
    return tuple(out)


def build_ecoli(raw: Path) -> tuple[list[tuple[str, ...]], list[str]]:
    universe = [k for k, _ in _read(raw / "ecoli1.dat")]
    groups = [("cp", _positives(raw / "ecoli-0_vs_1.dat"))]
    groups += [(name, _positives(raw / f"{f}.dat")) for f, name in ECOLI_ONE_VS_REST.items()]
    claimed = sum((c for _, c in groups), Counter())
    rest = list((Counter(universe) - claimed).elements())

    # the 9 remaining rows are omL (5), imL (2), imS (2); KEEL numbers ecoli
    # classes alphabetically (cp im imL imS imU om omL pp)
    no_chg = [0, 1, 2, 4, 5, 6]
    om_oml = {
        tuple(float(v) for v in k) for k in _positives(raw / "ecoli-0-1-4-7_vs_5-6.dat")
    }
    iml_oml = {
        tuple(float(v) for v in k) for k in _positives(raw / "ecoli-0-1-3-7_vs_2-6.dat")
    }
    extra = {"omL": Counter(), "imL": Counter(), "imS": Counter()}
    for key in rest:
        if _keel_int_key(key, no_chg) in om_oml:
            extra["omL"][key] += 1
        elif _keel_int_key(key, list(range(7))) in iml_oml:
            extra["imL"][key] += 1
        else:
            extra["imS"][key] += 1
    groups += list(extra.items())
    return universe, _assign(universe, groups)


def write_csv(path: Path, header: list[str], universe, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header + ["label"])
        for key, lab in zip(universe, labels):
            w.writerow([*key, lab])


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = _raw_dir()
    for name, builder, feats in [
        ("glass", build_glass, GLASS_FEATURES),
        ("ecoli", build_ecoli, ECOLI_FEATURES),
    ]:
        universe, labels = builder(raw)
        write_csv(out / f"{name}.csv", feats, universe, labels)
        counts = Counter(labels)
        print(f"{name}: {len(labels)} rows, {len(counts)} classes {dict(sorted(counts.items()))}")


if __name__ == "__main__":
    main()
