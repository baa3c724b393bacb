"""Benchmark orchestration: expand a condition grid, run repetitions, aggregate MSE."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import yaml

from .core import FeatureMap
from .estimators import (
    FAMILIES,
    SPECS,
    build_suite,
    model_reward_fn,
    resolve,
    robust_reward_fn,
)
from .ratio_models import RatioModel, empirical_propensity, fit_context_ratio, fit_propensity
from .robust_reward import (
    BaseDistribution,
    GridSpec,
    TrainConfig,
    fit_least_squares,
    fit_robust,
)
from .scenarios import ClassificationData, Condition, GeneratedScenario, PolicySpec, ShiftSpec, generate

log = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "condition_id", "dataset", "logging_policy", "target_policy", "shift",
    "knowledge_flags", "estimator", "mse", "bias", "mean_estimate", "reps",
]
WORKERS_ENV = "ROBUST_OPE_WORKERS"
GRID_MODES = ("every_rep", "first_rep", "off")


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: Mapping[str, str]
    conditions: Sequence[Condition]
    estimators: Sequence[str]
    output_dir: str = "results"
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: Optional[GridSpec] = field(default_factory=GridSpec)
    grid_mode: str = "first_rep"
    base: BaseDistribution = field(default_factory=BaseDistribution)
    feature_map: str = "concat"
    workers: int = 1
    master_seed: int = 0

    def __post_init__(self):
        if not self.conditions:
            raise ValueError("condition grid is empty")
        if not self.estimators:
            raise ValueError("estimator list is empty")
        resolve(self.estimators)
        if self.grid_mode not in GRID_MODES:
            raise ValueError(f"grid_mode must be one of {GRID_MODES}")
        missing = {c.dataset for c in self.conditions} - set(self.datasets)
        if missing:
            raise ValueError(f"conditions reference unknown datasets {sorted(missing)}")
        ids = [c.condition_id for c in self.conditions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate conditions in grid")
        if any(c.regime == "ps" and SPECS[e].needs_gcs for c in self.conditions for e in self.estimators):
            log.debug("GCS estimators are skipped on policy-shift-only conditions")

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(yaml.safe_load(path.read_text()), root=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, root: Path = Path(".")) -> "ExperimentConfig":
        raw = dict(raw)
        master = int(raw.get("master_seed", 0))
        reps = int(raw.get("repetitions", 30))
        datasets = {}
        for name, p in raw["datasets"].items():
            p = Path(p)
            datasets[name] = str(p if p.is_absolute() or p.exists() else root / p)
        conditions = []
        for block in raw["blocks"]:
            conditions.extend(expand_block(block, master, reps))
        grid = raw.get("grid", {})
        return cls(
            datasets=datasets,
            conditions=conditions,
            estimators=list(raw["estimators"]),
            output_dir=str(raw.get("output_dir", "results")),
            train=TrainConfig(**raw.get("train", {})),
            grid=None if grid is None else GridSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in grid.items()}),
            grid_mode=raw.get("grid_mode", "first_rep"),
            base=BaseDistribution(**raw.get("base", {})),
            feature_map=raw.get("feature_map", "concat"),
            workers=int(raw.get("workers", 1)),
            master_seed=master,
        )


def _as_list(v):
    return v if isinstance(v, list) else [v]


def condition_seed(master: int, dataset: str, logging_: PolicySpec, target: PolicySpec, shift: ShiftSpec) -> int:
    """Stable per-condition seed; knowledge flags share it so their data is paired."""
    tag = "|".join([dataset, logging_.label(), target.label(), shift.label()])
    return int(np.random.SeedSequence([master, zlib.crc32(tag.encode())]).generate_state(1)[0])


def expand_block(block: dict, master_seed: int, repetitions: int) -> list[Condition]:
    """Cartesian product of one grid block."""
    extra = {k: block[k] for k in ("logging_size", "eval_size", "sampled_value") if k in block}
    out = []
    for ds, lg, tg, sh, pk, ck in product(
        _as_list(block["datasets"]),
        _as_list(block["logging"]),
        _as_list(block["target"]),
        _as_list(block.get("shift", [{"kind": "none"}])),
        _as_list(block.get("propensity_known", [True])),
        _as_list(block.get("context_ratio_known", [True])),
    ):
        lg, tg, sh = PolicySpec(**lg), PolicySpec(**tg), ShiftSpec(**sh)
        if sh.kind == "none" and not ck:
            continue  # context ratio knowledge is meaningless without a covariate shift
        out.append(
            Condition(
                dataset=ds, logging=lg, target=tg, shift=sh,
                propensity_known=bool(pk), context_ratio_known=bool(ck),
                repetitions=int(block.get("repetitions", repetitions)),
                seed=condition_seed(master_seed, ds, lg, tg, sh), **extra,
            )
        )
    return out


# ---------------------------------------------------------------- one repetition


def _needed_rewards(names: Iterable[str]) -> set[str]:
    return {SPECS[n].reward for n in names if SPECS[n].reward is not None}


def evaluate_scenario(
    sc: GeneratedScenario,
    names: Sequence[str],
    cfg: ExperimentConfig,
    selected: Optional[dict] = None,
) -> dict[str, float]:
    """Train the needed models on the train logging data and evaluate every estimator.

    ``selected`` caches grid-selected training configs across repetitions
    (``grid_mode = first_rep``); it is updated in place.
    """
    cond = sc.condition
    pi = sc.target_policy
    tr = sc.train_logging
    names = [n for n in names if cond.regime == "gcs" or not SPECS[n].needs_gcs]
    seed = sc.model_seed % 2**31

    if cond.propensity_known:
        logging_model, kind = sc.logging_policy, "known"
    else:
        kind = "fitted"
        if len(np.unique(tr.actions)) >= 2:
            logging_model = fit_propensity(tr, seed=seed)
        else:
            logging_model = empirical_propensity(tr)
    ratios = {"ps": RatioModel(f"{kind}_ps", logging_model)}
    gcs_train = None
    if cond.regime == "gcs":
        if cond.context_ratio_known:
            ctx_tr, ctx_ev = sc.train_context_ratio, sc.eval_context_ratio
        else:
            ctx_tr = ctx_ev = fit_context_ratio(tr.contexts, sc.train_contexts, seed=seed)
        gkind = "known_gcs" if cond.propensity_known and cond.context_ratio_known else "fitted_gcs"
        gcs_train = RatioModel(gkind, logging_model, ctx_tr)
        ratios["gcs"] = RatioModel(gkind, logging_model, ctx_ev)

    fm = FeatureMap(tr.d, tr.k, cfg.feature_map)
    template = replace(cfg.train, seed=seed)
    selected = {} if selected is None else selected
    grid = None if cfg.grid_mode == "off" else cfg.grid

    def fit(key, fitter):
        if key in selected:
            model, _ = fitter(replace(selected[key], seed=seed), None)
        else:
            model, chosen = fitter(template, grid)
            if cfg.grid_mode == "first_rep":
                selected[key] = chosen
        return model

    rewards = {}
    for key in sorted(_needed_rewards(names)):
        if key == "erm":
            m = fit(key, lambda t, g: fit_least_squares(tr, fm, t, g))
            rewards[key] = model_reward_fn(m, "erm")
            continue
        if key == "unit":
            W = np.ones(tr.n)
            ratio_eval = None
        elif key == "ps":
            W = ratios["ps"].w(tr.contexts, tr.actions, pi)
            ratio_eval = ratios["ps"]
        else:
            W = gcs_train.w(tr.contexts, tr.actions, pi)
            ratio_eval = ratios["gcs"]
        m = fit(key, lambda t, g, W=W: fit_robust(tr, W, cfg.base, fm, t, g))
        rewards[key] = robust_reward_fn(m, ratio_eval, pi, key)

    dm_contexts = sc.target_contexts if cond.regime == "gcs" else None
    est = build_suite(names, rewards, ratios, sc.eval_logging, pi, dm_contexts, cond.regime)
    return {n: e.value for n, e in est.items()}


# ---------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class EstimatorStats:
    mse: float
    bias: float
    mean_estimate: float
    reps: int


@dataclass(frozen=True)
class ConditionResult:
    condition: Condition
    stats: Mapping[str, EstimatorStats]

    @property
    def condition_id(self) -> str:
        return self.condition.condition_id

    def rows(self) -> list[dict]:
        c = self.condition
        return [
            {
                "condition_id": c.condition_id,
                "dataset": c.dataset,
                "logging_policy": c.logging.label(),
                "target_policy": c.target.label(),
                "shift": c.shift.label(),
                "knowledge_flags": c.knowledge_flags,
                "estimator": name,
                "mse": s.mse,
                "bias": s.bias,
                "mean_estimate": s.mean_estimate,
                "reps": s.reps,
            }
            for name, s in self.stats.items()
        ]


def aggregate(estimates: Mapping[str, Sequence[float]], truths: Sequence[float]) -> dict[str, EstimatorStats]:
    """MSE, bias and mean estimate per estimator over repetitions."""
    truths = np.asarray(truths, dtype=float)
    out = {}
    for name, vals in estimates.items():
        v = np.asarray(vals, dtype=float)
        err = v - truths
        out[name] = EstimatorStats(float(np.mean(err**2)), float(np.mean(err)), float(np.mean(v)), len(v))
    return out


_DATA_CACHE: dict[str, ClassificationData] = {}


def _load(name: str, path: str) -> ClassificationData:
    if path not in _DATA_CACHE:
        _DATA_CACHE[path] = ClassificationData.from_csv(path, name)
    return _DATA_CACHE[path]


def run_condition(cond: Condition, cfg: ExperimentConfig) -> ConditionResult:
    data = _load(cond.dataset, cfg.datasets[cond.dataset])
    estimates: dict[str, list[float]] = {}
    truths = []
    selected: dict = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for rep in range(cond.repetitions):
            sc = generate(cond, data, rep)
            vals = evaluate_scenario(sc, cfg.estimators, cfg, selected)
            truths.append(sc.true_value)
            for n, v in vals.items():
                estimates.setdefault(n, []).append(v)
    return ConditionResult(cond, aggregate(estimates, truths))


def _run_one(args) -> tuple[int, Optional[ConditionResult], Optional[str]]:
    i, cond, cfg = args
    try:
        return i, run_condition(cond, cfg), None
    except Exception as exc:  # recorded and skipped; the run continues
        return i, None, f"{type(exc).__name__}: {exc}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _completed_ids(path: Path) -> set[str]:
    """Condition ids already in ``results.csv``; drops a trailing partial line."""
    if not path.exists():
        return set()
    text = path.read_text()
    if text and not text.endswith("\n"):
        text = text[: text.rfind("\n") + 1]
        path.write_text(text)
    rows = list(csv.DictReader(io.StringIO(text)))
    return {r["condition_id"] for r in rows}


def _rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def resolve_workers(cfg_workers: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    n = int(env) if env else cfg_workers
    return max(1, n)


def run(cfg: ExperimentConfig, output_dir: Optional[str] = None) -> list[ConditionResult]:
    """Run every condition, appending to ``results.csv`` in grid order.

    Conditions already present in an existing ``results.csv`` are skipped,
    so an interrupted run resumes where it stopped. Failures go to
    ``failures.csv`` and do not stop the run.
    """
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res_path, fail_path = out / "results.csv", out / "failures.csv"
    done = _completed_ids(res_path)
    if not res_path.exists() or res_path.stat().st_size == 0:
        res_path.write_text(",".join(RESULT_COLUMNS) + "\n")
    todo = [(i, c, cfg) for i, c in enumerate(cfg.conditions) if c.condition_id not in done]
    workers = resolve_workers(cfg.workers)
    log.info("running %d of %d conditions with %d worker(s)", len(todo), len(cfg.conditions), workers)

    results: list[ConditionResult] = []
    pending: dict[int, tuple] = {}
    order = [i for i, _, _ in todo]
    cursor = 0

    def flush():
        nonlocal cursor
        while cursor < len(order) and order[cursor] in pending:
            i = order[cursor]
            _, res, err = pending.pop(i)
            if res is not None:
                with open(res_path, "a", newline="") as fh:
                    fh.write(_rows_to_csv(res.rows()))
                results.append(res)
                log.info("done %s", res.condition_id)
            else:
                cid = cfg.conditions[i].condition_id
                log.warning("condition %s failed: %s", cid, err)
                new = not fail_path.exists()
                with open(fail_path, "a", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    if new:
                        w.writerow(["condition_id", "error"])
                    w.writerow([cid, err])
            cursor += 1

    if workers == 1:
        for job in todo:
            i, res, err = _run_one(job)
            pending[i] = (i, res, err)
            flush()
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, res, err in pool.map(_run_one, todo):
                pending[i] = (i, res, err)
                flush()
    return results


# ---------------------------------------------------------------- reporting


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("mse", "bias", "mean_estimate"):
            r[k] = float(r[k])
        r["reps"] = int(r["reps"])
    return rows


def mse_table(rows: Iterable[dict]) -> dict[str, dict[str, float]]:
    """``{condition_id: {estimator: mse}}`` preserving first-seen order."""
    table: dict[str, dict[str, float]] = {}
    for r in rows:
        table.setdefault(r["condition_id"], {})[r["estimator"]] = r["mse"]
    return table


def family_scores(
    mses: Mapping[str, float], families: Mapping[str, Sequence[str]] = FAMILIES
) -> dict[str, float]:
    """Best member MSE per family, for families with at least one member present."""
    out = {}
    for fam, members in families.items():
        vals = [mses[m] for m in members if m in mses]
        if vals:
            out[fam] = min(vals)
    return out


def condition_winner(
    mses: Mapping[str, float], families: Mapping[str, Sequence[str]] = FAMILIES
) -> Optional[str]:
    """Family with the lowest score; ties go to the family listed first."""
    scores = family_scores(mses, families)
    if not scores:
        return None
    best = min(scores.values())
    return next(f for f in families if f in scores and scores[f] == best)


@dataclass(frozen=True)
class Report:
    counts: dict[str, int]
    n_conditions: int

    @property
    def fractions(self) -> dict[str, float]:
        return {f: c / self.n_conditions for f, c in self.counts.items()}

    def format(self) -> str:
        lines = [f"{'family':<12} {'wins':>6} {'fraction':>9}"]
        for f, c in self.counts.items():
            lines.append(f"{f:<12} {c:>6d} {c / self.n_conditions:>9.3f}")
        lines.append(f"{'total':<12} {self.n_conditions:>6d}")
        return "\n".join(lines)


def report(
    results: Iterable[dict], families: Optional[Mapping[str, Sequence[str]]] = None
) -> Report:
    """Count, per family, the conditions where it attains the lowest family MSE."""
    table = mse_table(results)
    if not table:
        raise ValueError("no results to report")
    if families is None:
        present = {e for m in table.values() for e in m}
        families = {f: mem for f, mem in FAMILIES.items() if any(x in present for x in mem)}
    counts = {f: 0 for f in families}
    n = 0
    for mses in table.values():
        w = condition_winner(mses, families)
        if w is not None:
            counts[w] += 1
            n += 1
    return Report(counts, n)


def relative_cdf(
    results: Iterable[dict], baseline: str, families: bool = False
) -> dict[str, list[tuple[float, float]]]:
    """Per estimator (or family), sorted ``MSE / MSE(baseline)`` with cumulative fraction.

    ``0 / 0`` counts as 1 and ``x / 0`` for ``x > 0`` as ``inf``.
    """
    table = mse_table(results)
    curves: dict[str, list[float]] = {}
    for cid, mses in table.items():
        if baseline not in mses:
            raise ValueError(f"baseline {baseline!r} missing for condition {cid}")
        b = mses[baseline]
        scores = family_scores(mses) if families else mses
        for name, m in scores.items():
            if b == 0:
                ratio = 1.0 if m == 0 else math.inf
            else:
                ratio = m / b
            curves.setdefault(name, []).append(ratio)
    out = {}
    for name, ratios in curves.items():
        ratios.sort()
        n = len(ratios)
        out[name] = [(r, (i + 1) / n) for i, r in enumerate(ratios)]
    return out


def write_cdf(cdf: Mapping[str, list[tuple[float, float]]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "ratio", "cum_fraction"])
        for name, pts in cdf.items():
            for r, f in pts:
                w.writerow([name, "inf" if math.isinf(r) else repr(r), repr(f)])
