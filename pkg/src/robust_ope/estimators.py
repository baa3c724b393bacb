"""Policy-value estimators built from five primitives (DM, IPS, SnIPS, DR, SnDR).

Every named estimator is one primitive paired with a reward model and an
importance-weight source; :data:`SPECS` is the dispatch table and
:func:`build_suite` evaluates any subset of it in one pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import BanditDataset, StochasticPolicy
from .ratio_models import RatioModel


@dataclass(frozen=True)
class RewardFn:
    """Vectorised predicted mean reward ``fn(X, A) -> (n,)``."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    name: str = "reward"

    def __call__(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(np.atleast_2d(X), np.asarray(A, dtype=int)), dtype=float)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"reward model {self.name!r} produced non-finite values")
        return out

    def table(self, X: np.ndarray, k: int) -> np.ndarray:
        """Predictions for every action, shape ``(n, k)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        return self(np.repeat(X, k, axis=0), np.tile(np.arange(k), n)).reshape(n, k)


def zero_reward() -> RewardFn:
    return RewardFn(lambda X, A: np.zeros(len(A)), "zero")


def constant_reward(c: float) -> RewardFn:
    return RewardFn(lambda X, A: np.full(len(A), float(c)), f"constant({c})")


@dataclass(frozen=True)
class PolicyValueEstimate:
    value: float
    estimator_name: str
    n: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise FloatingPointError(f"{self.estimator_name}: non-finite estimate {self.value}")


def _nonempty(x, what="samples"):
    if len(x) == 0:
        raise ValueError(f"no {what}")


def estimate_dm(
    reward: RewardFn, contexts: np.ndarray, pi: StochasticPolicy, name: str = "DM"
) -> PolicyValueEstimate:
    """Mean over contexts of ``sum_a pi(a|x) reward(x, a)``; exact over actions."""
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    _nonempty(contexts, "contexts")
    value = float(np.mean(np.sum(pi.probs(contexts) * reward.table(contexts, pi.k), axis=1)))
    return PolicyValueEstimate(value, name, len(contexts))


def estimate_ips(r: np.ndarray, w: np.ndarray, name: str = "IPS") -> PolicyValueEstimate:
    r, w = np.asarray(r, dtype=float), np.asarray(w, dtype=float)
    _nonempty(r)
    return PolicyValueEstimate(float(np.mean(r * w)), name, len(r))


def _normalizer(w: np.ndarray) -> float:
    total = float(np.sum(w))
    if not total > 0:
        raise ValueError("importance weights sum to zero; self-normalisation undefined")
    return total


def estimate_snips(r: np.ndarray, w: np.ndarray, name: str = "SnIPS") -> PolicyValueEstimate:
    r, w = np.asarray(r, dtype=float), np.asarray(w, dtype=float)
    _nonempty(r)
    return PolicyValueEstimate(float(np.sum(r * w) / _normalizer(w)), name, len(r))


def _residuals(logged: BanditDataset, reward: RewardFn) -> np.ndarray:
    return logged.rewards - reward(logged.contexts, logged.actions)


def estimate_dr(
    logged: BanditDataset, w: np.ndarray, reward: RewardFn, dm_value: float, name: str = "DR"
) -> PolicyValueEstimate:
    """``dm_value + mean((r - reward(x, a)) w)``."""
    _nonempty(logged.rewards)
    corr = float(np.mean(_residuals(logged, reward) * np.asarray(w, dtype=float)))
    return PolicyValueEstimate(dm_value + corr, name, logged.n)


def estimate_sndr(
    logged: BanditDataset, w: np.ndarray, reward: RewardFn, dm_value: float, name: str = "SnDR"
) -> PolicyValueEstimate:
    """``dm_value + sum((r - reward(x, a)) w) / sum(w)``."""
    _nonempty(logged.rewards)
    w = np.asarray(w, dtype=float)
    corr = float(np.sum(_residuals(logged, reward) * w) / _normalizer(w))
    return PolicyValueEstimate(dm_value + corr, name, logged.n)


@dataclass(frozen=True)
class EstimatorSpec:
    """A named estimator.

    ``form`` is the primitive; ``reward`` names the reward model (``erm``,
    ``unit`` for the robust model with W = 1, ``ps`` or ``gcs`` for the
    robust model with the corresponding ratio); ``weights`` is ``ps``,
    ``gcs`` or ``regime`` (whichever regime the condition runs under).
    """

    name: str
    form: str
    reward: Optional[str] = None
    weights: Optional[str] = None

    @property
    def needs_gcs(self) -> bool:
        return self.reward == "gcs" or self.weights == "gcs"


SPECS: dict[str, EstimatorSpec] = {
    s.name: s
    for s in [
        EstimatorSpec("DM", "dm", "erm"),
        EstimatorSpec("IPS", "ips", weights="ps"),
        EstimatorSpec("SnIPS", "snips", weights="ps"),
        EstimatorSpec("DR", "dr", "erm", "regime"),
        EstimatorSpec("SnDR", "sndr", "erm", "regime"),
        EstimatorSpec("IPS-GCS", "ips", weights="gcs"),
        EstimatorSpec("SnIPS-GCS", "snips", weights="gcs"),
        EstimatorSpec("DM(R)", "dm", "unit"),
        EstimatorSpec("DR(R)", "dr", "unit", "regime"),
        EstimatorSpec("SnDR(R)", "sndr", "unit", "regime"),
        EstimatorSpec("DM-PS", "dm", "ps"),
        EstimatorSpec("DR-PS", "dr", "ps", "ps"),
        EstimatorSpec("SnDR-PS", "sndr", "ps", "ps"),
        EstimatorSpec("DM-GCS", "dm", "gcs"),
        EstimatorSpec("DR-GCS", "dr", "gcs", "gcs"),
        EstimatorSpec("SnDR-GCS", "sndr", "gcs", "gcs"),
    ]
}

PS_ESTIMATORS = [n for n, s in SPECS.items() if not s.needs_gcs]
ALL_ESTIMATORS = list(SPECS)

# best-of-family grouping used in reports; earlier entries win ties
FAMILIES: dict[str, tuple[str, ...]] = {
    "DM-GCS": ("DM-GCS", "DR-GCS", "SnDR-GCS"),
    "DM-PS": ("DM-PS", "DR-PS", "SnDR-PS"),
    "DM(R)": ("DM(R)", "DR(R)", "SnDR(R)"),
    "DM": ("DM", "DR", "SnDR"),
    "SnIPS-GCS": ("IPS-GCS", "SnIPS-GCS"),
    "SnIPS": ("IPS", "SnIPS"),
}


def robust_reward_fn(
    model, ratio: Optional[RatioModel], target: StochasticPolicy, name: str
) -> RewardFn:
    """Robust model mean with ``W(x, a)`` from ``ratio`` (``W = 1`` when ``ratio`` is None)."""
    if ratio is None:
        return RewardFn(lambda X, A: model.mean(X, A, np.ones(len(A))), name)
    return RewardFn(lambda X, A: model.mean(X, A, ratio.w(X, A, target)), name)


def model_reward_fn(model, name: str) -> RewardFn:
    return RewardFn(lambda X, A: model.mean(X, A), name)


def resolve(names: Iterable[str]) -> list[EstimatorSpec]:
    out = []
    for n in names:
        if n not in SPECS:
            raise ValueError(f"unknown estimator {n!r}; known: {', '.join(SPECS)}")
        out.append(SPECS[n])
    return out


def build_suite(
    names: Sequence[str],
    rewards: Mapping[str, RewardFn],
    ratios: Mapping[str, RatioModel],
    logged: BanditDataset,
    target: StochasticPolicy,
    dm_contexts: Optional[np.ndarray] = None,
    regime: str = "ps",
) -> dict[str, PolicyValueEstimate]:
    """Evaluate the named estimators on the evaluation logging data ``logged``.

    ``rewards`` maps reward keys (``erm``, ``unit``, ``ps``, ``gcs``) to
    reward functions and ``ratios`` maps ``ps`` / ``gcs`` to ratio models.
    The DM term averages over ``dm_contexts`` (default: the logged contexts).
    Shared pieces (DM values, weight vectors) are computed once.
    """
    if regime not in ("ps", "gcs"):
        raise ValueError(f"regime must be 'ps' or 'gcs', got {regime!r}")
    specs = resolve(names)
    for s in specs:
        if (s.needs_gcs or (s.weights == "regime" and regime == "gcs")) and "gcs" not in ratios:
            raise ValueError(f"{s.name} requires a GCS ratio model")
        if s.reward is not None and s.reward not in rewards:
            raise ValueError(f"{s.name} requires the {s.reward!r} reward model")
        if s.weights in ("ps", "gcs") and s.weights not in ratios:
            raise ValueError(f"{s.name} requires the {s.weights!r} ratio model")
    ctx = logged.contexts if dm_contexts is None else dm_contexts
    dm_cache: dict[str, float] = {}
    w_cache: dict[str, np.ndarray] = {}

    def dm(key):
        if key not in dm_cache:
            dm_cache[key] = estimate_dm(rewards[key], ctx, target).value
        return dm_cache[key]

    def weights(key):
        key = regime if key == "regime" else key
        if key not in w_cache:
            w_cache[key] = ratios[key].ips_weights(logged.contexts, logged.actions, target)
        return w_cache[key]

    out = {}
    for s in specs:
        if s.form == "dm":
            out[s.name] = PolicyValueEstimate(dm(s.reward), s.name, len(ctx))
        elif s.form == "ips":
            out[s.name] = estimate_ips(logged.rewards, weights(s.weights), s.name)
        elif s.form == "snips":
            out[s.name] = estimate_snips(logged.rewards, weights(s.weights), s.name)
        elif s.form == "dr":
            out[s.name] = estimate_dr(logged, weights(s.weights), rewards[s.reward], dm(s.reward), s.name)
        else:
            out[s.name] = estimate_sndr(logged, weights(s.weights), rewards[s.reward], dm(s.reward), s.name)
    return out
