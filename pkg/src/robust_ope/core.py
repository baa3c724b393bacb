"""Shared domain types, CSV ingestion and the (context, action) feature map."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np


@dataclass(frozen=True)
class LoggedSample:
    """One logged interaction ``(x, a, r)`` with an optional logging propensity."""

    context: np.ndarray
    action: int
    reward: float
    logging_propensity: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward}")
        if self.action < 0:
            raise ValueError(f"action must be non-negative, got {self.action}")
        if self.logging_propensity is not None and not self.logging_propensity > 0:
            raise ValueError("logging propensity must be strictly positive")


@dataclass(frozen=True)
class Standardizer:
    """Per-feature affine map fitted on logging data and reused on target data."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        if X.shape[0] < 2:
            raise ValueError("standardization needs at least 2 samples")
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        flat = scale <= 1e-12
        if flat.any():
            warnings.warn(
                f"zero-variance feature(s) {np.flatnonzero(flat).tolist()}; scale clamped to 1",
                RuntimeWarning,
                stacklevel=2,
            )
            scale = np.where(flat, 1.0, scale)
        return cls(mean=mean, scale=scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True)
class BanditDataset:
    """Logged bandit data stored column-wise.

    ``contexts`` is ``(n, d)``; ``actions``, ``rewards`` and the optional
    ``propensities`` are length ``n``. ``pool_index`` optionally records the
    row of the source pool each sample was drawn from.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    k: int
    propensities: Optional[np.ndarray] = None
    standardization: Optional[Standardizer] = None
    pool_index: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.contexts, dtype=float)
        if X.ndim != 2:
            raise ValueError("contexts must be a 2-d array")
        n = X.shape[0]
        if len(self.actions) != n or len(self.rewards) != n:
            raise ValueError("contexts, actions and rewards must have equal length")
        a = np.asarray(self.actions)
        if n and (a.min() < 0 or a.max() >= self.k):
            raise ValueError(f"actions must lie in [0, {self.k})")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")
        if self.propensities is not None and np.any(np.asarray(self.propensities) <= 0):
            raise ValueError("logging propensities must be strictly positive")
        if self.standardization is not None and np.any(self.standardization.scale <= 0):
            raise ValueError("standardization scales must be strictly positive")

    @property
    def n(self) -> int:
        return int(self.contexts.shape[0])

    @property
    def d(self) -> int:
        return int(self.contexts.shape[1])

    def __len__(self) -> int:
        return self.n

    @property
    def samples(self) -> Iterator[LoggedSample]:
        for i in range(self.n):
            p = None if self.propensities is None else float(self.propensities[i])
            yield LoggedSample(self.contexts[i], int(self.actions[i]), float(self.rewards[i]), p)

    @classmethod
    def from_samples(cls, samples: list[LoggedSample], k: int) -> "BanditDataset":
        if not samples:
            raise ValueError("empty sample list")
        d = len(samples[0].context)
        if any(len(s.context) != d for s in samples):
            raise ValueError("all samples must share the context dimension")
        props = [s.logging_propensity for s in samples]
        return cls(
            contexts=np.array([s.context for s in samples], dtype=float),
            actions=np.array([s.action for s in samples], dtype=int),
            rewards=np.array([s.reward for s in samples], dtype=float),
            k=k,
            propensities=None if any(p is None for p in props) else np.array(props, dtype=float),
        )

    def subset(self, idx: np.ndarray) -> "BanditDataset":
        return BanditDataset(
            contexts=self.contexts[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            k=self.k,
            propensities=None if self.propensities is None else self.propensities[idx],
            standardization=self.standardization,
            pool_index=None if self.pool_index is None else self.pool_index[idx],
        )


def standardize(dataset: BanditDataset) -> BanditDataset:
    """Return a copy with zero-mean, unit-scale contexts; parameters are kept on it."""
    st = Standardizer.fit(dataset.contexts)
    return BanditDataset(
        contexts=st.transform(dataset.contexts),
        actions=dataset.actions,
        rewards=dataset.rewards,
        k=dataset.k,
        propensities=dataset.propensities,
        standardization=st,
        pool_index=dataset.pool_index,
    )


def load_classification_csv(
    path: str | Path, label_column: str = "label"
) -> tuple[np.ndarray, np.ndarray, int]:
    """Read a labelled CSV into ``(contexts, labels, k)``.

    Labels are re-indexed densely to ``[0, k)`` in sorted order of their
    string values; every other column must parse as a real number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if label_column not in header:
            raise ValueError(f"label column {label_column!r} not in {header}")
        li = header.index(label_column)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            labels.append(row[li].strip())
            try:
                feats.append([float(v) for j, v in enumerate(row) if j != li])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric feature ({exc})") from None
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError(f"{path}: need at least 2 classes, found {len(classes)}")
    lookup = {c: i for i, c in enumerate(classes)}
    y = np.array([lookup[c] for c in labels], dtype=int)
    return np.array(feats, dtype=float), y, len(classes)


@dataclass(frozen=True)
class FeatureMap:
    """Joint feature vector ``phi(x, a)`` for linear reward models.

    ``concat`` returns ``[x, onehot(a), 1]``; ``interaction`` places ``[x, 1]``
    in the block of action ``a`` and zeros elsewhere.
    """

    d: int
    k: int
    mode: str = "concat"

    def __post_init__(self):
        if self.mode not in ("concat", "interaction"):
            raise ValueError(f"unknown feature map mode {self.mode!r}")

    @property
    def output_dim(self) -> int:
        if self.mode == "concat":
            return self.d + self.k + 1
        return (self.d + 1) * self.k

    def __call__(self, x: np.ndarray, a: int) -> np.ndarray:
        if not 0 <= a < self.k:
            raise ValueError(f"action {a} out of range [0, {self.k})")
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"context must have length {self.d}")
        return self.batch(x[None, :], np.array([a]))[0]

    def batch(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        A = np.asarray(A, dtype=int)
        n = X.shape[0]
        if n and (A.min() < 0 or A.max() >= self.k):
            raise ValueError(f"actions must lie in [0, {self.k})")
        rows = np.arange(n)
        if self.mode == "concat":
            out = np.zeros((n, self.output_dim))
            out[:, : self.d] = X
            out[rows, self.d + A] = 1.0
            out[:, -1] = 1.0
            return out
        out = np.zeros((n, self.k, self.d + 1))
        out[rows, A, : self.d] = X
        out[rows, A, self.d] = 1.0
        return out.reshape(n, -1)

    def all_actions(self, X: np.ndarray) -> np.ndarray:
        """Features for every action: shape ``(n, k, output_dim)``."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        A = np.tile(np.arange(self.k), n)
        return self.batch(np.repeat(X, self.k, axis=0), A).reshape(n, self.k, -1)


@dataclass(frozen=True)
class StochasticPolicy:
    """Maps contexts to probability vectors over ``k`` actions.

    ``fn`` takes an ``(n, d)`` context matrix and returns an ``(n, k)``
    row-stochastic matrix. ``descriptor`` records the family and parameters.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    k: int
    descriptor: dict = field(default_factory=dict)

    def probs(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.fn(X)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.probs(np.asarray(x, dtype=float)[None, :])[0]

    def prob_of(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        P = self.probs(X)
        return P[np.arange(len(A)), np.asarray(A, dtype=int)]

    def sample(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        P = self.probs(X)
        cum = np.cumsum(P, axis=1)
        u = rng.random(P.shape[0])[:, None] * cum[:, -1:]
        return np.minimum((u >= cum).sum(axis=1), self.k - 1)

    @property
    def name(self) -> str:
        return describe(self.descriptor)


def describe(descriptor: dict) -> str:
    """Compact stable text form of a descriptor, e.g. ``tweak1(rho=0.91)``."""
    family = descriptor.get("family", "policy")
    params = ",".join(f"{k}={v}" for k, v in descriptor.items() if k != "family")
    return f"{family}({params})" if params else family


def constant_policy(p: np.ndarray, descriptor: Optional[dict] = None) -> StochasticPolicy:
    """Context-independent policy returning ``p`` for every context."""
    p = np.asarray(p, dtype=float)
    p = p / p.sum()
    return StochasticPolicy(
        fn=lambda X: np.broadcast_to(p, (X.shape[0], p.size)).copy(),
        k=p.size,
        descriptor=descriptor or {"family": "constant"},
    )
