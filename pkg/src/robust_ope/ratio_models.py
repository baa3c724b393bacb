"""Density ratios ``W(x, a) = P_s(x, a) / P_t(x, a)`` and importance weights.

Ratios come either from ground truth (the logging policy and the context
sampling weights used to build a scenario) or from fitted logistic models:
a multinomial model of the logging policy and a source-vs-target
discriminator for the context marginal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .core import BanditDataset, StochasticPolicy
from .optim import sgd

PROB_FLOOR = 1e-3

KINDS = ("known_ps", "known_gcs", "fitted_ps", "fitted_gcs")


def _with_bias(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    k: int,
    *,
    epochs: int = 200,
    learning_rate: float = 0.1,
    batch_size: int = 32,
    seed: int = 0,
) -> np.ndarray:
    """Multinomial logistic regression by SGD on cross-entropy.

    Returns weights of shape ``(d + 1, k)``; the last row is the bias.
    """
    Xb = _with_bias(X)
    y = np.asarray(y, dtype=int)
    onehot = np.eye(k)[y]
    n, p = Xb.shape

    def grad(idx, theta):
        B = Xb[idx]
        P = softmax(B @ theta.reshape(p, k))
        return (B.T @ (P - onehot[idx]) / len(idx)).ravel()

    theta = sgd(
        grad,
        np.zeros(p * k),
        n,
        learning_rate=learning_rate,
        batch_size=batch_size,
        epochs=epochs,
        lr_decay=True,
        rng=np.random.default_rng(seed),
    )
    return theta.reshape(p, k)


@dataclass(frozen=True)
class PropensityModel:
    """Estimated logging policy ``beta_hat(a | x)``.

    Actions never seen during fitting get probability ``prob_floor`` before
    renormalisation.
    """

    weights: np.ndarray
    k: int
    observed: np.ndarray
    prob_floor: float = PROB_FLOOR

    def probs(self, X: np.ndarray) -> np.ndarray:
        P = softmax(_with_bias(X) @ self.weights)
        P = np.where(self.observed, P, 0.0)
        P = np.maximum(P / P.sum(axis=1, keepdims=True), self.prob_floor)
        return P / P.sum(axis=1, keepdims=True)

    def prob_of(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        return self.probs(X)[np.arange(len(A)), np.asarray(A, dtype=int)]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(_with_bias(X) @ self.weights, axis=1)

    def as_policy(self) -> StochasticPolicy:
        return StochasticPolicy(self.probs, self.k, {"family": "fitted_propensity"})


def fit_propensity(
    samples: BanditDataset, *, epochs: int = 200, learning_rate: float = 0.1, seed: int = 0
) -> PropensityModel:
    observed = np.bincount(samples.actions, minlength=samples.k) > 0
    if observed.sum() < 2:
        raise ValueError("need at least 2 distinct logged actions to fit a propensity model")
    w = fit_logistic(
        samples.contexts, samples.actions, samples.k,
        epochs=epochs, learning_rate=learning_rate, seed=seed,
    )
    return PropensityModel(w, samples.k, observed)


def empirical_propensity(samples: BanditDataset) -> PropensityModel:
    """Context-free propensity from logged action frequencies.

    Fallback for logs too degenerate for :func:`fit_propensity` (a single
    distinct action).
    """
    counts = np.bincount(samples.actions, minlength=samples.k).astype(float)
    observed = counts > 0
    weights = np.zeros((samples.d + 1, samples.k))
    weights[-1] = np.log(np.where(observed, counts, 1.0) / counts.sum())
    return PropensityModel(weights, samples.k, observed)


@dataclass(frozen=True)
class ContextRatioModel:
    """Discriminative estimate of ``P_s(x) / P_t(x)``.

    ``ratio(x) = p(source|x) / p(target|x) * n_target / n_source`` with the
    classifier probability clipped to ``[floor, 1 - floor]``.
    """

    weights: np.ndarray
    prior_correction: float
    prob_floor: float = PROB_FLOOR

    def source_prob(self, X: np.ndarray) -> np.ndarray:
        z = _with_bias(X) @ self.weights
        return np.clip(1.0 / (1.0 + np.exp(-z)), self.prob_floor, 1.0 - self.prob_floor)

    def ratio_from_prob(self, p: np.ndarray) -> np.ndarray:
        p = np.clip(np.asarray(p, dtype=float), self.prob_floor, 1.0 - self.prob_floor)
        return p / (1.0 - p) * self.prior_correction

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.ratio_from_prob(self.source_prob(X))


def fit_context_ratio(
    source_contexts: np.ndarray,
    target_contexts: np.ndarray,
    *,
    epochs: int = 200,
    learning_rate: float = 0.1,
    seed: int = 0,
) -> ContextRatioModel:
    S = np.atleast_2d(np.asarray(source_contexts, dtype=float))
    T = np.atleast_2d(np.asarray(target_contexts, dtype=float))
    if len(S) == 0 or len(T) == 0:
        raise ValueError("source and target context sets must be nonempty")
    X = np.vstack([S, T])
    y = np.concatenate([np.ones(len(S), int), np.zeros(len(T), int)])
    w = fit_logistic(X, y, 2, epochs=epochs, learning_rate=learning_rate, seed=seed)
    # two-class softmax logits reduce to a single logistic weight vector
    return ContextRatioModel(w[:, 1] - w[:, 0], len(T) / len(S))


LoggingModel = Union[StochasticPolicy, PropensityModel]


@dataclass(frozen=True)
class RatioModel:
    """Supplies ``W(x, a)`` for the robust model and ``1 / W`` as IPS weights.

    ``logging`` is the true logging policy (``known_*`` kinds) or a fitted
    :class:`PropensityModel`; ``context_ratio`` maps contexts to
    ``P_s(x) / P_t(x)`` and is required for the GCS kinds.
    """

    kind: str
    logging: LoggingModel
    context_ratio: Optional[Callable[[np.ndarray], np.ndarray]] = None
    floor: float = PROB_FLOOR

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ratio kind {self.kind!r}")
        if self.is_gcs and self.context_ratio is None:
            raise ValueError(f"{self.kind} needs a context ratio")

    @property
    def is_gcs(self) -> bool:
        return self.kind.endswith("gcs")

    def _context(self, X) -> np.ndarray:
        if not self.is_gcs:
            return np.ones(np.atleast_2d(X).shape[0])
        return np.asarray(self.context_ratio(X), dtype=float)

    def w(self, X: np.ndarray, A: np.ndarray, target: StochasticPolicy) -> np.ndarray:
        """``beta(a|x) / pi(a|x)`` (times ``P_s(x)/P_t(x)`` for GCS); ``pi`` floored."""
        beta = self.logging.prob_of(X, A)
        pi = np.maximum(target.prob_of(X, A), self.floor)
        return beta / pi * self._context(X)

    def w_all(self, X: np.ndarray, target: StochasticPolicy) -> np.ndarray:
        """Ratios for every action, shape ``(n, k)``."""
        beta = self.logging.probs(X)
        pi = np.maximum(target.probs(X), self.floor)
        return beta / pi * self._context(X)[:, None]

    def ips_weights(self, X: np.ndarray, A: np.ndarray, target: StochasticPolicy) -> np.ndarray:
        """``pi(a|x) / beta(a|x)`` (divided by ``P_s(x)/P_t(x)`` for GCS); source terms floored."""
        beta = np.maximum(self.logging.prob_of(X, A), self.floor)
        ctx = np.maximum(self._context(X), self.floor)
        return target.prob_of(X, A) / (beta * ctx)


def ratio_w(model: RatioModel, x: np.ndarray, a: int, target: StochasticPolicy) -> float:
    return float(model.w(np.asarray(x)[None, :], np.array([a]), target)[0])


def ips_weight(model: RatioModel, x: np.ndarray, a: int, target: StochasticPolicy) -> float:
    return float(model.ips_weights(np.asarray(x)[None, :], np.array([a]), target)[0])
