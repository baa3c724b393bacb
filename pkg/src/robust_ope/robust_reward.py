"""Distributionally robust Gaussian reward model.

The predictor for a (context, action) pair with density ratio ``W`` is
``N(mu, sigma_sq)`` with

    sigma_sq = 1 / (2 W theta_r + 1 / sigma0_sq)
    mu       = sigma_sq * (-2 W theta_x . phi(x, a) + mu0 / sigma0_sq)

so pairs the logging data does not cover (``W -> 0``) fall back to the base
distribution ``N(mu0, sigma0_sq)``. Parameters are fitted by mini-batch
gradient steps on the importance-weighted target log-likelihood.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from itertools import product
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import BanditDataset, FeatureMap
from .optim import TrainingDiverged, sgd

# floor on the predictive precision 2 W theta_r + 1/sigma0_sq
EPS_VAR = 1e-6


@dataclass(frozen=True)
class BaseDistribution:
    mu0: float = 0.6
    sigma0_sq: float = 1.0

    def __post_init__(self):
        if not self.sigma0_sq > 0:
            raise ValueError("sigma0_sq must be positive")


@dataclass(frozen=True)
class RobustParams:
    theta_r: float
    theta_x: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.theta_r) and np.all(np.isfinite(self.theta_x))):
            raise ValueError("parameters must be finite")

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.theta_r], self.theta_x])

    @classmethod
    def unpack(cls, theta: np.ndarray) -> "RobustParams":
        theta = np.asarray(theta, dtype=float)
        return cls(float(theta[0]), theta[1:].copy())


@dataclass(frozen=True)
class GaussianPrediction:
    mu: float
    sigma_sq: float


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 50
    lr_decay: bool = True
    l2_reg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be >= 0")


def moments(
    theta_r: float, theta_x: np.ndarray, base: BaseDistribution, Phi: np.ndarray, W: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised predictive mean and variance for feature rows ``Phi``."""
    W = np.asarray(W, dtype=float)
    precision = np.maximum(2.0 * W * theta_r + 1.0 / base.sigma0_sq, EPS_VAR)
    sigma_sq = 1.0 / precision
    mu = sigma_sq * (-2.0 * W * (Phi @ theta_x) + base.mu0 / base.sigma0_sq)
    return mu, sigma_sq


def predict(
    params: RobustParams, base: BaseDistribution, fm: FeatureMap, x: np.ndarray, a: int, W: float
) -> GaussianPrediction:
    if not (W >= 0 and np.isfinite(W)):
        raise ValueError(f"density ratio must be finite and >= 0, got {W}")
    mu, s2 = moments(params.theta_r, params.theta_x, base, fm(x, a)[None, :], np.array([W]))
    return GaussianPrediction(float(mu[0]), float(s2[0]))


def _gradient(theta: np.ndarray, base, Phi, r, W, l2_reg: float = 0.0) -> np.ndarray:
    mu, s2 = moments(theta[0], theta[1:], base, Phi, W)
    g = np.empty_like(theta)
    g[0] = np.mean(mu * mu + s2 - r * r)
    g[1:] = (mu - r) @ Phi / len(r)
    if l2_reg:
        g -= 2.0 * l2_reg * theta
    return g


def batch_gradient(
    params: RobustParams,
    base: BaseDistribution,
    fm: FeatureMap,
    X: np.ndarray,
    A: np.ndarray,
    r: np.ndarray,
    W: np.ndarray,
    l2_reg: float = 0.0,
) -> tuple[float, np.ndarray]:
    """Mini-batch gradient ``(g_theta_r, g_theta_x)``.

    ``g_theta_r = mean(mu^2 + sigma_sq - r^2)`` and
    ``g_theta_x = mean((mu - r) phi)``. This is the ascent direction of
    :func:`target_log_likelihood` with the ``theta_x`` block scaled by 1/2
    (the constant 2 of the ``2 r phi`` moment is folded into the step size).
    An L2 penalty ``l2_reg * |theta|^2`` contributes ``-2 l2_reg theta``.
    """
    r = np.asarray(r, dtype=float)
    if len(r) == 0:
        raise ValueError("empty batch")
    if np.any(np.asarray(W) < 0):
        raise ValueError("density ratios must be non-negative")
    g = _gradient(params.pack(), base, fm.batch(X, A), r, np.asarray(W, dtype=float), l2_reg)
    return float(g[0]), g[1:]


def _log_partition_over_w(theta, base, Phi, W) -> np.ndarray:
    """``log Z / W`` of the tilted base density, with its ``W -> 0`` limit."""
    W = np.asarray(W, dtype=float)
    lin = Phi @ theta[1:]
    mu, s2 = moments(theta[0], theta[1:], base, Phi, W)
    log_z = 0.5 * np.log(s2 / base.sigma0_sq) + 0.5 * mu * mu / s2
    log_z -= 0.5 * base.mu0**2 / base.sigma0_sq
    limit = -theta[0] * (base.mu0**2 + base.sigma0_sq) - 2.0 * lin * base.mu0
    small = W < 1e-10
    return np.where(small, limit, log_z / np.where(small, 1.0, W))


def target_log_likelihood(
    params: RobustParams,
    base: BaseDistribution,
    fm: FeatureMap,
    X: np.ndarray,
    A: np.ndarray,
    r: np.ndarray,
    W: np.ndarray,
) -> float:
    """Mean importance-weighted target log-likelihood of a batch (up to a constant).

    Each source sample contributes ``log f_theta(r | x, a) / W``, i.e. the
    Lagrangian dual ``-theta_r r^2 - 2 r theta_x.phi - log Z / W``. Training
    maximises this quantity; its exact gradient is
    ``(mean(mu^2 + sigma_sq - r^2), 2 mean((mu - r) phi))``.
    """
    return _objective(params.pack(), base, fm.batch(X, A), np.asarray(r, float), W)


def _objective(theta, base, Phi, r, W) -> float:
    lin = Phi @ theta[1:]
    per = -theta[0] * r * r - 2.0 * r * lin - _log_partition_over_w(theta, base, Phi, W)
    return float(np.mean(per))


def init_params(dim: int, seed: int) -> np.ndarray:
    """``theta`` drawn i.i.d. from ``N(0, 0.01^2)``."""
    return np.random.default_rng(seed).normal(0.0, 0.01, size=dim + 1)


def train(
    dataset: BanditDataset,
    W: np.ndarray,
    base: BaseDistribution,
    fm: FeatureMap,
    cfg: TrainConfig,
) -> RobustParams:
    """Fit the robust model by SGD; ``W`` holds one density ratio per logged sample."""
    W = np.asarray(W, dtype=float)
    if W.shape != (dataset.n,):
        raise ValueError("W must hold one ratio per sample")
    if np.any(W < 0) or not np.all(np.isfinite(W)):
        raise ValueError("density ratios must be finite and non-negative")
    Phi = fm.batch(dataset.contexts, dataset.actions)
    r = np.asarray(dataset.rewards, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    theta0 = init_params(fm.output_dim, cfg.seed)

    def grad(idx, theta):
        return _gradient(theta, base, Phi[idx], r[idx], W[idx], cfg.l2_reg)

    theta = sgd(
        grad,
        theta0,
        dataset.n,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        lr_decay=cfg.lr_decay,
        rng=rng,
        ascent=True,
    )
    return RobustParams.unpack(theta)


@dataclass(frozen=True)
class RobustRewardModel:
    params: RobustParams
    base: BaseDistribution
    fm: FeatureMap

    def predict(self, X: np.ndarray, A: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return moments(
            self.params.theta_r, self.params.theta_x, self.base, self.fm.batch(X, A), W
        )

    def mean(self, X: np.ndarray, A: np.ndarray, W: np.ndarray) -> np.ndarray:
        return self.predict(X, A, W)[0]

    def to_dict(self) -> dict:
        return {
            "theta_r": self.params.theta_r,
            "theta_x": self.params.theta_x.tolist(),
            "mu0": self.base.mu0,
            "sigma0_sq": self.base.sigma0_sq,
            "feature_map_mode": self.fm.mode,
            "d": self.fm.d,
            "k": self.fm.k,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "RobustRewardModel":
        return cls(
            RobustParams(float(rec["theta_r"]), np.asarray(rec["theta_x"], dtype=float)),
            BaseDistribution(float(rec["mu0"]), float(rec["sigma0_sq"])),
            FeatureMap(int(rec["d"]), int(rec["k"]), rec["feature_map_mode"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "RobustRewardModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LinearRewardModel:
    """Least-squares reward regression on the same features (the ERM baseline)."""

    theta: np.ndarray
    fm: FeatureMap

    def mean(self, X: np.ndarray, A: np.ndarray, W=None) -> np.ndarray:
        return self.fm.batch(X, A) @ self.theta


def train_least_squares(
    dataset: BanditDataset, fm: FeatureMap, cfg: TrainConfig
) -> LinearRewardModel:
    Phi = fm.batch(dataset.contexts, dataset.actions)
    r = np.asarray(dataset.rewards, dtype=float)

    def grad(idx, theta):
        P = Phi[idx]
        g = (P @ theta - r[idx]) @ P / len(idx)
        if cfg.l2_reg:
            g += 2.0 * cfg.l2_reg * theta
        return g

    theta = sgd(
        grad,
        init_params(fm.output_dim, cfg.seed)[1:],
        dataset.n,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        epochs=cfg.epochs,
        lr_decay=cfg.lr_decay,
        rng=np.random.default_rng(cfg.seed),
    )
    return LinearRewardModel(theta, fm)


@dataclass(frozen=True)
class GridSpec:
    """Hyperparameter grid searched by held-out validation loss."""

    learning_rates: Sequence[float] = (0.001, 0.0005)
    batch_sizes: Sequence[int] = (8, 32, 64, 256)
    val_fraction: float = 0.1

    def configs(self, template: TrainConfig) -> list[TrainConfig]:
        return [
            replace(template, learning_rate=lr, batch_size=bs)
            for lr, bs in product(self.learning_rates, self.batch_sizes)
        ]


def select_config(
    n: int,
    fit: Callable[[np.ndarray, TrainConfig], object],
    loss: Callable[[object, np.ndarray], float],
    grid: GridSpec,
    template: TrainConfig,
) -> TrainConfig:
    """Pick the grid point with the lowest loss on a seeded held-out slice.

    ``fit(train_idx, cfg)`` returns a model and ``loss(model, val_idx)`` its
    validation loss; diverged fits are skipped.
    """
    configs = grid.configs(template)
    if len(configs) == 1:
        return configs[0]
    perm = np.random.default_rng([template.seed, 7919]).permutation(n)
    n_val = max(1, int(round(grid.val_fraction * n)))
    val, tr = perm[:n_val], perm[n_val:]
    best, best_loss = configs[0], np.inf
    for cfg in configs:
        try:
            score = loss(fit(tr, cfg), val)
        except TrainingDiverged:
            continue
        if np.isfinite(score) and score < best_loss:
            best, best_loss = cfg, score
    return best


def fit_robust(
    dataset: BanditDataset,
    W: np.ndarray,
    base: BaseDistribution,
    fm: FeatureMap,
    template: TrainConfig,
    grid: Optional[GridSpec] = None,
) -> tuple[RobustRewardModel, TrainConfig]:
    """Grid-select (by validation target NLL) and train a robust reward model."""
    W = np.asarray(W, dtype=float)
    cfg = template
    if grid is not None:

        def nll(params: RobustParams, idx: np.ndarray) -> float:
            ds = dataset.subset(idx)
            return -target_log_likelihood(
                params, base, fm, ds.contexts, ds.actions, ds.rewards, W[idx]
            )

        cfg = select_config(
            dataset.n,
            lambda idx, c: train(dataset.subset(idx), W[idx], base, fm, c),
            nll,
            grid,
            template,
        )
    return RobustRewardModel(train(dataset, W, base, fm, cfg), base, fm), cfg


def fit_least_squares(
    dataset: BanditDataset,
    fm: FeatureMap,
    template: TrainConfig,
    grid: Optional[GridSpec] = None,
) -> tuple[LinearRewardModel, TrainConfig]:
    """Grid-select (by validation MSE) and train the least-squares baseline."""
    cfg = template
    if grid is not None:

        def mse(model: LinearRewardModel, idx: np.ndarray) -> float:
            ds = dataset.subset(idx)
            return float(np.mean((model.mean(ds.contexts, ds.actions) - ds.rewards) ** 2))

        cfg = select_config(
            dataset.n,
            lambda idx, c: train_least_squares(dataset.subset(idx), fm, c),
            mse,
            grid,
            template,
        )
    return train_least_squares(dataset, fm, cfg), cfg


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
