"""Turn a labelled classification dataset into logged-bandit evaluation scenarios.

A context is a feature row, an action is a class label and the reward is 1
when the action matches the label. A scenario fixes a logging policy, a
target policy and optionally a shift of the logging context distribution,
then draws train and evaluation logging data while keeping every
ground-truth sampling weight so that exact density ratios stay available.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .core import BanditDataset, Standardizer, StochasticPolicy, load_classification_csv
from .ratio_models import PROB_FLOOR, fit_logistic, softmax

POLICY_FAMILIES = ("softened", "softened_perfect", "diverse_softened_perfect", "tweak1", "dirichlet")
SHIFT_KINDS = ("none", "gaussian_pca", "tweak1_covariate")


@dataclass(frozen=True)
class ClassificationData:
    X: np.ndarray
    y: np.ndarray
    k: int
    name: str = "data"

    @classmethod
    def from_csv(cls, path, name: Optional[str] = None, label_column: str = "label"):
        X, y, k = load_classification_csv(path, label_column)
        return cls(X, y, k, name or Path(path).stem)


@dataclass(frozen=True)
class PolicySpec:
    """``softened`` / ``softened_perfect`` take ``lam`` and ``zeta``; ``tweak1``
    takes ``rho``; ``dirichlet`` takes ``gamma``. ``seed`` fixes the chosen
    class, the Dirichlet draw or the class permutation."""

    family: str
    lam: Optional[float] = None
    zeta: float = 0.0
    rho: Optional[float] = None
    gamma: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in POLICY_FAMILIES:
            raise ValueError(f"unknown policy family {self.family!r}")
        if self.family in ("softened", "softened_perfect"):
            if self.lam is None:
                raise ValueError(f"{self.family} needs lam")
            if not (0 <= self.zeta and self.lam + self.zeta / 2 <= 1 and self.lam - self.zeta / 2 >= 0):
                raise ValueError("softened policies need 0 <= lam - zeta/2 and lam + zeta/2 <= 1")
        if self.family == "tweak1" and not (self.rho is not None and 0 < self.rho < 1):
            raise ValueError("tweak1 needs rho in (0, 1)")
        if self.family == "dirichlet" and not (self.gamma is not None and self.gamma > 0):
            raise ValueError("dirichlet needs gamma > 0")

    def label(self) -> str:
        if self.family in ("softened", "softened_perfect"):
            return f"{self.family}({self.lam},{self.zeta})"
        if self.family == "tweak1":
            return f"tweak1({self.rho})"
        if self.family == "dirichlet":
            return f"dirichlet({self.gamma})"
        return self.family


@dataclass(frozen=True)
class ShiftSpec:
    """Logging context shift. ``gaussian_pca`` takes ``a`` and ``b``;
    ``tweak1_covariate`` takes ``omega`` and an optional ``chosen_class``
    (drawn from ``seed`` when omitted)."""

    kind: str = "none"
    a: Optional[float] = None
    b: Optional[float] = None
    omega: Optional[float] = None
    chosen_class: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHIFT_KINDS:
            raise ValueError(f"unknown shift kind {self.kind!r}")
        if self.kind == "gaussian_pca" and not (
            self.a is not None and self.a > 0 and self.b is not None and self.b > 0
        ):
            raise ValueError("gaussian_pca needs a > 0 and b > 0")
        if self.kind == "tweak1_covariate" and not (self.omega is not None and self.omega >= 1):
            raise ValueError("tweak1_covariate needs omega >= 1")

    def label(self) -> str:
        if self.kind == "gaussian_pca":
            return f"gaussian_pca({self.a},{self.b})"
        if self.kind == "tweak1_covariate":
            return f"tweak1_covariate({self.omega})"
        return "none"


@dataclass(frozen=True)
class Condition:
    dataset: str
    logging: PolicySpec
    target: PolicySpec
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    propensity_known: bool = True
    context_ratio_known: bool = True
    repetitions: int = 30
    seed: int = 0
    logging_size: Optional[int] = None
    eval_size: Optional[int] = None
    sampled_value: bool = False
    max_logging_size: int = 100_000

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    @property
    def regime(self) -> str:
        return "ps" if self.shift.kind == "none" else "gcs"

    @property
    def knowledge_flags(self) -> str:
        p = "beta_known" if self.propensity_known else "beta_fitted"
        if self.regime == "ps":
            return p
        return p + ("+ctx_known" if self.context_ratio_known else "+ctx_fitted")

    @property
    def condition_id(self) -> str:
        return "|".join(
            [self.dataset, self.logging.label(), self.target.label(), self.shift.label(), self.knowledge_flags]
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, rec: dict) -> "Condition":
        rec = dict(rec)
        rec["logging"] = PolicySpec(**rec["logging"])
        rec["target"] = PolicySpec(**rec["target"])
        rec["shift"] = ShiftSpec(**rec.get("shift", {}))
        return cls(**rec)


# ---------------------------------------------------------------- lookups


def _row_keys(X: np.ndarray) -> list[bytes]:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    return [row.tobytes() for row in X]


class RowLookup:
    """Map context rows (by exact float bytes) to values; first occurrence wins."""

    def __init__(self, X: np.ndarray, values: np.ndarray, what: str = "context"):
        self._map: dict[bytes, float] = {}
        for key, v in zip(_row_keys(X), values):
            self._map.setdefault(key, v)
        self.what = what

    def __contains__(self, x) -> bool:
        return _row_keys(x)[0] in self._map

    def __call__(self, X: np.ndarray) -> np.ndarray:
        try:
            return np.array([self._map[k] for k in _row_keys(X)])
        except KeyError:
            raise ValueError(f"{self.what} not in the generated pool") from None


def pool_context_ratio(X_pool: np.ndarray, weights: np.ndarray) -> RowLookup:
    """``P_s(x) / P_t(x)`` for every distinct row of a pool.

    The source puts mass ``weights`` on rows and the target is uniform over
    rows, so duplicated rows pool their mass.
    """
    keys = _row_keys(X_pool)
    n = len(keys)
    mass: dict[bytes, float] = {}
    count: dict[bytes, int] = {}
    for key, w in zip(keys, weights):
        mass[key] = mass.get(key, 0.0) + float(w)
        count[key] = count.get(key, 0) + 1
    ratio = [mass[k] * n / count[k] for k in keys]
    return RowLookup(X_pool, np.array(ratio), "context")


def _context_uniform(seed: int) -> Callable[[np.ndarray], np.ndarray]:
    """Per-context ``Uniform(-0.5, 0.5)`` draw that is a pure function of the row."""
    key = int(seed % 2**64).to_bytes(8, "little")
    cache: dict[bytes, float] = {}

    def draw(X):
        out = np.empty(len(X))
        for i, rk in enumerate(_row_keys(X)):
            if rk not in cache:
                h = hashlib.blake2b(rk, digest_size=8, key=key).digest()
                cache[rk] = int.from_bytes(h, "little") / 2.0**64 - 0.5
            out[i] = cache[rk]
        return out

    return draw


# ---------------------------------------------------------------- policies


def _soften(main: np.ndarray, p_main: np.ndarray, k: int) -> np.ndarray:
    P = np.repeat(((1.0 - p_main) / (k - 1))[:, None], k, axis=1)
    P[np.arange(len(main)), main] = p_main
    return P


def tweak1_vector(k: int, rho: float, chosen: int) -> np.ndarray:
    p = np.full(k, (1.0 - rho) / (k - 1))
    p[chosen] = rho
    return p


def make_policy(
    spec: PolicySpec,
    k: int,
    *,
    classifier: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    labels: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    u_seed: int = 0,
) -> StochasticPolicy:
    """Build a policy from its spec.

    ``classifier`` is the deterministic policy softened by ``softened``;
    ``labels`` returns true labels for the perfect families; ``u_seed``
    seeds the per-context softening noise.
    """
    if k < 2:
        raise ValueError("need at least 2 actions")
    desc = {"family": spec.family, **{f: v for f, v in asdict(spec).items() if f != "family" and v is not None}}
    rng = np.random.default_rng([spec.seed, k])

    if spec.family in ("softened", "softened_perfect"):
        base = classifier if spec.family == "softened" else labels
        if base is None:
            raise ValueError(f"{spec.family} needs a {'classifier' if spec.family == 'softened' else 'label lookup'}")
        lam, zeta = spec.lam, spec.zeta
        u = _context_uniform(u_seed) if zeta else None

        def fn(X):
            main = np.asarray(base(X), dtype=int)
            p = np.full(len(X), lam) if u is None else lam + zeta * u(X)
            return _soften(main, p, k)

        return StochasticPolicy(fn, k, desc)

    if spec.family == "diverse_softened_perfect":
        if labels is None:
            raise ValueError("diverse_softened_perfect needs a label lookup")
        lam_c = rng.permutation(np.arange(1, k + 1) / k)
        desc["lam_by_class"] = lam_c.round(6).tolist()

        def fn(X):
            y = np.asarray(labels(X), dtype=int)
            return _soften(y, lam_c[y], k)

        return StochasticPolicy(fn, k, desc)

    if spec.family == "tweak1":
        chosen = int(rng.integers(k))
        desc["chosen"] = chosen
        p = tweak1_vector(k, spec.rho, chosen)
    else:
        p = rng.dirichlet(np.full(k, spec.gamma))
        if spec.gamma == 0.1:
            p = 0.95 * p + 0.05 / k
        desc["probs"] = p.round(6).tolist()
    return StochasticPolicy(lambda X: np.broadcast_to(p, (len(X), k)).copy(), k, desc)


# ---------------------------------------------------------------- shifts


def first_principal_component(X: np.ndarray, iters: int = 200, tol: float = 1e-10) -> np.ndarray:
    """Leading eigenvector of the sample covariance by power iteration.

    The sign is fixed so the largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / max(len(X) - 1, 1)
    v = np.random.default_rng(0).normal(size=C.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = C @ v
        norm = np.linalg.norm(u)
        if norm == 0:
            raise ValueError("covariance is zero; no principal direction")
        u /= norm
        done = np.linalg.norm(C @ u - (u @ C @ u) * u) < tol
        v = u
        if done:
            break
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def gaussian_shift_log_density(contexts: np.ndarray, a: float, b: float) -> np.ndarray:
    """Log of the ``N(m, s^2)`` density at each row's first principal component score.

    ``m = min(c) + (min(c) - mean(c)) / a`` and ``s = std(c) / b``.
    """
    X = np.asarray(contexts, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 contexts")
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    c = (X - X.mean(axis=0)) @ first_principal_component(X)
    sd = c.std()
    if sd <= 1e-12:
        raise ValueError("principal component scores are all equal")
    m = c.min() + (c.min() - c.mean()) / a
    s = sd / b
    return -0.5 * ((c - m) / s) ** 2 - np.log(s * np.sqrt(2 * np.pi))


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    return softmax(np.asarray(logw, dtype=float)[None, :])[0]


def gaussian_shift_weights(contexts: np.ndarray, a: float, b: float) -> np.ndarray:
    """Sampling weights proportional to the shifted Gaussian density; sum to 1."""
    return _normalize_log(gaussian_shift_log_density(contexts, a, b))


def tweak1_shift_weights(labels: np.ndarray, omega: float, chosen_class: int) -> np.ndarray:
    """Weight ``omega`` on rows of ``chosen_class`` and 1 elsewhere, normalised."""
    labels = np.asarray(labels)
    if omega < 1:
        raise ValueError("omega must be >= 1")
    w = np.where(labels == chosen_class, float(omega), 1.0)
    return w / w.sum()


def tweak1_shift_class(shift: ShiftSpec, k: int) -> int:
    if shift.chosen_class is not None:
        return int(shift.chosen_class)
    return int(np.random.default_rng([shift.seed, k, 1]).integers(k))


def shift_log_weights(shift: ShiftSpec, data: ClassificationData) -> np.ndarray:
    """Unnormalised log sampling weight of every dataset row under ``shift``."""
    n = len(data.y)
    if shift.kind == "none":
        return np.zeros(n)
    if shift.kind == "gaussian_pca":
        Z = Standardizer.fit(data.X).transform(data.X)
        return gaussian_shift_log_density(Z, shift.a, shift.b)
    cls = tweak1_shift_class(shift, data.k)
    if not np.any(data.y == cls):
        raise ValueError(f"class {cls} absent from the data")
    return np.log(np.where(data.y == cls, float(shift.omega), 1.0))


# ---------------------------------------------------------------- generation


@dataclass(frozen=True)
class GeneratedScenario:
    """One repetition of a condition.

    Contexts everywhere are standardised with statistics of the train
    logging contexts. ``train_context_ratio`` / ``eval_context_ratio`` give
    the exact ``P_s(x) / P_t(x)`` on the train / test split.
    """

    condition: Condition
    rep: int
    k: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    train_logging: BanditDataset
    eval_logging: BanditDataset
    target_contexts: np.ndarray
    train_contexts: np.ndarray
    true_value: float
    logging_policy: StochasticPolicy
    target_policy: StochasticPolicy
    train_context_ratio: RowLookup
    eval_context_ratio: RowLookup
    model_seed: int

    @property
    def regime(self) -> str:
        return self.condition.regime


def _train_classifier(Z, y, k, seed) -> Callable[[np.ndarray], np.ndarray]:
    W = fit_logistic(Z, y, k, seed=seed)

    def predict(X):
        X = np.atleast_2d(X)
        return np.argmax(np.hstack([X, np.ones((len(X), 1))]) @ W, axis=1)

    return predict


def _draw_logging(policy, Z, y, rows, rng, k, standardizer) -> BanditDataset:
    X = Z[rows]
    A = policy.sample(X, rng)
    return BanditDataset(
        contexts=X,
        actions=A,
        rewards=(A == y[rows]).astype(float),
        k=k,
        propensities=policy.prob_of(X, A),
        standardization=standardizer,
        pool_index=rows,
    )


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint32)[0])


def generate(cond: Condition, data: ClassificationData, rep: int = 0) -> GeneratedScenario:
    """Split, build policies and context weights, compute V^T, draw logging data."""
    n, k = len(data.y), data.k
    s = np.random.SeedSequence([cond.seed, rep]).spawn(8)
    rng_split, rng_ctx, rng_act_tr, rng_act_ev, rng_sub, rng_val = (
        np.random.default_rng(x) for x in s[:6]
    )
    seed_pol, seed_model = s[6], s[7]

    perm = rng_split.permutation(n)
    n_tr = int(round(0.75 * n))
    train_idx, test_idx = np.sort(perm[:n_tr]), np.sort(perm[n_tr:])
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ValueError("empty train or test split")

    n_log = cond.logging_size or len(train_idx)
    n_eval = cond.eval_size or len(test_idx)
    if max(n_log, n_eval) > cond.max_logging_size:
        raise ValueError(f"logging sample size exceeds cap {cond.max_logging_size}")

    logw = shift_log_weights(cond.shift, data)
    w_tr, w_te = _normalize_log(logw[train_idx]), _normalize_log(logw[test_idx])
    tr_rows = train_idx[rng_ctx.choice(len(train_idx), n_log, p=w_tr)]
    ev_rows = test_idx[rng_ctx.choice(len(test_idx), n_eval, p=w_te)]

    st = Standardizer.fit(data.X[tr_rows])
    Z = st.transform(data.X)
    y = data.y
    labels = RowLookup(Z, y, "context")

    pol_seeds = [_seed_int(x) for x in seed_pol.spawn(4)]
    sub = np.sort(rng_sub.choice(train_idx, max(2, int(round(0.1 * len(train_idx)))), replace=False))
    psi_hat = _train_classifier(Z[sub], y[sub], k, pol_seeds[0])
    psi = _train_classifier(Z[train_idx], y[train_idx], k, pol_seeds[1])
    beta = make_policy(cond.logging, k, classifier=psi_hat, labels=labels, u_seed=pol_seeds[2])
    pi = make_policy(cond.target, k, classifier=psi, labels=labels, u_seed=pol_seeds[3])

    Z_test = Z[test_idx]
    if cond.sampled_value:
        A = pi.sample(Z_test, rng_val)
        v_true = float(np.mean(A == y[test_idx]))
    else:
        v_true = float(np.mean(pi.prob_of(Z_test, y[test_idx])))

    return GeneratedScenario(
        condition=cond,
        rep=rep,
        k=k,
        train_idx=train_idx,
        test_idx=test_idx,
        train_logging=_draw_logging(beta, Z, y, tr_rows, rng_act_tr, k, st),
        eval_logging=_draw_logging(beta, Z, y, ev_rows, rng_act_ev, k, st),
        target_contexts=Z_test,
        train_contexts=Z[train_idx],
        true_value=v_true,
        logging_policy=beta,
        target_policy=pi,
        train_context_ratio=pool_context_ratio(Z[train_idx], w_tr),
        eval_context_ratio=pool_context_ratio(Z_test, w_te),
        model_seed=_seed_int(seed_model),
    )


def true_ratio(scenario: GeneratedScenario, x: np.ndarray, a: int) -> float:
    """Exact ``W(x, a)``: context ratio from construction-time weights times ``beta / pi``.

    Test-split contexts are looked up first, then train-split contexts;
    ``pi`` is floored at the same value the ratio models use.
    """
    x = np.asarray(x, dtype=float)[None, :]
    for lookup in (scenario.eval_context_ratio, scenario.train_context_ratio):
        if x in lookup:
            ctx = float(lookup(x)[0])
            break
    else:
        raise ValueError("context not in the generated pool")
    A = np.array([a])
    beta = scenario.logging_policy.prob_of(x, A)[0]
    pi = max(scenario.target_policy.prob_of(x, A)[0], PROB_FLOOR)
    return ctx * beta / pi


def export_scenario(scenario: GeneratedScenario, out_dir) -> Path:
    """Write ``logging.csv``, ``target_contexts.csv`` and ``meta.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = scenario.train_logging
    d = log.d
    true_w = [true_ratio(scenario, x, int(a)) for x, a in zip(log.contexts, log.actions)]
    header = ",".join([f"x{j}" for j in range(d)] + ["a", "r", "true_w"])
    rows = np.column_stack([log.contexts, log.actions, log.rewards, true_w])
    np.savetxt(out / "logging.csv", rows, delimiter=",", header=header, comments="", fmt="%.17g")
    np.savetxt(
        out / "target_contexts.csv",
        scenario.target_contexts,
        delimiter=",",
        header=",".join(f"x{j}" for j in range(d)),
        comments="",
        fmt="%.17g",
    )
    meta = {
        "condition_id": scenario.condition.condition_id,
        "condition": scenario.condition.to_dict(),
        "rep": scenario.rep,
        "true_value": scenario.true_value,
        "logging_policy": scenario.logging_policy.descriptor,
        "target_policy": scenario.target_policy.descriptor,
        "model_seed": scenario.model_seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return out
