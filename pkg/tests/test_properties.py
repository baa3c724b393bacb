"""Hypothesis property tests for the invariants that must hold for any input."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robust_ope.bench import aggregate
from robust_ope.core import BanditDataset, FeatureMap, constant_policy
from robust_ope.estimators import (
    RewardFn,
    estimate_dr,
    estimate_ips,
    estimate_snips,
    estimate_sndr,
    zero_reward,
)
from robust_ope.ratio_models import ContextRatioModel, RatioModel
from robust_ope.robust_reward import BaseDistribution, moments
from robust_ope.scenarios import PolicySpec, make_policy

settings.register_profile("repo", max_examples=60, deadline=None)
settings.load_profile("repo")

finite = st.floats(-1e3, 1e3, allow_nan=False)
seeds = st.integers(0, 2**31 - 1)


@st.composite
def policy_specs(draw):
    family = draw(st.sampled_from(["softened", "softened_perfect", "diverse_softened_perfect", "tweak1", "dirichlet"]))
    seed = draw(st.integers(0, 1000))
    if family in ("softened", "softened_perfect"):
        zeta = draw(st.floats(0, 0.5))
        lam = draw(st.floats(zeta / 2, 1 - zeta / 2))
        return PolicySpec(family, lam=lam, zeta=zeta, seed=seed)
    if family == "tweak1":
        return PolicySpec(family, rho=draw(st.floats(0.01, 0.99)), seed=seed)
    if family == "dirichlet":
        return PolicySpec(family, gamma=draw(st.sampled_from([0.1, 0.5, 1.0, 3.0])), seed=seed)
    return PolicySpec(family, seed=seed)


@settings(max_examples=25)
@given(policy_specs(), st.integers(2, 10), seeds)
def test_policies_are_distributions(spec, k, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(10_000, 3))
    labels = lambda X: (np.abs(X[:, 0]) * 1000).astype(int) % k  # noqa: E731
    pi = make_policy(spec, k, classifier=labels, labels=labels, u_seed=seed)
    P = pi.probs(X)
    assert P.shape == (10_000, k)
    assert np.all(P >= 0) and np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-9


@given(st.integers(1, 5), st.integers(2, 6), st.sampled_from(["concat", "interaction"]), seeds)
def test_feature_map_injective_in_action(d, k, mode, seed):
    fm = FeatureMap(d, k, mode)
    x = np.random.default_rng(seed).normal(size=d)
    vecs = {fm(x, a).tobytes() for a in range(k)}
    assert len(vecs) == k


@given(finite, arrays(float, 4, elements=finite))
def test_zero_ratio_returns_base(theta_r, theta_x):
    base = BaseDistribution()
    Phi = np.random.default_rng(0).normal(size=(3, 4))
    mu, s2 = moments(theta_r, theta_x, base, Phi, np.zeros(3))
    assert np.all(mu == base.mu0) and np.all(s2 == base.sigma0_sq)


@given(st.floats(1e-3, 10), st.lists(st.floats(0, 100), min_size=2, max_size=20, unique=True))
def test_variance_strictly_decreasing_in_ratio(theta_r, ws):
    W = np.sort(np.array(ws))
    _, s2 = moments(theta_r, np.zeros(1), BaseDistribution(), np.zeros((len(W), 1)), W)
    # strict until the precision exceeds what a double can separate
    assert np.all(np.diff(s2) <= 0)
    gaps = np.diff(2 * W * theta_r) > 1e-9 * (2 * W[1:] * theta_r + 1)
    assert np.all(np.diff(s2)[gaps] < 0)


policy_vec = arrays(float, 3, elements=st.floats(0, 1)).filter(lambda p: p.sum() > 0).map(lambda p: p / p.sum())


@given(policy_vec, policy_vec, st.floats(0, 1e4), st.integers(0, 2))
def test_weights_finite_nonnegative(beta, pi, ctx, a):
    m = RatioModel("known_gcs", constant_policy(beta), context_ratio=lambda X: np.full(len(X), ctx))
    X, A = np.zeros((1, 1)), np.array([a])
    for w in (m.w(X, A, constant_policy(pi)), m.ips_weights(X, A, constant_policy(pi))):
        assert np.all(np.isfinite(w)) and np.all(w >= 0)


@given(arrays(float, 4, elements=st.floats(-50, 50)), st.floats(1e-4, 1e4), arrays(float, (5, 3), elements=st.floats(-1e3, 1e3)))
def test_context_ratio_finite_positive(w, prior, X):
    r = ContextRatioModel(w, prior)(X)
    assert np.all(np.isfinite(r)) and np.all(r > 0)


@given(policy_vec, policy_vec, st.floats(0.01, 100), st.integers(0, 2))
def test_reciprocity_without_floor(beta, pi, ctx, a):
    if min(beta[a], pi[a], ctx) < 1e-3:
        return
    m = RatioModel("known_gcs", constant_policy(beta), context_ratio=lambda X: np.full(len(X), ctx))
    X, A = np.zeros((1, 1)), np.array([a])
    prod = m.w(X, A, constant_policy(pi))[0] * m.ips_weights(X, A, constant_policy(pi))[0]
    assert abs(prod - 1) <= 1e-12


@st.composite
def logged_batch(draw):
    n = draw(st.integers(1, 30))
    rng = np.random.default_rng(draw(seeds))
    ds = BanditDataset(rng.normal(size=(n, 2)), rng.integers(0, 3, n), rng.uniform(size=n), 3)
    w = rng.uniform(0, 5, n) + 1e-3
    return ds, w


@given(logged_batch())
def test_reduction_chain(batch):
    ds, w = batch
    assert np.isclose(estimate_dr(ds, w, zero_reward(), 0.0).value, estimate_ips(ds.rewards, w).value, rtol=1e-12, atol=1e-15)
    assert np.isclose(estimate_sndr(ds, w, zero_reward(), 0.0).value, estimate_snips(ds.rewards, w).value, rtol=1e-12, atol=1e-15)


@given(logged_batch(), st.floats(1e-6, 1e6))
def test_self_normalised_scale_invariance(batch, c):
    ds, w = batch
    fn = RewardFn(lambda X, A: 0.1 * A)
    a, b = estimate_snips(ds.rewards, w).value, estimate_snips(ds.rewards, c * w).value
    assert abs(a - b) <= 1e-12 * max(abs(a), 1e-300) + 1e-15
    a, b = estimate_sndr(ds, w, fn, 0.3).value, estimate_sndr(ds, c * w, fn, 0.3).value
    assert abs(a - b) <= 1e-12 * max(abs(a), 1e-300) + 1e-15


@given(logged_batch())
def test_estimators_repeatable(batch):
    ds, w = batch
    assert estimate_ips(ds.rewards, w) == estimate_ips(ds.rewards, w)
    assert estimate_sndr(ds, w, zero_reward(), 0.2) == estimate_sndr(ds, w, zero_reward(), 0.2)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.floats(-10, 10))
def test_mse_at_least_bias_squared(vals, truth):
    s = aggregate({"E": vals}, [truth] * len(vals))["E"]
    assert s.mse >= s.bias**2 - 1e-9 and s.mse >= 0
