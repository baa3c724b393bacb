import numpy as np
import pytest

from robust_ope.core import BanditDataset, FeatureMap
from robust_ope.optim import TrainingDiverged, decayed_lr
from robust_ope.robust_reward import (
    BaseDistribution,
    GridSpec,
    RobustParams,
    RobustRewardModel,
    TrainConfig,
    _gradient,
    batch_gradient,
    fit_least_squares,
    fit_robust,
    init_params,
    moments,
    predict,
    train,
)

BASE = BaseDistribution()


def gauss_logpdf(r, m, v):
    return -0.5 * np.log(2 * np.pi * v) - (r - m) ** 2 / (2 * v)


def relative_loglik(theta, base, Phi, r, W):
    """Oracle: mean of (log N(r; mu, s2) - log N(r; mu0, s0^2)) / W, straight from densities."""
    prec = 2 * W * theta[0] + 1 / base.sigma0_sq
    s2 = 1 / prec
    mu = s2 * (-2 * W * (Phi @ theta[1:]) + base.mu0 / base.sigma0_sq)
    return np.mean((gauss_logpdf(r, mu, s2) - gauss_logpdf(r, base.mu0, base.sigma0_sq)) / W)


def fd_grad(f, theta, h=1e-5):
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


class TestPredict:
    def test_zero_ratio_gives_base(self):
        p = RobustParams(3.7, np.array([1.0, -2.0, 0.5, 4.0]))
        out = predict(p, BASE, FeatureMap(1, 2), np.array([0.3]), 1, 0.0)
        assert (out.mu, out.sigma_sq) == (0.6, 1.0)

    def test_direct_evaluation(self):
        fm = FeatureMap(1, 2)
        # phi(x=0, a=0) = (0, 1, 0, 1) so theta_x . phi = -0.3
        p = RobustParams(0.5, np.array([0.0, -0.3, 0.0, 0.0]))
        out = predict(p, BaseDistribution(0.0, 1.0), fm, np.array([0.0]), 0, 1.0)
        assert out.sigma_sq == pytest.approx(0.5)
        assert out.mu == pytest.approx(0.3)

    def test_identity_params(self):
        p = RobustParams(0.0, np.zeros(4))
        for W in (0.0, 0.5, 7.0):
            out = predict(p, BASE, FeatureMap(1, 2), np.array([1.3]), 0, W)
            assert (out.mu, out.sigma_sq) == (0.6, 1.0)

    def test_negative_ratio_rejected(self):
        with pytest.raises(ValueError):
            predict(RobustParams(0.0, np.zeros(4)), BASE, FeatureMap(1, 2), np.zeros(1), 0, -1.0)

    def test_variance_floor(self):
        mu, s2 = moments(-10.0, np.zeros(1), BASE, np.zeros((1, 1)), np.array([1.0]))
        assert s2[0] == pytest.approx(1e6)

    def test_variance_decreases_in_ratio(self):
        Ws = np.linspace(0, 10, 50)
        _, s2 = moments(0.3, np.zeros(1), BASE, np.zeros((50, 1)), Ws)
        assert np.all(np.diff(s2) < 0)


class TestGradient:
    def test_arithmetic_example(self):
        # W = 1, theta_r = 0.5 -> sigma^2 = 0.5; theta_x . phi = -0.2 -> mu = 0.5
        Phi = np.array([[1.0, 2.0]])
        theta = np.array([0.5, -0.2, 0.0])
        mu, s2 = moments(theta[0], theta[1:], BASE, Phi, np.array([1.0]))
        assert (mu[0], s2[0]) == pytest.approx((0.5, 0.5))
        g = _gradient(theta, BASE, Phi, np.array([1.0]), np.array([1.0]))
        assert g[0] == pytest.approx(-0.25)
        np.testing.assert_allclose(g[1:], [-0.5, -1.0])

    def test_zero_residual(self):
        fm = FeatureMap(2, 3)
        rng = np.random.default_rng(0)
        X, A, W = rng.normal(size=(5, 2)), rng.integers(0, 3, 5), rng.uniform(0.5, 2, 5)
        p = RobustParams(0.4, rng.normal(size=fm.output_dim))
        mu, _ = moments(p.theta_r, p.theta_x, BASE, fm.batch(X, A), W)
        _, gx = batch_gradient(p, BASE, fm, X, A, mu, W)
        np.testing.assert_allclose(gx, 0.0, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        fm = FeatureMap(3, 4)
        for _ in range(20):
            theta = np.concatenate([[rng.uniform(0, 1)], rng.normal(0, 0.5, fm.output_dim)])
            X, A = rng.normal(size=(20, 3)), rng.integers(0, 4, 20)
            r, W = rng.uniform(0, 1, 20), rng.uniform(0.05, 3, 20)
            Phi = fm.batch(X, A)
            g_r, g_x = batch_gradient(RobustParams.unpack(theta), BASE, fm, X, A, r, W)
            fd = fd_grad(lambda t: relative_loglik(t, BASE, Phi, r, W), theta)
            # theta_x block of the stated gradient is half the true derivative
            expected = np.concatenate([[fd[0]], 0.5 * fd[1:]])
            got = np.concatenate([[g_r], g_x])
            assert np.all(np.abs(got - expected) <= 1e-5 * np.maximum(np.abs(expected), 1e-8) + 1e-8)

    def test_l2_penalty(self):
        theta = np.array([0.2, 0.1, -0.3])
        Phi, r, W = np.array([[1.0, 1.0]]), np.array([0.5]), np.array([1.0])
        g0 = _gradient(theta, BASE, Phi, r, W)
        g1 = _gradient(theta, BASE, Phi, r, W, l2_reg=0.1)
        np.testing.assert_allclose(g1, g0 - 0.2 * theta)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            batch_gradient(RobustParams(0.0, np.zeros(4)), BASE, FeatureMap(1, 2), np.zeros((0, 1)), np.zeros(0, int), np.zeros(0), np.zeros(0))


def _linear_problem(n=2000, seed=0, noise=0.01):
    rng = np.random.default_rng(seed)
    fm = FeatureMap(3, 3)
    X, A = rng.normal(size=(n, 3)), rng.integers(0, 3, n)
    w = rng.normal(0, 0.3, fm.output_dim)
    clean = fm.batch(X, A) @ w
    ds = BanditDataset(X, A, clean + rng.normal(0, noise, n), 3)
    return ds, fm, clean


class TestTrain:
    def test_zero_ratio_keeps_base(self):
        ds, fm, _ = _linear_problem(200)
        p = train(ds, np.zeros(ds.n), BASE, fm, TrainConfig(epochs=3))
        assert np.all(np.isfinite(p.pack()))
        mu, s2 = RobustRewardModel(p, BASE, fm).predict(ds.contexts, ds.actions, np.zeros(ds.n))
        assert np.all(mu == 0.6) and np.all(s2 == 1.0)

    def test_synthetic_linear_rmse(self):
        ds, fm, clean = _linear_problem()
        # near-noiseless targets need the variance to collapse, which is slow in theta_r
        cfg = TrainConfig(learning_rate=0.03, batch_size=32, epochs=200)
        model = RobustRewardModel(train(ds, np.ones(ds.n), BASE, fm, cfg), BASE, fm)
        rmse = np.sqrt(np.mean((model.mean(ds.contexts, ds.actions, np.ones(ds.n)) - clean) ** 2))
        Phi = fm.batch(ds.contexts, ds.actions)
        ols = np.linalg.lstsq(Phi, ds.rewards, rcond=None)[0]
        rmse_ols = np.sqrt(np.mean((Phi @ ols - clean) ** 2))
        assert rmse <= 0.05
        assert rmse_ols <= rmse

    def test_rejects_zero_epochs(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_one_full_batch_step(self):
        ds, fm, _ = _linear_problem(64)
        W = np.full(ds.n, 0.7)
        cfg = TrainConfig(learning_rate=0.05, batch_size=ds.n, epochs=1, seed=3)
        theta0 = init_params(fm.output_dim, 3)
        g = _gradient(theta0, BASE, fm.batch(ds.contexts, ds.actions), ds.rewards, W)
        after = train(ds, W, BASE, fm, cfg).pack()
        # full batch in a different order only permutes the mean's summands
        np.testing.assert_allclose(after - theta0, 0.05 * g, rtol=1e-12, atol=1e-15)

    def test_deterministic(self):
        ds, fm, _ = _linear_problem(300)
        cfg = TrainConfig(learning_rate=0.01, epochs=5, seed=9)
        a = train(ds, np.ones(ds.n), BASE, fm, cfg).pack()
        b = train(ds, np.ones(ds.n), BASE, fm, cfg).pack()
        assert np.array_equal(a, b)

    def test_divergence_reports_batch(self):
        ds, fm, _ = _linear_problem(100)
        ds = BanditDataset(ds.contexts, ds.actions, np.full(ds.n, 1e200), ds.k)
        with pytest.raises(TrainingDiverged) as info:
            with np.errstate(over="ignore", invalid="ignore"):
                train(ds, np.ones(ds.n), BASE, fm, TrainConfig(batch_size=10, epochs=3))
        assert "batch" in str(info.value)

    def test_ratio_shape_checked(self):
        ds, fm, _ = _linear_problem(10)
        with pytest.raises(ValueError):
            train(ds, np.ones(3), BASE, fm, TrainConfig())


def test_decay_schedule():
    assert decayed_lr(0.001, 1) == 0.001
    assert decayed_lr(0.001, 5) == pytest.approx(0.001 * 10 / 12)


def test_json_round_trip(tmp_path):
    fm = FeatureMap(2, 3, "interaction")
    m = RobustRewardModel(RobustParams(0.3, np.arange(fm.output_dim, dtype=float)), BaseDistribution(0.5, 2.0), fm)
    path = tmp_path / "m.json"
    m.save(path)
    back = RobustRewardModel.load(path)
    assert back.params.theta_r == 0.3 and np.array_equal(back.params.theta_x, m.params.theta_x)
    assert back.base == m.base and back.fm == fm
    assert set(m.to_dict()) >= {"theta_r", "theta_x", "mu0", "sigma0_sq", "feature_map_mode"}


def test_grid_selection_picks_from_grid():
    ds, fm, _ = _linear_problem(300)
    grid = GridSpec(learning_rates=(0.01, 0.001), batch_sizes=(16, 64))
    _, cfg = fit_robust(ds, np.ones(ds.n), BASE, fm, TrainConfig(epochs=5), grid)
    assert (cfg.learning_rate, cfg.batch_size) in {(lr, b) for lr in (0.01, 0.001) for b in (16, 64)}
    _, cfg2 = fit_least_squares(ds, fm, TrainConfig(epochs=5), grid)
    assert cfg2.learning_rate in (0.01, 0.001)


def test_unit_ratio_is_the_same_code_path():
    ds, fm, _ = _linear_problem(200)
    cfg = TrainConfig(learning_rate=0.01, epochs=3, seed=1)
    m1, _ = fit_robust(ds, np.ones(ds.n), BASE, fm, cfg)
    p2 = train(ds, np.ones(ds.n), BASE, fm, cfg)
    assert np.array_equal(m1.params.pack(), p2.pack())
