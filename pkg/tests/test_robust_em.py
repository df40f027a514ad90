import json

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robust_tpp.config import ClusterConfig
from robust_tpp.errors import ConfigError, ImpossibleStream
from robust_tpp.events import Dataset, EventStream, IntensitySpec, IntensityTerm, simulate_nhp
from robust_tpp.intensity import FLOOR_FRACTION, EventDesign, fit_intensities, loglik_matrix, weighted_fit
from robust_tpp.distance import shifted_curves
from robust_tpp.robust_em import (
    ClusterModel,
    detect_outliers,
    e_step,
    fit,
    fit_from_model,
    m_step,
    mu_gradient,
    mu_hat,
    rho_rule,
    robust_location,
    update_shifts,
)
from robust_tpp.scenarios import homogeneous_scenario, simulate_scenario
from robust_tpp.spline import basis_integrals, build_basis

B8 = build_basis(8, 24.0)


def _random_design(rng, n=12, L=2):
    streams = [
        EventStream(np.sort(rng.uniform(0, 24 * L, rng.integers(5, 40))), 24.0, L, f"s{i}") for i in range(n)
    ]
    return EventDesign(streams, B8)


def _model(B, basis=B8, rho=None):
    B = np.atleast_2d(np.asarray(B, dtype=float))
    rho = rho_rule(B, basis) if rho is None else np.broadcast_to(rho, (B.shape[0],)).astype(float)
    return ClusterModel(B, np.full(B.shape[0], 1 / B.shape[0]), basis, rho, FLOOR_FRACTION * B.mean(axis=1))


def _homogeneous(L=4, seed=0, **kw):
    return simulate_scenario(homogeneous_scenario(L=L, seed=seed, **kw))


def _true_model(rates=(1, 2, 3, 4)):
    return _model(np.repeat(np.asarray(rates, dtype=float)[:, None], 8, axis=1))


# ------------------------------------------------------------------ E-step


def test_e_step_softmax():
    ll = np.array([[0.0, np.log(3.0)], [-1e4, -1e4 + np.log(0.5)]])
    r = e_step(ll, [0.5, 0.5])
    np.testing.assert_allclose(r, [[0.25, 0.75], [2 / 3, 1 / 3]], rtol=1e-12)


def test_e_step_extended_precision_oracle():
    rng = np.random.default_rng(1)
    ll = rng.normal(-5000, 300, size=(20, 4))
    pi = rng.dirichlet(np.ones(4))
    r = e_step(ll, pi)
    mpmath.mp.dps = 50
    for n in range(20):
        a = [mpmath.log(mpmath.mpf(pi[k])) + mpmath.mpf(ll[n, k]) for k in range(4)]
        z = mpmath.fsum(mpmath.exp(x) for x in a)
        want = [float(mpmath.exp(x) / z) for x in a]
        np.testing.assert_allclose(r[n], want, rtol=1e-10, atol=1e-300)


def test_e_step_edge_cases():
    np.testing.assert_array_equal(e_step(np.array([[-3.0], [-7.0]]), [1.0]), [[1.0], [1.0]])
    r = e_step(np.array([[-np.inf, -2.0]]), [0.5, 0.5])
    np.testing.assert_array_equal(r, [[0.0, 1.0]])
    with pytest.raises(ImpossibleStream):
        e_step(np.array([[-1.0, -1.0], [-np.inf, -np.inf]]), [0.5, 0.5])


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_e_step_rows_sum_to_one(seed, K):
    rng = np.random.default_rng(seed)
    r = e_step(rng.normal(0, 500, (7, K)), rng.dirichlet(np.ones(K)))
    np.testing.assert_allclose(r.sum(axis=1), 1.0)
    assert np.all(r >= 0)


# ------------------------------------------------------------------ gradient


def _gradient_fixture(seed):
    rng = np.random.default_rng(seed)
    d = _random_design(rng, n=int(rng.integers(4, 15)), L=int(rng.integers(1, 4)))
    Bk = rng.uniform(0.3, 3.0, 8)
    rk = rng.uniform(0.05, 1.0, d.N)
    rho = float(rng.uniform(0.05, 2.0))
    return d, Bk, rk, rho


def test_gradient_vs_finite_differences():
    worst = 0.0
    for seed in range(50):
        d, Bk, rk, rho = _gradient_fixture(seed)
        g, _, _ = mu_gradient(d, Bk, rk, rho)
        h = 1e-4
        fd = np.array(
            [(mu_hat(d, Bk + h * e, rk, rho) - mu_hat(d, Bk - h * e, rk, rho)) / (2 * h) for e in np.eye(8)]
        )
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert worst < 1e-4


def test_identity_influence_is_classical_em_gradient():
    rng = np.random.default_rng(3)
    d = _random_design(rng)
    Bk = rng.uniform(0.3, 3.0, 8)
    rk = rng.uniform(0, 1, d.N)
    g, mu, w = mu_gradient(d, Bk, rk, 1.0, "identity")
    ll = loglik_matrix(d, Bk[None])[:, 0]
    assert mu == pytest.approx((rk * ll).sum() / (rk * d.L).sum())
    assert np.all(w == 1)
    lam = d.phi @ Bk
    want = (d.phi / lam[:, None]).T @ rk[d.owner] - (rk @ d.L) * basis_integrals(B8)
    np.testing.assert_allclose(g, want / (rk @ d.L), rtol=1e-12)


def test_identity_m_step_reaches_weighted_mle():
    rng = np.random.default_rng(4)
    d = _random_design(rng, n=10, L=3)
    r = rng.dirichlet(np.ones(2), size=d.N)
    mle = weighted_fit(d, r, max_iters=20000, tol=1e-14)
    model = _model(mle * rng.uniform(0.7, 1.3, mle.shape), rho=1.0)
    model.b_floor = np.full(2, 1e-12)
    B, *_ = m_step(d, model, r, inner_steps=3000, influence="identity")
    for k in range(2):
        assert mu_hat(d, B[k], r[:, k], 1.0, "identity") == pytest.approx(
            mu_hat(d, mle[k], r[:, k], 1.0, "identity"), abs=1e-6
        )


def test_stationary_at_weighted_optimum():
    rng = np.random.default_rng(5)
    d = _random_design(rng, n=10, L=3)
    r = np.ones((d.N, 1))
    B = weighted_fit(d, r, max_iters=50000, tol=1e-15)[0]
    g, _, _ = mu_gradient(d, B, r[:, 0], 1.0, "identity")
    free = B > 1e-3
    assert np.linalg.norm(g[free]) <= 1e-6
    assert np.all(g[~free] <= 1e-6)


def test_identity_em_matches_classical_em():
    sim = _homogeneous(L=2, n_per_class=10, n_outliers=0, rates=(1, 3))
    d = EventDesign(sim.dataset.streams, B8)
    start = _model(np.array([np.full(8, 0.8), np.full(8, 3.5)]) * np.linspace(0.9, 1.1, 8))
    B, pi = start.B.copy(), start.pi.copy()
    for _ in range(200):
        r = e_step(loglik_matrix(d, B), pi)
        pi = r.mean(axis=0)
        B = weighted_fit(d, r, max_iters=20000, tol=1e-14)
    cfg = ClusterConfig(K=2, influence="identity", eps=1e-10, max_iters=300, m_inner_steps=50)
    res = fit_from_model(sim.dataset, start, cfg)
    np.testing.assert_allclose(res.model.B, B, atol=1e-3)


@given(st.integers(0, 10_000))
def test_m_step_never_decreases_mu_hat(seed):
    rng = np.random.default_rng(seed)
    d = _random_design(rng, n=8)
    r = rng.dirichlet(np.ones(3), size=d.N)
    model = _model(rng.uniform(0.2, 3.0, (3, 8)))
    B, _, mu, _ = m_step(d, model, r, inner_steps=2)
    for k in range(3):
        assert mu_hat(d, B[k], r[:, k], model.rho[k]) >= mu[k] - 1e-9 * (1 + abs(mu[k]))
        assert np.all(B[k] >= model.b_floor[k])


def test_drained_class_kept():
    rng = np.random.default_rng(6)
    d = _random_design(rng, n=5)
    model = _model(rng.uniform(0.5, 2.0, (2, 8)))
    r = np.zeros((5, 2))
    r[:, 0] = 1
    B, _, _, drained = m_step(d, model, r)
    assert drained == [1]
    np.testing.assert_array_equal(B[1], model.B[1])


# ------------------------------------------------------------------ outliers


def _weights(sim, model):
    d = EventDesign(sim.dataset.streams, B8)
    ll = loglik_matrix(d, model.B)
    r = e_step(ll, model.pi)
    _, w = robust_location(ll, r, d.L, model.rho)
    return w[np.arange(d.N), np.argmax(r, axis=1)]


def test_planted_outlier_weights():
    sim = _homogeneous()
    out = sim.dataset.ids.index(next(iter(sim.outliers)))
    inl = np.array([i for i in range(len(sim.dataset)) if i != out])
    # the printed rho rule already silences the outlier
    assert _weights(sim, _true_model())[out] < 0.01
    # inliers keep full weight only on the small-rho scale; the printed rule
    # puts most inlier residuals in the flat zone of phi
    model = _true_model()
    model.rho = np.full(4, 0.02)
    w = _weights(sim, model)
    assert w[out] < 0.01 and np.all(w[inl] > 0.9)


def test_printed_rho_rule_scale():
    # rho grows with the per-period log-likelihood spread, so rho * residual is O(spread^2)
    rho = rho_rule(np.repeat([[1.0], [4.0]], 8, axis=1), B8)
    assert rho[0] == pytest.approx(1e-6)
    assert rho[1] == pytest.approx(0.6 * np.sqrt(24 * 4 * np.log(4) ** 2), rel=1e-9)


def test_detect_outliers():
    w = np.array([[0.05, 0.09], [0.05, 0.5], [0.1, 0.0], [0.0, 0.0]])
    assert detect_outliers(w, 0.1).tolist() == [0, 3]
    assert detect_outliers(w, 0.0).tolist() == []


def test_homogeneous_robust_vs_identity():
    sim = _homogeneous()
    for influence in ("identity", "catoni"):
        res = fit_from_model(sim.dataset, _true_model(), ClusterConfig(influence=influence))
        rates = np.sort(res.model.B.mean(axis=1))
        if influence == "catoni":
            np.testing.assert_allclose(rates, [1, 2, 3, 4], rtol=0.1)
        else:
            assert rates[-1] > 50


def test_single_class_homogeneous_recovery():
    rng = np.random.default_rng(7)
    spec = IntensitySpec((IntensityTerm("const", level=2.0),))
    ds = Dataset(tuple(simulate_nhp(spec, 24, 4, rng, stream_id=f"h{i}") for i in range(40)))
    grid = np.linspace(0, 24, 400)
    for rho in (None, 0.05):
        res = fit(ds, ClusterConfig(K=1, seed=1, rho=rho))
        assert np.max(np.abs(res.model.intensity(grid, 0) - 2.0)) / 2.0 < 0.15
    # nothing is flagged on the small-rho scale
    assert res.outliers.size == 0


# ------------------------------------------------------------------ shifts


def test_update_shifts_recovers_grid_offsets():
    c = np.array([0.2, 0.5, 3.0, 1.0, 0.3, 0.2, 0.1, 0.1])
    fits = np.stack([c, np.roll(c, 1), np.roll(c, 3)])
    moved = shifted_curves(fits, B8, 8, 256)
    model = _model(c[None])
    s = update_shifts(moved, model, [0, 0, 0], 8, 256)
    np.testing.assert_allclose(s, [24.0, 3.0, 9.0])


# ------------------------------------------------------------------ driver


def test_fit_deterministic_and_contract():
    sim = _homogeneous(L=2, n_per_class=8, n_outliers=2)
    cfg = ClusterConfig(K=4, seed=3, max_iters=20)
    a, b = fit(sim.dataset, cfg), fit(sim.dataset, cfg)
    np.testing.assert_array_equal(a.model.B, b.model.B)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_allclose(a.r.sum(axis=1), 1.0)
    assert a.model.pi.sum() == pytest.approx(1.0)
    assert np.all(a.model.B >= a.model.b_floor[:, None])
    assert len(a.trace) == a.n_iter
    assert a.converged == (a.trace[-1]["max_param_delta"] <= cfg.eps)


def test_fit_with_precomputed_fits_matches():
    sim = _homogeneous(L=2, n_per_class=8, n_outliers=2)
    cfg = ClusterConfig(K=4, seed=2, max_iters=10)
    fits = fit_intensities(sim.dataset.streams, B8, cfg.fit_max_iters, cfg.fit_tol)
    np.testing.assert_array_equal(fit(sim.dataset, cfg).model.B, fit(sim.dataset, cfg, fits=fits).model.B)


def test_model_json_roundtrip():
    model = _true_model()
    model.shifts = np.array([24.0, 3.0])
    d = json.loads(json.dumps(model.to_dict(ids=["a", "b"])))
    back = ClusterModel.from_dict(d, ids=["a", "b"])
    np.testing.assert_array_equal(back.B, model.B)
    np.testing.assert_array_equal(back.rho, model.rho)
    np.testing.assert_array_equal(back.shifts, model.shifts)
    assert back.basis == model.basis


def test_config_validation():
    with pytest.raises(ConfigError):
        ClusterConfig(K=0).validate()
    with pytest.raises(ConfigError):
        ClusterConfig(mstep_scope="some").validate()
    with pytest.raises(ConfigError):
        ClusterConfig(K=3, rho=[1.0, 2.0]).validate()
    with pytest.raises(ConfigError):
        ClusterConfig.from_dict({"K": 2, "bogus": 1})
    with pytest.raises(ConfigError):
        ClusterConfig(K=8, init="random").validate(N=5)
    a, b = ClusterConfig(threads=1), ClusterConfig(threads=8)
    assert a.hash() == b.hash() != ClusterConfig(seed=1).hash()
