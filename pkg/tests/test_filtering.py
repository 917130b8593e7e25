from __future__ import annotations

import numpy as np
import pytest

from conftest import SKEWT3
from sdvar import filtering as F
from sdvar import matcalc
from sdvar import model as M
from sdvar.model import LagStructure, ModelSpec, Restriction, StaticParams
from sdvar.simulate import DgpConfig, default_theta0, simulate


@pytest.fixture(scope="module")
def sample():
    cfg = DgpConfig(kind="score_driven", T=300, seed=3)
    return cfg, simulate(cfg).y


def _loop_filter(y, spec, statics, theta0):
    """Reference recursion through the public single-observation API."""
    L = spec.lags.max_lag
    theta = theta0.copy()
    path = np.empty((y.shape[0], spec.d))
    path[:L] = theta0
    ll = 0.0
    for t in range(L, y.shape[0]):
        path[t] = theta
        win = y[t - L:t + 1]
        ll += M.log_likelihood_t(win, theta, spec, penalized=True)
        theta = M.step(theta, M.penalized_scores_t(win, theta, spec), statics)
    return path, theta, ll


def test_filter_matches_reference_loop(sample):
    cfg, y = sample
    spec = cfg.spec
    out = F.run_filter(y, spec, cfg.statics, cfg.theta0)
    path, theta_next, ll = _loop_filter(y, spec, cfg.statics, cfg.theta0)
    np.testing.assert_allclose(out.theta_path, path, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(out.theta_next, theta_next, rtol=1e-12, atol=1e-14)
    assert out.loglik == pytest.approx(ll, rel=1e-12)
    assert F.filter_loglik(y, spec, cfg.statics, cfg.theta0) == pytest.approx(ll, rel=1e-12)


def test_filter_heterogeneous_matches_reference_loop(rng):
    spec = ModelSpec(3, LagStructure("heterogeneous"), SKEWT3)
    y = rng.normal(scale=0.1, size=(80, 3))
    theta0 = F.init_theta(y, spec)
    st = StaticParams.integrated(np.full(spec.d, 0.002))
    out = F.run_filter(y, spec, st, theta0)
    path, _, ll = _loop_filter(y, spec, st, theta0)
    np.testing.assert_allclose(out.theta_path, path, rtol=1e-12, atol=1e-14)
    assert out.loglik == pytest.approx(ll, rel=1e-12)


def test_zero_alpha_keeps_state_constant(sample):
    cfg, y = sample
    out = F.run_filter(y, cfg.spec, StaticParams.integrated(np.zeros(cfg.spec.d)), cfg.theta0)
    assert np.array_equal(out.theta_path, np.repeat(cfg.theta0[None], len(y), axis=0))
    assert np.array_equal(out.theta_next, cfg.theta0)


def test_presample_rows_hold_initial_state(sample):
    cfg, y = sample
    out = F.run_filter(y, cfg.spec, cfg.statics, cfg.theta0)
    L = cfg.spec.lags.max_lag
    assert np.array_equal(out.theta_path[:L], np.repeat(cfg.theta0[None], L, axis=0))
    assert np.all(np.isnan(out.loglik_t[:L])) and np.all(np.isnan(out.shocks[:L]))


def test_filter_recovers_simulated_state_and_shocks(sample):
    cfg, _ = sample
    sim = simulate(cfg)
    out = F.run_filter(sim.y, cfg.spec, cfg.statics, cfg.theta0)
    L = cfg.spec.lags.max_lag
    np.testing.assert_allclose(out.theta_path[L:], sim.theta_true[L:], rtol=0, atol=1e-12)
    np.testing.assert_allclose(out.shocks[L:], sim.eps_true[L:], rtol=0, atol=1e-10)


def test_filter_is_deterministic(sample):
    cfg, y = sample
    a = F.run_filter(y, cfg.spec, cfg.statics, cfg.theta0)
    b = F.run_filter(y.copy(), cfg.spec, cfg.statics, cfg.theta0.copy())
    assert np.array_equal(a.theta_path, b.theta_path)
    assert np.array_equal(a.loglik_t, b.loglik_t, equal_nan=True)


def test_shock_column_matches_single_observation_api(sample):
    cfg, y = sample
    spec = cfg.spec
    out = F.run_filter(y, spec, cfg.statics, cfg.theta0)
    L = spec.lags.max_lag
    for t in (L, 57, len(y) - 1):
        eps = M.residual_and_shock(y[t - L:t + 1], out.theta_path[t], spec)
        np.testing.assert_allclose(out.shocks[t], eps, atol=1e-13)


def test_derived_quantities(sample):
    cfg, y = sample
    out = F.run_filter(y, cfg.spec, cfg.statics, cfg.theta0)
    sig, orth, var = out.derived()
    t = 100
    C = M.mixing_matrix(out.theta_path[t], cfg.spec)
    np.testing.assert_allclose(var[t], np.diag(C @ C.T), rtol=1e-12)
    np.testing.assert_allclose(orth[t] @ orth[t].T, np.eye(3), atol=1e-12)
    S, _, _ = M.unpack(out.theta_path[t], cfg.spec)
    np.testing.assert_allclose(sig[t], matcalc.mat_exp(S), rtol=1e-12)


def test_table_layout(sample):
    cfg, y = sample
    out = F.run_filter(y, cfg.spec, cfg.statics, cfg.theta0)
    tab = out.table()
    assert tab.shape == (len(y), len(out.columns()))
    assert out.columns()[:2] == ["t", "S11"]
    assert out.columns()[-3:] == ["loglik", "penalty", "flag"]


def test_smoother_with_zero_alpha_equals_filter(sample):
    cfg, y = sample
    st = StaticParams.integrated(np.zeros(cfg.spec.d))
    out = F.run_filter(y, cfg.spec, st, cfg.theta0)
    sm = F.run_smoother(y, cfg.spec, st, out)
    assert np.array_equal(sm.theta_path, out.theta_path)


def test_smoother_forgets_initial_guess(sample):
    cfg, y = sample
    spec = cfg.spec
    good = F.run_filter(y, spec, cfg.statics, cfg.theta0)
    off = cfg.theta0.copy()
    off[spec.a_slice] += 0.3
    bad = F.run_filter(y, spec, cfg.statics, off)
    sg = F.run_smoother(y, spec, cfg.statics, good)
    sb = F.run_smoother(y, spec, cfg.statics, bad)
    L = spec.lags.max_lag
    a = spec.a_slice
    early = slice(L, L + 20)
    gap_filter = np.abs(good.theta_path[early, a] - bad.theta_path[early, a]).mean()
    gap_smooth = np.abs(sg.theta_path[early, a] - sb.theta_path[early, a]).mean()
    assert gap_smooth < gap_filter


def test_divergence_is_reported(sample):
    cfg, y = sample
    st = StaticParams.integrated(np.full(cfg.spec.d, 1e4))
    with pytest.raises(F.FilterDivergenceError) as info:
        F.run_filter(y * 100, cfg.spec, st, cfg.theta0)
    assert info.value.t >= cfg.spec.lags.max_lag
    assert F.filter_loglik(y * 100, cfg.spec, st, cfg.theta0) == -np.inf
    out = F.run_filter(y * 100, cfg.spec, st, cfg.theta0, raise_on_divergence=False)
    assert out.theta_path.shape == (len(y), cfg.spec.d)


def test_input_validation(sample):
    cfg, y = sample
    with pytest.raises(ValueError):
        F.run_filter(y[:, :2], cfg.spec, cfg.statics, cfg.theta0)
    with pytest.raises(ValueError):
        F.run_filter(y[:2], cfg.spec, cfg.statics, cfg.theta0)
    bad = y.copy()
    bad[5, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        F.run_filter(bad, cfg.spec, cfg.statics, cfg.theta0)
    with pytest.raises(ValueError):
        F.run_filter(y, cfg.spec, StaticParams.integrated(np.zeros(3)), cfg.theta0)


# ---------------------------------------------------------------------------
# initialization


def test_init_theta_is_ols_and_cholesky(rng):
    spec = ModelSpec(3, LagStructure("plain", 2), SKEWT3)
    theta_true = default_theta0(spec)
    cfg = DgpConfig(kind="constant", T=400, theta0=theta_true, seed=9)
    y = simulate(cfg).y
    theta = F.init_theta(y, spec)
    S, A, phis = M.unpack(theta, spec)
    # normal equations written out directly
    X = np.hstack([y[1:-1], y[:-2]])
    Y = y[2:]
    B = np.linalg.solve(X.T @ X, X.T @ Y).T
    np.testing.assert_allclose(np.hstack(phis), B, atol=1e-10)
    R = Y - X @ B.T
    cov = R.T @ R / len(R)
    E = matcalc.mat_exp(S)
    np.testing.assert_allclose(E @ E.T, cov, rtol=1e-9)
    assert np.all(np.diag(E) > 0)
    assert np.array_equal(A, np.zeros((3, 3)))


def test_init_theta_window(rng):
    spec = ModelSpec(3, LagStructure("plain", 1), SKEWT3)
    y = rng.normal(size=(200, 3))
    assert np.array_equal(F.init_theta(y, spec, 50), F.init_theta(y[:50], spec))
    with pytest.raises(ValueError, match="too short"):
        F.init_theta(y, spec, 4)


def test_heterogeneous_design(rng):
    spec = ModelSpec(2, LagStructure("heterogeneous"), SKEWT3[:2])
    y = rng.normal(size=(20, 2))
    X, Y = F.ols_design(y, spec)
    t = 10
    row = X[t - 6]
    np.testing.assert_allclose(row[:2], y[t - 1])
    np.testing.assert_allclose(row[2:], y[t - 6:t - 1].mean(axis=0))
    np.testing.assert_array_equal(Y[t - 6], y[t])


# ---------------------------------------------------------------------------
# bands


def test_bands_without_parameter_uncertainty_are_the_floor(sample):
    cfg, y = sample
    b = F.bands(y, cfg.spec, cfg.statics, cfg.theta0)
    out = F.run_filter(y, cfg.spec, cfg.statics, cfg.theta0)
    L = cfg.spec.lags.max_lag
    floor = cfg.statics.alpha ** 2 * np.mean(out.scores[L:] ** 2, axis=0)
    np.testing.assert_allclose(b.halfwidth, np.repeat(np.sqrt(floor)[None], len(y), 0))
    np.testing.assert_allclose(b.lower, out.theta_path - b.halfwidth)


def test_bands_with_parameter_uncertainty(sample):
    cfg, y = sample
    spec = cfg.spec
    R = Restriction.by_block(spec)
    cov = np.diag((0.2 * R.collapse(cfg.statics.alpha)) ** 2)
    b1 = F.bands(y, spec, cfg.statics, cfg.theta0, cov, R, draws=20,
                 rng=np.random.default_rng(1))
    b2 = F.bands(y, spec, cfg.statics, cfg.theta0, cov, R, draws=20,
                 rng=np.random.default_rng(1))
    assert np.array_equal(b1.halfwidth, b2.halfwidth)
    assert np.all(b1.halfwidth >= np.sqrt(b1.floor) - 1e-15)
    assert np.any(b1.param_var > 0)
    with pytest.raises(ValueError, match="restriction"):
        F.bands(y, spec, cfg.statics, cfg.theta0, cov)
    with pytest.raises(ValueError, match="semidefinite"):
        F.bands(y, spec, cfg.statics, cfg.theta0, -cov, R)
