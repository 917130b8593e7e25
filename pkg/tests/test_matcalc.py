from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import central_diff, random_companion, random_skew
from sdvar import matcalc as mc


def _series_exp(S, terms=30):
    out = np.eye(S.shape[0])
    term = np.eye(S.shape[0])
    for k in range(1, terms + 1):
        term = term @ S / k
        out = out + term
    return out


def _unit_norm(rng, n, lower=False):
    S = rng.normal(size=(n, n))
    if lower:
        S = np.tril(S)
    return S / np.linalg.norm(S, 2) * rng.uniform(0.1, 1.0)


# ---------------------------------------------------------------------------
# exponential


def test_exp_of_zero_is_identity():
    assert np.array_equal(mc.mat_exp(np.zeros((3, 3))), np.eye(3))


def test_exp_of_scaled_identity():
    np.testing.assert_allclose(mc.mat_exp(math.log(0.1) * np.eye(3)), 0.1 * np.eye(3),
                               rtol=1e-14, atol=0)


@pytest.mark.parametrize("lower", [False, True])
def test_exp_matches_taylor_series(rng, lower):
    for n in (1, 2, 3, 5, 8):
        for _ in range(10):
            S = _unit_norm(rng, n, lower)
            np.testing.assert_allclose(mc.mat_exp(S), _series_exp(S), rtol=0, atol=1e-12)


def test_exp_large_norm_matches_scipy(rng):
    for _ in range(20):
        S = rng.normal(scale=3.0, size=(4, 4))
        ref = scipy.linalg.expm(S)
        np.testing.assert_allclose(mc.mat_exp(S), ref, rtol=1e-11, atol=1e-12 * np.abs(ref).max())


def test_exp_of_lower_triangular_is_lower_with_exp_diagonal(rng):
    S = np.tril(rng.normal(size=(4, 4)))
    X = mc.mat_exp(S)
    assert np.array_equal(X, np.tril(X))
    np.testing.assert_allclose(np.diag(X), np.exp(np.diag(S)), rtol=1e-14)


def test_exp_rejects_bad_input():
    with pytest.raises(ValueError):
        mc.mat_exp(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        mc.mat_exp(np.array([[np.nan]]))


# ---------------------------------------------------------------------------
# Frechet derivative


def test_frechet_at_zero_is_direction():
    E = np.zeros((3, 3))
    E[0, 0] = 1.0
    np.testing.assert_allclose(mc.mat_exp_frechet(np.zeros((3, 3)), E), E, atol=1e-15)


def test_frechet_diagonal_point_is_divided_difference(rng):
    s = rng.normal(size=4)
    S = np.diag(s)
    for i in range(4):
        for j in range(4):
            E = np.zeros((4, 4))
            E[i, j] = 1.0
            if i == j:
                expect = math.exp(s[i])
            else:
                expect = (math.exp(s[i]) - math.exp(s[j])) / (s[i] - s[j])
            L = mc.mat_exp_frechet(S, E)
            assert L[i, j] == pytest.approx(expect, rel=1e-12)
            L[i, j] = 0.0
            assert np.abs(L).max() < 1e-14


def test_frechet_matches_finite_differences(rng):
    h = 1e-5
    for _ in range(20):
        S = rng.normal(scale=0.7, size=(3, 3))
        E = rng.normal(size=(3, 3))
        fd = (scipy.linalg.expm(S + h * E) - scipy.linalg.expm(S - h * E)) / (2 * h)
        np.testing.assert_allclose(mc.mat_exp_frechet(S, E), fd, rtol=0, atol=1e-8)


def test_frechet_matches_scipy(rng):
    for _ in range(20):
        S = rng.normal(scale=1.5, size=(4, 4))
        E = rng.normal(size=(4, 4))
        ref = scipy.linalg.expm_frechet(S, E, compute_expm=False)
        np.testing.assert_allclose(mc.mat_exp_frechet(S, E), ref, rtol=1e-10,
                                   atol=1e-11 * np.abs(ref).max())


def test_frechet_is_linear_in_direction(rng):
    S = rng.normal(size=(3, 3))
    E1, E2 = rng.normal(size=(2, 3, 3))
    lhs = mc.mat_exp_frechet(S, 2.0 * E1 - E2)
    rhs = 2.0 * mc.mat_exp_frechet(S, E1) - mc.mat_exp_frechet(S, E2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# ---------------------------------------------------------------------------
# Cayley transform


def test_cayley_of_zero_is_identity():
    assert np.array_equal(mc.cayley(np.zeros((3, 3))), np.eye(3))


def test_cayley_two_by_two_closed_form():
    for a in (-2.0, -0.3, 0.0, 0.4, 5.0):
        A = np.array([[0.0, a], [-a, 0.0]])
        expect = np.array([[1 - a * a, 2 * a], [-2 * a, 1 - a * a]]) / (1 + a * a)
        np.testing.assert_allclose(mc.cayley(A), expect, atol=1e-15)


def test_cayley_orthogonal_with_unit_determinant(rng):
    for n in (2, 3, 4, 6):
        for _ in range(10):
            O = mc.cayley(random_skew(rng, n, scale=1.0))
            np.testing.assert_allclose(O @ O.T, np.eye(n), atol=1e-12)
            assert np.linalg.det(O) == pytest.approx(1.0, abs=1e-12)


def test_cayley_of_negated_argument_is_transpose(rng):
    A = random_skew(rng, 4)
    np.testing.assert_allclose(mc.cayley(-A), mc.cayley(A).T, atol=1e-14)


def test_cayley_rejects_non_skew():
    with pytest.raises(ValueError, match="skew"):
        mc.cayley(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_cayley_derivative_at_zero():
    first, second = mc.cayley_derivative(np.zeros((3, 3)), 0, 1)
    D = np.zeros((3, 3))
    D[0, 1], D[1, 0] = 1.0, -1.0
    np.testing.assert_allclose(first, D, atol=1e-15)
    np.testing.assert_allclose(second, D, atol=1e-15)


def test_cayley_derivative_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(10):
        A = random_skew(rng, 3)
        for i, j in ((0, 1), (0, 2), (1, 2)):
            D = np.zeros((3, 3))
            D[i, j], D[j, i] = 1.0, -1.0
            fd = (mc.cayley(A + h * D).T - mc.cayley(A - h * D).T) / (2 * h)
            first, second = mc.cayley_derivative(A, i, j)
            np.testing.assert_allclose(-(first + second), fd, atol=1e-8)


def test_cayley_derivative_index_checks():
    with pytest.raises(ValueError):
        mc.cayley_derivative(np.zeros((3, 3)), 1, 1)
    with pytest.raises(ValueError):
        mc.cayley_derivative(np.zeros((3, 3)), 2, 1)


# ---------------------------------------------------------------------------
# spectral radius


def test_companion_layout():
    P1 = np.array([[1.0, 2.0], [3.0, 4.0]])
    P2 = np.array([[5.0, 6.0], [7.0, 8.0]])
    M = mc.companion([P1, P2])
    np.testing.assert_array_equal(M[:2], np.hstack([P1, P2]))
    np.testing.assert_array_equal(M[2:], np.hstack([np.eye(2), np.zeros((2, 2))]))


def test_gelfand_diagonal():
    assert mc.spectral_radius_gelfand(np.diag([0.5, 0.2])).rho == pytest.approx(0.5, abs=1e-6)


def test_gelfand_zero_matrix():
    p = mc.spectral_radius_gelfand(np.zeros((4, 4)))
    assert p.rho == 0.0
    assert mc.spectral_radius_derivative(p, 0, 0) == 0.0


def test_gelfand_no_overflow_far_from_unit_circle():
    for r in (1e-3, 0.1, 1.05, 2.0, 50.0):
        M = np.diag([r, 0.5 * r, -0.9 * r])
        assert mc.spectral_radius_gelfand(M).rho == pytest.approx(r, rel=1e-12)


def test_gelfand_exact_for_normal_matrices(rng):
    for _ in range(20):
        B = rng.normal(size=(5, 5))
        M = B + B.T
        rho = np.max(np.abs(np.linalg.eigvalsh(M)))
        assert mc.spectral_radius_gelfand(M).rho == pytest.approx(rho, rel=1e-12)


def test_gelfand_near_unit_root():
    M = random_companion(np.random.default_rng(5), 3, 2, 1.05)
    assert 1.04 <= mc.spectral_radius_gelfand(M).rho <= 1.06


def test_gelfand_bracketed_by_eigenvector_condition(rng):
    # rho <= estimate <= cond(V)^(1/2^q) rho for diagonalizable matrices
    q = 10
    for _ in range(200):
        M = random_companion(rng, 3, 2, rng.uniform(0.1, 2.0))
        lam, V = np.linalg.eig(M)
        rho = np.max(np.abs(lam))
        est = mc.spectral_radius_gelfand(M, q=q).rho
        bound = np.linalg.cond(V) ** (1.0 / 2 ** q)
        assert rho * (1 - 1e-10) <= est <= rho * bound * (1 + 1e-10)


def test_gelfand_converges_in_q(rng):
    errs = []
    M = random_companion(rng, 3, 2, 0.95)
    rho = np.max(np.abs(np.linalg.eigvals(M)))
    for q in (6, 10, 14, 20):
        errs.append(mc.spectral_radius_gelfand(M, q=q).rho - rho)
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-5


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-2, 2, allow_subnormal=False)))
def test_gelfand_never_below_spectral_radius(M):
    rho = np.max(np.abs(np.linalg.eigvals(M)))
    est = mc.spectral_radius_gelfand(M).rho
    assert est >= rho * (1 - 1e-8) - 1e-12


def _rho_of(M, q=10):
    return mc.spectral_radius_gelfand(M, q=q).rho


def test_gelfand_derivative_matches_finite_differences(rng):
    checked = 0
    while checked < 40:
        M = random_companion(rng, 3, 2, rng.uniform(0.3, 1.5))
        p = mc.spectral_radius_gelfand(M, n=3)
        if p.gap < 1e-3:
            continue
        for block in (0, 1):
            for i in range(3):
                for j in range(3):
                    h = 1e-6 * max(1.0, abs(M[i, block * 3 + j]))
                    Mp, Mm = M.copy(), M.copy()
                    Mp[i, block * 3 + j] += h
                    Mm[i, block * 3 + j] -= h
                    fd = (_rho_of(Mp) - _rho_of(Mm)) / (2 * h)
                    an = mc.spectral_radius_derivative(p, i, j, block=block)
                    assert abs(an - fd) <= 1e-4 * abs(fd) + 1e-7
        checked += 1


def test_gelfand_gradient_agrees_with_forward_mode(rng):
    M = random_companion(rng, 3, 2, 0.9)
    p = mc.spectral_radius_gelfand(M, n=3)
    G = mc.spectral_radius_gradient(p)
    for block in (0, 1):
        for i in range(3):
            for j in range(3):
                fwd = mc.spectral_radius_derivative(p, i, j, block=block)
                assert G[i, block * 3 + j] == pytest.approx(fwd, rel=1e-9, abs=1e-14)


def test_gelfand_weighted_direction(rng):
    w = np.array([0.0, 0.2, 0.2, 0.2, 0.2, 0.2])
    M = random_companion(rng, 2, 6, 0.8)
    p = mc.spectral_radius_gelfand(M, n=2)
    an = mc.spectral_radius_derivative(p, 1, 0, weights=w)
    E = np.zeros_like(M)
    for ell, wl in enumerate(w):
        E[1, ell * 2] = wl
    fd = central_diff(lambda x: _rho_of(M + x[0] * E), np.zeros(1), 1e-6)[0]
    assert an == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_gelfand_derivative_dominant_diagonal_entry():
    p = mc.spectral_radius_gelfand(np.diag([0.9, 0.5, 0.3]))
    assert mc.spectral_radius_derivative(p, 0, 0) == pytest.approx(1.0, abs=2e-2)


def test_gelfand_derivative_vanishes_on_decoupled_block(rng):
    dominant = np.diag([0.95, 0.1])
    minor = 0.3 * np.eye(2) + 0.05 * rng.normal(size=(2, 2))
    Phi = scipy.linalg.block_diag(dominant, minor)
    p = mc.spectral_radius_gelfand(Phi)
    for i in (2, 3):
        for j in (2, 3):
            assert abs(mc.spectral_radius_derivative(p, i, j)) <= 1e-6


def test_gelfand_warns_on_repeated_singular_value():
    p = mc.spectral_radius_gelfand(np.diag([0.5, 0.5]))
    with pytest.warns(RuntimeWarning, match="not simple"):
        mc.spectral_radius_derivative(p, 0, 0)
