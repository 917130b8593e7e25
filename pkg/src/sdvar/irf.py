"""
Conditional impulse responses by Monte Carlo.

For a conditioning date ``t`` with history ``F_{t-1}`` and predictive state
``theta_t``::

    IRF_ij(k) = E[y_{i,t+k} | F_{t-1}, eps_t = e_j] - E[y_{i,t+k} | F_{t-1}]

Both expectations are simulated forward with the filter recursion, so the
state responds to the impulse.  The shocked and baseline branches share the
shocks from ``t+1`` on, and every uniform draw is paired with its reflection
``1 - u``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from . import skewt
from .filtering import run_filter
from .model import StaticParams, _propagate, companion_matrix, mixing_matrix

__all__ = ["IrfResult", "irf", "irf_bands", "linear_irf", "EXPLOSION_BOUND"]

EXPLOSION_BOUND = 1e6


@dataclass
class IrfResult:
    """Responses indexed ``[variable i, shock j, horizon k]`` for ``k = 0..K``.

    ``band_halfwidths`` is the Monte-Carlo standard error for :func:`irf`
    and the across-repetition standard deviation for :func:`irf_bands`.
    """

    responses: np.ndarray
    band_halfwidths: np.ndarray
    mc_se: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.responses.shape[2] - 1

    def to_long(self):
        """Rows ``(i, j, k, mean, halfwidth)`` with 1-based ``i`` and ``j``."""
        n, _, K1 = self.responses.shape
        rows = [(i + 1, j + 1, k, self.responses[i, j, k], self.band_halfwidths[i, j, k])
                for j in range(n) for i in range(n) for k in range(K1)]
        return np.array(rows, dtype=object)


def linear_irf(theta, spec, K):
    """Responses of the constant-parameter VAR: top-left block of ``M^k`` times ``C``."""
    n = spec.n
    M = companion_matrix(theta, spec)
    C = mixing_matrix(theta, spec)
    out = np.empty((n, n, K + 1))
    P = np.eye(M.shape[0])
    for k in range(K + 1):
        out[:, :, k] = P[:n, :n] @ C
        P = M @ P
    return out


def _shocks_from_uniforms(spec, u):
    """``u`` has shape ``(3, N, H, n)``; returns skew-t draws ``(N, H, n)``."""
    out = np.empty(u.shape[1:])
    for i, p in enumerate(spec.skewt):
        out[..., i] = skewt.sample_from_uniforms(p, u[..., i])
    return out


@numba.njit(cache=True)
def _irf_sums(hist, theta, eps, n, W, lam, v, m, nu, k_pen, q, omega, beta, alpha, bound):
    """Per-draw differences ``shocked - baseline`` for every shock.

    Returns ``diff`` of shape ``(N, n, H, n)`` [draw, shock j, horizon, variable]
    and ``ok`` of shape ``(N, n)``.
    """
    N, H, _ = eps.shape
    diff = np.zeros((N, n, H, n))
    ok = np.ones((N, n), dtype=np.bool_)
    for r in range(N):
        base, _, _, sb = _propagate(hist, theta, eps[r], n, W, lam, v, m, nu, k_pen, q,
                                    omega, beta, alpha, bound)
        e = eps[r].copy()
        for j in range(n):
            for i in range(n):
                e[0, i] = 1.0 if i == j else 0.0
            shocked, _, _, ss = _propagate(hist, theta, e, n, W, lam, v, m, nu, k_pen, q,
                                           omega, beta, alpha, bound)
            if sb >= 0 or ss >= 0:
                ok[r, j] = False
            else:
                diff[r, j] = shocked - base
    return diff, ok


def _history(y_history, spec):
    y_history = np.asarray(y_history, dtype=float)
    L = spec.lags.max_lag
    if y_history.ndim != 2 or y_history.shape[1] != spec.n or y_history.shape[0] < L:
        raise ValueError(f"need at least {L} rows of history with {spec.n} columns")
    return np.ascontiguousarray(y_history[::-1][:L])


def _simulate_diffs(hist, spec, statics, theta_t, K, u):
    eps = _shocks_from_uniforms(spec, u)
    W, lam, v, m, nu = spec._arrays()
    return _irf_sums(hist, np.ascontiguousarray(theta_t, dtype=float),
                     np.ascontiguousarray(eps), spec.n, W, lam, v, m, nu,
                     float(spec.penalty_k), spec.squaring_q, statics.omega, statics.beta,
                     statics.alpha, EXPLOSION_BOUND)


def _uniforms(rng, N, K, n, antithetic):
    if antithetic:
        if N % 2:
            raise ValueError("draws must be even with antithetic pairs")
        half = rng.random((3, N // 2, K + 1, n))
        return np.concatenate([half, 1.0 - half], axis=1)
    return rng.random((3, N, K + 1, n))


def irf(y_history, spec, statics, theta_t, K=60, draws=20000, rng=None, antithetic=True):
    """Monte-Carlo conditional impulse responses.

    Parameters
    ----------
    y_history : ndarray
        Observations up to ``t-1``; the last ``max_lag`` rows are used.
    theta_t : ndarray
        Predictive state for date ``t`` (e.g. ``FilterOutput.theta_next``).
    draws : int
        Total simulated paths per branch, counting antithetic partners.

    Notes
    -----
    The impact response (``k = 0``) is ``C_t[:, j]`` exactly, the baseline
    mean at impact being zero by construction of the shocks.  Draws whose
    paths leave ``[-1e6, 1e6]`` are dropped and counted in ``meta``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    hist = _history(y_history, spec)
    n = spec.n
    u = _uniforms(rng, draws, K, n, antithetic)
    diff, ok = _simulate_diffs(hist, spec, statics, theta_t, K, u)
    resp = np.empty((n, n, K + 1))
    se = np.zeros((n, n, K + 1))
    half = draws // 2
    for j in range(n):
        if antithetic:
            pair_ok = ok[:half, j] & ok[half:, j]
            pairs = 0.5 * (diff[:half, j] + diff[half:, j])[pair_ok]
            vals = pairs
        else:
            vals = diff[ok[:, j], j]
        if len(vals) < 2:
            raise RuntimeError(f"too few stable paths for shock {j + 1}")
        resp[:, j, :] = vals.mean(axis=0).T
        se[:, j, :] = (vals.std(axis=0, ddof=1) / np.sqrt(len(vals))).T
    C = mixing_matrix(theta_t, spec)
    resp[:, :, 0] = C
    se[:, :, 0] = 0.0
    clipped = int(np.sum(~ok))
    if clipped > 0.01 * ok.size:
        warnings.warn(f"{clipped} of {ok.size} simulated paths exploded and were dropped",
                      RuntimeWarning, stacklevel=2)
    meta = {"draws": draws, "antithetic": antithetic, "K": K, "clipped": clipped}
    return IrfResult(resp, se.copy(), se, meta)


def irf_bands(y, spec, statics, theta0, cov, restriction, t=None, K=60, draws=10000,
              repetitions=120, rng=None, antithetic=True):
    """Responses with bands from parameter draws.

    Each repetition draws the free alphas from ``N(alpha_hat, cov)``
    (negative draws clipped at zero), re-filters ``y`` to obtain the state
    at the conditioning row ``t`` (default: one step after the sample) and
    runs :func:`irf`.  Responses are the mean over repetitions and the
    half-widths their standard deviation, so Monte-Carlo error is included.
    """
    if repetitions < 2:
        raise ValueError("repetitions must be >= 2")
    rng = rng if rng is not None else np.random.default_rng()
    y = np.asarray(y, dtype=float)
    T = y.shape[0]
    t = T if t is None else int(t)
    if not spec.lags.max_lag <= t <= T:
        raise ValueError("conditioning row out of range")
    cov = np.zeros((len(restriction),) * 2) if cov is None else np.asarray(cov, dtype=float)
    center = restriction.collapse(statics.alpha)
    reps = []
    clipped = 0
    for r in range(repetitions):
        x = rng.multivariate_normal(center, cov, method="eigh") if np.any(cov) else center
        alpha = restriction.expand(np.maximum(x, 0.0), spec.d)
        st = StaticParams(statics.omega, statics.beta, alpha)
        out = run_filter(y, spec, st, theta0)
        theta_t = out.theta_next if t == T else out.theta_path[t]
        res = irf(y[:t], spec, st, theta_t, K=K, draws=draws, rng=rng, antithetic=antithetic)
        clipped += res.meta["clipped"]
        reps.append(res.responses)
    reps = np.array(reps)
    meta = {"draws": draws, "antithetic": antithetic, "K": K, "repetitions": repetitions,
            "conditioning_row": t, "clipped": clipped}
    sd = reps.std(axis=0, ddof=1)
    return IrfResult(reps.mean(axis=0), sd, sd / np.sqrt(repetitions), meta)
