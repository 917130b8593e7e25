"""
Score-driven filtering, backward smoothing, initialization and bands.

Time alignment: with ``L`` the maximum lag, the first ``L`` rows of ``y`` are
pre-sample.  The filter evaluates row ``t >= L`` with the predictive state
``theta_t`` and then moves to ``theta_{t+1} = omega + beta theta_t + alpha s_t``.
Pre-sample rows of the state path hold ``theta_L`` and their shocks and
likelihood contributions are NaN.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np
from scipy import linalg

from .matcalc import _cayley, _expm_lower
from .model import (ModelSpec, StaticParams, _observe, _regressors, _step,
                    _unpack, pack)

__all__ = [
    "FilterDivergenceError",
    "FilterOutput",
    "BandOutput",
    "init_theta",
    "run_filter",
    "run_smoother",
    "bands",
    "DIVERGENCE_BOUND",
]

DIVERGENCE_BOUND = 1e6


class FilterDivergenceError(RuntimeError):
    """The state left ``[-1e6, 1e6]`` (or became non-finite) at row ``t``."""

    def __init__(self, t, message=None):
        super().__init__(message or f"filter diverged at t = {t}")
        self.t = int(t)


@numba.njit(cache=True)
def _filter_loop(y, theta0, n, W, lam, v, m, nu, k_pen, q, omega, beta, alpha,
                 bound, backward):
    T = y.shape[0]
    nb, L = W.shape
    d = theta0.shape[0]
    want = False
    for c in range(d):
        if alpha[c] != 0.0:
            want = True
    thetas = np.empty((T, d))
    scores = np.full((T, d), np.nan)
    shocks = np.full((T, n), np.nan)
    ll = np.full(T, np.nan)
    pen = np.full(T, np.nan)
    flags = np.zeros(T, dtype=np.bool_)
    hist = np.zeros((L, n))
    theta = theta0.copy()
    for s in range(T - L):
        t = T - 1 - s if backward else L + s
        thetas[t] = theta
        for ell in range(L):
            hist[ell] = y[t - 1 - ell]
        xs = _regressors(hist, W)
        eps, lt, pt, flag, score = _observe(y[t], xs, theta, n, W, lam, v, m, nu,
                                            k_pen, q, want)
        shocks[t] = eps
        ll[t] = lt - pt
        pen[t] = pt
        flags[t] = flag
        scores[t] = score
        theta = _step(theta, score, omega, beta, alpha)
        for c in range(d):
            if not abs(theta[c]) <= bound:
                return thetas, scores, shocks, ll, pen, flags, theta, t
    for t in range(L):
        thetas[t] = theta if backward else theta0
    return thetas, scores, shocks, ll, pen, flags, theta, -1


@numba.njit(cache=True)
def _derived(thetas, n, nb):
    T = thetas.shape[0]
    sig = np.empty((T, n, n))
    orth = np.empty((T, n, n))
    var = np.empty((T, n))
    for t in range(T):
        S, A, _ = _unpack(thetas[t], n, nb)
        E = _expm_lower(S)
        O = _cayley(A)
        C = E @ O
        sig[t] = E
        orth[t] = O
        for i in range(n):
            var[t, i] = np.sum(C[i] * C[i])
    return sig, orth, var


@dataclass
class FilterOutput:
    """Result of a forward (or backward) pass.

    Attributes
    ----------
    theta_path : ndarray (T, d)
        State used to evaluate each row.
    theta_next : ndarray (d,)
        State after the last processed row (the one-step-ahead prediction
        for a forward pass).
    scores : ndarray (T, d)
        Penalized scores per row.
    shocks : ndarray (T, n)
    loglik_t : ndarray (T,)
        Penalized log-likelihood contributions.
    penalty_t : ndarray (T,)
        Stability penalty subtracted at each row.
    stability_flags : ndarray (T,) of bool
        Spectral radius estimate >= 1 for the state used at that row.
    """

    spec: ModelSpec
    statics: StaticParams
    theta_path: np.ndarray
    theta_next: np.ndarray
    scores: np.ndarray
    shocks: np.ndarray
    loglik_t: np.ndarray
    penalty_t: np.ndarray
    stability_flags: np.ndarray
    backward: bool = False

    @property
    def start(self):
        return self.spec.lags.max_lag

    @property
    def loglik(self):
        return float(np.sum(self.loglik_t[self.start:]))

    @property
    def n_flags(self):
        return int(np.sum(self.stability_flags))

    def derived(self):
        """``(Sigma_t, O_t, diag(C_t C_t^T))`` for every row."""
        return _derived(self.theta_path, self.spec.n, self.spec.lags.n_blocks)

    def columns(self):
        n = self.spec.n
        cols = ["t"] + self.spec.labels()
        cols += [f"eps{i + 1}" for i in range(n)]
        cols += [f"var{i + 1}" for i in range(n)]
        cols += ["loglik", "penalty", "flag"]
        return cols

    def table(self):
        """One row per time step in :meth:`columns` order."""
        _, _, var = self.derived()
        T = self.theta_path.shape[0]
        return np.column_stack([np.arange(T), self.theta_path, self.shocks, var,
                                self.loglik_t, self.penalty_t,
                                self.stability_flags.astype(float)])


def _kernel_args(spec, statics):
    W, lam, v, m, nu = spec._arrays()
    if statics.alpha.shape != (spec.d,):
        raise ValueError(f"statics must have length {spec.d}")
    return W, lam, v, m, nu


def run_filter(y, spec, statics, theta0, raise_on_divergence=True):
    """Forward score-driven filter with penalized scores.

    Raises
    ------
    FilterDivergenceError
        If any state component leaves ``[-1e6, 1e6]``.
    """
    return _run(y, spec, statics, theta0, False, raise_on_divergence)


def run_smoother(y, spec, statics, filter_out, raise_on_divergence=True):
    """Backward pass started from the last filtered state.

    The recursion is run from the last row to the first, each row's score
    being evaluated with the state reached from the rows after it; the
    pass therefore forgets the initial guess ``theta_L`` that the forward
    filter depends on.  With ``alpha = 0`` the result equals the filtered path.
    """
    theta_end = filter_out.theta_path[-1]
    return _run(y, spec, statics, theta_end, True, raise_on_divergence)


def _run(y, spec, statics, theta0, backward, raise_on_divergence):
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != spec.n:
        raise ValueError(f"y must have shape (T, {spec.n})")
    L = spec.lags.max_lag
    if y.shape[0] < L + 1:
        raise ValueError(f"need at least {L + 1} rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite values")
    theta0 = np.ascontiguousarray(theta0, dtype=float)
    if theta0.shape != (spec.d,):
        raise ValueError(f"theta0 must have length {spec.d}")
    W, lam, v, m, nu = _kernel_args(spec, statics)
    thetas, scores, shocks, ll, pen, flags, theta_next, status = _filter_loop(
        y, theta0, spec.n, W, lam, v, m, nu, float(spec.penalty_k), spec.squaring_q,
        statics.omega, statics.beta, statics.alpha, DIVERGENCE_BOUND, backward)
    if status >= 0 and raise_on_divergence:
        raise FilterDivergenceError(status)
    return FilterOutput(spec, statics, thetas, theta_next, scores, shocks, ll, pen,
                        flags, backward)


def filter_loglik(y, spec, statics, theta0):
    """Total penalized log-likelihood; ``-inf`` if the filter diverges."""
    y = np.ascontiguousarray(y, dtype=float)
    W, lam, v, m, nu = _kernel_args(spec, statics)
    out = _filter_loop(y, np.ascontiguousarray(theta0, dtype=float), spec.n, W, lam, v,
                       m, nu, float(spec.penalty_k), spec.squaring_q, statics.omega,
                       statics.beta, statics.alpha, DIVERGENCE_BOUND, False)
    if out[7] >= 0:
        return -np.inf
    return float(np.sum(out[3][spec.lags.max_lag:]))


def filter_loglik_t(y, spec, statics, theta0):
    """Per-row penalized contributions for rows ``L..T-1`` (NaN-free unless diverged)."""
    y = np.ascontiguousarray(y, dtype=float)
    W, lam, v, m, nu = _kernel_args(spec, statics)
    out = _filter_loop(y, np.ascontiguousarray(theta0, dtype=float), spec.n, W, lam, v,
                       m, nu, float(spec.penalty_k), spec.squaring_q, statics.omega,
                       statics.beta, statics.alpha, DIVERGENCE_BOUND, False)
    if out[7] >= 0:
        raise FilterDivergenceError(out[7])
    return out[3][spec.lags.max_lag:]


def ols_design(y, spec):
    """Regressor matrix ``X`` (rows ``L..T-1``) and targets ``Y`` of the constant VAR."""
    y = np.asarray(y, dtype=float)
    L = spec.lags.max_lag
    W = spec.lags.weights
    T = y.shape[0]
    lagged = np.stack([y[L - 1 - ell:T - 1 - ell] for ell in range(L)], axis=1)
    X = np.einsum("bl,tln->tbn", W, lagged).reshape(T - L, -1)
    return X, y[L:]


def init_theta(y, spec, init_window=None):
    """Initial state from a constant-parameter OLS fit on the first rows.

    ``S`` is the principal log of the lower Cholesky factor of the residual
    covariance (a lower-triangular matrix log: log of the diagonal plus the
    matching strictly-lower part), ``A = 0`` and the lag blocks are the OLS
    coefficients.
    """
    y = np.asarray(y, dtype=float)
    if init_window is not None:
        y = y[:init_window]
    n = spec.n
    nb = spec.lags.n_blocks
    L = spec.lags.max_lag
    if y.shape[0] - L < n * nb + 1:
        raise ValueError("initialization window too short for OLS")
    X, Y = ols_design(y, spec)
    coef, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    if rank < X.shape[1]:
        raise np.linalg.LinAlgError("singular OLS design in the initialization window")
    resid = Y - X @ coef
    cov = resid.T @ resid / resid.shape[0]
    chol = np.linalg.cholesky(cov)
    phis = [coef[b * n:(b + 1) * n].T for b in range(nb)]
    return pack(_log_lower(chol), np.zeros((n, n)), phis, spec)


def _log_lower(Lc):
    """Principal logarithm of a lower-triangular matrix with positive diagonal."""
    return np.tril(np.real(linalg.logm(Lc)))


@dataclass
class BandOutput:
    """Pointwise 68% half-widths of the state path.

    ``halfwidth**2 = floor + param_var`` where ``floor`` is the constant
    filtering term and ``param_var`` the across-draw variance of re-filtered
    paths.
    """

    center: np.ndarray
    halfwidth: np.ndarray
    floor: np.ndarray
    param_var: np.ndarray
    draws: int
    failed_draws: int

    @property
    def lower(self):
        return self.center - self.halfwidth

    @property
    def upper(self):
        return self.center + self.halfwidth


def filtering_floor(filter_out):
    """Variance of one update ``alpha_c s_c`` averaged over the sample."""
    s = filter_out.scores[filter_out.start:]
    return filter_out.statics.alpha ** 2 * np.mean(s ** 2, axis=0)


def bands(y, spec, statics, theta0, cov=None, restriction=None, draws=360, rng=None):
    """68% bands for the filtered path.

    Parameters
    ----------
    cov : ndarray, optional
        Covariance of the free alpha values (one per restriction group).
        ``None`` or zeros gives the filtering floor alone.
    restriction : Restriction
        Maps free values to the full alpha vector; required with ``cov``.
    """
    if draws < 2:
        raise ValueError("draws must be >= 2")
    base = run_filter(y, spec, statics, theta0)
    floor = filtering_floor(base)
    T = base.theta_path.shape[0]
    param_var = np.zeros((T, spec.d))
    failed = 0
    if cov is not None and np.any(np.asarray(cov) != 0.0):
        if restriction is None:
            raise ValueError("a restriction is needed to map covariance draws")
        cov = np.asarray(cov, dtype=float)
        evals = np.linalg.eigvalsh((cov + cov.T) / 2)
        if evals.min() < -1e-10 * max(1.0, evals.max()):
            raise ValueError("covariance is not positive semidefinite")
        rng = rng if rng is not None else np.random.default_rng()
        center = restriction.collapse(statics.alpha)
        pts = rng.multivariate_normal(center, cov, size=draws, method="eigh")
        paths = []
        for x in pts:
            alpha = restriction.expand(np.maximum(x, 0.0), spec.d)
            st = StaticParams(statics.omega, statics.beta, alpha)
            try:
                paths.append(run_filter(y, spec, st, theta0).theta_path)
            except FilterDivergenceError:
                failed += 1
        if failed:
            warnings.warn(f"{failed} of {draws} parameter draws diverged and were dropped",
                          RuntimeWarning, stacklevel=2)
        if len(paths) >= 2:
            param_var = np.var(np.array(paths), axis=0, ddof=1)
    half = np.sqrt(floor[None, :] + param_var)
    return BandOutput(base.theta_path, half, floor, param_var, draws, failed)
