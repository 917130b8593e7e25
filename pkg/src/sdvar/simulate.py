"""
Data-generating processes for Monte-Carlo work.

Four kinds are available:

``score_driven``
    The state follows the model's own recursion fed by the simulated data.
``deterministic_sine``
    Every block of the state follows a sine pattern around its initial value.
``shock_driven_rw``
    A driftless random walk whose innovations are linear in the structural
    shocks, ``theta_{t+1} = theta_t + alpha_block L_block eps_t``.
``constant``
    A constant-parameter structural VAR.

All kinds share the alignment of :mod:`sdvar.filtering`: rows before the
maximum lag ``L`` are pre-sample, generated from a zero history with the
state held at its initial value.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from . import skewt
from .filtering import init_theta, run_filter, run_smoother
from .model import (LagStructure, ModelSpec, Restriction, StaticParams, _mix,
                    _propagate, _regressors, companion_matrix, pack)

__all__ = [
    "DgpConfig",
    "SimOutput",
    "McSummary",
    "default_theta0",
    "default_loadings",
    "default_statics",
    "simulate",
    "draw_shocks",
    "mc_study",
    "replication_seeds",
]

KINDS = ("score_driven", "deterministic_sine", "shock_driven_rw", "constant")

DEFAULT_SKEWT = ((-0.7, 5.0), (-0.6, 6.0), (0.7, 5.5))


def default_theta0(spec):
    """``S = log(0.1) I``, the reference rotation and ``Phi = 0.3 I, 0.2 I, 0, ...``."""
    n = spec.n
    S = math.log(0.1) * np.eye(n)
    A = np.zeros((n, n))
    if n == 3:
        A[0, 1], A[0, 2], A[1, 2] = -0.11, 0.23, -0.03
        A = A - A.T
    levels = [0.3, 0.2]
    phis = [(levels[b] if b < 2 else 0.0) * np.eye(n) for b in range(spec.lags.n_blocks)]
    return pack(S, A, phis, spec)


def default_statics(spec, alphas=(0.01, 0.01, 0.001, 0.001)):
    """Integrated statics with one alpha for S, A and each lag block."""
    restr = Restriction.by_block(spec)
    vals = list(alphas)
    if len(vals) != len(restr):
        raise ValueError(f"need {len(restr)} alpha values, got {len(vals)}")
    return StaticParams.integrated(restr.expand(vals, spec.d))


def default_loadings(n=3):
    """Loadings ``(L_S, L_A, L_Phi)`` acting on column-major ``vec`` of each block."""
    if n != 3:
        raise ValueError("default loadings are defined for n = 3 only")
    L_S = np.zeros((9, 3))
    L_S[0, 2], L_S[1, 0], L_S[2, 1] = 1.0, -0.5, 0.5
    L_S[4, 0], L_S[5, 2], L_S[8, 1] = -1.0, 0.5, 1.0
    L_A = np.zeros((9, 3))
    L_A[1, 0], L_A[2, 1], L_A[3, 0] = 1.0, 1.0, -1.0
    L_A[5, 2], L_A[6, 1], L_A[7, 2] = 1.0, -1.0, -1.0
    return L_S, L_A, L_A.copy()


@dataclass
class DgpConfig:
    """Settings of one data-generating process.

    ``theta0`` and ``statics`` default to the reference values for the
    chosen ``spec``.  ``sine_amplitudes`` holds the relative amplitudes of
    the S, A and lag-block patterns; ``shock_alpha`` the per-block random-walk
    step sizes (S, A, then each lag block) and ``loadings`` the matrices
    ``(L_S, L_A, L_Phi)`` with ``L_Phi`` shared by all lag blocks.
    """

    kind: str = "score_driven"
    T: int = 750
    spec: ModelSpec = field(default_factory=lambda: ModelSpec(
        3, LagStructure("plain", 2), DEFAULT_SKEWT))
    theta0: np.ndarray | None = None
    statics: StaticParams | None = None
    sine_amplitudes: tuple = (0.25, 5.0, 0.95)
    shock_alpha: tuple | None = None
    loadings: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        L = self.spec.lags.max_lag
        if self.T <= L:
            raise ValueError(f"T must exceed the maximum lag {L}")
        if self.theta0 is None:
            self.theta0 = default_theta0(self.spec)
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if self.theta0.shape != (self.spec.d,):
            raise ValueError(f"theta0 must have length {self.spec.d}")
        if self.kind == "score_driven" and self.statics is None:
            self.statics = default_statics(self.spec)
        if self.kind == "shock_driven_rw":
            nblk = 2 + self.spec.lags.n_blocks
            if self.shock_alpha is None:
                self.shock_alpha = (0.01,) * nblk
            if len(self.shock_alpha) != nblk:
                raise ValueError(f"shock_alpha needs {nblk} entries")
            if self.loadings is None:
                self.loadings = default_loadings(self.spec.n)
            n = self.spec.n
            for name, Lm in zip(("L_S", "L_A", "L_Phi"), self.loadings):
                if np.shape(Lm) != (n * n, n):
                    raise ValueError(f"{name} must have shape ({n * n}, {n})")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


@dataclass
class SimOutput:
    """Simulated data with the true state path and shocks."""

    y: np.ndarray
    theta_true: np.ndarray
    eps_true: np.ndarray
    config: DgpConfig


def draw_shocks(spec, rng, T):
    """Skew-t shocks of shape ``(T, n)`` from three uniform streams per entry."""
    u = rng.random((3, T, spec.n))
    return np.column_stack([skewt.sample_from_uniforms(p, u[:, :, i])
                            for i, p in enumerate(spec.skewt)])


@numba.njit(cache=True)
def _generate(thetas, eps, n, W):
    T = eps.shape[0]
    nb, L = W.shape
    y = np.zeros((T, n))
    hist = np.zeros((L, n))
    for t in range(T):
        for ell in range(L):
            if t - 1 - ell >= 0:
                hist[ell] = y[t - 1 - ell]
        xs = _regressors(hist, W)
        mu, C = _mix(thetas[t], xs, n, nb)
        y[t] = mu + C @ eps[t]
    return y


def _sine_path(cfg):
    spec, T = cfg.spec, cfg.T
    aS, aA, aP = cfg.sine_amplitudes
    t = np.arange(T, dtype=float)
    base = np.sin(2.0 * np.pi * t / T)
    slow = np.sin(2.0 * np.pi * (t + 4 * T) / (4 * T))
    factor = np.empty((T, spec.d))
    factor[:, spec.s_slice] = (1.0 + aS * base)[:, None]
    factor[:, spec.a_slice] = (1.0 + aA * slow)[:, None]
    for b in range(spec.lags.n_blocks):
        factor[:, spec.phi_slice(b)] = (1.0 + aP * base)[:, None]
    return cfg.theta0[None, :] * factor


def _shock_loading(cfg):
    """``d x n`` matrix mapping eps_t to the state increment."""
    spec = cfg.spec
    n = spec.n
    L_S, L_A, L_P = (np.asarray(m, dtype=float) for m in cfg.loadings)
    alphas = cfg.shock_alpha
    out = np.zeros((spec.d, n))
    # strictly upper rows of L_S have no state component and are dropped
    for k, (i, j) in enumerate(spec.s_pairs):
        out[spec.s_slice.start + k] = alphas[0] * L_S[j * n + i]
    for k, (i, j) in enumerate(spec.a_pairs):
        out[spec.a_slice.start + k] = alphas[1] * L_A[j * n + i]
    for b in range(spec.lags.n_blocks):
        out[spec.phi_slice(b)] = alphas[2 + b] * L_P
    return out


def simulate(cfg, eps=None):
    """Simulate ``cfg``; ``eps`` overrides the drawn shocks (shape ``(T, n)``)."""
    spec, T = cfg.spec, cfg.T
    L = spec.lags.max_lag
    if eps is None:
        eps = draw_shocks(spec, np.random.default_rng(cfg.seed), T)
    eps = np.ascontiguousarray(eps, dtype=float)
    if eps.shape != (T, spec.n):
        raise ValueError(f"eps must have shape ({T}, {spec.n})")
    W = spec.lags.weights
    if cfg.kind == "score_driven":
        W_, lam, v, m, nu = spec._arrays()
        zero = np.zeros(spec.d)
        pre_y, _, _, _ = _propagate(np.zeros((L, spec.n)), cfg.theta0, eps[:L], spec.n, W_,
                                    lam, v, m, nu, float(spec.penalty_k), spec.squaring_q,
                                    zero, np.ones(spec.d), zero, np.inf)
        hist = np.ascontiguousarray(pre_y[::-1])
        st = cfg.statics
        ys, thetas, _, status = _propagate(hist, cfg.theta0, eps[L:], spec.n, W_, lam, v,
                                           m, nu, float(spec.penalty_k), spec.squaring_q,
                                           st.omega, st.beta, st.alpha, 1e6)
        if status >= 0:
            raise RuntimeError(f"score-driven simulation exploded at t = {L + status}")
        y = np.vstack([pre_y, ys])
        theta = np.vstack([np.repeat(cfg.theta0[None, :], L, axis=0), thetas])
        return SimOutput(y, theta, eps, cfg)
    if cfg.kind == "deterministic_sine":
        theta = _sine_path(cfg)
    elif cfg.kind == "constant":
        rho = np.max(np.abs(np.linalg.eigvals(companion_matrix(cfg.theta0, spec))))
        if rho >= 1.0:
            raise ValueError(f"constant DGP is not stable (spectral radius {rho:.4f})")
        theta = np.repeat(cfg.theta0[None, :], T, axis=0)
    else:
        load = _shock_loading(cfg)
        theta = np.repeat(cfg.theta0[None, :], T, axis=0)
        incr = eps[L:T - 1] @ load.T
        theta[L + 1:] = cfg.theta0 + np.cumsum(incr, axis=0)
    y = _generate(np.ascontiguousarray(theta), eps, spec.n, W)
    return SimOutput(y, theta, eps, cfg)


# ---------------------------------------------------------------------------
# Monte-Carlo studies


def replication_seeds(seed, replications):
    """Independent per-replication seeds spawned from one master seed."""
    children = np.random.SeedSequence(seed).spawn(replications)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def quantile_bands(errors, probs=(0.16, 0.5, 0.84)):
    """Pointwise quantiles (linear interpolation) across replications, axis 0."""
    return np.quantile(errors, probs, axis=0, method="linear")


@dataclass
class McSummary:
    """Pointwise error quantiles across replications.

    Arrays are indexed ``[quantile, t, component]`` with quantiles
    ``(0.16, 0.5, 0.84)``.  "Absolute" errors are the signed differences
    ``estimate - truth`` so that a band can contain zero; relative errors
    divide them by the truth.
    """

    filtered_abs: np.ndarray
    filtered_rel: np.ndarray
    smoothed_abs: np.ndarray
    smoothed_rel: np.ndarray
    replications: int
    failed: int
    statics: list
    labels: list

    def coverage_of_zero(self, which="filtered_abs", burn_in=100):
        """Fraction of post-burn-in steps whose 68% band contains zero, per component."""
        q = getattr(self, which)[:, burn_in:, :]
        inside = (q[0] <= 0.0) & (q[2] >= 0.0)
        return inside.mean(axis=0)


def _one_replication(args):
    cfg, seed, statics, estimator, init_window = args
    from .filtering import FilterDivergenceError
    sim = simulate(cfg.with_seed(seed))
    spec = cfg.spec
    theta0 = init_theta(sim.y, spec, init_window)
    st = statics
    if estimator is not None:
        st = estimator(sim.y, spec, theta0)
    try:
        filt = run_filter(sim.y, spec, st, theta0)
        smooth = run_smoother(sim.y, spec, st, filt)
    except FilterDivergenceError:
        return None
    return sim.theta_true, filt.theta_path, smooth.theta_path, st


def mc_study(cfg, replications, statics=None, estimator=None, init_window=None,
             workers=1):
    """Filter and smooth ``replications`` simulated samples and summarize errors.

    Parameters
    ----------
    statics : StaticParams, optional
        Statics used by the filter on every replication.
    estimator : callable, optional
        ``estimator(y, spec, theta0) -> StaticParams`` run per replication
        instead of fixed ``statics``; must be picklable when ``workers > 1``.
    init_window : int, optional
        Rows used by the OLS initialization (default: the whole sample).
    """
    if replications < 2:
        raise ValueError("replications must be >= 2")
    if statics is None and estimator is None:
        raise ValueError("give either statics or an estimator")
    seeds = replication_seeds(cfg.seed, replications)
    tasks = [(cfg, s, statics, estimator, init_window) for s in seeds]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_one_replication, tasks))
    else:
        results = [_one_replication(t) for t in tasks]
    ok = [r for r in results if r is not None]
    if len(ok) < 2:
        raise RuntimeError("fewer than two replications completed")
    truth = np.array([r[0] for r in ok])
    filt = np.array([r[1] for r in ok])
    smooth = np.array([r[2] for r in ok])
    # relative errors of components whose truth is zero are inf/nan by design
    with np.errstate(divide="ignore", invalid="ignore"):
        f_rel = quantile_bands((filt - truth) / truth)
        s_rel = quantile_bands((smooth - truth) / truth)
    return McSummary(
        filtered_abs=quantile_bands(filt - truth),
        filtered_rel=f_rel,
        smoothed_abs=quantile_bands(smooth - truth),
        smoothed_rel=s_rel,
        replications=len(ok),
        failed=len(results) - len(ok),
        statics=[r[3] for r in ok],
        labels=cfg.spec.labels(),
    )
