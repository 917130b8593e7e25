"""
Score-driven structural VAR: parameter layout, likelihood and scores.

The observation equation is::

    y_t = sum_b Phi_b,t x_b,t + exp(S_t) O(A_t) eps_t

where the regressor of lag block ``b`` is ``x_b,t = sum_l W[b, l] y_{t-1-l}``.
A plain VAR(p) has ``W = I_p``; the heterogeneous structure has a monthly
block on ``y_{t-1}`` and a semester block on the average of lags 2..6.

The time-varying vector ``theta_t`` stacks, in order, the lower triangle of
``S`` (row-major), the strict upper triangle of ``A`` (row-major) and each
``Phi_b`` in column-major order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba
import numpy as np

from . import skewt
from .matcalc import _cayley, _expm_frechet_block, _expm_lower, _gelfand_adjoint, _solve

__all__ = [
    "LagStructure",
    "ModelSpec",
    "StaticParams",
    "Restriction",
    "IdentificationError",
    "pack",
    "unpack",
    "regressors",
    "companion_matrix",
    "residual_and_shock",
    "log_likelihood_t",
    "scores_t",
    "penalized_scores_t",
    "step",
    "mixing_matrix",
]


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class LagStructure:
    """Lag blocks of the VAR.

    ``kind`` is ``"plain"`` (order ``p``) or ``"heterogeneous"`` (monthly lag
    plus a five-month average of lags 2..6).
    """

    kind: str = "plain"
    p: int = 1

    def __post_init__(self):
        if self.kind not in ("plain", "heterogeneous"):
            raise ValueError(f"unknown lag kind {self.kind!r}")
        if self.kind == "plain" and self.p < 1:
            raise ValueError("plain VAR needs p >= 1")

    @property
    def weights(self):
        if self.kind == "plain":
            return np.eye(self.p)
        W = np.zeros((2, 6))
        W[0, 0] = 1.0
        W[1, 1:] = 0.2
        return W

    @property
    def n_blocks(self):
        return self.weights.shape[0]

    @property
    def max_lag(self):
        return self.weights.shape[1]

    @property
    def block_names(self):
        if self.kind == "plain":
            return [f"Phi{b + 1}" for b in range(self.p)]
        return ["Phim", "Phis"]

    def to_dict(self):
        return {"kind": self.kind, "p": self.p}


@dataclass(frozen=True)
class ModelSpec:
    n: int
    lags: LagStructure = field(default_factory=LagStructure)
    skewt: tuple = ()
    penalty_k: float = 200.0
    squaring_q: int = 10
    scaling_a: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        object.__setattr__(self, "skewt", tuple(
            p if isinstance(p, skewt.SkewTParams) else skewt.SkewTParams(*p)
            for p in self.skewt))
        if len(self.skewt) != self.n:
            raise ValueError(f"need {self.n} skew-t parameter pairs, got {len(self.skewt)}")
        if self.penalty_k < 0:
            raise ValueError("penalty_k must be >= 0")
        if self.squaring_q < 1:
            raise ValueError("squaring_q must be >= 1")
        if self.scaling_a != 0.0:
            raise ValueError("only the identity scaling (a = 0) is supported")

    # -- layout -----------------------------------------------------------
    @property
    def n_s(self):
        return self.n * (self.n + 1) // 2

    @property
    def n_a(self):
        return self.n * (self.n - 1) // 2

    @property
    def d(self):
        return self.n_s + self.n_a + self.lags.n_blocks * self.n ** 2

    @property
    def s_slice(self):
        return slice(0, self.n_s)

    @property
    def a_slice(self):
        return slice(self.n_s, self.n_s + self.n_a)

    def phi_slice(self, b):
        start = self.n_s + self.n_a + b * self.n ** 2
        return slice(start, start + self.n ** 2)

    @property
    def s_pairs(self):
        return [(i, j) for i in range(self.n) for j in range(i + 1)]

    @property
    def a_pairs(self):
        return [(i, j) for i in range(self.n) for j in range(i + 1, self.n)]

    def labels(self):
        """Human-readable names of the theta components (1-based indices)."""
        out = [f"S{i + 1}{j + 1}" for i, j in self.s_pairs]
        out += [f"A{i + 1}{j + 1}" for i, j in self.a_pairs]
        for name in self.lags.block_names:
            out += [f"{name}_{i + 1}{j + 1}" for j in range(self.n) for i in range(self.n)]
        return out

    def index(self, label):
        return self.labels().index(label)

    def with_skewt(self, params):
        return ModelSpec(self.n, self.lags, tuple(params), self.penalty_k,
                         self.squaring_q, self.scaling_a)

    def identification_issues(self):
        """Violations of the shock identification conditions, as messages."""
        issues = []
        deltas = [p.delta for p in self.skewt]
        nus = [p.nu for p in self.skewt]
        for i, d in enumerate(deltas):
            if d == 0.0:
                issues.append(f"delta_{i + 1} is zero")
        if len(set(deltas)) != len(deltas):
            issues.append("asymmetry parameters are not pairwise distinct")
        if len(set(nus)) != len(nus):
            issues.append("tail parameters are not pairwise distinct")
        return issues

    def validate_identification(self):
        issues = self.identification_issues()
        if issues:
            raise IdentificationError("; ".join(issues))

    # -- numba-facing constants --------------------------------------------
    def _arrays(self):
        consts = [skewt.constants(p) for p in self.skewt]
        return (np.ascontiguousarray(self.lags.weights),
                np.array([c.lam for c in consts]),
                np.array([c.v for c in consts]),
                np.array([c.m for c in consts]),
                np.array([p.nu for p in self.skewt], dtype=float))

    def to_dict(self):
        return {"n": self.n, "lags": self.lags.to_dict(),
                "skewt": [{"delta": p.delta, "nu": p.nu} for p in self.skewt],
                "penalty_k": self.penalty_k, "squaring_q": self.squaring_q}

    @classmethod
    def from_dict(cls, d):
        lags = d.get("lags", {})
        return cls(n=int(d["n"]),
                   lags=LagStructure(lags.get("kind", "plain"), int(lags.get("p", 1))),
                   skewt=tuple(skewt.SkewTParams(float(p["delta"]), float(p["nu"]))
                               for p in d["skewt"]),
                   penalty_k=float(d.get("penalty_k", 200.0)),
                   squaring_q=int(d.get("squaring_q", 10)))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# static parameters and restrictions


@dataclass
class StaticParams:
    """Coefficients of ``theta_{t+1} = omega + beta * theta_t + alpha * s_t``.

    All three are length-``d`` vectors (diagonal coefficient matrices).
    """

    omega: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if not (self.omega.shape == self.beta.shape == self.alpha.shape) or self.alpha.ndim != 1:
            raise ValueError("omega, beta and alpha must be vectors of equal length")

    @classmethod
    def integrated(cls, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return cls(np.zeros_like(alpha), np.ones_like(alpha), alpha)

    @property
    def is_integrated(self):
        return bool(np.all(self.omega == 0.0) and np.all(self.beta == 1.0))

    def to_dict(self):
        return {"omega": self.omega.tolist(), "beta": self.beta.tolist(),
                "alpha": self.alpha.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["omega"], d["beta"], d["alpha"])


@dataclass
class Restriction:
    """Partition of (a subset of) the theta indices into tied groups.

    Each group shares one alpha (and, outside integrated mode, one omega and
    one beta).  Indices outside every group keep alpha = 0.
    """

    names: list
    groups: list

    def __post_init__(self):
        self.groups = [np.asarray(g, dtype=int) for g in self.groups]
        if len(self.names) != len(self.groups):
            raise ValueError("one name per group")
        flat = np.concatenate(self.groups) if self.groups else np.array([], int)
        if len(np.unique(flat)) != len(flat):
            raise ValueError("groups overlap")

    def __len__(self):
        return len(self.groups)

    def expand(self, values, d, fill=0.0):
        out = np.full(d, fill, dtype=float)
        for g, val in zip(self.groups, values):
            out[g] = val
        return out

    def fold(self, full):
        """Collapse a per-component vector (e.g. a gradient) by summing over groups."""
        full = np.asarray(full)
        return np.array([full[..., g].sum(axis=-1) for g in self.groups]).T

    def collapse(self, full):
        """Read the shared value of each group from a per-component vector."""
        full = np.asarray(full, dtype=float)
        return np.array([full[g[0]] for g in self.groups])

    @classmethod
    def by_block(cls, spec):
        """One alpha for S, one for A, one per lag block."""
        names = ["alpha_S", "alpha_A"] + [f"alpha_{b}" for b in spec.lags.block_names]
        groups = [np.arange(spec.d)[spec.s_slice], np.arange(spec.d)[spec.a_slice]]
        groups += [np.arange(spec.d)[spec.phi_slice(b)] for b in range(spec.lags.n_blocks)]
        if spec.n_a == 0:
            names.pop(1)
            groups.pop(1)
        return cls(names, groups)

    @classmethod
    def diagonal_offdiagonal(cls, spec):
        """Own alpha for each diagonal entry, a shared one for off-diagonals.

        For n = 3 with heterogeneous lags this is the 13-parameter set: four
        for S, one for A and four for each lag block.
        """
        n = spec.n
        names, groups = [], []
        s0 = spec.s_slice.start
        for k, (i, j) in enumerate(spec.s_pairs):
            if i == j:
                names.append(f"alpha_S{i + 1}{i + 1}")
                groups.append([s0 + k])
        off = [s0 + k for k, (i, j) in enumerate(spec.s_pairs) if i != j]
        if off:
            names.append("alpha_S_off")
            groups.append(off)
        if spec.n_a:
            names.append("alpha_A")
            groups.append(list(range(spec.a_slice.start, spec.a_slice.stop)))
        for b, bname in enumerate(spec.lags.block_names):
            base = spec.phi_slice(b).start
            for i in range(n):
                names.append(f"alpha_{bname}_{i + 1}{i + 1}")
                groups.append([base + i * n + i])
            off = [base + j * n + i for j in range(n) for i in range(n) if i != j]
            if off:
                names.append(f"alpha_{bname}_off")
                groups.append(off)
        return cls(names, groups)

    @classmethod
    def per_component(cls, spec):
        return cls([f"alpha_{lab}" for lab in spec.labels()],
                   [[k] for k in range(spec.d)])

    def to_dict(self):
        return {"names": list(self.names), "groups": [g.tolist() for g in self.groups]}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["names"]), d["groups"])


# ---------------------------------------------------------------------------
# packing


def unpack(theta, spec):
    """Split ``theta`` into ``(S, A, [Phi_b, ...])``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.d,):
        raise ValueError(f"theta must have length {spec.d}, got {theta.shape}")
    n = spec.n
    S = np.zeros((n, n))
    for k, (i, j) in enumerate(spec.s_pairs):
        S[i, j] = theta[spec.s_slice.start + k]
    A = np.zeros((n, n))
    for k, (i, j) in enumerate(spec.a_pairs):
        A[i, j] = theta[spec.a_slice.start + k]
        A[j, i] = -A[i, j]
    phis = [theta[spec.phi_slice(b)].reshape(n, n, order="F").copy()
            for b in range(spec.lags.n_blocks)]
    return S, A, phis


def pack(S, A, phis, spec):
    """Inverse of :func:`unpack`; ``A`` contributes its strict upper triangle."""
    S = np.asarray(S, dtype=float)
    A = np.asarray(A, dtype=float)
    if len(phis) != spec.lags.n_blocks:
        raise ValueError(f"need {spec.lags.n_blocks} lag matrices")
    theta = np.empty(spec.d)
    theta[spec.s_slice] = [S[i, j] for i, j in spec.s_pairs]
    theta[spec.a_slice] = [A[i, j] for i, j in spec.a_pairs]
    for b, P in enumerate(phis):
        theta[spec.phi_slice(b)] = np.asarray(P, dtype=float).reshape(-1, order="F")
    return theta


def mixing_matrix(theta, spec):
    """``C = exp(S) O(A)``."""
    S, A, _ = unpack(theta, spec)
    return _expm_lower(S) @ _cayley(A)


def companion_matrix(theta, spec):
    """Companion matrix of the VAR implied by ``theta`` (size ``n * max_lag``)."""
    _, _, phis = unpack(theta, spec)
    return _companion(np.ascontiguousarray(np.array(phis)), spec.lags.weights)


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _unpack(theta, n, nb):
    S = np.zeros((n, n))
    A = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i + 1):
            S[i, j] = theta[k]
            k += 1
    for i in range(n):
        for j in range(i + 1, n):
            A[i, j] = theta[k]
            A[j, i] = -theta[k]
            k += 1
    phis = np.zeros((nb, n, n))
    for b in range(nb):
        for j in range(n):
            for i in range(n):
                phis[b, i, j] = theta[k]
                k += 1
    return S, A, phis


@numba.njit(cache=True)
def _regressors(hist, W):
    # hist[l] = y_{t-1-l}
    nb, L = W.shape
    n = hist.shape[1]
    xs = np.zeros((nb, n))
    for b in range(nb):
        for ell in range(L):
            w = W[b, ell]
            if w != 0.0:
                for i in range(n):
                    xs[b, i] += w * hist[ell, i]
    return xs


@numba.njit(cache=True)
def _companion(phis, W):
    nb, L = W.shape
    n = phis.shape[1]
    N = n * L
    M = np.zeros((N, N))
    for ell in range(L):
        for b in range(nb):
            w = W[b, ell]
            if w != 0.0:
                M[:n, ell * n:(ell + 1) * n] += w * phis[b]
    for i in range(N - n):
        M[n + i, i] = 1.0
    return M


@numba.njit(cache=True)
def _stability(M, q, want_grad):
    """Return ``(flag, rho_hat, grad)`` with ``flag = rho_hat >= 1``.

    Stops early once ``||M^(2^k)||_F < 1``, which bounds the estimate below
    one; ``rho_hat`` is then reported as NaN.
    """
    N = M.shape[0]
    chain = np.zeros((q + 1, N, N))
    norms = np.ones(q + 1)
    P = M.copy()
    loglam = 0.0
    for k in range(q):
        s = np.max(np.abs(P))
        if s == 0.0:
            return False, 0.0, np.zeros((N, N))
        P = P / s
        loglam += np.log(s)
        if np.log(np.sqrt(np.sum(P * P))) + loglam < 0.0:
            return False, np.nan, np.zeros((N, N))
        norms[k] = s
        chain[k] = P
        P = P @ P
        loglam *= 2.0
    chain[q] = P
    if not np.all(np.isfinite(P)):
        return True, np.inf, np.zeros((N, N))
    U, sig, Vt = np.linalg.svd(P)
    rho = np.exp((np.log(sig[0]) + loglam) / 2.0 ** q)
    if rho < 1.0:
        return False, rho, np.zeros((N, N))
    if not want_grad:
        return True, rho, np.zeros((N, N))
    G = _gelfand_adjoint(chain, norms, U[:, 0].copy(), Vt[0, :].copy(), rho, sig[0], q)
    return True, rho, G


@numba.njit(cache=True)
def _observe(y, xs, theta, n, W, lam, v, m, nu, k_pen, q, want_score):
    """Evaluate one observation.

    Returns ``(eps, loglik, penalty, flag, score)`` where ``loglik`` is the
    unpenalized log-density, ``penalty = k (1 + rho) 1{rho >= 1}`` and
    ``score`` the gradient of ``loglik - penalty`` (zeros unless requested).
    """
    nb = W.shape[0]
    L = W.shape[1]
    d = theta.shape[0]
    S, A, phis = _unpack(theta, n, nb)
    r = y.copy()
    for b in range(nb):
        r -= phis[b] @ xs[b]
    Einv = _expm_lower(-S)
    O = _cayley(A)
    u = Einv @ r
    eps = O.T @ u
    G = np.empty(n)
    ll = 0.0
    for i in range(n):
        ll -= S[i, i]
        lp, gi = skewt._logpdf_and_score(eps[i], lam[i], v[i], m[i], nu[i])
        ll += lp
        G[i] = gi
    M = _companion(phis, W)
    flag, rho, dM = _stability(M, q, want_score and k_pen > 0.0)
    pen = k_pen * (1.0 + rho) if (flag and k_pen > 0.0) else 0.0
    score = np.zeros(d)
    if not want_score:
        return eps, ll, pen, flag, score
    g = O @ G
    _, Lf = _expm_frechet_block(-S.T, np.outer(g, r))
    k = 0
    for i in range(n):
        for j in range(i + 1):
            score[k] = -Lf[i, j] - (1.0 if i == j else 0.0)
            k += 1
    ident = np.eye(n)
    b1 = _solve(ident + A, u.reshape(n, 1))[:, 0]
    b2 = _solve(ident - A, eps.reshape(n, 1))[:, 0]
    for i in range(n):
        for j in range(i + 1, n):
            score[k] = -((g[i] * b1[j] - g[j] * b1[i]) + (G[i] * b2[j] - G[j] * b2[i]))
            k += 1
    w = Einv.T @ g
    for b in range(nb):
        for j in range(n):
            for i in range(n):
                val = -w[i] * xs[b, j]
                if pen > 0.0:
                    dphi = 0.0
                    for ell in range(L):
                        if W[b, ell] != 0.0:
                            dphi += W[b, ell] * dM[i, ell * n + j]
                    val -= k_pen * dphi
                score[k] = val
                k += 1
    return eps, ll, pen, flag, score


@numba.njit(cache=True)
def _step(theta, score, omega, beta, alpha):
    return omega + beta * theta + alpha * score


# ---------------------------------------------------------------------------
# public single-observation API


def _split_window(y_window, spec):
    y_window = np.asarray(y_window, dtype=float)
    L = spec.lags.max_lag
    if y_window.ndim != 2 or y_window.shape[1] != spec.n:
        raise ValueError(f"window must have shape (rows, {spec.n})")
    if y_window.shape[0] < L + 1:
        raise ValueError(f"need {L} past observations plus y_t, got {y_window.shape[0]} rows")
    y_t = np.ascontiguousarray(y_window[-1])
    hist = np.ascontiguousarray(y_window[-2:-L - 2:-1]) if L else np.zeros((0, spec.n))
    return y_t, hist


def regressors(y_window, spec):
    """Regressors ``x_b`` of each lag block for the last row of ``y_window``."""
    _, hist = _split_window(y_window, spec)
    return _regressors(hist, spec.lags.weights)


def _evaluate(y_window, theta, spec, k_pen, want_score):
    theta = np.ascontiguousarray(theta, dtype=float)
    if theta.shape != (spec.d,):
        raise ValueError(f"theta must have length {spec.d}")
    y_t, hist = _split_window(y_window, spec)
    W, lam, v, m, nu = spec._arrays()
    xs = _regressors(hist, W)
    return _observe(y_t, xs, theta, spec.n, W, lam, v, m, nu, float(k_pen),
                    spec.squaring_q, want_score)


def residual_and_shock(y_window, theta, spec):
    """Structural shocks ``O^T exp(-S) (y_t - sum_b Phi_b x_b)`` for the last row."""
    return _evaluate(y_window, theta, spec, 0.0, False)[0]


def log_likelihood_t(y_window, theta, spec, penalized=False):
    """Log pseudo-density of ``y_t`` given its past.

    With ``penalized=True`` the stability penalty ``k (1 + rho)`` is
    subtracted whenever the companion spectral radius estimate is >= 1.
    """
    eps, ll, pen, flag, _ = _evaluate(y_window, theta, spec,
                                      spec.penalty_k if penalized else 0.0, False)
    return ll - pen


def scores_t(y_window, theta, spec):
    """Gradient of :func:`log_likelihood_t` with respect to ``theta``."""
    return _evaluate(y_window, theta, spec, 0.0, True)[4]


def penalized_scores_t(y_window, theta, spec):
    """Gradient of the penalized log-likelihood.

    Differs from :func:`scores_t` only in the lag-block components, and only
    when the spectral radius estimate is >= 1.
    """
    return _evaluate(y_window, theta, spec, spec.penalty_k, True)[4]


def step(theta, score, statics):
    """One update ``omega + beta * theta + alpha * score``."""
    theta = np.asarray(theta, dtype=float)
    score = np.asarray(score, dtype=float)
    if not (theta.shape == score.shape == statics.alpha.shape):
        raise ValueError("theta, score and statics must have the same length")
    return _step(theta, score, statics.omega, statics.beta, statics.alpha)


@numba.njit(cache=True)
def _mix(theta, xs, n, nb):
    """Conditional mean ``sum_b Phi_b x_b`` and mixing matrix ``C``."""
    S, A, phis = _unpack(theta, n, nb)
    mu = np.zeros(n)
    for b in range(nb):
        mu += phis[b] @ xs[b]
    return mu, _expm_lower(S) @ _cayley(A)


@numba.njit(cache=True)
def _propagate(hist0, theta0, eps, n, W, lam, v, m, nu, k_pen, q,
               omega, beta, alpha, bound):
    """Generate ``y`` forward from a history, feeding the filter recursion.

    ``hist0[l]`` holds ``y_{-1-l}``; ``eps`` has one row per generated
    observation.  Returns ``(ys, thetas, flags, status)`` where ``thetas[h]``
    is the state used for ``ys[h]`` and ``status`` is -1 on success or the
    first row at which ``|theta|`` or ``|y|`` exceeded ``bound``.
    """
    H = eps.shape[0]
    nb, L = W.shape
    d = theta0.shape[0]
    want = False
    for c in range(d):
        if alpha[c] != 0.0:
            want = True
    hist = hist0.copy()
    theta = theta0.copy()
    ys = np.zeros((H, n))
    thetas = np.zeros((H, d))
    flags = np.zeros(H, dtype=np.bool_)
    for h in range(H):
        thetas[h] = theta
        xs = _regressors(hist, W)
        mu, C = _mix(theta, xs, n, nb)
        y = mu + C @ eps[h]
        ys[h] = y
        _, _, _, flag, score = _observe(y, xs, theta, n, W, lam, v, m, nu, k_pen, q, want)
        flags[h] = flag
        theta = _step(theta, score, omega, beta, alpha)
        for ell in range(L - 1, 0, -1):
            hist[ell] = hist[ell - 1]
        if L > 0:
            hist[0] = y
        for c in range(d):
            if not abs(theta[c]) <= bound:
                return ys, thetas, flags, h
        for i in range(n):
            if not abs(y[i]) <= bound:
                return ys, thetas, flags, h
    return ys, thetas, flags, -1
