"""
Standardized skew Student's t pseudo-density.

The density is the Azzalini-Capitanio skew-t with slant
``lambda = delta / sqrt(1 - delta^2)``, relocated and rescaled so that it has
zero mean and unit variance::

    p(e) = 2 c(nu) / v * (1 + z^2 / nu)^(-(nu+1)/2) * T(w; nu+1)
    z = e / v + m,    w = lambda * z * sqrt((nu+1) / (z^2 + nu))

with ``T(.; k)`` the Student-t CDF with ``k`` degrees of freedom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

__all__ = [
    "SkewTParams",
    "SkewTConstants",
    "InfeasibleMomentsError",
    "constants",
    "log_pdf",
    "score_factor_G",
    "sample",
    "sample_from_uniforms",
    "moments",
    "target_moments",
]


@numba.njit(cache=True)
def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


@numba.njit(cache=True)
def _betainc(a, b, x, xc):
    """Regularized incomplete beta ``I_x(a, b)``; ``xc = 1 - x`` passed exactly."""
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    front = math.exp(a * math.log(x) + b * math.log(xc) - lbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, xc) / b


@numba.njit(cache=True)
def _stdtr(k, w):
    """Student-t CDF with ``k`` degrees of freedom."""
    w2 = w * w
    tail = 0.5 * _betainc(0.5 * k, 0.5, k / (k + w2), w2 / (k + w2))
    return tail if w < 0.0 else 1.0 - tail


class InfeasibleMomentsError(ValueError):
    """Raised when no skew-t in the family matches the requested moments.

    ``nearest`` holds the closest attainable ``(skewness, kurtosis)`` on the
    precomputed grid and ``params`` the matching ``SkewTParams``.
    """

    def __init__(self, message, nearest=None, params=None):
        super().__init__(message)
        self.nearest = nearest
        self.params = params


@dataclass(frozen=True)
class SkewTParams:
    delta: float
    nu: float

    def __post_init__(self):
        if not np.isfinite(self.delta) or abs(self.delta) >= 1.0:
            raise ValueError(f"delta must lie in (-1, 1), got {self.delta}")
        if not np.isfinite(self.nu) or self.nu <= 2.0:
            raise ValueError(f"nu must exceed 2, got {self.nu}")


@dataclass(frozen=True)
class SkewTConstants:
    c: float
    v: float
    m: float
    lam: float


def _gamma_ratio(nu):
    return math.exp(math.lgamma((nu - 1.0) / 2.0) - math.lgamma(nu / 2.0))


def constants(p):
    """Normalizer ``c``, scale ``v``, mean shift ``m`` and slant ``lam``."""
    nu, delta = float(p.nu), float(p.delta)
    m = delta * math.sqrt(nu / math.pi) * _gamma_ratio(nu)
    v = 1.0 / math.sqrt(nu / (nu - 2.0) - m * m)
    c = math.exp(math.lgamma((nu + 1.0) / 2.0) - math.lgamma(nu / 2.0)) / math.sqrt(nu * math.pi)
    lam = delta / math.sqrt(1.0 - delta * delta)
    return SkewTConstants(c=c, v=v, m=m, lam=lam)


@numba.njit(cache=True)
def _log_c(nu):
    return math.lgamma((nu + 1.0) / 2.0) - math.lgamma(nu / 2.0) - 0.5 * math.log(nu * math.pi)


@numba.njit(cache=True)
def _logpdf_and_score(e, lam, v, m, nu):
    """Log-density and its derivative in ``e`` at one point."""
    z = e / v + m
    q = z * z + nu
    root = math.sqrt(q)
    w = lam * z * math.sqrt(nu + 1.0) / root
    T = _stdtr(nu + 1.0, w)
    logt1 = _log_c(nu + 1.0) - 0.5 * (nu + 2.0) * math.log1p(w * w / (nu + 1.0))
    logp = (math.log(2.0) + _log_c(nu) - math.log(v)
            - 0.5 * (nu + 1.0) * math.log1p(z * z / nu) + math.log(T))
    ratio = math.exp(logt1) / T
    G = (-(nu + 1.0) * z / q + ratio * lam * math.sqrt(nu + 1.0) * nu / (q * root)) / v
    return logp, G


@numba.njit(cache=True)
def _vec_eval(e, lam, v, m, nu):
    out_l = np.empty(e.shape[0])
    out_g = np.empty(e.shape[0])
    for k in range(e.shape[0]):
        out_l[k], out_g[k] = _logpdf_and_score(e[k], lam, v, m, nu)
    return out_l, out_g


def _evaluate(eps, p):
    if not isinstance(p, SkewTParams):
        p = SkewTParams(*p)
    k = constants(p)
    e = np.asarray(eps, dtype=float)
    flat = np.ascontiguousarray(e.reshape(-1))
    lp, g = _vec_eval(flat, k.lam, k.v, k.m, float(p.nu))
    return lp.reshape(e.shape), g.reshape(e.shape)


def log_pdf(eps, p):
    """Log-density of the standardized skew-t; vectorized over ``eps``."""
    lp, _ = _evaluate(eps, p)
    return lp[()] if np.ndim(lp) == 0 else lp


def score_factor_G(eps, p):
    """``d log p / d eps``, the factor multiplying the shock sensitivities in the scores."""
    _, g = _evaluate(eps, p)
    return g[()] if np.ndim(g) == 0 else g


def sample_from_uniforms(p, u):
    """Map uniforms ``u`` of shape ``(3, ...)`` to standardized skew-t draws.

    The three uniform streams feed, in order, the half-normal and normal
    parts of the skew-normal numerator and the chi-square denominator.
    Reflecting ``u -> 1 - u`` therefore gives the antithetic draw with the
    same marginal law.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[0] != 3:
        raise ValueError("need three uniform streams along axis 0")
    k = constants(p)
    delta, nu = float(p.delta), float(p.nu)
    z0 = special.ndtri(u[0])
    z1 = special.ndtri(u[1])
    chi2 = 2.0 * special.gammaincinv(nu / 2.0, u[2])
    x = (delta * np.abs(z0) + math.sqrt(1.0 - delta * delta) * z1) / np.sqrt(chi2 / nu)
    return k.v * (x - k.m)


def sample(p, rng, size=None):
    """Draw from the standardized skew-t using the generator ``rng``."""
    shape = (3,) if size is None else (3,) + tuple(np.atleast_1d(size))
    draws = sample_from_uniforms(p, rng.random(shape))
    return float(draws) if size is None else draws


def _moments_raw(delta, nu):
    m = delta * math.sqrt(nu / math.pi) * _gamma_ratio(nu)
    var = nu / (nu - 2.0) - m * m
    skew = m * (nu * (3.0 - delta ** 2) / (nu - 3.0) - 3.0 * nu / (nu - 2.0) + 2.0 * m ** 2) / var ** 1.5
    kurt = (3.0 * nu ** 2 / ((nu - 2.0) * (nu - 4.0))
            - 4.0 * m ** 2 * nu * (3.0 - delta ** 2) / (nu - 3.0)
            + 6.0 * m ** 2 * nu / (nu - 2.0) - 3.0 * m ** 4) / var ** 2
    return skew, kurt


def moments(p):
    """Skewness and (non-excess) kurtosis; requires ``nu > 4``."""
    if p.nu <= 4.0:
        raise ValueError("kurtosis is finite only for nu > 4")
    return _moments_raw(float(p.delta), float(p.nu))


_NU_FLOOR = 4.0
_GRID = None


def _feasible_grid():
    global _GRID
    if _GRID is None:
        deltas = np.linspace(-0.995, 0.995, 81)
        nus = np.concatenate([np.linspace(4.05, 10.0, 60), np.linspace(10.5, 200.0, 60)])
        pts = [(d, n, *_moments_raw(d, n)) for d in deltas for n in nus]
        _GRID = np.array(pts)
    return _GRID


def _to_params(x):
    return math.tanh(x[0]), _NU_FLOOR + math.exp(x[1])


def target_moments(skewness, kurtosis, tol=1e-8, max_iter=100):
    """Find ``(delta, nu)`` with the given skewness and kurtosis.

    Damped Newton on ``(atanh delta, log(nu - 4))`` with a finite-difference
    Jacobian, started at ``delta = sign(skewness) * 0.5, nu = 8``; a grid
    search supplies a second start if the first fails.

    Raises
    ------
    InfeasibleMomentsError
        If the pair is outside the attainable region of the family.
    """
    target = np.array([float(skewness), float(kurtosis)])
    if not np.all(np.isfinite(target)):
        raise ValueError("moments must be finite")
    grid = _feasible_grid()
    dist = np.hypot(grid[:, 2] - target[0], (grid[:, 3] - target[1]) / max(1.0, abs(target[1])))
    best = grid[np.argmin(dist)]

    def resid(x):
        d, n = _to_params(x)
        return np.array(_moments_raw(d, n)) - target

    starts = [np.array([math.atanh(0.5 * np.sign(target[0])), math.log(8.0 - _NU_FLOOR)]),
              np.array([math.atanh(best[0]), math.log(best[1] - _NU_FLOOR)])]
    for x in starts:
        x = x.copy()
        r = resid(x)
        for _ in range(max_iter):
            if np.max(np.abs(r)) <= tol:
                d, n = _to_params(x)
                return SkewTParams(d, n)
            J = np.empty((2, 2))
            for c in range(2):
                h = 1e-6 * max(1.0, abs(x[c]))
                xp, xm = x.copy(), x.copy()
                xp[c] += h
                xm[c] -= h
                J[:, c] = (resid(xp) - resid(xm)) / (2 * h)
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                break
            t = 1.0
            norm0 = np.max(np.abs(r))
            while t > 1e-8:
                xn = x + t * step
                if abs(xn[0]) < 8.0 and xn[1] < 8.0:
                    rn = resid(xn)
                    if np.all(np.isfinite(rn)) and np.max(np.abs(rn)) < norm0:
                        break
                t *= 0.5
            else:
                break
            x, r = xn, rn
    raise InfeasibleMomentsError(
        f"skewness {target[0]:.4g} / kurtosis {target[1]:.4g} not attainable; "
        f"nearest attainable pair is ({best[2]:.4g}, {best[3]:.4g})",
        nearest=(float(best[2]), float(best[3])),
        params=SkewTParams(float(best[0]), float(best[1])))
