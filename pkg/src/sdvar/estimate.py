"""
Penalized pseudo-maximum-likelihood estimation of the static parameters.

The free parameters are one ``alpha`` per restriction group, optimized as
``log alpha``.  Outside integrated mode each group also has its own
``omega`` (free) and ``beta`` (optimized through a logit into ``(0, 1)``).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import skewt
from .filtering import filter_loglik, filter_loglik_t, run_filter
from .model import ModelSpec, Restriction, StaticParams

__all__ = [
    "EstimateResult",
    "StaticsFitter",
    "Parametrization",
    "fit",
    "robust_se",
    "two_step_densities",
    "format_table",
]

_LOG_FLOOR = -30.0


@dataclass
class Parametrization:
    """Map between free natural values, optimizer coordinates and statics."""

    spec: ModelSpec
    restriction: Restriction
    integrated: bool = True

    @property
    def n_groups(self):
        return len(self.restriction)

    @property
    def n_free(self):
        return self.n_groups if self.integrated else 3 * self.n_groups

    def names(self):
        names = list(self.restriction.names)
        if not self.integrated:
            base = [nm.replace("alpha", "", 1).lstrip("_") for nm in names]
            names += [f"omega_{b}" for b in base] + [f"beta_{b}" for b in base]
        return names

    def statics(self, p):
        """Statics from natural values ``p = [alpha..., (omega..., beta...)]``."""
        p = np.asarray(p, dtype=float)
        g = self.n_groups
        d = self.spec.d
        alpha = self.restriction.expand(p[:g], d)
        if self.integrated:
            return StaticParams.integrated(alpha)
        # components outside every group stay constant
        omega = self.restriction.expand(p[g:2 * g], d, fill=0.0)
        beta = self.restriction.expand(p[2 * g:], d, fill=1.0)
        return StaticParams(omega, beta, alpha)

    def natural(self, statics):
        a = self.restriction.collapse(statics.alpha)
        if self.integrated:
            return a
        return np.concatenate([a, self.restriction.collapse(statics.omega),
                               self.restriction.collapse(statics.beta)])

    def to_opt(self, p):
        p = np.asarray(p, dtype=float)
        g = self.n_groups
        x = np.array(p, dtype=float)
        with np.errstate(divide="ignore"):
            x[:g] = np.maximum(np.log(p[:g]), _LOG_FLOOR)
        if not self.integrated:
            b = np.clip(p[2 * g:], 1e-12, 1 - 1e-12)
            x[2 * g:] = np.log(b / (1 - b))
        return x

    def from_opt(self, x):
        x = np.asarray(x, dtype=float)
        g = self.n_groups
        p = np.array(x, dtype=float)
        p[:g] = np.exp(x[:g])
        if not self.integrated:
            p[2 * g:] = 1.0 / (1.0 + np.exp(-x[2 * g:]))
        return p


@dataclass
class EstimateResult:
    """Fitted statics with robust inference.

    ``values``, ``robust_se`` and ``t_stats`` are per free parameter (one
    entry per tied group) in the order of ``names``.
    """

    spec: ModelSpec
    restriction: Restriction
    integrated: bool
    statics: StaticParams
    names: list
    values: np.ndarray
    loglik: float
    loglik_init: float
    convergence: str
    n_evals: int
    n_flags: int
    robust_se: np.ndarray | None = None
    cov: np.ndarray | None = None
    theta0: np.ndarray | None = None
    notes: list = field(default_factory=list)

    @property
    def t_stats(self):
        if self.robust_se is None:
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.values / self.robust_se

    @property
    def pathological(self):
        return "pathological" in self.notes

    def table(self):
        return format_table(self.names, self.values, self.robust_se)

    def to_dict(self):
        t = self.t_stats
        return {
            "spec": self.spec.to_dict(),
            "restriction": self.restriction.to_dict(),
            "integrated": self.integrated,
            "parameters": [
                {"name": nm, "value": float(v),
                 "robust_se": None if self.robust_se is None else float(self.robust_se[k]),
                 "t_stat": None if t is None else float(t[k])}
                for k, (nm, v) in enumerate(zip(self.names, self.values))],
            "statics": self.statics.to_dict(),
            "theta0": None if self.theta0 is None else self.theta0.tolist(),
            "cov": None if self.cov is None else self.cov.tolist(),
            "loglik": self.loglik,
            "loglik_init": self.loglik_init,
            "convergence": self.convergence,
            "n_evals": self.n_evals,
            "n_flags": self.n_flags,
            "notes": list(self.notes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)


def format_table(names, values, se=None):
    """Plain-text table with value, robust SE and t-stat columns."""
    rows = [f"{'Parameter':<22}{'Value':>14}{'Robust SE':>14}{'t-stat':>10}"]
    for k, nm in enumerate(names):
        if se is None:
            s, t = "", ""
        else:
            s = f"{se[k]:14.3e}"
            t = f"{values[k] / se[k]:10.2f}" if se[k] > 0 else f"{'nan':>10}"
        rows.append(f"{nm:<22}{values[k]:14.3e}{s:>14}{t:>10}")
    return "\n".join(rows)


def fit(y, spec, restriction, theta0, init=None, integrated=True, n_starts=3,
        start_spread=1.0, maxiter=None, polish=True, with_se=True):
    """Maximize the penalized pseudo-log-likelihood over the free statics.

    Parameters
    ----------
    y : ndarray (T, n)
    restriction : Restriction
        Tied alpha groups; components outside all groups keep alpha = 0.
    theta0 : ndarray
        Initial state of the filter (e.g. from :func:`init_theta`).
    init : array_like, optional
        Natural starting values (alphas, then omegas and betas when not
        integrated).  Defaults to alpha = 1e-3, omega = 0, beta = 0.99.
    n_starts : int
        Simplex runs from ``init`` and from ``init`` shifted by
        ``+-start_spread`` in log-alpha; the best is polished by BFGS.
    """
    y = np.ascontiguousarray(y, dtype=float)
    par = Parametrization(spec, restriction, integrated)
    g = par.n_groups
    if init is None:
        init = np.full(g, 1e-3)
        if not integrated:
            init = np.concatenate([init, np.zeros(g), np.full(g, 0.99)])
    init = np.asarray(init, dtype=float)
    if init.shape != (par.n_free,):
        raise ValueError(f"init must have {par.n_free} entries")
    T_eff = y.shape[0] - spec.lags.max_lag
    n_evals = 0

    def objective(x):
        nonlocal n_evals
        n_evals += 1
        ll = filter_loglik(y, spec, par.statics(par.from_opt(x)), theta0)
        return -ll / T_eff if np.isfinite(ll) else 1e10

    x0 = par.to_opt(init)
    f0 = objective(x0)
    starts = [x0]
    offsets = [start_spread, -start_spread]
    for k in range(1, n_starts):
        x = x0.copy()
        x[:g] += offsets[(k - 1) % 2] * (1 + (k - 1) // 2)
        starts.append(x)
    maxiter = maxiter or 200 * par.n_free
    best_x, best_f, status = x0, f0, "max-iter"
    for x in starts:
        res = optimize.minimize(objective, x, method="Nelder-Mead",
                                options={"maxiter": maxiter, "xatol": 1e-4,
                                         "fatol": 1e-9, "adaptive": par.n_free > 5})
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
            status = "converged" if res.success else "max-iter"
    if polish:
        res = optimize.minimize(objective, best_x, method="BFGS",
                                options={"gtol": 1e-7, "maxiter": 100, "eps": 1e-6})
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
            status = "converged" if res.success else "line-search-failure"
    p = par.from_opt(best_x)
    statics = par.statics(p)
    notes = []
    out = run_filter(y, spec, statics, theta0, raise_on_divergence=False)
    if out.n_flags == y.shape[0] - spec.lags.max_lag:
        notes.append("pathological")
    result = EstimateResult(spec, restriction, integrated, statics, par.names(), p,
                            -best_f * T_eff, -f0 * T_eff, status, n_evals, out.n_flags,
                            theta0=np.asarray(theta0, dtype=float), notes=notes)
    if with_se:
        se, cov = robust_se(y, spec, statics, restriction, theta0, integrated)
        result.robust_se, result.cov = se, cov
    return result


class StaticsFitter:
    """Picklable ``(y, spec, theta0) -> StaticParams`` estimator for Monte-Carlo studies."""

    def __init__(self, restriction, n_starts=1, integrated=True):
        self.restriction = restriction
        self.n_starts = n_starts
        self.integrated = integrated

    def __call__(self, y, spec, theta0):
        return fit(y, spec, self.restriction, theta0, n_starts=self.n_starts,
                   integrated=self.integrated, with_se=False).statics


def _steps(p, rel):
    return rel * np.maximum(np.abs(p), 1e-4)


def robust_se(y, spec, statics, restriction, theta0, integrated=True, rel_step=1e-4,
              return_parts=False):
    """Sandwich standard errors ``H^-1 J H^-1`` for the free statics.

    ``H`` is the central-difference Hessian of the total log-likelihood and
    ``J`` the sum of outer products of per-row gradients, both taken in the
    natural (alpha, omega, beta) coordinates of the tied groups.
    """
    par = Parametrization(spec, restriction, integrated)
    p0 = par.natural(statics)
    h = _steps(p0, rel_step)
    k = len(p0)

    def contrib(p):
        return filter_loglik_t(y, spec, par.statics(p), theta0)

    base = contrib(p0)
    plus, minus = [], []
    for i in range(k):
        e = np.zeros(k)
        e[i] = h[i]
        plus.append(contrib(p0 + e))
        minus.append(contrib(p0 - e))
    G = np.array([(plus[i] - minus[i]) / (2 * h[i]) for i in range(k)]).T
    J = G.T @ G
    f0 = base.sum()
    H = np.empty((k, k))
    for i in range(k):
        H[i, i] = (plus[i].sum() - 2 * f0 + minus[i].sum()) / h[i] ** 2
        for j in range(i + 1, k):
            e_i = np.zeros(k)
            e_j = np.zeros(k)
            e_i[i], e_j[j] = h[i], h[j]
            fpp = contrib(p0 + e_i + e_j).sum()
            fpm = contrib(p0 + e_i - e_j).sum()
            fmp = contrib(p0 - e_i + e_j).sum()
            fmm = contrib(p0 - e_i - e_j).sum()
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * h[i] * h[j])
    try:
        if np.linalg.cond(H) > 1e12:
            raise np.linalg.LinAlgError
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        warnings.warn("Hessian is singular; using its pseudo-inverse", RuntimeWarning,
                      stacklevel=2)
        Hinv = np.linalg.pinv(H)
    cov = Hinv @ J @ Hinv
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    if return_parts:
        return se, cov, H, J
    return se, cov


def two_step_densities(y, spec, statics, theta0):
    """Refit the skew-t parameters to the moments of the filtered shocks.

    Each component's sample skewness and kurtosis are matched by
    :func:`skewt.target_moments`.  Components whose moments are outside the
    family keep their current density.  Asymmetries closer to zero than
    0.05 are moved to +-0.05, and coinciding asymmetries or tails are
    separated, so the returned spec satisfies the identification conditions.
    """
    out = run_filter(y, spec, statics, theta0)
    eps = out.shocks[out.start:]
    new = []
    for i, old in enumerate(spec.skewt):
        z = eps[:, i]
        sk = float(stats.skew(z))
        ku = float(stats.kurtosis(z, fisher=False))
        try:
            p = skewt.target_moments(sk, ku)
        except skewt.InfeasibleMomentsError as err:
            warnings.warn(f"component {i + 1}: {err}; keeping previous density",
                          RuntimeWarning, stacklevel=2)
            p = old
        new.append([p.delta, p.nu])
    for i, (d, nu) in enumerate(new):
        if abs(d) < 0.05:
            warnings.warn(f"component {i + 1}: asymmetry {d:.3g} too close to zero, "
                          "moved to +-0.05", RuntimeWarning, stacklevel=2)
            new[i][0] = math.copysign(0.05, d) if d != 0 else 0.05
    for i in range(len(new)):
        # shift until clear of every earlier component, not just the first clash
        while any(abs(new[i][1] - new[j][1]) < 1e-6 for j in range(i)):
            warnings.warn(f"component {i + 1} shares a tail parameter with an earlier "
                          "component; shifting it by +0.1", RuntimeWarning, stacklevel=2)
            new[i][1] += 0.1
        # move away from zero unless that would leave (-1, 1)
        step = math.copysign(0.01, new[i][0])
        if abs(new[i][0]) >= 0.9:
            step = -step
        while any(abs(new[i][0] - new[j][0]) < 1e-6 for j in range(i)):
            warnings.warn(f"component {i + 1} shares an asymmetry with an earlier "
                          f"component; shifting it by {step:+.2f}", RuntimeWarning,
                          stacklevel=2)
            new[i][0] += step
    return spec.with_skewt([skewt.SkewTParams(d, nu) for d, nu in new])
