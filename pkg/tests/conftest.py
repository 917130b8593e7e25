from __future__ import annotations

import numpy as np
import pytest

from sdvar.model import LagStructure, ModelSpec
from sdvar.skewt import SkewTParams

SKEWT3 = (SkewTParams(-0.7, 5.0), SkewTParams(-0.6, 6.0), SkewTParams(0.7, 5.5))


def random_skew(rng, n, scale=0.5):
    B = rng.normal(scale=scale, size=(n, n))
    return np.triu(B, 1) - np.triu(B, 1).T


def random_companion(rng, n, p, rho):
    """Companion matrix with Gaussian blocks rescaled to spectral radius ``rho``."""
    from sdvar.matcalc import companion

    blocks = [rng.normal(scale=0.5, size=(n, n)) for _ in range(p)]
    M = companion(blocks)
    r0 = np.max(np.abs(np.linalg.eigvals(M)))
    # scaling block k by c^(k+1) scales every eigenvalue by c
    c = rho / r0
    return companion([b * c ** (k + 1) for k, b in enumerate(blocks)])


def central_diff(f, x, h):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def spec_plain():
    return ModelSpec(3, LagStructure("plain", 2), SKEWT3)


@pytest.fixture
def spec_het():
    return ModelSpec(3, LagStructure("heterogeneous"), SKEWT3)


def random_state(rng, spec, rho=None):
    """Random theta with well-conditioned S, moderate A and lag blocks at radius ``rho``."""
    from sdvar.model import companion_matrix, pack

    n = spec.n
    S = np.tril(rng.normal(scale=0.2, size=(n, n)), -1) + np.diag(rng.uniform(-2.5, 0.0, n))
    A = random_skew(rng, n, scale=0.4)
    phis = [rng.normal(scale=0.3, size=(n, n)) for _ in range(spec.lags.n_blocks)]
    theta = pack(S, A, phis, spec)
    if rho is not None:
        r0 = np.max(np.abs(np.linalg.eigvals(companion_matrix(theta, spec))))
        # bisection on a common scale factor of all lag blocks
        lo, hi = 0.0, 4.0 * rho / max(r0, 1e-3)
        for _ in range(80):
            c = 0.5 * (lo + hi)
            t = theta.copy()
            for b in range(spec.lags.n_blocks):
                t[spec.phi_slice(b)] *= c
            r = np.max(np.abs(np.linalg.eigvals(companion_matrix(t, spec))))
            lo, hi = (c, hi) if r < rho else (lo, c)
        theta = t
    return theta


def random_window(rng, spec, scale=0.3):
    return rng.normal(scale=scale, size=(spec.lags.max_lag + 1, spec.n))


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """``acceptance(k, ok, detail)`` records one criterion line for the summary."""

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
