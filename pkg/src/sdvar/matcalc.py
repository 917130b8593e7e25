"""
Matrix calculus used by the score-driven SVAR.

Matrix exponential (Pade approximant with scaling and squaring), its Frechet
derivative by block augmentation, the Cayley map from skew-symmetric to
orthogonal matrices, and a Gelfand-type spectral radius estimate of a
companion matrix with its sensitivities.

The ``_``-prefixed functions are numba kernels shared with the filter; the
public wrappers validate inputs and return plain numpy arrays.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "mat_exp",
    "mat_exp_frechet",
    "cayley",
    "cayley_derivative",
    "companion",
    "GelfandPayload",
    "spectral_radius_gelfand",
    "spectral_radius_derivative",
    "spectral_radius_gradient",
]

# Higham (2005) thresholds on the 1-norm for Pade degrees 3, 5, 7, 9, 13.
_THETA = np.array([1.495585217958292e-2, 2.539398330063230e-1,
                   9.504178996162932e-1, 2.097847961257068e0,
                   5.371920351148152e0])
_B3 = np.array([120.0, 60.0, 12.0, 1.0])
_B5 = np.array([30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0])
_B7 = np.array([17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0,
                1512.0, 56.0, 1.0])
_B9 = np.array([17643225600.0, 8821612800.0, 2075673600.0, 302702400.0,
                30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0])
_B13 = np.array([64764752532480000.0, 32382376266240000.0,
                 7771770303897600.0, 1187353796428800.0, 129060195264000.0,
                 10559470521600.0, 670442572800.0, 33522128640.0,
                 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0])


@numba.njit(cache=True)
def _pade_low(A, b):
    # degrees 3..9: U = A * sum odd, V = sum even
    n = A.shape[0]
    m = b.shape[0] - 1
    ident = np.eye(n)
    A2 = A @ A
    U = b[1] * ident
    V = b[0] * ident
    P = ident
    for k in range(1, m // 2 + 1):
        P = P @ A2
        V = V + b[2 * k] * P
        U = U + b[2 * k + 1] * P
    return A @ U, V


@numba.njit(cache=True)
def _pade13(A):
    b = _B13
    n = A.shape[0]
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident)
    return U, V


@numba.njit(cache=True)
def _solve(A, B):
    """Solve ``A X = B``; Gaussian elimination with partial pivoting for small systems."""
    n = A.shape[0]
    if n > 8:
        return np.ascontiguousarray(np.linalg.solve(A, B))
    M = A.copy()
    X = B.copy()
    for k in range(n):
        p = k
        for i in range(k + 1, n):
            if abs(M[i, k]) > abs(M[p, k]):
                p = i
        if M[p, k] == 0.0:
            raise ZeroDivisionError("singular matrix")
        if p != k:
            for j in range(n):
                M[k, j], M[p, j] = M[p, j], M[k, j]
            for j in range(X.shape[1]):
                X[k, j], X[p, j] = X[p, j], X[k, j]
        for i in range(k + 1, n):
            f = M[i, k] / M[k, k]
            if f != 0.0:
                for j in range(k + 1, n):
                    M[i, j] -= f * M[k, j]
                for j in range(X.shape[1]):
                    X[i, j] -= f * X[k, j]
    for k in range(n - 1, -1, -1):
        for j in range(X.shape[1]):
            acc = X[k, j]
            for i in range(k + 1, n):
                acc -= M[k, i] * X[i, j]
            X[k, j] = acc / M[k, k]
    return X


@numba.njit(cache=True)
def _expm(A):
    n = A.shape[0]
    norm1 = 0.0
    for j in range(n):
        s = 0.0
        for i in range(n):
            s += abs(A[i, j])
        if s > norm1:
            norm1 = s
    s_count = 0
    if norm1 <= _THETA[0]:
        U, V = _pade_low(A, _B3)
    elif norm1 <= _THETA[1]:
        U, V = _pade_low(A, _B5)
    elif norm1 <= _THETA[2]:
        U, V = _pade_low(A, _B7)
    elif norm1 <= _THETA[3]:
        U, V = _pade_low(A, _B9)
    else:
        if norm1 > _THETA[4]:
            s_count = int(np.ceil(np.log2(norm1 / _THETA[4])))
        U, V = _pade13(A / 2.0 ** s_count)
    X = _solve(V - U, V + U)
    for _ in range(s_count):
        X = X @ X
    return X


@numba.njit(cache=True)
def _expm_lower(S):
    # triangular structure is exact: zero upper part, exp on the diagonal
    X = _expm(S)
    n = S.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            X[i, j] = 0.0
        X[i, i] = np.exp(S[i, i])
    return X


@numba.njit(cache=True)
def _expm_frechet_block(X, E):
    # exp([[X, E], [0, X]]) = [[e^X, L(X, E)], [0, e^X]]
    n = X.shape[0]
    B = np.zeros((2 * n, 2 * n))
    B[:n, :n] = X
    B[n:, n:] = X
    B[:n, n:] = E
    F = _expm(B)
    return F[:n, :n].copy(), F[:n, n:].copy()


@numba.njit(cache=True)
def _cayley(A):
    n = A.shape[0]
    ident = np.eye(n)
    # (I + A) and (I - A)^{-1} commute
    return _solve(ident - A, ident + A)


def _as_square(M, name="matrix"):
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def mat_exp(S):
    """Matrix exponential by Pade approximation with scaling and squaring.

    Lower-triangular input gives an exactly lower-triangular output whose
    diagonal is ``exp(diag(S))``.
    """
    S = _as_square(S, "S")
    if np.array_equal(S, np.tril(S)):
        return _expm_lower(np.ascontiguousarray(S))
    return _expm(np.ascontiguousarray(S))


def mat_exp_frechet(S, E):
    """Directional derivative of ``exp`` at ``S`` in direction ``E``.

    Returns the upper-right block of ``exp([[S, E], [0, S]])``.
    """
    S = _as_square(S, "S")
    E = _as_square(E, "E")
    if S.shape != E.shape:
        raise ValueError(f"shape mismatch: S {S.shape} vs E {E.shape}")
    return _expm_frechet_block(np.ascontiguousarray(S), np.ascontiguousarray(E))[1]


def cayley(A):
    """Orthogonal matrix ``(I + A)(I - A)^{-1}`` for skew-symmetric ``A``."""
    A = _as_square(A, "A")
    if not np.allclose(A, -A.T, rtol=0.0, atol=1e-12):
        raise ValueError("A must be skew-symmetric")
    return _cayley(np.ascontiguousarray(A))


def cayley_derivative(A, i, j):
    """Factor matrices of the derivative of ``cayley(A).T`` along ``A_ij``.

    For the direction ``D = E_ij - E_ji`` (``j > i``) this returns
    ``(O.T @ D @ inv(I + A), D @ inv(I - A) @ O.T)``; the derivative of
    ``O.T`` is minus their sum.
    """
    A = _as_square(A, "A")
    n = A.shape[0]
    if not (0 <= i < j < n):
        raise ValueError(f"need 0 <= i < j < n, got i={i}, j={j}")
    D = np.zeros((n, n))
    D[i, j] = 1.0
    D[j, i] = -1.0
    ident = np.eye(n)
    O = cayley(A)
    first = O.T @ D @ np.linalg.inv(ident + A)
    second = D @ np.linalg.inv(ident - A) @ O.T
    return first, second


def companion(blocks):
    """Companion matrix of a VAR with lag matrices ``blocks[0], blocks[1], ...``."""
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    n = blocks[0].shape[0]
    p = len(blocks)
    M = np.zeros((n * p, n * p))
    M[:n, :] = np.hstack(blocks)
    if p > 1:
        M[n:, :-n] = np.eye(n * (p - 1))
    return M


# ---------------------------------------------------------------------------
# Spectral radius via repeated squaring


@numba.njit(cache=True)
def _square_chain(M, q):
    """Scaled squaring chain.

    ``chain[0] = M / norms[0]`` and ``chain[k] = chain[k-1]^2 / norms[k]``
    with ``norms[q] = 1``; ``M^(2^q) = exp(logscale) * chain[q]``.
    """
    N = M.shape[0]
    chain = np.zeros((q + 1, N, N))
    norms = np.ones(q + 1)
    P = M.copy()
    logscale = 0.0
    for k in range(q):
        s = np.max(np.abs(P))
        if s == 0.0:
            return chain, norms, -np.inf
        P = P / s
        norms[k] = s
        chain[k] = P
        logscale = 2.0 * (logscale + np.log(s))
        P = P @ P
    chain[q] = P
    return chain, norms, logscale


@numba.njit(cache=True)
def _gelfand(M, q):
    chain, norms, logscale = _square_chain(M, q)
    N = M.shape[0]
    if logscale == -np.inf:
        return 0.0, 0.0, 0.0, np.zeros(N), np.zeros(N), chain, norms
    U, sig, Vt = np.linalg.svd(chain[q])
    if sig[0] == 0.0:
        return 0.0, 0.0, 0.0, np.zeros(N), np.zeros(N), chain, norms
    r = 2.0 ** q
    rho = np.exp((np.log(sig[0]) + logscale) / r)
    gap = (sig[0] - sig[1]) / sig[0] if N > 1 else 1.0
    return rho, sig[0], gap, U[:, 0].copy(), Vt[0, :].copy(), chain, norms


@numba.njit(cache=True)
def _gelfand_adjoint(chain, norms, u, v, rho, sig, q):
    """Gradient of the Gelfand estimate w.r.t. every entry of ``M``.

    Reverse pass through ``P_k = P_{k-1}^2 / n_k`` with the normalizers
    frozen; they cancel in ``d sigma / sigma``.  ``P_0 = M / n_0``.
    """
    B = np.outer(u, v)
    for k in range(q, 0, -1):
        P = chain[k - 1]
        B = (B @ P.T + P.T @ B) / norms[k]
    B = B / norms[0]
    r = 2.0 ** q
    return (rho / (r * sig)) * B


@dataclass
class GelfandPayload:
    """Spectral radius estimate plus what its derivative needs.

    ``chain[k]`` equals ``Phi^(2^k)`` up to the positive factor folded into
    ``norms``; ``u`` and ``v`` are the leading singular vectors of the last
    element and ``gap`` the relative gap ``(s1 - s2) / s1``.
    """

    rho: float
    sigma: float
    gap: float
    u: np.ndarray
    v: np.ndarray
    chain: np.ndarray
    norms: np.ndarray
    q: int
    n: int
    degenerate: bool


def spectral_radius_gelfand(Phi, q=10, n=None):
    """Estimate ``rho(Phi)`` as ``sigma_max(Phi^(2^q))^(1/2^q)``.

    Squared iterates are renormalized by their max-abs entry so that the
    estimate neither overflows nor underflows.  The estimate is an upper
    bound on the spectral radius; for diagonalizable ``Phi = V D V^-1`` it
    exceeds it by at most a factor ``cond(V)^(1/2^q)``.

    Parameters
    ----------
    Phi : (N, N) array
        Companion matrix.
    q : int
        Number of squarings.
    n : int, optional
        Size of one lag block, used to map derivatives back to blocks.
        Defaults to ``N``.
    """
    Phi = _as_square(Phi, "Phi")
    q = int(q)
    if q < 1:
        raise ValueError("q must be >= 1")
    rho, sig, gap, u, v, chain, norms = _gelfand(np.ascontiguousarray(Phi), q)
    return GelfandPayload(rho=float(rho), sigma=float(sig), gap=float(gap),
                          u=u, v=v, chain=chain, norms=norms, q=q,
                          n=Phi.shape[0] if n is None else int(n),
                          degenerate=bool(gap < 1e-8))


def spectral_radius_gradient(payload):
    """Derivative of the estimate w.r.t. every entry of the companion matrix."""
    p = payload
    if p.sigma == 0.0:
        return np.zeros_like(p.chain[0])
    return _gelfand_adjoint(p.chain, p.norms, p.u, p.v, p.rho, p.sigma, p.q)


def spectral_radius_derivative(payload, i, j, block=0, weights=None):
    """Sensitivity of the estimate to one coefficient of a lag block.

    Forward-mode derivative along the squaring chain,
    ``dP_k = dP_{k-1} P_{k-1} + P_{k-1} dP_{k-1}``, contracted with the
    leading singular vectors.  The direction places ``w_l * E_ij`` in every
    top-row position ``l`` of the companion matrix: ``weights`` defaults to
    a single unit weight at ``block``.  For a semester block that averages
    lags 2..6, pass ``weights = [0, .2, .2, .2, .2, .2]``.

    Emits a ``RuntimeWarning`` when the leading singular value is not
    simple; the value is still returned.
    """
    p = payload
    N = p.chain.shape[1]
    n = p.n
    L = N // n
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"index ({i}, {j}) out of range for block size {n}")
    if weights is None:
        if not 0 <= block < L:
            raise ValueError(f"block {block} out of range (have {L})")
        weights = np.zeros(L)
        weights[block] = 1.0
    weights = np.asarray(weights, dtype=float)
    if p.sigma == 0.0:
        return 0.0
    if p.degenerate:
        warnings.warn("leading singular value is not simple; derivative is "
                      "not well defined", RuntimeWarning, stacklevel=2)
    dP = np.zeros((N, N))
    for ell, w in enumerate(weights):
        dP[i, ell * n + j] = w
    dP = dP / p.norms[0]
    for k in range(1, p.q + 1):
        P = p.chain[k - 1]
        dP = (dP @ P + P @ dP) / p.norms[k]
    dsig = float(p.u @ dP @ p.v)
    return p.rho / (2.0 ** p.q * p.sigma) * dsig
