"""Dense linear algebra used throughout the package.

Matrices are plain ``numpy`` float64 arrays; the helpers here add the
finiteness checks and the one-sided Jacobi SVD the rest of the code relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class NumericalError(ValueError):
    """Raised when a value is non-finite or an operation is degenerate."""


def check_finite(a, name="matrix"):
    """Return ``a`` as a float64 array, raising if any entry is NaN/Inf."""
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NumericalError(f"{name} has non-finite entry at index {tuple(int(i) for i in bad)}")
    return arr


def as_matrix(a, name="matrix"):
    arr = check_finite(a, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul result")


def transpose(a):
    return as_matrix(a).T.copy()


def scale(a, c):
    with np.errstate(over="ignore", invalid="ignore"):
        out = check_finite(a, "operand") * float(c)
    return check_finite(out, "scale result")


def add(a, b):
    a = check_finite(a, "left operand")
    b = check_finite(b, "right operand")
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a + b
    return check_finite(out, "add result")


def frobenius_norm(a):
    a = check_finite(a)
    return float(np.sqrt(np.sum(a * a)))


def cosine_similarity(x, y):
    x = check_finite(x, "x").ravel()
    y = check_finite(y, "y").ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise NumericalError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def softmax(scores, temperature=1.0):
    """Numerically stable softmax of a 1-D score vector."""
    s = check_finite(scores, "scores").ravel()
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = s / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True)
class SvdResult:
    """``a = u @ diag(sigma) @ v[:, :len(sigma)].T``.

    ``u`` is ``rows x p`` and ``sigma`` has length ``p = min(rows, cols)``;
    ``v`` is always square (``cols x cols``) so its trailing columns span the
    null space of ``a``.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self):
        p = self.sigma.size
        return (self.u * self.sigma) @ self.v[:, :p].T


@lru_cache(maxsize=None)
def _round_robin(n):
    """Tournament schedule: n-1 rounds of n/2 disjoint column pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        top = np.array(players[:half])
        bottom = np.array(players[half:][::-1])
        rounds.append((np.minimum(top, bottom), np.maximum(top, bottom)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return tuple(rounds)


def _jacobi_sweeps(w, v, tol=1e-15, max_sweeps=80):
    """Orthogonalize the columns of ``w`` in place, accumulating rotations in ``v``."""
    n = w.shape[1]
    if n < 2:
        return
    # columns below this squared norm are numerically zero; rotating them only adds noise
    floor = (np.finfo(np.float64).eps * np.linalg.norm(w)) ** 2
    rounds = _round_robin(n + (n % 2))
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            if n % 2:
                keep = q < n
                p, q = p[keep], q[keep]
            wp, wq = w[:, p], w[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > floor) & (beta > floor)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            # tangent of the rotation angle, written to avoid dividing by gamma
            tau = beta - alpha
            t = np.where(tau >= 0, 2.0, -2.0) * gamma / (np.abs(tau) + np.hypot(tau, 2.0 * gamma))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for mat in (w, v):
                mp, mq = mat[:, p], mat[:, q]
                mat[:, p] = c * mp - s * mq
                mat[:, q] = s * mp + c * mq
        if not rotated:
            return


def _complete_orthonormal(basis, dim, count):
    """Append unit vectors orthogonal to ``basis`` until it has ``count`` columns."""
    cols = [basis[:, j] for j in range(basis.shape[1])]
    for i in range(dim):
        if len(cols) >= count:
            break
        e = np.zeros(dim)
        e[i] = 1.0
        for _ in range(2):
            for c in cols:
                e -= (c @ e) * c
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            cols.append(e / nrm)
    return np.column_stack(cols) if cols else np.zeros((dim, 0))


def svd(a):
    """Full SVD by one-sided Jacobi rotations applied to the columns of ``a``.

    Wide inputs are decomposed through their transpose and ``v`` is completed
    to a square basis by Gram-Schmidt. Each right singular vector is
    sign-fixed so its first nonzero component is positive. Singular values
    below ``1e-12 * sigma_1`` are treated as zero and their singular vectors
    are completed by Gram-Schmidt.
    """
    a = as_matrix(a, "svd input")
    m, n = a.shape
    if m == 0 or n == 0:
        raise ValueError(f"svd needs a non-empty matrix, got shape {a.shape}")
    if m < n:
        return _svd_wide(a)
    return _svd_tall(a)


def _svd_wide(a):
    m, n = a.shape
    t = _svd_tall(a.T)
    v = _complete_orthonormal(t.u, n, n)
    u = t.v.copy()
    for j in range(n):
        col = v[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            v[:, j] = -col
            if j < m:
                u[:, j] = -u[:, j]
    return SvdResult(u=u, sigma=t.sigma, v=v)


def _svd_tall(a):
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    _jacobi_sweeps(w, v)

    norms = np.linalg.norm(w, axis=0)
    order = np.argsort(-norms, kind="stable")
    norms, w, v = norms[order], w[:, order], v[:, order]

    # sign convention on v; flip the matching rotated column too
    for j in range(n):
        col = v[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            v[:, j] = -col
            w[:, j] = -w[:, j]

    p = min(m, n)
    sigma = norms[:p].copy()
    cutoff = 1e-12 * sigma[0] if sigma[0] > 0 else 0.0
    live = int(np.sum(sigma > cutoff)) if sigma[0] > 0 else 0
    u = w[:, :live] / sigma[:live]
    if live < p:
        sigma[live:] = 0.0
        u = _complete_orthonormal(u, m, p)
    return SvdResult(u=u, sigma=sigma, v=v)
