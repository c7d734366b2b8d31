"""Core/residual splits of embedding matrices and the gradient projections built on them."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import NumericalError, as_matrix, check_finite, svd


class BasisKind(str, enum.Enum):
    PRETRAINED = "pretrained"
    CORE = "core"
    RESIDUAL = "residual"
    CONFLICTING = "conflicting"


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal columns in R^d plus where they came from."""

    basis: np.ndarray
    kind: BasisKind
    source_task: int | None = None
    epsilon_used: float | None = None

    def __post_init__(self):
        b = as_matrix(self.basis, "basis")
        if b.shape[1] > b.shape[0]:
            raise ValueError(f"{b.shape[1]} columns exceed ambient dimension {b.shape[0]}")
        gram_err = np.abs(b.T @ b - np.eye(b.shape[1])).max() if b.shape[1] else 0.0
        if gram_err > 1e-8:
            raise ValueError(f"basis columns are not orthonormal (max |B^T B - I| = {gram_err:.3g})")

    @property
    def ambient_dim(self):
        return self.basis.shape[0]

    @property
    def size(self):
        return self.basis.shape[1]

    def projector(self):
        return self.basis @ self.basis.T

    @classmethod
    def empty(cls, dim, kind=BasisKind.CONFLICTING):
        return cls(np.zeros((dim, 0)), kind)


def energy_rank(sigma, epsilon):
    """Smallest K whose leading singular values keep ``epsilon`` of the Frobenius norm."""
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    sq = np.asarray(sigma, dtype=np.float64) ** 2
    total = sq.sum()
    if total <= 0.0:
        raise NumericalError("all-zero embeddings carry no energy")
    kept = np.sqrt(np.cumsum(sq))
    target = epsilon * np.sqrt(total)
    # guard the last entry against rounding so epsilon=1 always terminates
    kept[-1] = max(kept[-1], target)
    hits = np.flatnonzero(kept >= target)
    return int(hits[0]) + 1


def core_space(embeddings, epsilon, source_task=None, kind=BasisKind.CORE):
    """Split R^d into the K-rank core of ``embeddings`` and its residual.

    Returns ``(core, residual, k)``.
    """
    e = as_matrix(embeddings, "embeddings")
    if not np.any(e):
        raise NumericalError("all-zero embeddings carry no energy")
    res = svd(e)
    k = energy_rank(res.sigma, epsilon)
    core = SubspaceBasis(res.v[:, :k].copy(), kind, source_task, epsilon)
    residual = SubspaceBasis(res.v[:, k:].copy(), BasisKind.RESIDUAL, source_task, epsilon)
    return core, residual, k


def estimate_rank(embeddings, epsilon=0.99):
    return core_space(embeddings, epsilon)[2]


def conflicting_indices(v_pre, v_core, theta):
    """Indices of pre-trained directions whose |cosine| with some core direction exceeds ``theta``."""
    if v_pre.ambient_dim != v_core.ambient_dim:
        raise ValueError(f"ambient dims differ: {v_pre.ambient_dim} vs {v_core.ambient_dim}")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if v_pre.size == 0 or v_core.size == 0:
        return frozenset()
    # columns are unit vectors, so the Gram matrix holds the cosines
    cos = np.abs(v_pre.basis.T @ v_core.basis)
    return frozenset(int(i) for i in np.flatnonzero((cos > theta).any(axis=1)))


@dataclass
class ConflictLedger:
    """Per-task conflicting index sets against a fixed pre-trained basis."""

    n_pretrained: int
    theta: float
    per_task: dict = field(default_factory=dict)

    def record(self, task, indices):
        indices = frozenset(int(i) for i in indices)
        bad = [i for i in indices if not 0 <= i < self.n_pretrained]
        if bad:
            raise IndexError(f"conflicting indices {sorted(bad)} out of range for {self.n_pretrained} columns")
        self.per_task[task] = indices

    def union(self, upto_task=None):
        out = set()
        for t, idx in self.per_task.items():
            if upto_task is None or t <= upto_task:
                out |= idx
        return frozenset(out)

    def to_dict(self):
        return {
            "n_pretrained": self.n_pretrained,
            "theta": self.theta,
            "per_task": {str(t): sorted(idx) for t, idx in sorted(self.per_task.items())},
        }

    @classmethod
    def from_dict(cls, d):
        ledger = cls(int(d["n_pretrained"]), float(d["theta"]))
        for t, idx in d["per_task"].items():
            ledger.record(int(t), idx)
        return ledger


def union_conflicting_space(ledger, v_pre, upto_task=None):
    idx = sorted(ledger.union(upto_task))
    if idx and idx[-1] >= v_pre.size:
        raise IndexError(f"index {idx[-1]} out of range for {v_pre.size} pre-trained columns")
    return SubspaceBasis(v_pre.basis[:, idx].copy(), BasisKind.CONFLICTING, upto_task, v_pre.epsilon_used)


def _check_grad(grad, basis):
    g = check_finite(grad, "gradient").ravel()
    if g.size != basis.ambient_dim:
        raise ValueError(f"gradient length {g.size} does not match ambient dim {basis.ambient_dim}")
    return g


def project_to_residual(grad, residual):
    """``V_res V_res^T g``."""
    g = _check_grad(grad, residual)
    b = residual.basis
    return b @ (b.T @ g)


def project_out_conflicting(grad, v_con):
    """``(I - V_con V_con^T) g``; the identity when ``v_con`` is empty."""
    g = _check_grad(grad, v_con)
    if v_con.size == 0:
        return g.copy()
    b = v_con.basis
    return g - b @ (b.T @ g)


def overlap_table(ledger):
    """Pairwise |I^a ∩ I^b| counts between recorded tasks."""
    tasks = sorted(ledger.per_task)
    return {
        f"{a}-{b}": len(ledger.per_task[a] & ledger.per_task[b])
        for i, a in enumerate(tasks)
        for b in tasks[i:]
    }
