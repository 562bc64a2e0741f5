"""Batch EDMD: Gram matrices, plain least squares and the robust closed form.

These functions are the oracle for the streaming engine in
``src.model.koopman_model``; every operator they return uses the row
convention ``lift(x_next) ~= lift(x) @ K``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import linalg

from src.model.lifting import Dictionary, SnapshotPair, lift_batch
from src.utils.errors import ConfigurationError, InputError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

PINV_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class GramPair:
    """G = sum psi(x)^T psi(x) and A = sum psi(x)^T psi(y), optionally / M."""

    G: np.ndarray
    A: np.ndarray
    M: int
    normalized: bool = False

    def __post_init__(self):
        G = np.asarray(self.G, dtype=np.float64)
        A = np.asarray(self.A, dtype=np.float64)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or A.shape != G.shape:
            raise InputError(f"G and A must be equal square matrices, got {G.shape} and {A.shape}")
        object.__setattr__(self, "G", 0.5 * (G + G.T))
        object.__setattr__(self, "A", A)

    @property
    def k_dim(self) -> int:
        return self.G.shape[0]


def gram_from_lifted(psi_x: np.ndarray, psi_y: np.ndarray, normalized: bool = False) -> GramPair:
    """GramPair from already lifted rows (M, K)."""
    psi_x = np.asarray(psi_x, dtype=np.float64)
    psi_y = np.asarray(psi_y, dtype=np.float64)
    if psi_x.shape != psi_y.shape or psi_x.ndim != 2:
        raise InputError(f"lifted blocks must share an (M, K) shape, got {psi_x.shape} and {psi_y.shape}")
    m = psi_x.shape[0]
    G = psi_x.T @ psi_x
    A = psi_x.T @ psi_y
    if normalized and m > 0:
        G = G / m
        A = A / m
    return GramPair(G=G, A=A, M=m, normalized=normalized)


def accumulate_gram(d: Dictionary, pairs: Iterable[SnapshotPair], normalized: bool = False) -> GramPair:
    """Accumulate G and A over a list of snapshot pairs."""
    pairs = list(pairs)
    if not pairs:
        zeros = np.zeros((d.total_dim, d.total_dim))
        return GramPair(G=zeros, A=zeros.copy(), M=0, normalized=normalized)

    for i, pair in enumerate(pairs):
        if pair.dim != d.state_dim:
            raise InputError(f"pair {i} has dimension {pair.dim}, dictionary expects {d.state_dim}")

    X = np.vstack([pair.x for pair in pairs])
    Y = np.vstack([pair.y for pair in pairs])
    return gram_from_lifted(lift_batch(d, X), lift_batch(d, Y), normalized=normalized)


def solve_edmd(gp: GramPair) -> np.ndarray:
    """Minimum-norm solution of min ||G K - A|| via the pseudoinverse."""
    G_pinv = linalg.pinv(gp.G, atol=0.0, rtol=PINV_RTOL)
    return G_pinv @ gp.A


def solve_robust(gp: GramPair, lam: float) -> np.ndarray:
    """Robust operator (G + lam I)^-1 A through a Cholesky factorization."""
    if not (np.isfinite(lam) and lam > 0):
        raise ConfigurationError(f"lambda must be > 0 for the robust solver, got {lam}")
    G_reg = gp.G + lam * np.eye(gp.k_dim)
    factor = linalg.cho_factor(G_reg, lower=False)
    return linalg.cho_solve(factor, gp.A)


def relative_frobenius(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b||_F / ||b||_F, falling back to ||a - b||_F when b is zero."""
    scale = np.linalg.norm(b)
    diff = np.linalg.norm(np.asarray(a) - np.asarray(b))
    return float(diff / scale) if scale > 0 else float(diff)
