"""Recursive robust EDMD engine.

The model keeps G_hat = sum psi(x)^T psi(x) + lam I, its running inverse and
A = sum psi(x)^T psi(y). Each sample costs one Sherman-Morrison rank-one
update of the inverse, O(K^2); the operator G_hat^-1 A is only formed on
request.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import linalg

from src.model.edmd import accumulate_gram
from src.model.lifting import Dictionary, SnapshotPair, lift
from src.utils.errors import ConfigurationError, InputError, NumericalCorruptionError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

DEFAULT_REFRESH_PERIOD = 1000


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0):
        raise ConfigurationError(f"lambda must be > 0, got {lam}")
    return lam


def _check_refresh_period(refresh_period: int) -> int:
    if int(refresh_period) != refresh_period or refresh_period < 0:
        raise ConfigurationError(f"refresh_period must be an integer >= 0 (0 = never), got {refresh_period}")
    return int(refresh_period)


def _spd_inverse(matrix: np.ndarray) -> np.ndarray:
    factor = linalg.cho_factor(matrix, lower=False)
    inverse = linalg.cho_solve(factor, np.eye(matrix.shape[0]))
    return 0.5 * (inverse + inverse.T)


@dataclass(frozen=True, eq=False)
class ModelSnapshot:
    """Read-only copy of the model state handed to observers."""

    lam: float
    M: int
    refresh_period: int
    G_hat: np.ndarray
    G_hat_inv: np.ndarray
    A: np.ndarray

    @property
    def k_dim(self) -> int:
        return self.A.shape[0]

    def operator(self) -> np.ndarray:
        return self.G_hat_inv @ self.A


class KoopmanModel:
    """Streaming state of the robust Koopman operator.

    Single writer: exactly one stream drives ``update``. Hand ``snapshot()``
    copies to anything running elsewhere.
    """

    def __init__(self, k_dim: int, lam: float, refresh_period: int = DEFAULT_REFRESH_PERIOD):
        if int(k_dim) != k_dim or k_dim < 1:
            raise ConfigurationError(f"k_dim must be a positive integer, got {k_dim}")
        self.k_dim = int(k_dim)
        self.lam = _check_lambda(lam)
        self.refresh_period = _check_refresh_period(refresh_period)

        self.G_hat = self.lam * np.eye(self.k_dim)
        self.G_hat_inv = np.eye(self.k_dim) / self.lam
        self.A = np.zeros((self.k_dim, self.k_dim))
        self.M = 0
        self.refresh_count = 0

    @classmethod
    def from_state(cls, lam, refresh_period, M, G_hat, G_hat_inv, A) -> "KoopmanModel":
        """Rebuild a model from stored matrices (checkpoint resume)."""
        G_hat = np.array(G_hat, dtype=np.float64)
        model = cls(G_hat.shape[0], lam, refresh_period)
        for name, value in (("G_hat", G_hat), ("G_hat_inv", G_hat_inv), ("A", A)):
            value = np.array(value, dtype=np.float64)
            if value.shape != (model.k_dim, model.k_dim):
                raise InputError(f"{name} has shape {value.shape}, expected {(model.k_dim, model.k_dim)}")
            setattr(model, name, value)
        if int(M) != M or M < 0:
            raise InputError(f"sample count must be a non-negative integer, got {M}")
        model.M = int(M)
        return model

    # --- Updates ---
    def update(self, d: Dictionary, pair: SnapshotPair) -> "KoopmanModel":
        """Absorb one snapshot pair."""
        if d.total_dim != self.k_dim:
            raise InputError(f"dictionary has K={d.total_dim}, model has K={self.k_dim}")
        if pair.dim != d.state_dim:
            raise InputError(f"pair has dimension {pair.dim}, dictionary expects {d.state_dim}")
        return self.update_lifted(lift(d, pair.x), lift(d, pair.y))

    def update_lifted(self, psi_x: np.ndarray, psi_y: np.ndarray) -> "KoopmanModel":
        """Absorb one already lifted pair; the model is untouched on error."""
        psi_x = np.asarray(psi_x, dtype=np.float64)
        psi_y = np.asarray(psi_y, dtype=np.float64)
        if psi_x.shape != (self.k_dim,) or psi_y.shape != (self.k_dim,):
            raise InputError(f"lifted vectors must have shape ({self.k_dim},), got {psi_x.shape} and {psi_y.shape}")
        if not (np.all(np.isfinite(psi_x)) and np.all(np.isfinite(psi_y))):
            raise InputError("lifted vectors contain non-finite values")

        try:
            u, denom = self._gain(psi_x)
        except NumericalCorruptionError as exc:
            log.warning("%s at M=%d; forcing refresh", exc, self.M)
            self.refresh()
            u, denom = self._gain(psi_x)

        self.A += np.outer(psi_x, psi_y)
        self.G_hat += np.outer(psi_x, psi_x)
        inv = self.G_hat_inv - np.outer(u, u) / denom
        self.G_hat_inv = 0.5 * (inv + inv.T)
        self.M += 1

        if self.refresh_period and self.M % self.refresh_period == 0:
            self.refresh()
        return self

    def _gain(self, psi_x: np.ndarray) -> tuple[np.ndarray, float]:
        u = self.G_hat_inv @ psi_x
        denom = 1.0 + float(psi_x @ u)
        if not (np.isfinite(denom) and denom > 0):
            raise NumericalCorruptionError(f"Sherman-Morrison denominator {denom!r} is not positive")
        return u, denom

    def refresh(self) -> None:
        """Recompute the inverse from G_hat by Cholesky factorization."""
        self.G_hat_inv = _spd_inverse(self.G_hat)
        self.refresh_count += 1
        log.debug("Refreshed inverse at M=%d", self.M)

    # --- Reads ---
    def operator(self) -> np.ndarray:
        """Current operator G_hat^-1 A (O(K^3); poll at your own cadence)."""
        return self.G_hat_inv @ self.A

    def inverse_residual(self) -> float:
        """||G_hat^-1 G_hat - I||_F."""
        return float(np.linalg.norm(self.G_hat_inv @ self.G_hat - np.eye(self.k_dim)))

    def snapshot(self) -> ModelSnapshot:
        arrays = {}
        for name in ("G_hat", "G_hat_inv", "A"):
            copy = getattr(self, name).copy()
            copy.setflags(write=False)
            arrays[name] = copy
        return ModelSnapshot(lam=self.lam, M=self.M, refresh_period=self.refresh_period, **arrays)

    def __repr__(self) -> str:
        return f"KoopmanModel(K={self.k_dim}, lam={self.lam:g}, M={self.M}, refresh_period={self.refresh_period})"


def init_model(k_dim: int, lam: float, refresh_period: int = DEFAULT_REFRESH_PERIOD) -> KoopmanModel:
    """Fresh model with G_hat = lam I and A = 0."""
    return KoopmanModel(k_dim, lam, refresh_period)


def init_from_batch(
    d: Dictionary,
    pairs: Iterable[SnapshotPair],
    lam: float,
    refresh_period: int = DEFAULT_REFRESH_PERIOD,
) -> KoopmanModel:
    """Seed the model from the closed form over the first q pairs."""
    model = KoopmanModel(d.total_dim, lam, refresh_period)
    gp = accumulate_gram(d, pairs, normalized=False)
    model.G_hat = gp.G + model.lam * np.eye(model.k_dim)
    model.A = gp.A.copy()
    model.M = gp.M
    model.refresh()
    log.info("Model seeded from %d batch pairs", gp.M)
    return model
