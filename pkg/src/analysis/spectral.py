"""Eigen-analysis of a learned operator.

Operators follow the row convention ``lift(x_next) ~= lift(x) @ K``, so a
right eigenvector phi (K phi = mu phi) gives the eigenfunction
``f(x) = lift(x) @ phi`` with ``f(T(x)) ~= mu f(x)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import linalg
from scipy.spatial import cKDTree

from src.model.lifting import Dictionary, lift, lift_batch
from src.utils.errors import ConfigurationError, InputError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

EigenSelector = Union[complex, float, int]


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    right_eigenvectors: np.ndarray
    residuals: np.ndarray

    @property
    def moduli(self) -> np.ndarray:
        return np.abs(self.eigenvalues)

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def nearest(self, target: complex = 1 + 0j) -> int:
        """Index of the eigenvalue closest to ``target``."""
        return int(np.argmin(np.abs(self.eigenvalues - complex(target))))

    def select(self, which: EigenSelector = 1 + 0j) -> int:
        """Resolve a selector: an int is an index, anything else a target value."""
        if isinstance(which, (int, np.integer)) and not isinstance(which, bool):
            if not 0 <= which < len(self):
                raise ConfigurationError(f"eigenvalue index {which} out of range for K={len(self)}")
            return int(which)
        return self.nearest(complex(which))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"re": self.eigenvalues.real, "im": self.eigenvalues.imag, "modulus": self.moduli}
        )


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    max_modulus: float
    count_outside: int


@dataclass(frozen=True)
class GridWindow:
    """Rectangular lattice over two state coordinates.

    For systems with N != 2 the remaining coordinates are fixed to
    ``base_state``.
    """

    x1_bounds: tuple[float, float]
    x2_bounds: tuple[float, float]
    resolution: tuple[int, int] = (101, 101)
    coords: tuple[int, int] = (0, 1)
    base_state: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        for lo, hi in (self.x1_bounds, self.x2_bounds):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigurationError(f"grid bounds must be finite with lo < hi, got ({lo}, {hi})")
        if min(self.resolution) < 2:
            raise ConfigurationError(f"grid resolution must be >= 2 per axis, got {self.resolution}")
        if self.coords[0] == self.coords[1]:
            raise ConfigurationError("grid coordinates must be distinct")


@dataclass(frozen=True, eq=False)
class EigenfunctionField:
    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray  # shape (len(x2), len(x1))
    eigenvalue: complex
    coords: tuple[int, int] = (0, 1)

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)

    def nodes(self) -> np.ndarray:
        g1, g2 = np.meshgrid(self.x1, self.x2)
        return np.column_stack([g1.ravel(), g2.ravel()])

    def to_frame(self) -> pd.DataFrame:
        nodes = self.nodes()
        values = self.values.ravel()
        return pd.DataFrame(
            {
                "x1": nodes[:, 0],
                "x2": nodes[:, 1],
                "re": values.real,
                "im": values.imag,
                "modulus": np.abs(values),
            }
        )


@dataclass(frozen=True)
class OverlapScore:
    coverage: float  # share of tube nodes inside the high-level set
    exclusion: float  # share of nodes off the tube outside the high-level set
    concentration: float  # share of the high-level set inside the tube

    @property
    def score(self) -> float:
        """Balanced accuracy of the high-level set as a tube detector."""
        return 0.5 * (self.coverage + self.exclusion)


def spectrum(K_op: np.ndarray) -> Spectrum:
    """Full eigendecomposition, sorted by modulus (desc), real (desc), imag (asc)."""
    K = np.asarray(K_op, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"operator must be square, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InputError("operator contains non-finite entries")

    w, V = linalg.eig(K)
    w = w.astype(np.complex128)
    V = V.astype(np.complex128)
    _pair_conjugates(w, V)
    V = _normalize_columns(V)

    order = np.lexsort((w.imag, -w.real, -np.abs(w)))
    w = w[order]
    V = V[:, order]
    residuals = np.linalg.norm(K @ V - V * w, axis=0)
    return Spectrum(eigenvalues=w, right_eigenvectors=V, residuals=residuals)


def _pair_conjugates(w: np.ndarray, V: np.ndarray) -> None:
    # LAPACK returns complex pairs of a real matrix next to each other
    i = 0
    while i < len(w):
        if w[i].imag != 0 and i + 1 < len(w) and np.isclose(w[i + 1], np.conj(w[i]), rtol=1e-10, atol=0):
            w[i + 1] = np.conj(w[i])
            V[:, i + 1] = np.conj(V[:, i])
            i += 2
        else:
            i += 1


def _normalize_columns(V: np.ndarray) -> np.ndarray:
    """Unit 2-norm, first nonzero component rotated onto the positive real axis."""
    V = V / np.linalg.norm(V, axis=0)
    for j in range(V.shape[1]):
        column = V[:, j]
        magnitude = np.abs(column)
        lead = int(np.argmax(magnitude > 1e-12 * magnitude.max()))
        V[:, j] = column * (np.conj(column[lead]) / magnitude[lead])
    return V


def stability_report(s: Spectrum, tolerance: float = 0.0) -> StabilityReport:
    """Stable iff every eigenvalue has modulus <= 1 + tolerance."""
    if tolerance < 0:
        raise ConfigurationError(f"tolerance must be >= 0, got {tolerance}")
    moduli = s.moduli
    limit = 1.0 + tolerance
    max_modulus = float(moduli.max()) if len(moduli) else 0.0
    count_outside = int(np.count_nonzero(moduli > limit))
    return StabilityReport(stable=count_outside == 0, max_modulus=max_modulus, count_outside=count_outside)


def eigenfunction_on_grid(
    d: Dictionary,
    s: Spectrum,
    which: EigenSelector = 1 + 0j,
    window: Optional[GridWindow] = None,
) -> EigenfunctionField:
    """Evaluate lift(node) @ phi over a 2-D lattice of states."""
    if window is None:
        raise ConfigurationError("a grid window is required")
    if s.right_eigenvectors.shape[0] != d.total_dim:
        raise InputError(f"spectrum has K={s.right_eigenvectors.shape[0]}, dictionary has K={d.total_dim}")
    if max(window.coords) >= d.state_dim:
        raise ConfigurationError(f"grid coordinates {window.coords} out of range for N={d.state_dim}")
    if window.base_state is None:
        if d.state_dim != 2:
            raise ConfigurationError(
                f"a 2-D window on an N={d.state_dim} system needs base_state for the other coordinates"
            )
        base = np.zeros(2)
    else:
        base = np.asarray(window.base_state, dtype=np.float64)
        if base.shape != (d.state_dim,):
            raise ConfigurationError(f"base_state must have length {d.state_dim}")

    index = s.select(which)
    phi = s.right_eigenvectors[:, index]

    x1 = np.linspace(*window.x1_bounds, window.resolution[0])
    x2 = np.linspace(*window.x2_bounds, window.resolution[1])
    g1, g2 = np.meshgrid(x1, x2)
    nodes = np.tile(base, (g1.size, 1))
    nodes[:, window.coords[0]] = g1.ravel()
    nodes[:, window.coords[1]] = g2.ravel()

    values = (lift_batch(d, nodes) @ phi).reshape(g1.shape)
    mu = complex(s.eigenvalues[index])
    log.info("Eigenfunction for eigenvalue %.6g%+.6gj on %d nodes", mu.real, mu.imag, g1.size)
    return EigenfunctionField(
        x1=x1, x2=x2, values=values, eigenvalue=mu, coords=tuple(window.coords)
    )


def limit_cycle_overlap(
    field: EigenfunctionField,
    reference: np.ndarray,
    radius: float = 0.2,
    level: float = 0.5,
) -> OverlapScore:
    """Compare the field's high-level set with a tube around a reference orbit.

    The high-level set holds the nodes whose modulus is at least ``level``
    times the largest modulus on the grid. A flat field marks every node
    and scores 0.5.
    """
    if not 0 < level < 1:
        raise ConfigurationError(f"level must be in (0, 1), got {level}")
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim != 2 or len(reference) == 0:
        raise InputError("reference orbit must be a non-empty (T, N) array")
    points = reference[:, list(field.coords)]

    nodes = field.nodes()
    distance, _ = cKDTree(points).query(nodes)
    tube = distance <= radius
    if not tube.any():
        raise InputError("no grid node lies within the reference tube")

    modulus = field.modulus.ravel()
    threshold = level * float(modulus.max())
    if threshold <= 0:
        return OverlapScore(coverage=0.0, exclusion=0.0, concentration=0.0)
    high = modulus >= threshold
    coverage = float(np.mean(high[tube]))
    exclusion = float(np.mean(~high[~tube])) if (~tube).any() else 1.0
    concentration = float(np.count_nonzero(high & tube) / np.count_nonzero(high))
    return OverlapScore(coverage=coverage, exclusion=exclusion, concentration=concentration)


def predict(
    K_op: np.ndarray,
    d: Dictionary,
    x0: Sequence[float] | np.ndarray,
    steps: int,
    mode: Literal["lifted_rollout", "relift_each_step"] = "lifted_rollout",
) -> np.ndarray:
    """Roll the operator forward from x0; returns (steps + 1, N) states."""
    readout = d.identity_slice
    if readout is None:
        raise ConfigurationError("prediction needs identity observables in the dictionary")
    if int(steps) != steps or steps < 0:
        raise ConfigurationError(f"steps must be a non-negative integer, got {steps}")
    K = np.asarray(K_op, dtype=np.float64)
    if K.shape != (d.total_dim, d.total_dim):
        raise InputError(f"operator has shape {K.shape}, dictionary has K={d.total_dim}")

    x0 = np.asarray(x0, dtype=np.float64)
    z = lift(d, x0)
    trajectory = [x0.copy()]
    if mode == "lifted_rollout":
        for _ in range(int(steps)):
            z = z @ K
            trajectory.append(z[readout].copy())
    elif mode == "relift_each_step":
        for _ in range(int(steps)):
            x = (z @ K)[readout]
            trajectory.append(x)
            z = lift(d, x)
    else:
        raise ConfigurationError(f"unknown prediction mode {mode!r}")
    return np.vstack(trajectory)


def one_step_rmse(K_op: np.ndarray, psi_x: np.ndarray, psi_y: np.ndarray) -> float:
    """sqrt(mean ||psi(x) K - psi(y)||^2) over lifted validation pairs."""
    if len(psi_x) == 0:
        raise InputError("validation set is empty")
    residual = psi_x @ K_op - psi_y
    return float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
