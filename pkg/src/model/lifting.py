"""Dictionaries of Koopman observables.

A dictionary maps a state x in R^N to the lifted row Psi(x) in R^K made of an
optional constant, optional identity coordinates (used for state readout)
and isotropic Gaussian radial basis functions.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.cluster import KMeans

from src.utils.errors import ConfigurationError, InputError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

# Used when fewer than two distinct centers exist, so no pairwise distance.
FALLBACK_BANDWIDTH = 1.0


@dataclass(frozen=True)
class DictionarySpec:
    """How to build a dictionary; the CLI and config files fill this in."""

    num_rbf: int = 40
    bandwidth: Optional[float] = None
    include_identity: bool = True
    include_constant: bool = True
    seed: int = 0
    warmup: int = 100

    def __post_init__(self):
        if self.num_rbf < 0:
            raise ConfigurationError(f"num_rbf must be >= 0, got {self.num_rbf}")
        if self.bandwidth is not None and not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ConfigurationError(f"bandwidth must be a positive number, got {self.bandwidth}")
        if self.warmup < 1:
            raise ConfigurationError(f"warmup must be >= 1, got {self.warmup}")
        if self.num_rbf == 0 and not (self.include_identity or self.include_constant):
            raise ConfigurationError("dictionary has no observables enabled")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "DictionarySpec":
        """Build a spec from config-file keys; unknown keys are ignored."""
        known = {"num_rbf", "bandwidth", "include_identity", "include_constant", "seed", "warmup"}
        picked = {}
        for key, value in values.items():
            name = key.replace("-", "_")
            if name == "rbf":
                name = "num_rbf"
            if name in known and value is not None:
                picked[name] = value
        return cls(**picked)


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Frozen observable map Psi: R^N -> R^K."""

    state_dim: int
    include_constant: bool
    include_identity: bool
    rbf_centers: np.ndarray
    rbf_bandwidth: float
    _centers_sq_scale: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.state_dim < 1:
            raise ConfigurationError(f"state_dim must be positive, got {self.state_dim}")
        centers = np.array(self.rbf_centers, dtype=np.float64).reshape(-1, self.state_dim)
        if not np.all(np.isfinite(centers)):
            raise ConfigurationError("RBF centers must be finite")
        if not (np.isfinite(self.rbf_bandwidth) and self.rbf_bandwidth > 0):
            raise ConfigurationError(f"rbf_bandwidth must be positive, got {self.rbf_bandwidth}")
        centers.setflags(write=False)
        object.__setattr__(self, "rbf_centers", centers)
        object.__setattr__(self, "rbf_bandwidth", float(self.rbf_bandwidth))
        object.__setattr__(self, "_centers_sq_scale", 2.0 * self.rbf_bandwidth ** 2)
        if self.total_dim == 0:
            raise ConfigurationError("dictionary has no observables enabled")

    @property
    def num_rbf(self) -> int:
        return self.rbf_centers.shape[0]

    @property
    def total_dim(self) -> int:
        return int(self.include_constant) + (self.state_dim if self.include_identity else 0) + self.num_rbf

    @property
    def identity_slice(self) -> Optional[slice]:
        """Columns of the lifted row holding the raw state, if present."""
        if not self.include_identity:
            return None
        start = int(self.include_constant)
        return slice(start, start + self.state_dim)

    def describe(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "include_constant": self.include_constant,
            "include_identity": self.include_identity,
            "num_rbf": self.num_rbf,
            "rbf_bandwidth": self.rbf_bandwidth,
            "total_dim": self.total_dim,
        }


@dataclass(frozen=True, eq=False)
class SnapshotPair:
    """One sample (x, y = T(x)) of the underlying system."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
            raise InputError(f"snapshot vectors must be 1-D and equal length, got {x.shape} and {y.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InputError("snapshot pair contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return self.x.shape[0]


def build_dictionary(
    spec: DictionarySpec,
    warmup: Sequence[Sequence[float]] | np.ndarray,
    state_dim: Optional[int] = None,
) -> Dictionary:
    """Freeze a dictionary from a warmup buffer of states.

    Centers come from k-means on the warmup buffer seeded by ``spec.seed``.
    When the buffer holds fewer distinct points than ``spec.num_rbf`` the
    center count drops to the distinct count and a RuntimeWarning is issued.
    The bandwidth defaults to the median pairwise center distance.
    """
    buffer = np.asarray(warmup, dtype=np.float64)
    if buffer.size == 0:
        if spec.num_rbf > 0:
            raise ConfigurationError("cannot place RBF centers from an empty warmup buffer")
        if state_dim is None:
            raise ConfigurationError("state_dim is required when the warmup buffer is empty")
        n = state_dim
        buffer = np.empty((0, n))
    else:
        if buffer.ndim != 2:
            raise InputError(f"warmup buffer must be a 2-D array of states, got shape {buffer.shape}")
        n = buffer.shape[1]
        if state_dim is not None and state_dim != n:
            raise InputError(f"warmup states have dimension {n}, expected {state_dim}")
        if not np.all(np.isfinite(buffer)):
            raise InputError("warmup buffer contains non-finite values")

    centers = _place_centers(buffer, spec.num_rbf, spec.seed)

    if spec.bandwidth is not None:
        bandwidth = float(spec.bandwidth)
    elif len(centers) >= 2:
        bandwidth = float(np.median(pdist(centers)))
        if bandwidth <= 0:
            bandwidth = FALLBACK_BANDWIDTH
    else:
        bandwidth = FALLBACK_BANDWIDTH

    dictionary = Dictionary(
        state_dim=n,
        include_constant=spec.include_constant,
        include_identity=spec.include_identity,
        rbf_centers=centers,
        rbf_bandwidth=bandwidth,
    )
    log.info(
        "Dictionary frozen: N=%d, K=%d (%d RBFs, bandwidth %.4g)",
        n, dictionary.total_dim, dictionary.num_rbf, bandwidth,
    )
    return dictionary


def _place_centers(buffer: np.ndarray, num_rbf: int, seed: int) -> np.ndarray:
    n = buffer.shape[1]
    if num_rbf == 0:
        return np.empty((0, n))

    distinct = np.unique(buffer, axis=0)
    if len(distinct) < num_rbf:
        message = (
            f"warmup buffer has {len(distinct)} distinct points; "
            f"reducing RBF count from {num_rbf} to {len(distinct)}"
        )
        log.warning(message)
        warnings.warn(message, RuntimeWarning, stacklevel=3)
        # k-means with one cluster per distinct point returns the points themselves
        return distinct

    kmeans = KMeans(n_clusters=num_rbf, random_state=seed, n_init=10)
    kmeans.fit(buffer)
    return kmeans.cluster_centers_


def lift_batch(d: Dictionary, X: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    """Lift every row of an (M, N) matrix; returns (M, K)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != d.state_dim:
        raise InputError(f"expected an (M, {d.state_dim}) matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("cannot lift non-finite states")

    m = X.shape[0]
    if m == 0:
        return np.empty((0, d.total_dim))

    parts = []
    if d.include_constant:
        parts.append(np.ones((m, 1)))
    if d.include_identity:
        parts.append(X)
    if d.num_rbf:
        sq_dist = cdist(X, d.rbf_centers, metric="sqeuclidean")
        parts.append(np.exp(-sq_dist / d._centers_sq_scale))
    return np.hstack(parts)


def lift(d: Dictionary, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Lift one state vector; returns a row of length K."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"expected a state vector, got shape {x.shape}")
    return lift_batch(d, x[np.newaxis, :])[0]
