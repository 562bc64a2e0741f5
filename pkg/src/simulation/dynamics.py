"""Reference systems that generate training streams.

Van der Pol oscillators are integrated with Euler-Maruyama: ``substeps``
internal steps of size h = dt_sample / substeps per emitted sample, with
additive noise sigma * sqrt(h) * xi entering the velocity equation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from src.model.lifting import SnapshotPair
from src.utils.errors import ConfigurationError, InputError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

VdpForm = Literal["standard", "literal"]


def _check_common(mu, sigma, dt_sample, substeps, form):
    if mu < 0:
        raise ConfigurationError(f"mu must be >= 0, got {mu}")
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    if not dt_sample > 0:
        raise ConfigurationError(f"dt_sample must be > 0, got {dt_sample}")
    if int(substeps) != substeps or substeps < 1:
        raise ConfigurationError(f"substeps must be a positive integer, got {substeps}")
    if form not in ("standard", "literal"):
        raise ConfigurationError(f"unknown Van der Pol form {form!r}")


@dataclass(frozen=True)
class VdpConfig:
    """Noisy Van der Pol oscillator.

    ``form="standard"`` integrates x'' = mu (1 - x^2) x' - x + sigma xi.
    ``form="literal"`` drops the x' factor: x'' = mu (1 - x^2) - x + sigma xi.
    """

    mu: float = 0.8
    sigma: float = 0.2
    dt_sample: float = 0.01
    substeps: int = 10
    seed: int = 0
    x0: tuple[float, float] = (2.0, 0.0)
    form: VdpForm = "standard"

    def __post_init__(self):
        _check_common(self.mu, self.sigma, self.dt_sample, self.substeps, self.form)
        if len(self.x0) != 2 or not np.all(np.isfinite(self.x0)):
            raise ConfigurationError(f"x0 must be two finite numbers, got {self.x0}")


@dataclass(frozen=True)
class RingConfig:
    """Ring of Van der Pol oscillators with diffusive coupling on positions.

    Oscillator i follows x_i'' = mu (1 - x_i^2) x_i' - x_i - c (L x)_i + sigma xi_i
    with L the ring Laplacian. ``x0`` is either one (x, x') pair shared by
    every oscillator or the full state [x_1, x_1', ..., x_n, x_n'].
    """

    n_osc: int = 10
    mu: float = 0.8
    sigma: float = 0.2
    dt_sample: float = 0.01
    substeps: int = 10
    seed: int = 0
    coupling: float = 1.0
    x0: Optional[tuple[float, ...]] = None
    form: VdpForm = "standard"

    def __post_init__(self):
        _check_common(self.mu, self.sigma, self.dt_sample, self.substeps, self.form)
        if int(self.n_osc) != self.n_osc or self.n_osc < 2:
            raise ConfigurationError(f"n_osc must be an integer >= 2, got {self.n_osc}")
        if not np.isfinite(self.coupling):
            raise ConfigurationError(f"coupling must be finite, got {self.coupling}")
        if self.x0 is not None:
            if len(self.x0) not in (2, 2 * self.n_osc):
                raise ConfigurationError(f"x0 must have length 2 or {2 * self.n_osc}, got {len(self.x0)}")
            if not np.all(np.isfinite(self.x0)):
                raise ConfigurationError("x0 must be finite")

    @property
    def state_dim(self) -> int:
        return 2 * self.n_osc

    def initial_state(self) -> np.ndarray:
        if self.x0 is None:
            phase = 2.0 * np.pi * np.arange(self.n_osc) / self.n_osc
            x = np.column_stack([1.0 + 0.5 * np.sin(phase), np.zeros(self.n_osc)])
            return x.ravel()
        x0 = np.asarray(self.x0, dtype=np.float64)
        return np.tile(x0, self.n_osc) if x0.size == 2 else x0.copy()


def ring_laplacian(n_osc: int, coupling: float = 1.0) -> np.ndarray:
    """Circulant ring Laplacian: 2 on the diagonal, -1 per ring neighbor, scaled."""
    if n_osc < 2:
        raise ConfigurationError(f"a ring needs at least 2 nodes, got {n_osc}")
    eye = np.eye(n_osc)
    L = 2.0 * eye - np.roll(eye, 1, axis=1) - np.roll(eye, -1, axis=1)
    return coupling * L


def oscillator_seeds(seed: int, n_osc: int) -> list[np.random.SeedSequence]:
    """Independent per-oscillator seed streams derived from one seed."""
    return np.random.SeedSequence(seed).spawn(n_osc)


def _drift(x, v, mu, form):
    if form == "standard":
        return mu * (1.0 - x * x) * v - x
    return mu * (1.0 - x * x) - x


def simulate_vdp(cfg: VdpConfig, n_samples: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Sampled trajectory, shape (n_samples, 2); row 0 is x0.

    ``rng`` overrides the generator seeded from ``cfg.seed``.
    """
    if int(n_samples) != n_samples or n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    h = cfg.dt_sample / cfg.substeps
    noise_scale = cfg.sigma * np.sqrt(h)

    out = np.empty((int(n_samples), 2))
    x, v = float(cfg.x0[0]), float(cfg.x0[1])
    out[0] = x, v
    for k in range(1, int(n_samples)):
        xi = rng.standard_normal(cfg.substeps) if cfg.sigma > 0 else None
        for j in range(cfg.substeps):
            a = _drift(x, v, cfg.mu, cfg.form)
            x, v = x + h * v, v + h * a
            if xi is not None:
                v = v + noise_scale * xi[j]
        out[k] = x, v
    log.info("Simulated Van der Pol: %d samples, mu=%g, sigma=%g", n_samples, cfg.mu, cfg.sigma)
    return out


def simulate_ring(cfg: RingConfig, n_samples: int) -> np.ndarray:
    """Sampled ring trajectory, shape (n_samples, 2 n_osc), layout [x_1, x_1', ...]."""
    if int(n_samples) != n_samples or n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    rngs = [np.random.default_rng(s) for s in oscillator_seeds(cfg.seed, cfg.n_osc)]
    h = cfg.dt_sample / cfg.substeps
    noise_scale = cfg.sigma * np.sqrt(h)

    state = cfg.initial_state().reshape(cfg.n_osc, 2)
    x, v = state[:, 0].copy(), state[:, 1].copy()
    out = np.empty((int(n_samples), cfg.state_dim))
    out[0] = np.column_stack([x, v]).ravel()
    for k in range(1, int(n_samples)):
        xi = np.array([r.standard_normal(cfg.substeps) for r in rngs]) if cfg.sigma > 0 else None
        for j in range(cfg.substeps):
            a = _drift(x, v, cfg.mu, cfg.form)
            if cfg.coupling != 0:
                a = a - cfg.coupling * (2.0 * x - np.roll(x, 1) - np.roll(x, -1))
            x, v = x + h * v, v + h * a
            if xi is not None:
                v = v + noise_scale * xi[:, j]
        out[k] = np.column_stack([x, v]).ravel()
    log.info("Simulated ring of %d oscillators: %d samples", cfg.n_osc, n_samples)
    return out


def simulate_linear(
    A_sys: np.ndarray,
    x0: Sequence[float],
    n_samples: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """x_{t+1} = A_sys x_t + noise_sigma * xi_t; shape (n_samples, N)."""
    A_sys = np.asarray(A_sys, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64)
    if A_sys.ndim != 2 or A_sys.shape != (x.size, x.size):
        raise InputError(f"A_sys must be {x.size}x{x.size}, got {A_sys.shape}")
    if int(n_samples) != n_samples or n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    if noise_sigma < 0:
        raise ConfigurationError(f"noise_sigma must be >= 0, got {noise_sigma}")

    rng = np.random.default_rng(seed)
    out = np.empty((int(n_samples), x.size))
    out[0] = x
    for k in range(1, int(n_samples)):
        x = A_sys @ x
        if noise_sigma > 0:
            x = x + noise_sigma * rng.standard_normal(x.size)
        out[k] = x
    return out


def add_measurement_noise(traj: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Observed states x + delta with i.i.d. N(0, sigma^2) entries."""
    if sigma < 0:
        raise ConfigurationError(f"measurement sigma must be >= 0, got {sigma}")
    traj = np.asarray(traj, dtype=np.float64)
    if sigma == 0:
        return traj.copy()
    return traj + sigma * np.random.default_rng(seed).standard_normal(traj.shape)


def pairs_from_trajectory(traj: np.ndarray) -> list[SnapshotPair]:
    """Consecutive pairs (traj[i], traj[i + 1])."""
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim != 2 or len(traj) < 2:
        raise InputError(f"need a (T, N) trajectory with T >= 2, got shape {traj.shape}")
    return [SnapshotPair(traj[i], traj[i + 1]) for i in range(len(traj) - 1)]


def reference_limit_cycle(
    mu: float = 0.8,
    dt: float = 0.01,
    x0: Sequence[float] = (2.0, 0.0),
    transient: float = 100.0,
) -> np.ndarray:
    """One period of the noise-free standard Van der Pol limit cycle.

    Integrates past ``transient`` seconds with a tight adaptive solver and
    returns the samples between the last two upward zero crossings of x.
    """
    if mu <= 0:
        raise ConfigurationError("a limit cycle needs mu > 0")

    def rhs(_t, z):
        return [z[1], mu * (1.0 - z[0] ** 2) * z[1] - z[0]]

    # covers at least two periods for mu up to ~10
    span = 3.0 * (2.0 * np.pi + 2.0 * mu) + 10.0
    t_eval = np.arange(transient, transient + span, dt)
    solution = solve_ivp(rhs, (0.0, t_eval[-1]), list(x0), t_eval=t_eval, rtol=1e-10, atol=1e-12)
    x = solution.y[0]
    crossings = np.flatnonzero((x[:-1] < 0) & (x[1:] >= 0))
    if len(crossings) < 2:
        raise InputError("no full period found; increase the integration span")
    start, stop = crossings[-2] + 1, crossings[-1] + 1
    return solution.y[:, start:stop].T
