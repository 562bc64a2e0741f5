"""Timing harness: recursive updates against full recomputation, and K scaling.

Both arms consume the same pre-lifted stream, so lifting never counts
toward either arm. The recompute arm rebuilds G and A from scratch at every
step, one rank-one term per pair, before solving. BLAS runs single-threaded
while timing.
"""

from __future__ import annotations

import json
import logging
import platform
import warnings
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter_ns
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_info, threadpool_limits

from src.model.edmd import GramPair, relative_frobenius, solve_robust
from src.model.koopman_model import DEFAULT_REFRESH_PERIOD, init_model
from src.model.lifting import Dictionary, DictionarySpec, SnapshotPair, build_dictionary, lift_batch
from src.simulation.dynamics import RingConfig, pairs_from_trajectory, simulate_ring
from src.utils.data_loader import write_frame
from src.utils.errors import ConfigurationError, InputError, NumericalCorruptionError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

RR_EDMD = "rr-edmd"
EDMD_RECOMPUTE = "edmd-recompute"
OPERATOR_EXTRACTION = "rr-edmd-operator"


@dataclass(frozen=True)
class BenchConfig:
    repetitions: int = 1
    warmup_steps: int = 10  # dropped from fits
    fit_range: tuple[int, int] = (200, 2000)
    refresh_period: int = DEFAULT_REFRESH_PERIOD
    pin_threads: bool = True
    verify_every: int = 100
    agreement_tol: float = 1e-8  # relative Frobenius gap allowed between the arms
    memory_cap_bytes: int = 2 * 1024 ** 3

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigurationError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.warmup_steps < 0:
            raise ConfigurationError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if not 1 <= self.fit_range[0] < self.fit_range[1]:
            raise ConfigurationError(f"fit_range must be increasing, got {self.fit_range}")
        if self.verify_every < 0:
            raise ConfigurationError(f"verify_every must be >= 0, got {self.verify_every}")
        if not self.agreement_tol > 0:
            raise ConfigurationError(f"agreement_tol must be > 0, got {self.agreement_tol}")
        if self.memory_cap_bytes <= 0:
            raise ConfigurationError("memory_cap_bytes must be positive")


def environment_fingerprint() -> dict:
    blas = [
        {key: info.get(key) for key in ("internal_api", "version", "num_threads")}
        for info in threadpool_info()
    ]
    return {
        "host": platform.node(),
        "machine": platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "blas": blas,
    }


@dataclass(frozen=True, eq=False)
class BenchReport:
    method: str
    step_nanos: np.ndarray  # median over repetitions, one entry per step
    K: int
    M: int
    repetitions: int
    environment: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.step_nanos) != self.M:
            raise InputError(f"{len(self.step_nanos)} step timings for M={self.M}")
        if self.repetitions < 1:
            raise InputError("repetitions must be >= 1")

    @property
    def cumulative_nanos(self) -> np.ndarray:
        return np.cumsum(self.step_nanos)

    @property
    def total_nanos(self) -> float:
        return float(np.sum(self.step_nanos))

    def mean_step_nanos(self, skip: int = 0) -> float:
        return float(np.mean(self.step_nanos[skip:]))

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": np.arange(1, self.M + 1),
                "method": self.method,
                "K": self.K,
                "nanos": self.step_nanos,
            }
        )


@dataclass(frozen=True, eq=False)
class BenchComparison:
    rr: BenchReport
    edmd: BenchReport
    extraction: BenchReport
    max_discrepancy: float  # worst relative Frobenius gap between the arms' operators

    def __iter__(self) -> Iterator[BenchReport]:
        return iter((self.rr, self.edmd))


def _timing_context(cfg: BenchConfig):
    return threadpool_limits(limits=1) if cfg.pin_threads else nullcontext()


def _median(runs: list[np.ndarray]) -> np.ndarray:
    return np.median(np.vstack(runs), axis=0)


def _recompute_operator(psi_x: np.ndarray, psi_y: np.ndarray, m: int, lam: float) -> np.ndarray:
    """Accumulate G and A over the first m lifted pairs from zero, then solve."""
    k_dim = psi_x.shape[1]
    G = np.zeros((k_dim, k_dim))
    A = np.zeros((k_dim, k_dim))
    for i in range(m):
        G += np.outer(psi_x[i], psi_x[i])
        A += np.outer(psi_x[i], psi_y[i])
    return solve_robust(GramPair(G=G, A=A, M=m), lam)


def bench_streaming_vs_batch(
    pairs: Sequence[SnapshotPair],
    d: Dictionary,
    lam: float,
    M: int,
    cfg: BenchConfig = BenchConfig(),
) -> BenchComparison:
    """Per-step cost of the recursive update against full recomputation.

    The recursive arm times ``update_lifted``; extracting its operator is
    timed as a separate series. The recompute arm rebuilds G and A over the
    first m pairs and solves the robust system at every m.
    """
    if M < 100:
        raise ConfigurationError(f"M must be >= 100, got {M}")
    pairs = list(pairs)
    if len(pairs) < M:
        raise InputError(f"stream holds {len(pairs)} pairs, need {M}")
    psi_x = lift_batch(d, np.vstack([p.x for p in pairs[:M]]))
    psi_y = lift_batch(d, np.vstack([p.y for p in pairs[:M]]))
    K = d.total_dim
    checkpoints = set(range(cfg.verify_every, M + 1, cfg.verify_every)) if cfg.verify_every else set()
    checkpoints |= {1, M}

    rr_runs, extract_runs, edmd_runs = [], [], []
    reference: dict[int, np.ndarray] = {}
    discrepancy = 0.0
    with _timing_context(cfg):
        for rep in range(cfg.repetitions):
            model = init_model(K, lam, cfg.refresh_period)
            rr = np.empty(M, dtype=np.int64)
            extract = np.empty(M, dtype=np.int64)
            for m in range(M):
                t0 = perf_counter_ns()
                model.update_lifted(psi_x[m], psi_y[m])
                t1 = perf_counter_ns()
                K_rr = model.operator()
                t2 = perf_counter_ns()
                rr[m], extract[m] = t1 - t0, t2 - t1
                if rep == 0 and m + 1 in checkpoints:
                    reference[m + 1] = K_rr
            rr_runs.append(rr)
            extract_runs.append(extract)

            edmd = np.empty(M, dtype=np.int64)
            for m in range(M):
                t0 = perf_counter_ns()
                K_batch = _recompute_operator(psi_x, psi_y, m + 1, lam)
                edmd[m] = perf_counter_ns() - t0
                if rep == 0 and m + 1 in reference:
                    discrepancy = max(discrepancy, relative_frobenius(reference[m + 1], K_batch))
            edmd_runs.append(edmd)

    if discrepancy > cfg.agreement_tol:
        raise NumericalCorruptionError(
            f"recursive and batch operators differ by {discrepancy:.3g} (relative Frobenius), "
            f"limit {cfg.agreement_tol:g}"
        )
    env = environment_fingerprint()
    reports = [
        BenchReport(method, _median(runs), K, M, cfg.repetitions, env)
        for method, runs in ((RR_EDMD, rr_runs), (EDMD_RECOMPUTE, edmd_runs), (OPERATOR_EXTRACTION, extract_runs))
    ]
    for report in reports:
        log.info("%s: K=%d, M=%d, total %.3f ms", report.method, K, M, report.total_nanos / 1e6)
    return BenchComparison(rr=reports[0], edmd=reports[1], extraction=reports[2], max_discrepancy=discrepancy)


def fit_growth_exponent(report: BenchReport, fit_range: tuple[int, int] = (200, 2000), warmup_steps: int = 10) -> float:
    """Slope p of log(cumulative time) against log(m), cumulative time ~ a m^p.

    The first ``warmup_steps`` steps are dropped before accumulating.
    """
    steps = np.arange(warmup_steps + 1, report.M + 1)
    cumulative = np.cumsum(report.step_nanos[warmup_steps:]).astype(np.float64)
    lo, hi = fit_range
    mask = (steps >= lo) & (steps <= hi) & (cumulative > 0)
    if np.count_nonzero(mask) < 2:
        raise InputError(f"fewer than two steps of M={report.M} fall in fit range {fit_range}")
    slope, _ = np.polyfit(np.log(steps[mask]), np.log(cumulative[mask]), 1)
    return float(slope)


def bench_scaling(
    sizes: Sequence[int],
    rbf_per_osc: int = 15,
    samples_per_size: int = 1000,
    base: RingConfig = RingConfig(),
    lam: float = 1.0,
    include_identity: bool = False,
    include_constant: bool = False,
    cfg: BenchConfig = BenchConfig(),
) -> list[BenchReport]:
    """Mean per-step update time on ring networks of increasing size."""
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ConfigurationError(f"sizes must be ascending, got {sizes}")
    if samples_per_size < 2:
        raise ConfigurationError("samples_per_size must be >= 2")

    reports = []
    for n_osc in sizes:
        ring = RingConfig(
            n_osc=n_osc, mu=base.mu, sigma=base.sigma, dt_sample=base.dt_sample, substeps=base.substeps,
            seed=base.seed, coupling=base.coupling, form=base.form,
        )
        k_dim = rbf_per_osc * n_osc + int(include_constant) + (ring.state_dim if include_identity else 0)
        memory = 3 * k_dim * k_dim * 8
        if memory > cfg.memory_cap_bytes:
            message = f"skipping n_osc={n_osc}: K={k_dim} needs {memory / 2**20:.0f} MiB over the cap"
            log.warning(message)
            warnings.warn(message, RuntimeWarning, stacklevel=2)
            continue

        traj = simulate_ring(ring, samples_per_size + 1)
        spec = DictionarySpec(
            num_rbf=rbf_per_osc * n_osc,
            include_identity=include_identity,
            include_constant=include_constant,
            seed=base.seed,
            warmup=len(traj),
        )
        d = build_dictionary(spec, traj)
        pairs = pairs_from_trajectory(traj)
        psi_x = lift_batch(d, np.vstack([p.x for p in pairs]))
        psi_y = lift_batch(d, np.vstack([p.y for p in pairs]))

        runs = []
        with _timing_context(cfg):
            for _ in range(cfg.repetitions):
                model = init_model(d.total_dim, lam, cfg.refresh_period)
                nanos = np.empty(len(pairs), dtype=np.int64)
                for m in range(len(pairs)):
                    t0 = perf_counter_ns()
                    model.update_lifted(psi_x[m], psi_y[m])
                    nanos[m] = perf_counter_ns() - t0
                runs.append(nanos)
        report = BenchReport(RR_EDMD, _median(runs), d.total_dim, len(pairs), cfg.repetitions, environment_fingerprint())
        log.info("n_osc=%d, K=%d: %.1f us per update", n_osc, d.total_dim, report.mean_step_nanos(cfg.warmup_steps) / 1e3)
        reports.append(report)
    return reports


def scaling_table(reports: Sequence[BenchReport], warmup_steps: int = 10) -> pd.DataFrame:
    """K against mean per-step time, with the ratio to the previous size."""
    frame = pd.DataFrame(
        {
            "K": [r.K for r in reports],
            "mean_step_nanos": [r.mean_step_nanos(warmup_steps) for r in reports],
        }
    )
    frame["ratio"] = frame["mean_step_nanos"] / frame["mean_step_nanos"].shift(1)
    return frame


def write_bench_csv(reports: Sequence[BenchReport], path: str | Path) -> Path:
    """Long table ``step,method,K,nanos``."""
    frames = [r.frame() for r in reports]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["step", "method", "K", "nanos"])
    return write_frame(frame, path)


def comparison_summary(comparison: BenchComparison, cfg: BenchConfig = BenchConfig()) -> dict:
    summary = {"max_discrepancy": comparison.max_discrepancy, "methods": {}}
    for report in (comparison.rr, comparison.edmd, comparison.extraction):
        entry = {"K": report.K, "M": report.M, "cumulative_nanos": report.total_nanos}
        try:
            entry["fit_exponent"] = fit_growth_exponent(report, cfg.fit_range, cfg.warmup_steps)
        except InputError:
            entry["fit_exponent"] = None
        summary["methods"][report.method] = entry
    summary["cumulative_ratio"] = comparison.edmd.total_nanos / max(comparison.rr.total_nanos, 1.0)
    summary["environment"] = comparison.rr.environment
    return summary


def scaling_summary(reports: Sequence[BenchReport], cfg: BenchConfig = BenchConfig()) -> dict:
    table = scaling_table(reports, cfg.warmup_steps)
    return {
        "sizes": table.astype(object).where(table.notna(), None).to_dict(orient="records"),
        "environment": reports[0].environment if reports else environment_fingerprint(),
    }


def write_summary_json(summary: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    return path
