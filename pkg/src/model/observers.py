"""Observers called by the stream driver every ``cadence`` samples.

Each observer receives an immutable ``ModelSnapshot``; ``close`` is called
once with the final snapshot when the stream is exhausted.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
import pandas as pd

from src.analysis.spectral import Spectrum, StabilityReport, spectrum, stability_report
from src.model.koopman_model import KoopmanModel, ModelSnapshot
from src.model.lifting import Dictionary
from src.utils.checkpoint import save_checkpoint
from src.utils.data_loader import write_frame, write_spectrum_csv

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


class StreamObserver:
    """Base observer; subclasses override ``observe`` and optionally ``close``."""

    def observe(self, snapshot: ModelSnapshot) -> None:
        raise NotImplementedError

    def close(self, snapshot: ModelSnapshot) -> None:
        pass


class SpectrumLogger(StreamObserver):
    """Spectrum and stability report per snapshot.

    With a ``prefix`` every snapshot is written to ``<prefix>_<M>.csv`` and
    the stability table to ``<prefix>_stability.csv`` on close.
    """

    def __init__(self, prefix: Optional[str | Path] = None, tolerance: float = 0.0):
        self.prefix = Path(prefix) if prefix is not None else None
        self.tolerance = tolerance
        self.records: list[tuple[int, Spectrum, StabilityReport]] = []
        self.written: list[Path] = []

    def observe(self, snapshot: ModelSnapshot) -> None:
        s = spectrum(snapshot.operator())
        report = stability_report(s, self.tolerance)
        self.records.append((snapshot.M, s, report))
        log.info(
            "M=%d: max |mu| = %.6f, %d outside the unit circle",
            snapshot.M, report.max_modulus, report.count_outside,
        )
        if self.prefix is not None:
            path = self.prefix.with_name(f"{self.prefix.name}_{snapshot.M}.csv")
            self.written.append(write_spectrum_csv(s, path))

    def close(self, snapshot: ModelSnapshot) -> None:
        if self.prefix is not None and self.records:
            path = self.prefix.with_name(f"{self.prefix.name}_stability.csv")
            self.written.append(write_frame(self.stability_frame(), path))

    def spectrum_at(self, M: int) -> Spectrum:
        for m, s, _ in self.records:
            if m == M:
                return s
        raise KeyError(f"no spectrum recorded at M={M}")

    def stability_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {"M": m, "max_modulus": r.max_modulus, "count_outside": r.count_outside, "stable": r.stable}
                for m, _, r in self.records
            ],
            columns=["M", "max_modulus", "count_outside", "stable"],
        )


class TimingRecorder(StreamObserver):
    """Wall time spent between consecutive snapshots."""

    def __init__(self):
        self.rows: list[dict] = []
        self._last_M = 0
        self._last_ns = time.perf_counter_ns()

    def observe(self, snapshot: ModelSnapshot) -> None:
        now = time.perf_counter_ns()
        samples = snapshot.M - self._last_M
        self.rows.append(
            {
                "M": snapshot.M,
                "window_samples": samples,
                "window_ns": now - self._last_ns,
                "ns_per_sample": (now - self._last_ns) / samples if samples else np.nan,
            }
        )
        self._last_M, self._last_ns = snapshot.M, now

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["M", "window_samples", "window_ns", "ns_per_sample"])


class CheckpointWriter(StreamObserver):
    """Keeps the latest model state on disk so an interrupted run can resume."""

    def __init__(self, path: str | Path, dictionary: Dictionary):
        self.path = Path(path)
        self.dictionary = dictionary
        self.saved_at: list[int] = []

    def _write(self, snapshot: ModelSnapshot) -> None:
        model = KoopmanModel.from_state(
            snapshot.lam, snapshot.refresh_period, snapshot.M, snapshot.G_hat, snapshot.G_hat_inv, snapshot.A
        )
        save_checkpoint(self.path, model, self.dictionary)
        self.saved_at.append(snapshot.M)

    def observe(self, snapshot: ModelSnapshot) -> None:
        self._write(snapshot)

    def close(self, snapshot: ModelSnapshot) -> None:
        if not self.saved_at or self.saved_at[-1] != snapshot.M:
            self._write(snapshot)


def operator_norm(snapshot: ModelSnapshot) -> float:
    return float(np.linalg.norm(snapshot.operator()))


def inverse_residual(snapshot: ModelSnapshot) -> float:
    return float(np.linalg.norm(snapshot.G_hat_inv @ snapshot.G_hat - np.eye(snapshot.k_dim)))


def spectral_radius(snapshot: ModelSnapshot) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(snapshot.operator()))))


DEFAULT_REPORTERS: dict[str, Callable[[ModelSnapshot], float]] = {
    "OperatorNorm": operator_norm,
    "InverseResidual": inverse_residual,
    "SpectralRadius": spectral_radius,
}


class MetricsCollector(StreamObserver):
    """Named model reporters evaluated per snapshot, collected into a DataFrame."""

    def __init__(self, model_reporters: Optional[Mapping[str, Callable[[ModelSnapshot], float]]] = None):
        self.model_reporters = dict(DEFAULT_REPORTERS if model_reporters is None else model_reporters)
        self.model_vars: dict[str, list] = {name: [] for name in self.model_reporters}
        self.steps: list[int] = []

    def observe(self, snapshot: ModelSnapshot) -> None:
        self.steps.append(snapshot.M)
        for name, reporter in self.model_reporters.items():
            self.model_vars[name].append(reporter(snapshot))

    def get_model_vars_dataframe(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.model_vars, index=pd.Index(self.steps, name="M"))
        return frame
