"""CSV ingestion and export.

The canonical trajectory file is UTF-8, comma separated, with a leading
``t`` column (seconds) followed by one column per state channel. Floats are
written with 17 significant digits so a write/read cycle is lossless.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.model.lifting import SnapshotPair
from src.utils.errors import ConfigurationError, InputError, ItemError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

FLOAT_FORMAT = "%.17g"
SNR_PREFIX = 500
OVERFLOW = "__overflow__"
RAGGED = "<ragged>"

StreamItem = Union[np.ndarray, ItemError]
Column = Union[str, int]


@dataclass(frozen=True)
class CsvStreamConfig:
    """Where and how to read a recorded trajectory.

    ``columns`` empty means every column except ``t``. ``snr_db`` None or
    +inf disables noise injection.
    """

    path: Path
    columns: tuple[Column, ...] = ()
    sample_rate_hz: Optional[float] = None
    snr_db: Optional[float] = None
    seed: int = 0
    realtime: bool = False
    chunksize: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "path", Path(self.path))
        object.__setattr__(self, "columns", tuple(self.columns))
        if len(set(self.columns)) != len(self.columns):
            raise ConfigurationError(f"selected columns must be distinct, got {self.columns}")
        if self.snr_db is not None and (np.isnan(self.snr_db) or self.snr_db == -np.inf):
            raise ConfigurationError(f"snr_db must be finite (or +inf to disable), got {self.snr_db}")
        if self.sample_rate_hz is not None and not self.sample_rate_hz > 0:
            raise ConfigurationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.realtime and self.sample_rate_hz is None:
            raise ConfigurationError("realtime replay needs sample_rate_hz")
        if self.chunksize < 1:
            raise ConfigurationError(f"chunksize must be >= 1, got {self.chunksize}")


def resolve_columns(header: Sequence[str], columns: Sequence[Column]) -> list[str]:
    """Map a column selection (names or positions) onto header names."""
    header = list(header)
    if not columns:
        return [name for name in header if name != "t"]
    names = []
    for column in columns:
        if isinstance(column, (int, np.integer)):
            if not 0 <= column < len(header):
                raise ConfigurationError(f"column index {column} out of range ({len(header)} columns)")
            names.append(header[column])
        elif column in header:
            names.append(column)
        else:
            raise ConfigurationError(f"column {column!r} not found; available: {header}")
    return names


def open_csv_stream(cfg: CsvStreamConfig) -> Iterator[StreamItem]:
    """Open a CSV trajectory; yields one state vector (or ItemError) per row.

    The header is checked here, so a missing column fails at open time and
    not on first iteration.
    """
    if not cfg.path.exists():
        raise ConfigurationError(f"input file {cfg.path} does not exist")
    try:
        header = pd.read_csv(cfg.path, nrows=0).columns
    except pd.errors.EmptyDataError as exc:
        raise ConfigurationError(f"{cfg.path} has no header row") from exc
    names = resolve_columns(header, cfg.columns)
    if not names:
        raise ConfigurationError(f"{cfg.path} has no state columns")
    log.info("Streaming %s columns %s", cfg.path, names)

    rows = _read_rows(cfg, list(header), names)
    if cfg.realtime:
        rows = _paced(rows, cfg.sample_rate_hz)
    if cfg.snr_db is not None:
        rows = add_noise_snr(rows, cfg.snr_db, cfg.seed)
    return rows


def _read_rows(cfg: CsvStreamConfig, header: list[str], names: list[str]) -> Iterator[StreamItem]:
    # one spare column catches a single surplus field, the callable the rest
    width = len(header) + 1
    reader = pd.read_csv(
        cfg.path,
        header=0,
        names=header + [OVERFLOW],
        dtype=object,
        keep_default_na=False,
        engine="python",
        on_bad_lines=lambda fields: [RAGGED] * width,
        chunksize=cfg.chunksize,
    )
    index = 0
    with reader:
        for chunk in reader:
            for *row, overflow in chunk[names + [OVERFLOW]].itertuples(index=False, name=None):
                if not pd.isna(overflow):
                    log.debug("Row %d: more than %d fields", index, len(header))
                    yield ItemError(index, f"row has more than {len(header)} fields")
                    index += 1
                    continue
                row = tuple(row)
                try:
                    state = np.array(row, dtype=np.float64)
                except (TypeError, ValueError):
                    log.debug("Row %d: malformed numeric cell in %s", index, row)
                    yield ItemError(index, f"malformed numeric cell in {row}")
                else:
                    if np.all(np.isfinite(state)):
                        yield state
                    else:
                        yield ItemError(index, "non-finite value")
                index += 1


def _paced(rows: Iterable[StreamItem], sample_rate_hz: float) -> Iterator[StreamItem]:
    period = 1.0 / sample_rate_hz
    start = time.perf_counter()
    for i, item in enumerate(rows):
        delay = start + i * period - time.perf_counter()
        if delay > 0:
            time.sleep(delay)
        yield item


def add_noise_snr(stream: Iterable[StreamItem], snr_db: float, seed: int, prefix: int = SNR_PREFIX) -> Iterator[StreamItem]:
    """Add per-channel Gaussian noise at a target signal-to-noise ratio.

    Channel power is the mean-removed variance of the first ``prefix``
    states and stays fixed afterwards. Item errors pass through untouched.
    """
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ConfigurationError(f"snr_db must be finite (or +inf to disable), got {snr_db}")
    if snr_db == np.inf:
        yield from stream
        return

    rng = np.random.default_rng(seed)
    iterator = iter(stream)
    buffered: list[StreamItem] = []
    states = []
    for item in iterator:
        buffered.append(item)
        if not isinstance(item, ItemError):
            states.append(item)
            if len(states) == prefix:
                break
    if not states:
        yield from buffered
        return

    power = np.var(np.vstack(states), axis=0)
    silent = np.flatnonzero(power == 0)
    if silent.size:
        message = f"channels {silent.tolist()} have zero power; no noise added to them"
        log.warning(message)
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    noise_std = np.sqrt(power / 10.0 ** (snr_db / 10.0))
    log.info("SNR %.4g dB: noise std per channel %s", snr_db, np.array2string(noise_std, precision=3))

    def noisy(item: StreamItem) -> StreamItem:
        if isinstance(item, ItemError):
            return item
        return item + noise_std * rng.standard_normal(item.shape[0])

    for item in buffered:
        yield noisy(item)
    for item in iterator:
        yield noisy(item)


def pairs_from_stream(items: Iterable[StreamItem]) -> Iterator[Union[SnapshotPair, ItemError]]:
    """Pair consecutive states; an item error breaks the chain and pairing restarts."""
    previous = None
    for item in items:
        if isinstance(item, ItemError):
            previous = None
            yield item
            continue
        if previous is not None:
            yield SnapshotPair(previous, item)
        previous = item


def read_trajectory(cfg: CsvStreamConfig) -> np.ndarray:
    """Load a whole trajectory; any bad row is an error."""
    states = []
    for item in open_csv_stream(cfg):
        if isinstance(item, ItemError):
            raise InputError(f"{cfg.path}: row {item.index}: {item.reason}")
        states.append(item)
    if not states:
        return np.empty((0, 0))
    return np.vstack(states)


def write_csv(
    traj: np.ndarray,
    path: str | Path,
    columns: Optional[Sequence[str]] = None,
    dt: Optional[float] = None,
    t0: float = 0.0,
) -> Path:
    """Write a trajectory in the canonical format.

    ``t`` is ``t0 + i * dt``; without ``dt`` it is the row index.
    """
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim == 1 and traj.size == 0 and columns is not None:
        traj = traj.reshape(0, len(columns))
    if traj.ndim != 2:
        raise InputError(f"trajectory must be a (T, N) array, got shape {traj.shape}")
    if columns is None:
        columns = [f"x{i + 1}" for i in range(traj.shape[1])]
    if len(columns) != traj.shape[1] or "t" in columns:
        raise ConfigurationError(f"need {traj.shape[1]} distinct channel names other than 't', got {list(columns)}")

    steps = np.arange(traj.shape[0], dtype=np.float64)
    t = t0 + steps * dt if dt is not None else steps
    frame = pd.DataFrame(traj, columns=list(columns))
    frame.insert(0, "t", t)
    return write_frame(frame, path)


def write_frame(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")
    return path


def write_spectrum_csv(s, path: str | Path) -> Path:
    """One row per eigenvalue: re, im, modulus."""
    return write_frame(s.to_frame(), path)


def write_field_csv(field, path: str | Path) -> Path:
    """One row per grid node: x1, x2, re, im, modulus."""
    return write_frame(field.to_frame(), path)


def write_operator_csv(K: np.ndarray, path: str | Path) -> Path:
    """Operator matrix for inspection, one CSV row per matrix row."""
    K = np.asarray(K, dtype=np.float64)
    frame = pd.DataFrame(K, columns=[f"k{j}" for j in range(K.shape[1])])
    return write_frame(frame, path)


def load_spectrum_csv(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = {"re", "im", "modulus"} - set(frame.columns)
    if missing:
        raise InputError(f"{path} is not a spectrum table; missing {sorted(missing)}")
    return frame
