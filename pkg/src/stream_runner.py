"""Drive a KoopmanModel from a stream of snapshot pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence, Union

from src.model.koopman_model import DEFAULT_REFRESH_PERIOD, KoopmanModel, init_from_batch, init_model
from src.model.lifting import Dictionary, SnapshotPair
from src.model.observers import StreamObserver
from src.utils.errors import ConfigurationError, InputError, ItemError, StreamQualityError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())

SourceItem = Union[SnapshotPair, ItemError]


@dataclass(frozen=True)
class StreamConfig:
    """Everything ``run_stream`` needs besides the source.

    ``cadence`` 0 means observers only see the final snapshot. With
    ``init_mode="batch"`` the first ``init_batch`` pairs seed the model
    through the closed form.
    """

    dictionary: Dictionary
    lam: float
    refresh_period: int = DEFAULT_REFRESH_PERIOD
    cadence: int = 0
    init_mode: Literal["identity", "batch"] = "identity"
    init_batch: int = 0
    max_skip_fraction: float = 0.10
    min_items_for_abort: int = 50

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError(f"lambda must be > 0, got {self.lam}")
        if self.cadence < 0:
            raise ConfigurationError(f"cadence must be >= 0, got {self.cadence}")
        if self.init_mode not in ("identity", "batch"):
            raise ConfigurationError(f"unknown init mode {self.init_mode!r}")
        if self.init_mode == "batch" and self.init_batch < 1:
            raise ConfigurationError("batch initialization needs init_batch >= 1")
        if not 0 <= self.max_skip_fraction < 1:
            raise ConfigurationError(f"max_skip_fraction must be in [0, 1), got {self.max_skip_fraction}")


class _SkipCounter:
    def __init__(self, cfg: StreamConfig):
        self.cfg = cfg
        self.seen = 0
        self.skipped = 0

    def ok(self) -> None:
        self.seen += 1

    def skip(self, reason: str) -> None:
        self.seen += 1
        self.skipped += 1
        log.debug("Skipped item %d: %s", self.seen - 1, reason)
        if self.seen >= self.cfg.min_items_for_abort:
            self.check()

    def check(self) -> None:
        if self.seen and self.skipped / self.seen > self.cfg.max_skip_fraction:
            raise StreamQualityError(
                f"{self.skipped} of {self.seen} stream items skipped "
                f"(limit {self.cfg.max_skip_fraction:.0%})"
            )


def run_stream(
    source: Iterable[SourceItem],
    cfg: StreamConfig,
    sinks: Sequence[StreamObserver] = (),
    model: Optional[KoopmanModel] = None,
) -> KoopmanModel:
    """Consume ``source`` to exhaustion, one rank-one update per pair.

    Pass ``model`` to continue a run restored from a checkpoint. Item errors
    are skipped and counted; too many skips raise StreamQualityError.
    """
    d = cfg.dictionary
    counter = _SkipCounter(cfg)
    items = iter(source)

    if model is None:
        if cfg.init_mode == "batch":
            model = _seed_from_batch(items, cfg, counter)
        else:
            model = init_model(d.total_dim, cfg.lam, cfg.refresh_period)
    elif model.k_dim != d.total_dim:
        raise ConfigurationError(f"resumed model has K={model.k_dim}, dictionary has K={d.total_dim}")

    for item in items:
        if isinstance(item, ItemError):
            counter.skip(item.reason)
            continue
        try:
            model.update(d, item)
        except InputError as exc:
            counter.skip(str(exc))
            continue
        counter.ok()
        if cfg.cadence and model.M % cfg.cadence == 0:
            snapshot = model.snapshot()
            for sink in sinks:
                sink.observe(snapshot)

    counter.check()
    final = model.snapshot()
    for sink in sinks:
        sink.close(final)
    log.info(
        "Stream finished: M=%d, %d items skipped, %d refreshes", model.M, counter.skipped, model.refresh_count
    )
    return model


def _seed_from_batch(items, cfg: StreamConfig, counter: _SkipCounter) -> KoopmanModel:
    batch: list[SnapshotPair] = []
    for item in items:
        if isinstance(item, ItemError):
            counter.skip(item.reason)
            continue
        if item.dim != cfg.dictionary.state_dim:
            counter.skip(f"pair has dimension {item.dim}, dictionary expects {cfg.dictionary.state_dim}")
            continue
        counter.ok()
        batch.append(item)
        if len(batch) == cfg.init_batch:
            break
    if not batch:
        return init_model(cfg.dictionary.total_dim, cfg.lam, cfg.refresh_period)
    return init_from_batch(cfg.dictionary, batch, cfg.lam, cfg.refresh_period)
