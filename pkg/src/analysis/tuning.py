"""Regularization choice by validation error.

The regularizer is hard to pick a priori. ``select_lambda`` runs the
streaming learner once per candidate on a training prefix and scores each
operator by its one-step lifted error on the held-out suffix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from src.analysis.spectral import one_step_rmse
from src.model.koopman_model import DEFAULT_REFRESH_PERIOD, init_model
from src.model.lifting import Dictionary, SnapshotPair, lift_batch
from src.utils.errors import ConfigurationError, InputError

log = logging.getLogger(__name__)
log.addHandler(logging.NullHandler())


@dataclass(frozen=True, eq=False)
class LambdaSelection:
    table: pd.DataFrame  # columns lam, rmse; sorted by lam
    best_lam: float
    n_train: int
    n_validation: int


def select_lambda(
    d: Dictionary,
    pairs: Sequence[SnapshotPair],
    grid: Sequence[float],
    split: float = 0.7,
    refresh_period: int = DEFAULT_REFRESH_PERIOD,
) -> LambdaSelection:
    """Grid search over lambda on a train/validation split of ``pairs``."""
    grid = sorted(float(lam) for lam in grid)
    if not grid:
        raise ConfigurationError("lambda grid is empty")
    if grid[0] <= 0 or not np.all(np.isfinite(grid)):
        raise ConfigurationError(f"lambda grid values must be finite and > 0, got {grid}")
    if not 0 < split < 1:
        raise ConfigurationError(f"split must be in (0, 1), got {split}")

    pairs = list(pairs)
    n_train = int(round(split * len(pairs)))
    if n_train < 1 or n_train >= len(pairs):
        raise InputError(f"{len(pairs)} pairs cannot be split {split:g} into non-empty train and validation sets")

    psi_x = lift_batch(d, np.vstack([p.x for p in pairs]))
    psi_y = lift_batch(d, np.vstack([p.y for p in pairs]))

    rows = []
    for lam in grid:
        model = init_model(d.total_dim, lam, refresh_period)
        for i in range(n_train):
            model.update_lifted(psi_x[i], psi_y[i])
        rmse = one_step_rmse(model.operator(), psi_x[n_train:], psi_y[n_train:])
        log.info("lambda=%g: validation RMSE %.6g", lam, rmse)
        rows.append({"lam": lam, "rmse": rmse})

    table = pd.DataFrame(rows, columns=["lam", "rmse"])
    best = float(table.loc[table["rmse"].idxmin(), "lam"])
    return LambdaSelection(table=table, best_lam=best, n_train=n_train, n_validation=len(pairs) - n_train)
