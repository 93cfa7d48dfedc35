"""Cheap rebalancing comparators: class weighting and random undersampling."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .nncore import Rng
from .telemetry import Window

STRATEGIES = ("none", "ulnr", "cw", "rus")


def class_weights(labels) -> tuple[float, float]:
    """(w_safe, w_unsafe) with the minority upweighted by the count ratio."""
    labels = np.asarray(labels, dtype=int)
    n_safe = int(np.sum(labels == 0))
    n_unsafe = int(np.sum(labels == 1))
    if n_safe == 0 or n_unsafe == 0:
        raise ConfigError("class weighting needs both classes present")
    return 1.0, n_safe / n_unsafe


def random_undersample(windows: list[Window], target_ratio: float, rng: Rng) -> list[Window]:
    """Subsample the majority (safe) class down to target_ratio : 1.

    All minority windows are kept; majority windows are drawn uniformly
    without replacement. Output preserves dataset order. If the current
    ratio is already at or below the target, the input is returned as is.
    """
    if target_ratio < 1:
        raise ContractError("target ratio must be >= 1")
    labels = np.array([w.safety_label for w in windows], dtype=int)
    majority_idx = np.flatnonzero(labels == 0)
    minority_idx = np.flatnonzero(labels == 1)
    n_keep = int(target_ratio * len(minority_idx))
    if len(minority_idx) == 0 or len(majority_idx) <= n_keep:
        return list(windows)
    chosen = rng.choice(majority_idx, size=n_keep, replace=False)
    keep = np.zeros(len(windows), dtype=bool)
    keep[minority_idx] = True
    keep[chosen] = True
    return [w for w, k in zip(windows, keep) if k]
