"""Distributional kinematic features: 16 summary statistics per window.

Each of the four channels (r, x, y, z) contributes a block of
(mean, std, min, max) computed over the window's 25 timesteps, with
population std. Feature order is part of the model file contract:
index 4*c+s for channel c and statistic s.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .telemetry import N_CHANNELS, WINDOW_LEN, Window

N_FEATURES = 16
FEATURE_NAMES = tuple(
    f"{ch}_{stat}" for ch in ("r", "x", "y", "z") for stat in ("mean", "std", "min", "max")
)


def extract_features(values: np.ndarray) -> np.ndarray:
    """Map a (25, 4) window matrix to its 16-value feature vector."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (WINDOW_LEN, N_CHANNELS):
        raise ContractError(f"expected {WINDOW_LEN}x{N_CHANNELS} matrix, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ContractError("non-finite window values")
    out = np.empty(N_FEATURES)
    out[0::4] = values.mean(axis=0)
    out[1::4] = values.std(axis=0)
    out[2::4] = values.min(axis=0)
    out[3::4] = values.max(axis=0)
    return out


def feature_matrix(windows: list[Window]) -> np.ndarray:
    """Stack per-window feature vectors into an (n, 16) matrix."""
    if not windows:
        return np.zeros((0, N_FEATURES))
    return np.stack([extract_features(w.values) for w in windows])
