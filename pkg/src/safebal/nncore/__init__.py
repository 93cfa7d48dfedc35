"""Minimal neural-network engine: layers, losses, AdamW, gradient checking.

Training is deterministic: given the same seed, data, and configuration the
resulting parameters are bitwise identical. Heavy linear algebra is pinned to
a single BLAS thread (see ``single_thread_blas``) so results do not depend on
the thread count of the host BLAS; parallelism belongs at the process level.
"""

from __future__ import annotations

import contextlib

import numpy as np
from threadpoolctl import threadpool_limits

from .gradcheck import GradCheckReport, check_gradients
from .lstm import LstmDirCache, lstm_dir_backward, lstm_dir_forward
from .ops import (
    BCE_CLAMP,
    bce_with_logits,
    concat_backward,
    concat_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    multiply_backward,
    multiply_forward,
    relu_backward,
    relu_forward,
    require_finite,
    sigmoid,
    sigmoid_backward,
    sigmoid_forward,
    squared_error,
    tanh_backward,
    tanh_forward,
    uniform_init,
)
from .optim import AdamWConfig, AdamWState, adamw_step, clip_grad_norm, init_adamw_state
from .rng import Rng, derive_seed
from .serialize import FORMAT_VERSION, load_model, save_model


@contextlib.contextmanager
def single_thread_blas():
    """Limit BLAS to one thread for reproducible, process-parallel training."""
    with threadpool_limits(limits=1):
        yield


def minibatch_indices(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """Shuffled minibatch index arrays; the last short batch is kept."""
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def param_count(params: dict) -> int:
    return int(sum(p.size for p in params.values()))


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}
