"""Bidirectional-LSTM safety classifier with optional uncertainty fusion.

Architecture: stacked bidirectional LSTM layers (inter-layer dropout on the
concatenated per-timestep outputs), then a two-layer ReLU head with sigmoid
output on the concatenation of the two directions' final hidden states.

Fusion modes for the per-window uncertainty score u:
  plain  ignore u (4 input channels)
  early  broadcast u as a constant 5th input channel
  late   append u to the 128-d final hidden vector before the head

Channel statistics are fit on the training split only and stored inside the
model, so inference on raw windows is self-contained.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .baselines import class_weights as compute_class_weights
from .errors import ConfigError, ContractError, TrainingError
from .metrics import prf1_from_predictions
from .nncore import AdamWConfig, Rng
from .nncore.lstm import lstm_dir_backward, lstm_dir_forward
from .telemetry import ChannelStats, N_CHANNELS, Window, fit_channel_stats, standardize

MODEL_KIND = "bilstm-safety-v1"
FUSION_MODES = ("plain", "early", "late")


@dataclass
class SafetyConfig:
    n_layers: int = 3
    hidden_dim: int = 64
    head_dim: int = 32
    dropout: float = 0.3
    fusion: str = "plain"
    optim: AdamWConfig = field(
        default_factory=lambda: AdamWConfig(
            learning_rate=1e-2, weight_decay=1e-4, batch_size=256, epochs=50,
            grad_clip_norm=1.0,
        )
    )

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.n_layers < 1 or self.hidden_dim < 1 or self.head_dim < 1:
            raise ConfigError("layer sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def in_channels(self) -> int:
        return N_CHANNELS + 1 if self.fusion == "early" else N_CHANNELS

    @property
    def head_in(self) -> int:
        base = 2 * self.hidden_dim
        return base + 1 if self.fusion == "late" else base


@dataclass
class SafetyModel:
    config: SafetyConfig
    params: dict
    channel_stats: ChannelStats | None = None

    @property
    def param_count(self) -> int:
        return nncore.param_count(self.params)


def init_safety_model(config: SafetyConfig, rng: Rng) -> SafetyModel:
    H = config.hidden_dim
    init = nncore.uniform_init
    params: dict[str, np.ndarray] = {}
    in_dim = config.in_channels
    for layer in range(config.n_layers):
        for direction in ("f", "b"):
            prefix = f"lstm{layer}_{direction}"
            params[f"{prefix}_Wih"] = init(rng, (4, in_dim, H), in_dim)
            params[f"{prefix}_Whh"] = init(rng, (4, H, H), H)
            bih = np.zeros((4, H))
            bih[1] = 1.0  # forget gate starts open
            params[f"{prefix}_bih"] = bih
            params[f"{prefix}_bhh"] = np.zeros((4, H))
        in_dim = 2 * H
    params["head_W1"] = init(rng, (config.head_dim, config.head_in), config.head_in)
    params["head_b1"] = np.zeros(config.head_dim)
    params["head_W2"] = init(rng, (1, config.head_dim), config.head_dim)
    params["head_b2"] = np.zeros(1)
    return SafetyModel(config=config, params=params)


def forward_batch(model: SafetyModel, X, training=False, rng=None, scores=None):
    """Probabilities for a standardized batch X (n, T, C).

    ``scores`` (n,) is required in early/late fusion. Returns
    (probs, logits, cache).
    """
    config = model.config
    params = model.params
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ContractError(f"expected (n, T, C) input, got {X.shape}")
    if config.fusion in ("early", "late"):
        if scores is None:
            raise ContractError(f"fusion mode {config.fusion!r} requires uncertainty scores")
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        if len(scores) != X.shape[0]:
            raise ContractError("one uncertainty score per window required")
    if config.fusion == "early":
        X = np.concatenate([X, np.broadcast_to(scores[:, None, None], (X.shape[0], X.shape[1], 1))], axis=2)
    if X.shape[2] != config.in_channels:
        raise ContractError(
            f"model expects {config.in_channels} input channels for fusion "
            f"{config.fusion!r}, got {X.shape[2]}"
        )
    n, T, _ = X.shape
    H = config.hidden_dim
    inp = np.ascontiguousarray(X.transpose(1, 0, 2))  # time-major
    layer_caches = []
    h_final = None
    for layer in range(config.n_layers):
        pf = f"lstm{layer}_f"
        pb = f"lstm{layer}_b"
        hseq_f, hfin_f, cache_f = lstm_dir_forward(
            inp, params[f"{pf}_Wih"], params[f"{pf}_Whh"], params[f"{pf}_bih"], params[f"{pf}_bhh"],
            reverse=False,
        )
        hseq_b, hfin_b, cache_b = lstm_dir_forward(
            inp, params[f"{pb}_Wih"], params[f"{pb}_Whh"], params[f"{pb}_bih"], params[f"{pb}_bhh"],
            reverse=True,
        )
        last = layer == config.n_layers - 1
        drop_cache = None
        out = None
        if not last:
            out = np.empty((T, n, 2 * H))
            out[:, :, :H] = hseq_f
            out[:, :, H:] = hseq_b
            out, drop_cache = nncore.dropout_forward(out, config.dropout, rng, training)
        else:
            h_final = np.concatenate([hfin_f, hfin_b], axis=1)  # (n, 2H)
        layer_caches.append((cache_f, cache_b, drop_cache))
        if not last:
            inp = out
    head_in = h_final
    if config.fusion == "late":
        head_in = np.concatenate([h_final, scores[:, None]], axis=1)
    pre1, c_d1 = nncore.dense_forward(head_in, params["head_W1"], params["head_b1"])
    act1, c_r1 = nncore.relu_forward(pre1)
    pre2, c_d2 = nncore.dense_forward(act1, params["head_W2"], params["head_b2"])
    logits = pre2[:, 0]
    probs = nncore.sigmoid(logits)
    cache = (layer_caches, c_d1, c_r1, c_d2, n, T)
    return probs, logits, cache


def backward_batch(model: SafetyModel, dlogits, cache):
    """Parameter gradients given d loss / d logits."""
    config = model.config
    params = model.params
    layer_caches, c_d1, c_r1, c_d2, n, T = cache
    H = config.hidden_dim
    grads: dict[str, np.ndarray] = {}
    d_pre2 = np.asarray(dlogits)[:, None]
    d_act1, grads["head_W2"], grads["head_b2"] = nncore.dense_backward(d_pre2, c_d2)
    d_pre1 = nncore.relu_backward(d_act1, c_r1)
    d_head_in, grads["head_W1"], grads["head_b1"] = nncore.dense_backward(d_pre1, c_d1)
    d_hfinal = d_head_in[:, : 2 * H] if config.fusion == "late" else d_head_in
    d_seq = None
    d_fin_f = np.ascontiguousarray(d_hfinal[:, :H])
    d_fin_b = np.ascontiguousarray(d_hfinal[:, H:])
    for layer in range(config.n_layers - 1, -1, -1):
        cache_f, cache_b, drop_cache = layer_caches[layer]
        last = layer == config.n_layers - 1
        if last:
            dseq_f = dseq_b = None
        else:
            d_seq = nncore.dropout_backward(d_seq, drop_cache)
            dseq_f = np.ascontiguousarray(d_seq[:, :, :H])
            dseq_b = np.ascontiguousarray(d_seq[:, :, H:])
            d_fin_f = d_fin_b = None
        pf = f"lstm{layer}_f"
        pb = f"lstm{layer}_b"
        want_dx = layer > 0
        dXf, dWih_f, dWhh_f, dbih_f, dbhh_f = lstm_dir_backward(
            dseq_f, d_fin_f, cache_f, params[f"{pf}_Wih"], params[f"{pf}_Whh"], want_dx
        )
        dXb, dWih_b, dWhh_b, dbih_b, dbhh_b = lstm_dir_backward(
            dseq_b, d_fin_b, cache_b, params[f"{pb}_Wih"], params[f"{pb}_Whh"], want_dx
        )
        grads[f"{pf}_Wih"], grads[f"{pf}_Whh"] = dWih_f, dWhh_f
        grads[f"{pf}_bih"], grads[f"{pf}_bhh"] = dbih_f, dbhh_f
        grads[f"{pb}_Wih"], grads[f"{pb}_Whh"] = dWih_b, dWhh_b
        grads[f"{pb}_bih"], grads[f"{pb}_bhh"] = dbih_b, dbhh_b
        if want_dx:
            d_seq = dXf
            d_seq += dXb
    return grads


def forward(model: SafetyModel, values, u=None):
    """Probability for one standardized window (T, C); u per fusion mode."""
    values = np.asarray(values, dtype=np.float64)
    scores = None if u is None else np.array([u], dtype=np.float64)
    probs, _, _ = forward_batch(model, values[None, :, :], scores=scores)
    return float(probs[0])


def _prepare_inputs(windows, stats, fusion, scores):
    X = np.stack([standardize(w.values, stats) for w in windows])
    if fusion in ("early", "late"):
        if scores is None:
            raise ContractError(f"fusion {fusion!r} requires one score per window")
        scores = np.asarray(scores, dtype=np.float64)
        if len(scores) != len(windows):
            raise ContractError("scores misaligned with windows")
    return X, scores


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_f1: float


def train_safety(
    train_windows: list[Window],
    val_windows: list[Window],
    config: SafetyConfig,
    seed: int,
    scores_train=None,
    scores_val=None,
    class_weighting: bool = False,
) -> tuple[SafetyModel, list[EpochLog]]:
    """Train on (possibly rebalanced) windows; keep the best-val-F1 epoch.

    Channel statistics are fit on ``train_windows`` only and embedded in the
    returned model. Class weighting (optional) upweights unsafe windows by
    the safe/unsafe count ratio.
    """
    if not train_windows:
        raise ConfigError("empty training set")
    for w in train_windows + val_windows:
        if w.safety_label is None:
            raise ContractError(f"window {w.window_id} lacks a safety label")
    stats = fit_channel_stats(train_windows)
    x_train, scores_train = _prepare_inputs(train_windows, stats, config.fusion, scores_train)
    y_train = np.array([w.safety_label for w in train_windows], dtype=np.float64)
    x_val, scores_val = _prepare_inputs(val_windows, stats, config.fusion, scores_val) if val_windows else (np.zeros((0, 1, config.in_channels)), scores_val)
    y_val = np.array([w.safety_label for w in val_windows], dtype=int)
    weights = None
    if class_weighting:
        w_safe, w_unsafe = compute_class_weights(y_train.astype(int))
        weights = np.where(y_train == 1, w_unsafe, w_safe)
    rng = Rng(seed)
    init_rng = rng.spawn("init")
    batch_rng = rng.spawn("batches")
    drop_rng = rng.spawn("dropout")
    model = init_safety_model(config, init_rng)
    model.channel_stats = stats
    opt = config.optim
    state = nncore.init_adamw_state(model.params)
    best_params = nncore.copy_params(model.params)
    best_f1 = -1.0
    history: list[EpochLog] = []
    with nncore.single_thread_blas():
        for epoch in range(opt.epochs):
            losses = []
            for idx in nncore.minibatch_indices(len(x_train), opt.batch_size, batch_rng):
                batch_scores = None if scores_train is None else scores_train[idx]
                _, logits, cache = forward_batch(
                    model, x_train[idx], training=True, rng=drop_rng, scores=batch_scores
                )
                loss, dlogits = nncore.bce_with_logits(
                    logits, y_train[idx], None if weights is None else weights[idx]
                )
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite training loss at epoch {epoch}")
                grads = backward_batch(model, dlogits, cache)
                if opt.grad_clip_norm is not None:
                    nncore.clip_grad_norm(grads, opt.grad_clip_norm)
                nncore.adamw_step(model.params, grads, state, opt)
                losses.append(loss)
            val_f1 = _validation_f1(model, x_val, y_val, scores_val)
            history.append(EpochLog(epoch, float(np.mean(losses)), val_f1))
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_params = nncore.copy_params(model.params)
    return SafetyModel(config=config, params=best_params, channel_stats=stats), history


def _validation_f1(model, x_val, y_val, scores_val) -> float:
    if len(x_val) == 0:
        return 0.0
    probs, _, _ = forward_batch(model, x_val, scores=scores_val)
    return prf1_from_predictions((probs >= 0.5).astype(int), y_val)[2]


def predict_all(
    model: SafetyModel,
    windows: list[Window],
    scores=None,
    measure_latency: bool = False,
    latency_sample: int = 200,
):
    """Probabilities for raw windows (standardized internally), in order.

    With measure_latency, also times single-window inference over a prefix
    subsample and returns the mean seconds per window; otherwise latency is
    None. Returns (probs, latency_mean_s).
    """
    if model.channel_stats is None:
        raise ContractError("model has no channel statistics; train or load it first")
    if not windows:
        return np.zeros(0), None
    X, scores = _prepare_inputs(windows, model.channel_stats, model.config.fusion, scores)
    with nncore.single_thread_blas():
        probs, _, _ = forward_batch(model, X, scores=scores)
        latency = None
        if measure_latency:
            k = min(latency_sample, len(windows))
            t0 = time.perf_counter()
            for i in range(k):
                s = None if scores is None else scores[i : i + 1]
                forward_batch(model, X[i : i + 1], scores=s)
            latency = (time.perf_counter() - t0) / k
    return probs, latency


def save(model: SafetyModel, path):
    if model.channel_stats is None:
        raise ContractError("refusing to save a model without channel statistics")
    meta = {
        "n_layers": model.config.n_layers,
        "hidden_dim": model.config.hidden_dim,
        "head_dim": model.config.head_dim,
        "dropout": float(model.config.dropout),
        "fusion": model.config.fusion,
    }
    params = dict(model.params)
    params["channel_mean"] = model.channel_stats.mean
    params["channel_std"] = model.channel_stats.std
    return nncore.save_model(path, MODEL_KIND, params, meta)


def load(path) -> SafetyModel:
    kind, params, meta = nncore.load_model(path)
    if kind != MODEL_KIND:
        raise ContractError(f"expected model kind {MODEL_KIND}, got {kind}")
    stats = ChannelStats(mean=params.pop("channel_mean"), std=params.pop("channel_std"))
    config = SafetyConfig(
        n_layers=int(meta["n_layers"]),
        hidden_dim=int(meta["hidden_dim"]),
        head_dim=int(meta["head_dim"]),
        dropout=float(meta["dropout"]),
        fusion=meta["fusion"],
    )
    return SafetyModel(config=config, params=params, channel_stats=stats)
