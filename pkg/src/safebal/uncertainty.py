"""Gated-MLP uncertainty scorer over distributional kinematic features.

A 16-d feature vector is projected, passed through a gated residual block
(a bottleneck transform pathway blended elementwise with the projected input
by a learned sigmoid gate), and reduced to one scalar by a small head. The
score used everywhere downstream is the raw pre-sigmoid logit; training
applies binary cross-entropy on its sigmoid against the 0/1 uncertainty
label.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .errors import ConfigError, ContractError, TrainingError
from .features import N_FEATURES, feature_matrix
from .metrics import prf1_from_predictions
from .nncore import AdamWConfig, Rng
from .telemetry import Window

MODEL_KIND = "gatedmlp-v1"


@dataclass
class UncertaintyConfig:
    proj_dim: int = 64
    expand_dim: int = 128
    head_dim: int = 32
    dropout: float = 0.3
    optim: AdamWConfig = field(
        default_factory=lambda: AdamWConfig(
            learning_rate=1e-3, weight_decay=1e-4, batch_size=256, epochs=30
        )
    )

    def __post_init__(self):
        if self.expand_dim <= self.proj_dim:
            raise ConfigError(
                f"expand_dim ({self.expand_dim}) must exceed proj_dim ({self.proj_dim})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class UncertaintyModel:
    config: UncertaintyConfig
    params: dict
    # frozen per-feature affine fit on training features; raw distributional
    # features mix meters and radians at wildly different scales, and the
    # projection layer cannot absorb that within the training budget
    feat_mean: np.ndarray = None
    feat_std: np.ndarray = None

    def __post_init__(self):
        if self.feat_mean is None:
            self.feat_mean = np.zeros(N_FEATURES)
        if self.feat_std is None:
            self.feat_std = np.ones(N_FEATURES)

    @property
    def param_count(self) -> int:
        return nncore.param_count(self.params)

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.feat_mean) / self.feat_std


def init_uncertainty_model(config: UncertaintyConfig, rng: Rng) -> UncertaintyModel:
    p, e, k = config.proj_dim, config.expand_dim, config.head_dim
    init = nncore.uniform_init
    params = {
        "W_proj": init(rng, (p, N_FEATURES), N_FEATURES),
        "b_proj": np.zeros(p),
        "W1": init(rng, (e, p), p),
        "b1": np.zeros(e),
        "W2": init(rng, (p, e), e),
        "b2": np.zeros(p),
        "W_gate": init(rng, (p, p), p),
        "b_gate": np.zeros(p),
        "W3": init(rng, (k, p), p),
        "b3": np.zeros(k),
        "W4": init(rng, (1, k), k),
        "b4": np.zeros(1),
    }
    return UncertaintyModel(config=config, params=params)


def forward_batch(params, feats, dropout=0.0, training=False, rng=None):
    """Score a feature batch (n, 16). Returns (logits (n,), cache)."""
    nn = nncore
    pre_proj, c_proj = nn.dense_forward(feats, params["W_proj"], params["b_proj"])
    proj, c_relu_proj = nn.relu_forward(pre_proj)
    pre_e, c_d1 = nn.dense_forward(proj, params["W1"], params["b1"])
    expanded, c_relu_e = nn.relu_forward(pre_e)
    transform, c_d2 = nn.dense_forward(expanded, params["W2"], params["b2"])
    pre_gate, c_dg = nn.dense_forward(proj, params["W_gate"], params["b_gate"])
    gate, c_sig = nn.sigmoid_forward(pre_gate)
    gated_t, c_m1 = nn.multiply_forward(gate, transform)
    gated_r, c_m2 = nn.multiply_forward(1.0 - gate, proj)
    blended = gated_t + gated_r
    pre_head, c_d3 = nn.dense_forward(blended, params["W3"], params["b3"])
    head, c_relu_h = nn.relu_forward(pre_head)
    head_d, c_drop = nn.dropout_forward(head, dropout, rng, training)
    out, c_d4 = nn.dense_forward(head_d, params["W4"], params["b4"])
    cache = (c_proj, c_relu_proj, c_d1, c_relu_e, c_d2, c_dg, c_sig,
             c_m1, c_m2, c_d3, c_relu_h, c_drop, c_d4)
    return out[:, 0], cache


def backward_batch(dlogits, cache):
    """Gradients of a scalar loss w.r.t. all parameters, given d loss/d logits."""
    nn = nncore
    (c_proj, c_relu_proj, c_d1, c_relu_e, c_d2, c_dg, c_sig,
     c_m1, c_m2, c_d3, c_relu_h, c_drop, c_d4) = cache
    grads = {}
    d_out = np.asarray(dlogits)[:, None]
    d_head_d, grads["W4"], grads["b4"] = nn.dense_backward(d_out, c_d4)
    d_head = nn.dropout_backward(d_head_d, c_drop)
    d_pre_head = nn.relu_backward(d_head, c_relu_h)
    d_blended, grads["W3"], grads["b3"] = nn.dense_backward(d_pre_head, c_d3)
    d_gate_a, d_transform = nn.multiply_backward(d_blended, c_m1)
    d_one_minus_gate, d_proj_resid = nn.multiply_backward(d_blended, c_m2)
    d_gate = d_gate_a - d_one_minus_gate
    d_pre_gate = nn.sigmoid_backward(d_gate, c_sig)
    d_proj_gate, grads["W_gate"], grads["b_gate"] = nn.dense_backward(d_pre_gate, c_dg)
    d_expanded, grads["W2"], grads["b2"] = nn.dense_backward(d_transform, c_d2)
    d_pre_e = nn.relu_backward(d_expanded, c_relu_e)
    d_proj_t, grads["W1"], grads["b1"] = nn.dense_backward(d_pre_e, c_d1)
    d_proj = d_proj_resid + d_proj_gate + d_proj_t
    d_pre_proj = nn.relu_backward(d_proj, c_relu_proj)
    _, grads["W_proj"], grads["b_proj"] = nn.dense_backward(d_pre_proj, c_proj)
    return grads


def forward(model: UncertaintyModel, features: np.ndarray, training=False, rng=None) -> float:
    """Score one 16-d feature vector; deterministic when training is False."""
    feats = model.normalize(np.asarray(features, dtype=np.float64).reshape(1, N_FEATURES))
    logits, _ = forward_batch(
        model.params, feats, dropout=model.config.dropout, training=training, rng=rng
    )
    return float(logits[0])


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_f1: float


def train_uncertainty(
    train_windows: list[Window],
    val_windows: list[Window],
    config: UncertaintyConfig,
    seed: int,
) -> tuple[UncertaintyModel, list[EpochLog]]:
    """Fit the scorer on uncertainty labels; keeps the best-validation-F1 epoch.

    Returns (model, per-epoch log). With zero epochs the freshly initialized
    model is returned unchanged.
    """
    if not train_windows:
        raise ConfigError("empty training set")
    for w in train_windows + val_windows:
        if w.uncertainty_label is None:
            raise ContractError(f"window {w.window_id} lacks an uncertainty label")
    rng = Rng(seed)
    init_rng = rng.spawn("init")
    batch_rng = rng.spawn("batches")
    drop_rng = rng.spawn("dropout")
    model = init_uncertainty_model(config, init_rng)
    raw_train = feature_matrix(train_windows)
    model.feat_mean = raw_train.mean(axis=0)
    std = raw_train.std(axis=0)
    model.feat_std = np.where(std == 0.0, 1.0, std)
    x_train = model.normalize(raw_train)
    y_train = np.array([w.uncertainty_label for w in train_windows], dtype=np.float64)
    x_val = model.normalize(feature_matrix(val_windows)) if val_windows else np.zeros((0, N_FEATURES))
    y_val = np.array([w.uncertainty_label for w in val_windows], dtype=np.float64)
    opt = config.optim
    state = nncore.init_adamw_state(model.params)
    best_params = nncore.copy_params(model.params)
    best_f1 = -1.0
    history: list[EpochLog] = []
    with nncore.single_thread_blas():
        for epoch in range(opt.epochs):
            losses = []
            for idx in nncore.minibatch_indices(len(x_train), opt.batch_size, batch_rng):
                logits, cache = forward_batch(
                    model.params, x_train[idx], config.dropout, training=True, rng=drop_rng
                )
                loss, dlogits = nncore.bce_with_logits(logits, y_train[idx])
                if not np.isfinite(loss):
                    raise TrainingError(f"non-finite training loss at epoch {epoch}")
                grads = backward_batch(dlogits, cache)
                if opt.grad_clip_norm is not None:
                    nncore.clip_grad_norm(grads, opt.grad_clip_norm)
                nncore.adamw_step(model.params, grads, state, opt)
                losses.append(loss)
            val_f1 = _validation_f1(model, x_val, y_val)
            history.append(EpochLog(epoch, float(np.mean(losses)), val_f1))
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_params = nncore.copy_params(model.params)
    best = UncertaintyModel(
        config=config, params=best_params,
        feat_mean=model.feat_mean.copy(), feat_std=model.feat_std.copy(),
    )
    return best, history


def _validation_f1(model, x_val, y_val) -> float:
    if len(x_val) == 0:
        return 0.0
    logits, _ = forward_batch(model.params, x_val)
    preds = (nncore.sigmoid(logits) >= 0.5).astype(int)
    _, _, f1 = prf1_from_predictions(preds, y_val.astype(int))
    return f1


def score_all(model: UncertaintyModel, windows: list[Window]) -> np.ndarray:
    """Uncertainty logit per window, order-preserving, dropout off."""
    if not windows:
        return np.zeros(0)
    feats = model.normalize(feature_matrix(windows))
    with nncore.single_thread_blas():
        logits, _ = forward_batch(model.params, feats)
    return logits


def save(model: UncertaintyModel, path):
    meta = {
        "proj_dim": model.config.proj_dim,
        "expand_dim": model.config.expand_dim,
        "head_dim": model.config.head_dim,
        "dropout": float(model.config.dropout),
    }
    params = dict(model.params)
    params["feat_mean"] = model.feat_mean
    params["feat_std"] = model.feat_std
    return nncore.save_model(path, MODEL_KIND, params, meta)


def load(path) -> UncertaintyModel:
    kind, params, meta = nncore.load_model(path)
    if kind != MODEL_KIND:
        raise ContractError(f"expected model kind {MODEL_KIND}, got {kind}")
    feat_mean = params.pop("feat_mean")
    feat_std = params.pop("feat_std")
    config = UncertaintyConfig(
        proj_dim=int(meta["proj_dim"]),
        expand_dim=int(meta["expand_dim"]),
        head_dim=int(meta["head_dim"]),
        dropout=float(meta["dropout"]),
    )
    return UncertaintyModel(config=config, params=params, feat_mean=feat_mean, feat_std=feat_std)
