"""Fused single-direction LSTM kernels (forward + exact backward).

Standard cell with sigmoid input/forget/output gates and tanh candidate/cell
activations. Parameters are stacked gate-major so every nonlinearity runs on
contiguous memory:

    Wih (4, D, H)   input projections per gate, gate order (i, f, o, g)
    Whh (4, H, H)   recurrent projections
    bih, bhh (4, H) biases (both kept, matching the common dual-bias layout)

Inputs are time-major (T, B, D). The input projection for all timesteps is
hoisted into one matmul per gate; only the recurrent matmul and the gate
pointwise math stay inside the time loop. ``reverse=True`` runs the same cell
over the sequence backwards (for the backward direction of a BiLSTM) and
returns hidden states re-aligned to original time order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError

GATE_I, GATE_F, GATE_O, GATE_G = 0, 1, 2, 3


@dataclass
class LstmDirCache:
    X: np.ndarray        # (T, B, D) layer input
    gates: np.ndarray    # (4, T, B, H) activated gate values, indexed by original t
    cs: np.ndarray       # (T+1, B, H) cell states in processing order (cs[0] = 0)
    hs: np.ndarray       # (T+1, B, H) hidden states in processing order (hs[0] = 0)
    hc: np.ndarray       # (T, B, H) tanh(cell), indexed by original t
    reverse: bool


def _sigmoid_(x):
    """In-place sigmoid via tanh (contiguous-friendly)."""
    x *= 0.5
    np.tanh(x, out=x)
    x += 1.0
    x *= 0.5


def lstm_dir_forward(X, Wih, Whh, bih, bhh, reverse=False):
    """Run one direction over the sequence.

    Returns (h_seq, h_final, cache) where h_seq (T, B, H) is aligned to
    original time order and h_final (B, H) is the hidden state after the
    direction's last processing step.
    """
    T, B, D = X.shape
    H = Whh.shape[-1]
    if Wih.shape != (4, D, H) or Whh.shape != (4, H, H):
        raise ContractError(f"lstm: weight shapes {Wih.shape}/{Whh.shape} do not match input D={D}, H={H}")
    bias = bih + bhh  # (4, H)
    X2 = X.reshape(T * B, D)
    G = np.empty((4, T, B, H))
    for gi in range(4):
        np.matmul(X2, Wih[gi], out=G[gi].reshape(T * B, H))
        G[gi] += bias[gi]
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    hc = np.empty((T, B, H))
    sc = np.empty((4, B, H))
    tmp = np.empty((B, H))
    order = range(T - 1, -1, -1) if reverse else range(T)
    prev_h = hs[0]
    prev_c = cs[0]
    for k, t in enumerate(order):
        np.matmul(prev_h, Whh, out=sc)
        for gi in range(4):
            G[gi, t] += sc[gi]
        i, f, o, g = G[GATE_I, t], G[GATE_F, t], G[GATE_O, t], G[GATE_G, t]
        _sigmoid_(i)
        _sigmoid_(f)
        _sigmoid_(o)
        np.tanh(g, out=g)
        c = cs[k + 1]
        np.multiply(f, prev_c, out=c)
        np.multiply(i, g, out=tmp)
        c += tmp
        hct = hc[t]
        np.tanh(c, out=hct)
        h = hs[k + 1]
        np.multiply(o, hct, out=h)
        prev_h = h
        prev_c = c
    h_seq = hs[1:][::-1] if reverse else hs[1:]
    h_final = hs[T]
    cache = LstmDirCache(X=X, gates=G, cs=cs, hs=hs, hc=hc, reverse=reverse)
    return h_seq, h_final, cache


def lstm_dir_backward(dH_seq, dh_final, cache, Wih, Whh, want_dx=True):
    """Backpropagate through one direction.

    dH_seq (T, B, H) is the upstream gradient on h_seq in original time order
    (may be None); dh_final (B, H) is the gradient on h_final (may be None).
    Returns (dX, dWih, dWhh, dbih, dbhh); dX is None if want_dx is False.
    """
    X, G, cs, hs, hc = cache.X, cache.gates, cache.cs, cache.hs, cache.hc
    reverse = cache.reverse
    T, B, D = X.shape
    H = Whh.shape[-1]
    dG = np.empty((4, T, B, H))
    dh = np.zeros((B, H))
    if dh_final is not None:
        dh += dh_final
    dc = np.zeros((B, H))
    tmp = np.empty((B, H))
    dsc = np.empty((4, B, H))
    WhhT = np.ascontiguousarray(Whh.transpose(0, 2, 1))
    order = list(range(T - 1, -1, -1)) if reverse else list(range(T))
    for k in range(T - 1, -1, -1):
        t = order[k]
        if dH_seq is not None:
            dh += dH_seq[t]
        i, f, o, g = G[GATE_I, t], G[GATE_F, t], G[GATE_O, t], G[GATE_G, t]
        hct = hc[t]
        dai, daf, dao, dag = dG[GATE_I, t], dG[GATE_F, t], dG[GATE_O, t], dG[GATE_G, t]
        # output gate: dao = dh * hc * o * (1 - o)
        np.multiply(dh, hct, out=dao)
        dao *= o
        np.subtract(1.0, o, out=tmp)
        dao *= tmp
        # cell: dc += dh * o * (1 - hc^2)
        np.multiply(hct, hct, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        tmp *= o
        tmp *= dh
        dc += tmp
        # input gate: dai = dc * g * i * (1 - i)
        np.multiply(dc, g, out=dai)
        dai *= i
        np.subtract(1.0, i, out=tmp)
        dai *= tmp
        # candidate: dag = dc * i * (1 - g^2)
        np.multiply(dc, i, out=dag)
        np.multiply(g, g, out=tmp)
        np.subtract(1.0, tmp, out=tmp)
        dag *= tmp
        # forget gate: daf = dc * c_prev * f * (1 - f)
        np.multiply(dc, cs[k], out=daf)
        daf *= f
        np.subtract(1.0, f, out=tmp)
        daf *= tmp
        # carry to previous step
        dc *= f
        np.matmul(dG[:, t], WhhT, out=dsc)
        np.sum(dsc, axis=0, out=dh)
    dG2 = dG.reshape(4, T * B, H)
    X2T = X.reshape(T * B, D).T
    dWih = np.matmul(X2T, dG2)
    db = dG.sum(axis=(1, 2))
    h_prev = hs[:T][::-1] if reverse else hs[:T]
    dWhh = np.matmul(h_prev.reshape(T * B, H).T, dG2)
    dX = None
    if want_dx:
        WihT = Wih.transpose(0, 2, 1)
        dX = np.matmul(dG2[GATE_I], WihT[GATE_I])
        for gi in (GATE_F, GATE_O, GATE_G):
            dX += dG2[gi] @ WihT[gi]
        dX = dX.reshape(T, B, D)
    return dX, dWih, dWhh, db, db.copy()
