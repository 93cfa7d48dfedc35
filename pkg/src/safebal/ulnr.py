"""Uncertainty-guided label rebalancing.

Safe-labeled training windows whose uncertainty score is unusually high
relative to the safe population are stochastically relabeled as unsafe:

1. z-score every window's score against the mean/std of the *safe* windows;
2. map z to a flip probability with a shifted tanh, zero at or below the
   flip threshold tau (unsafe windows always get probability 0);
3. draw one uniform sample per safe window, in dataset order, and flip
   where the draw lands under the probability.

Relabeling never touches unsafe windows, so the minority class only grows.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .nncore import Rng
from .telemetry import Window

REPORT_HEADER = ["window_id", "orig_label", "z", "p_flip", "flipped", "new_label"]
DEFAULT_TAU = 3.0
DEFAULT_EPSILON = 1e-8
SWEEP_TAUS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5)


@dataclass(frozen=True)
class SafeSetStats:
    """Mean and population std of uncertainty scores over safe windows."""

    mu: float
    sigma: float
    epsilon: float = DEFAULT_EPSILON


@dataclass(frozen=True)
class FlipRecord:
    window_id: str
    orig_label: int
    z: float
    p_flip: float
    flipped: bool
    new_label: int


@dataclass
class RebalanceReport:
    records: list[FlipRecord]
    labels_flipped: int
    flip_ratio: float
    final_minority_ratio: float
    tau: float
    seed: int

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_HEADER)
            for rec in self.records:
                writer.writerow([
                    rec.window_id, rec.orig_label, repr(rec.z), repr(rec.p_flip),
                    int(rec.flipped), rec.new_label,
                ])
        return path

    def write_summary(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "labels_flipped": self.labels_flipped,
            "flip_ratio": self.flip_ratio,
            "final_minority_ratio": self.final_minority_ratio,
            "tau": self.tau,
            "seed": self.seed,
            "total_windows": len(self.records),
        }
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        return path


def zscore(scores: np.ndarray, safety_labels: np.ndarray, epsilon: float = DEFAULT_EPSILON):
    """z-score all windows against safe-window score statistics.

    Returns (SafeSetStats, z) where z covers every window (unsafe ones too;
    their flip probability is forced to zero later). Errors if no window is
    safe-labeled.
    """
    scores = np.asarray(scores, dtype=np.float64)
    safety_labels = np.asarray(safety_labels, dtype=int)
    if scores.shape != safety_labels.shape:
        raise ContractError("scores and labels must align")
    safe_scores = scores[safety_labels == 0]
    if len(safe_scores) == 0:
        raise ConfigError("no safe-labeled windows: cannot compute safe-set statistics")
    mu = float(safe_scores.mean())
    sigma = float(safe_scores.std())
    stats = SafeSetStats(mu=mu, sigma=sigma, epsilon=epsilon)
    z = (scores - mu) / (sigma + epsilon)
    return stats, z


def flip_probability(z, label, tau: float):
    """max(tanh(z - tau), 0) for safe windows; exactly 0 for unsafe ones."""
    if not math.isfinite(tau):
        raise ContractError("tau must be finite")
    z = np.asarray(z, dtype=np.float64)
    label = np.asarray(label, dtype=int)
    p = np.maximum(np.tanh(z - tau), 0.0)
    return np.where(label == 1, 0.0, p)


def relabel(
    windows: list[Window],
    scores: np.ndarray,
    tau: float = DEFAULT_TAU,
    rng: Rng | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> tuple[list[Window], RebalanceReport]:
    """One rebalancing pass; returns new windows plus a full report.

    The input windows are not mutated. One uniform draw is consumed per safe
    window in dataset order, so a seed pins the flip set exactly.
    """
    if rng is None:
        rng = Rng(0)
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(windows):
        raise ContractError(f"{len(scores)} scores for {len(windows)} windows")
    labels = np.array([w.safety_label for w in windows], dtype=int)
    _, z = zscore(scores, labels, epsilon)
    p_flip = flip_probability(z, labels, tau)
    records = []
    out = []
    flipped_count = 0
    for i, w in enumerate(windows):
        flipped = False
        new_label = int(labels[i])
        if labels[i] == 0:
            draw = float(rng.uniform())
            if draw < p_flip[i]:
                flipped = True
                new_label = 1
                flipped_count += 1
        out.append(replace(w, safety_label=new_label) if flipped else w)
        records.append(FlipRecord(
            window_id=w.window_id, orig_label=int(labels[i]), z=float(z[i]),
            p_flip=float(p_flip[i]), flipped=flipped, new_label=new_label,
        ))
    total = len(windows)
    unsafe_after = int(labels.sum()) + flipped_count
    report = RebalanceReport(
        records=records,
        labels_flipped=flipped_count,
        flip_ratio=flipped_count / total if total else 0.0,
        final_minority_ratio=unsafe_after / total if total else 0.0,
        tau=tau,
        seed=rng.seed,
    )
    return out, report


SWEEP_HEADER = ["tau", "seed", "labels_flipped", "flip_ratio", "final_ratio"]


def sweep_tau(
    windows: list[Window],
    scores: np.ndarray,
    taus=SWEEP_TAUS,
    seeds=(0,),
    epsilon: float = DEFAULT_EPSILON,
) -> list[dict]:
    """One relabel pass per (tau, seed) plus a mean row per tau.

    Rows are dicts matching SWEEP_HEADER; mean rows carry seed='mean'.
    """
    if not taus:
        raise ConfigError("tau list must be non-empty")
    rows = []
    for tau in taus:
        flips = []
        for seed in seeds:
            _, report = relabel(windows, scores, tau, Rng(seed), epsilon)
            rows.append({
                "tau": tau, "seed": seed,
                "labels_flipped": report.labels_flipped,
                "flip_ratio": report.flip_ratio,
                "final_ratio": report.final_minority_ratio,
            })
            flips.append(report.labels_flipped)
        n = len(windows)
        unsafe = sum(1 for w in windows if w.safety_label == 1)
        mean_flipped = float(np.mean(flips))
        rows.append({
            "tau": tau, "seed": "mean",
            "labels_flipped": mean_flipped,
            "flip_ratio": mean_flipped / n if n else 0.0,
            "final_ratio": (unsafe + mean_flipped) / n if n else 0.0,
        })
    return rows


def write_sweep_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow([
                row["tau"], row["seed"], row["labels_flipped"],
                repr(float(row["flip_ratio"])), repr(float(row["final_ratio"])),
            ])
    return path
