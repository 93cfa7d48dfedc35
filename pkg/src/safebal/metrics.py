"""Evaluation metrics and statistical tests.

The positive class is "unsafe" (label 1) throughout. Precision/recall/F1
treat 0/0 as 0. Point-biserial correlation is the Pearson correlation of a
continuous score against a binary label, with a two-sided t-test p-value.
The Mann-Whitney U test uses the tie-corrected normal approximation with
continuity correction; the Vargha-Delaney A12 effect size accompanies it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import stdtr

from .errors import ContractError

COMPARISON_HEADER = [
    "method", "precision_mean", "precision_std", "recall_mean", "recall_std",
    "f1_mean", "f1_std", "p_value", "a12", "effect_label", "params", "latency_s",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ContractError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class StatTestResult:
    statistic: float
    p_value: float
    a12: float


def confusion(predictions, labels) -> ConfusionCounts:
    """Hard 0/1 predictions against 0/1 labels; unsafe (1) is positive."""
    predictions = np.asarray(predictions, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if predictions.shape != labels.shape:
        raise ContractError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    return ConfusionCounts(
        tp=int(np.sum((predictions == 1) & (labels == 1))),
        tn=int(np.sum((predictions == 0) & (labels == 0))),
        fp=int(np.sum((predictions == 1) & (labels == 0))),
        fn=int(np.sum((predictions == 0) & (labels == 1))),
    )


def prf1(counts: ConfusionCounts) -> tuple[float, float, float]:
    """Precision, recall, F1; any 0/0 yields 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def prf1_from_predictions(predictions, labels) -> tuple[float, float, float]:
    return prf1(confusion(predictions, labels))


def point_biserial(scores, labels) -> tuple[float, float]:
    """Pearson correlation of scores against 0/1 labels plus two-sided p.

    The p-value comes from the t distribution with n-2 degrees of freedom.
    Requires n >= 3, both classes present, and non-constant scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels must have equal length")
    n = len(scores)
    if n < 3:
        raise ContractError(f"need at least 3 observations, got {n}")
    if len(np.unique(labels)) < 2:
        raise ContractError("correlation undefined: labels are single-class")
    sc = scores - scores.mean()
    lc = labels - labels.mean()
    s_var = float(np.dot(sc, sc))
    l_var = float(np.dot(lc, lc))
    if s_var == 0.0:
        raise ContractError("correlation undefined: scores have zero variance")
    r = float(np.dot(sc, lc) / math.sqrt(s_var * l_var))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(stdtr(n - 2, -abs(t)))
    return r, min(max(p, 0.0), 1.0)


def _rank_with_ties(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fractional ranks (ties get the mean rank) and tie-group sizes."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    tie_sizes = []
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        tie_sizes.append(j - i + 1)
        i = j + 1
    return ranks, np.asarray(tie_sizes, dtype=np.float64)


def a12_effect_size(a, b) -> float:
    """Probability that a random draw from ``a`` exceeds one from ``b``
    (ties count half)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("a12 needs non-empty samples")
    ranks, _ = _rank_with_ties(np.concatenate([a, b]))
    r1 = ranks[: len(a)].sum()
    u1 = r1 - len(a) * (len(a) + 1) / 2.0
    return float(u1 / (len(a) * len(b)))


EXACT_MAX_N = 8


@lru_cache(maxsize=None)
def _u_count(n: int, m: int, u: int) -> int:
    """Number of tie-free rank arrangements of (n, m) with U statistic u."""
    if u < 0:
        return 0
    if n == 0 or m == 0:
        return 1 if u == 0 else 0
    # the largest remaining value sits in the first sample (beating all m
    # remaining others) or in the second sample
    return _u_count(n - 1, m, u - m) + _u_count(n, m - 1, u)


def _exact_two_sided_p(n: int, m: int, u: float) -> float:
    total = math.comb(n + m, n)
    lower = sum(_u_count(n, m, k) for k in range(0, int(math.floor(u)) + 1))
    upper = sum(_u_count(n, m, k) for k in range(int(math.ceil(u)), n * m + 1))
    return min(1.0, 2.0 * min(lower, upper) / total)


def mann_whitney_u(a, b) -> StatTestResult:
    """Two-sided Mann-Whitney U test with the Vargha-Delaney A12 effect size.

    Tie-free samples with both sizes <= EXACT_MAX_N get the exact null
    distribution; everything else uses the tie-corrected normal approximation
    with continuity correction (the approximation alone is off by up to ~0.13
    at these tiny sizes). With all values tied the p-value is 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("mann_whitney_u needs non-empty samples")
    n1, n2 = len(a), len(b)
    ranks, tie_sizes = _rank_with_ties(np.concatenate([a, b]))
    r1 = float(ranks[:n1].sum())
    u1 = r1 - n1 * (n1 + 1) / 2.0  # pairs where a > b, ties counting half
    a12 = u1 / (n1 * n2)
    has_ties = bool(np.any(tie_sizes > 1))
    if not has_ties and n1 <= EXACT_MAX_N and n2 <= EXACT_MAX_N:
        p = _exact_two_sided_p(n1, n2, u1)
        return StatTestResult(statistic=u1, p_value=p, a12=a12)
    n = n1 + n2
    tie_term = float(np.sum(tie_sizes**3 - tie_sizes))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return StatTestResult(statistic=u1, p_value=1.0, a12=a12)
    u_big = max(u1, n1 * n2 - u1)
    z = (u_big - n1 * n2 / 2.0 - 0.5) / math.sqrt(var)
    p = float(math.erfc(z / math.sqrt(2.0)))  # 2 * normal_sf(z)
    return StatTestResult(statistic=u1, p_value=min(max(p, 0.0), 1.0), a12=a12)


def effect_label(a12: float) -> str:
    """Magnitude label of an A12 value: Negligible/Small/Medium/Large."""
    folded = abs(a12 - 0.5) + 0.5
    if folded < 0.56:
        return "N"
    if folded < 0.64:
        return "S"
    if folded < 0.71:
        return "M"
    return "L"


def evaluate_run(predictions, labels):
    """Confusion counts plus precision/recall/F1 for one run."""
    counts = confusion(predictions, labels)
    precision, recall, f1 = prf1(counts)
    return counts, precision, recall, f1


@dataclass(frozen=True)
class RunMetrics:
    precision: float
    recall: float
    f1: float


@dataclass
class MethodSummary:
    method: str
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float
    f1_mean: float
    f1_std: float
    p_value: float | None
    a12: float | None
    effect: str
    params: int | None = None
    latency_s: float | None = None


def aggregate_runs(
    per_method: dict[str, list[RunMetrics]],
    params: dict[str, int] | None = None,
    latency: dict[str, float] | None = None,
) -> list[MethodSummary]:
    """Summarize multi-run results; the first method is the reference.

    Each other method gets a Mann-Whitney p-value on F1 against the reference
    and A12(reference, method). Requires at least 2 runs per method.
    """
    if not per_method:
        raise ContractError("no methods to aggregate")
    for method, runs in per_method.items():
        if len(runs) < 2:
            raise ContractError(f"method {method!r} has {len(runs)} run(s); need >= 2")
    methods = list(per_method)
    ref_f1 = [m.f1 for m in per_method[methods[0]]]
    rows = []
    for rank, method in enumerate(methods):
        runs = per_method[method]
        arr = {
            "p": np.array([m.precision for m in runs]),
            "r": np.array([m.recall for m in runs]),
            "f": np.array([m.f1 for m in runs]),
        }
        if rank == 0:
            p_value, a12, label = None, None, ""
        else:
            res = mann_whitney_u(ref_f1, [m.f1 for m in runs])
            p_value, a12, label = res.p_value, res.a12, effect_label(res.a12)
        rows.append(
            MethodSummary(
                method=method,
                precision_mean=float(arr["p"].mean()), precision_std=float(arr["p"].std()),
                recall_mean=float(arr["r"].mean()), recall_std=float(arr["r"].std()),
                f1_mean=float(arr["f"].mean()), f1_std=float(arr["f"].std()),
                p_value=p_value, a12=a12, effect=label,
                params=(params or {}).get(method),
                latency_s=(latency or {}).get(method),
            )
        )
    return rows


def write_comparison_csv(path, rows: list[MethodSummary]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_HEADER)
        for row in rows:
            writer.writerow([
                row.method,
                repr(row.precision_mean), repr(row.precision_std),
                repr(row.recall_mean), repr(row.recall_std),
                repr(row.f1_mean), repr(row.f1_std),
                "" if row.p_value is None else repr(row.p_value),
                "" if row.a12 is None else repr(row.a12),
                row.effect,
                "" if row.params is None else row.params,
                "" if row.latency_s is None else repr(row.latency_s),
            ])
    return path
