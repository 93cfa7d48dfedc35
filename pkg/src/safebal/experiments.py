"""Multi-seed, multi-method experiment orchestration.

Each (method, seed) run is fully self-contained: stage seeds are derived
from the run seed by name, so results are identical whether runs execute
sequentially or fanned out across worker processes.

Methods:
  ulnr   uncertainty scorer -> relabel training split -> safety predictor
  plain  safety predictor on the original labels
  cw     class-weighted training on the original labels
  rus    random undersampling of the majority class
  early  uncertainty score as an extra input channel (no relabeling)
  late   uncertainty score appended to the latent vector (no relabeling)
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass

import numpy as np

from . import baselines, safety, ulnr, uncertainty
from .config import RunConfig
from .errors import ConfigError
from .metrics import RunMetrics, prf1_from_predictions
from .nncore import Rng, derive_seed
from .telemetry import DatasetSplit

METHODS = ("ulnr", "plain", "cw", "rus", "early", "late")
_SCORE_METHODS = ("ulnr", "early", "late")


@dataclass
class RunResult:
    method: str
    seed: int
    metrics: RunMetrics
    params: int
    latency_s: float | None
    tau: float | None = None
    labels_flipped: int | None = None


def _stage_seed(seed: int, stage: str) -> int:
    return derive_seed(seed, stage)


def _train_scorer(split: DatasetSplit, config: RunConfig, seed: int):
    model, _ = uncertainty.train_uncertainty(
        split.train, split.validation,
        config.uncertainty.to_model_config(), _stage_seed(seed, "uncertainty"),
    )
    return model


def run_method(
    split: DatasetSplit,
    method: str,
    seed: int,
    config: RunConfig,
    tau: float | None = None,
    measure_latency: bool = True,
) -> RunResult:
    """Train and evaluate one method at one seed on the given split."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    tau = config.ulnr.tau if tau is None else tau
    scores_train = scores_val = scores_test = None
    labels_flipped = None
    train_windows = split.train
    fusion = "plain"
    class_weighting = False
    if method in _SCORE_METHODS:
        scorer = _train_scorer(split, config, seed)
        scores_train = uncertainty.score_all(scorer, split.train)
        scores_val = uncertainty.score_all(scorer, split.validation)
        scores_test = uncertainty.score_all(scorer, split.test)
    if method == "ulnr":
        train_windows, report = ulnr.relabel(
            split.train, scores_train, tau,
            Rng(_stage_seed(seed, "relabel")), config.ulnr.epsilon,
        )
        labels_flipped = report.labels_flipped
        scores_train = scores_val = scores_test = None  # rebalance only, no fusion
    elif method == "cw":
        class_weighting = True
    elif method == "rus":
        train_windows = baselines.random_undersample(
            split.train, config.run.rus_ratio, Rng(_stage_seed(seed, "rus"))
        )
    elif method in ("early", "late"):
        fusion = method
    model, _ = safety.train_safety(
        train_windows, split.validation,
        config.safety.to_model_config(fusion), _stage_seed(seed, "safety"),
        scores_train=scores_train if fusion != "plain" else None,
        scores_val=scores_val if fusion != "plain" else None,
        class_weighting=class_weighting,
    )
    probs, latency = safety.predict_all(
        model, split.test,
        scores=scores_test if fusion != "plain" else None,
        measure_latency=measure_latency,
    )
    y_test = np.array([w.safety_label for w in split.test], dtype=int)
    precision, recall, f1 = prf1_from_predictions((probs >= 0.5).astype(int), y_test)
    return RunResult(
        method=method, seed=seed,
        metrics=RunMetrics(precision=precision, recall=recall, f1=f1),
        params=model.param_count, latency_s=latency,
        tau=tau if method == "ulnr" else None,
        labels_flipped=labels_flipped,
    )


def tune_tau(split: DatasetSplit, config: RunConfig, seed: int) -> float:
    """Pick the flip threshold from the grid by validation F1 (one pass).

    The scorer and the candidate safety models are trained at the given
    seed; ties keep the earliest grid entry.
    """
    grid = config.ulnr.tau_grid
    if not grid:
        return config.ulnr.tau
    scorer = _train_scorer(split, config, seed)
    scores_train = uncertainty.score_all(scorer, split.train)
    y_val = np.array([w.safety_label for w in split.validation], dtype=int)
    best_tau, best_f1 = grid[0], -1.0
    for tau in grid:
        rebalanced, _ = ulnr.relabel(
            split.train, scores_train, tau,
            Rng(_stage_seed(seed, "relabel")), config.ulnr.epsilon,
        )
        model, _ = safety.train_safety(
            rebalanced, split.validation,
            config.safety.to_model_config("plain"), _stage_seed(seed, "safety"),
        )
        probs, _ = safety.predict_all(model, split.validation)
        f1 = prf1_from_predictions((probs >= 0.5).astype(int), y_val)[2]
        if f1 > best_f1:
            best_tau, best_f1 = tau, f1
    return best_tau


_POOL_STATE: dict = {}


def _pool_init(split, config):
    _POOL_STATE["split"] = split
    _POOL_STATE["config"] = config


def _pool_run(job):
    method, seed, tau = job
    return run_method(_POOL_STATE["split"], method, seed, _POOL_STATE["config"], tau=tau)


def evaluate_methods(
    split: DatasetSplit,
    methods: list[str],
    seeds: list[int],
    config: RunConfig,
    tau: float | None = None,
    workers: int = 1,
) -> list[RunResult]:
    """All (method, seed) runs, optionally fanned out over processes.

    Results are returned in deterministic (method, seed) order and do not
    depend on the worker count.
    """
    jobs = [(method, seed, tau) for method in methods for seed in seeds]
    if workers <= 1 or len(jobs) <= 1:
        results = [_pool_run_local(split, config, job) for job in jobs]
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_pool_init, initargs=(split, config)) as pool:
            results = pool.map(_pool_run, jobs)
    return results


def _pool_run_local(split, config, job):
    method, seed, tau = job
    return run_method(split, method, seed, config, tau=tau)


def collect_metrics(results: list[RunResult]):
    """Group run results per method, preserving first-seen method order."""
    per_method: dict[str, list[RunMetrics]] = {}
    params: dict[str, int] = {}
    latency: dict[str, list[float]] = {}
    for res in results:
        per_method.setdefault(res.method, []).append(res.metrics)
        params.setdefault(res.method, res.params)
        if res.latency_s is not None:
            latency.setdefault(res.method, []).append(res.latency_s)
    latency_mean = {m: float(np.mean(v)) for m, v in latency.items()}
    return per_method, params, latency_mean
