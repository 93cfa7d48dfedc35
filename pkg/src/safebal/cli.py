"""Command-line entry point.

Subcommands: gen, train-uncertainty, score, relabel, train-safety, evaluate,
pipeline, sweep-tau, gradcheck. Every subcommand writes its artifacts plus a
line-oriented manifest recording the config hash, seed, and library versions.
Exit codes: 0 success, 2 config error, 3 missing input, 4 training/gradcheck
failure, 5 parse error, 6 contract violation, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import __version__, baselines, experiments, metrics, safety, synthgen, ulnr, uncertainty
from .config import RunConfig, load_config
from .errors import ConfigError, ContractError, ParseError, SafebalError, TrainingError
from .nncore import Rng, bce_with_logits, check_gradients, derive_seed
from .telemetry import Window, load_windows, save_windows

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_TRAINING = 4
EXIT_PARSE = 5
EXIT_CONTRACT = 6


def _write_manifest(out_dir: Path, config: RunConfig, seed: int, entries: dict):
    lines = [
        f"tool = safebal {__version__}",
        f"numpy = {np.__version__}",
        f"config_hash = {config.hash()}",
        f"seed = {seed}",
    ]
    lines += [f"{k} = {v}" for k, v in entries.items()]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty; use --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_f1"])
        for entry in history:
            writer.writerow([entry.epoch, repr(entry.train_loss), repr(entry.val_f1)])


def _load_split(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {data_dir}")
    return synthgen.load_benchmark(data_dir)


SCORES_HEADER = ["window_id", "split", "score"]


def _write_scores(path, split, scorer):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORES_HEADER)
        for name, part in (("train", split.train), ("validation", split.validation), ("test", split.test)):
            scores = uncertainty.score_all(scorer, part)
            for w, s in zip(part, scores):
                writer.writerow([w.window_id, name, repr(float(s))])


def _read_scores(path, windows: list[Window], split_name: str) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scores file not found: {path}")
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SCORES_HEADER:
            raise ParseError(path, 1, "bad scores header")
        for row in reader:
            if row and (split_name == "all" or row[1] == split_name):
                table[row[0]] = float(row[2])
    try:
        return np.array([table[w.window_id] for w in windows])
    except KeyError as err:
        raise ContractError(f"scores file {path} is missing window {err}") from None


# ----------------------------------------------------------------- commands

def cmd_gen(args, config: RunConfig) -> int:
    if args.seed is not None:
        config.gen.seed = args.seed
    out = Path(args.out)
    paths, report = synthgen.make_benchmark(config.gen, out, force=args.force)
    _write_manifest(out, config, config.gen.seed, {"command": "gen"})
    print(f"dataset written to {paths.root}")
    for line in report.lines():
        print(" ", line)
    return EXIT_OK


def cmd_train_uncertainty(args, config: RunConfig) -> int:
    split = _load_split(args.data)
    out = _prepare_out(args.out, args.force)
    seed = derive_seed(config.run.seed, "uncertainty")
    model, history = uncertainty.train_uncertainty(
        split.train, split.validation, config.uncertainty.to_model_config(), seed
    )
    uncertainty.save(model, out / "uncertainty.model")
    _write_history(out / "uncertainty_log.csv", history)
    _write_manifest(out, config, config.run.seed, {
        "command": "train-uncertainty",
        "stage_seed": seed,
        "param_count": model.param_count,
        "best_val_f1": repr(max((h.val_f1 for h in history), default=0.0)),
    })
    print(f"uncertainty model saved to {out / 'uncertainty.model'} ({model.param_count} params)")
    return EXIT_OK


def cmd_score(args, config: RunConfig) -> int:
    split = _load_split(args.data)
    out = _prepare_out(args.out, args.force)
    model = uncertainty.load(args.model)
    _write_scores(out / "scores.csv", split, model)
    _write_manifest(out, config, config.run.seed, {"command": "score", "model": args.model})
    print(f"scores written to {out / 'scores.csv'}")
    return EXIT_OK


def cmd_relabel(args, config: RunConfig) -> int:
    split = _load_split(args.data)
    out = _prepare_out(args.out, args.force)
    tau = config.ulnr.tau if args.tau is None else args.tau
    scores = _read_scores(args.scores, split.train, "train")
    seed = derive_seed(config.run.seed, "relabel")
    rebalanced, report = ulnr.relabel(split.train, scores, tau, Rng(seed), config.ulnr.epsilon)
    save_windows(out / "rebalanced_train.csv", rebalanced)
    report.write_csv(out / "rebalance_report.csv")
    report.write_summary(out / "rebalance_summary.json")
    _write_manifest(out, config, config.run.seed, {
        "command": "relabel", "stage_seed": seed, "tau": tau,
        "labels_flipped": report.labels_flipped,
    })
    print(f"flipped {report.labels_flipped} windows at tau={tau} "
          f"(flip ratio {report.flip_ratio:.4f}, final minority {report.final_minority_ratio:.4f})")
    return EXIT_OK


def cmd_train_safety(args, config: RunConfig) -> int:
    split = _load_split(args.data)
    out = _prepare_out(args.out, args.force)
    strategy = args.strategy or config.run.strategy
    fusion = args.fusion or config.run.fusion
    seed = derive_seed(config.run.seed, "safety")
    train_windows = split.train
    class_weighting = False
    if strategy == "ulnr":
        if not args.train_windows:
            raise ConfigError("strategy 'ulnr' needs --train-windows (output of relabel)")
        train_windows = load_windows(args.train_windows)
    elif strategy == "cw":
        class_weighting = True
    elif strategy == "rus":
        train_windows = baselines.random_undersample(
            split.train, config.run.rus_ratio, Rng(derive_seed(config.run.seed, "rus"))
        )
    elif strategy != "none":
        raise ConfigError(f"unknown strategy {strategy!r}")
    scores_train = scores_val = None
    if fusion in ("early", "late"):
        if not args.scores:
            raise ConfigError(f"fusion {fusion!r} needs --scores")
        scores_train = _read_scores(args.scores, train_windows, "all")
        scores_val = _read_scores(args.scores, split.validation, "validation")
    model, history = safety.train_safety(
        train_windows, split.validation, config.safety.to_model_config(fusion), seed,
        scores_train=scores_train, scores_val=scores_val, class_weighting=class_weighting,
    )
    safety.save(model, out / "safety.model")
    _write_history(out / "safety_log.csv", history)
    _write_manifest(out, config, config.run.seed, {
        "command": "train-safety", "stage_seed": seed, "strategy": strategy,
        "fusion": fusion, "param_count": model.param_count,
    })
    print(f"safety model saved to {out / 'safety.model'} ({model.param_count} params)")
    return EXIT_OK


def _write_single_metrics(path, counts, precision, recall, f1, params):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["precision", "recall", "f1", "tp", "tn", "fp", "fn", "params"])
        writer.writerow([repr(precision), repr(recall), repr(f1),
                         counts.tp, counts.tn, counts.fp, counts.fn, params])


def cmd_pipeline(args, config: RunConfig) -> int:
    split = _load_split(args.data)
    out = _prepare_out(args.out, args.force)
    strategy = args.strategy or config.run.strategy
    fusion = args.fusion or config.run.fusion
    tau = config.ulnr.tau if args.tau is None else args.tau
    seed = config.run.seed

    scorer, history_u = uncertainty.train_uncertainty(
        split.train, split.validation, config.uncertainty.to_model_config(),
        derive_seed(seed, "uncertainty"),
    )
    uncertainty.save(scorer, out / "uncertainty.model")
    _write_history(out / "uncertainty_log.csv", history_u)
    _write_scores(out / "scores.csv", split, scorer)

    train_windows = split.train
    class_weighting = False
    flipped = ""
    if strategy == "ulnr":
        scores_train = uncertainty.score_all(scorer, split.train)
        train_windows, report = ulnr.relabel(
            split.train, scores_train, tau, Rng(derive_seed(seed, "relabel")), config.ulnr.epsilon
        )
        save_windows(out / "rebalanced_train.csv", train_windows)
        report.write_csv(out / "rebalance_report.csv")
        report.write_summary(out / "rebalance_summary.json")
        flipped = report.labels_flipped
    elif strategy == "cw":
        class_weighting = True
    elif strategy == "rus":
        train_windows = baselines.random_undersample(
            split.train, config.run.rus_ratio, Rng(derive_seed(seed, "rus"))
        )
    elif strategy != "none":
        raise ConfigError(f"unknown strategy {strategy!r}")

    scores_train = scores_val = scores_test = None
    if fusion in ("early", "late"):
        scores_train = uncertainty.score_all(scorer, train_windows)
        scores_val = uncertainty.score_all(scorer, split.validation)
        scores_test = uncertainty.score_all(scorer, split.test)
    model, history_s = safety.train_safety(
        train_windows, split.validation, config.safety.to_model_config(fusion),
        derive_seed(seed, "safety"),
        scores_train=scores_train, scores_val=scores_val, class_weighting=class_weighting,
    )
    safety.save(model, out / "safety.model")
    _write_history(out / "safety_log.csv", history_s)

    probs, latency = safety.predict_all(model, split.test, scores=scores_test, measure_latency=True)
    y_test = np.array([w.safety_label for w in split.test], dtype=int)
    counts, precision, recall, f1 = metrics.evaluate_run((probs >= 0.5).astype(int), y_test)
    _write_single_metrics(out / "metrics.csv", counts, precision, recall, f1, model.param_count)
    # latency is wall-clock and intentionally kept out of the deterministic CSVs
    (out / "efficiency.txt").write_text(
        f"param_count = {model.param_count}\nlatency_s_per_window = {latency!r}\n",
        encoding="utf-8",
    )
    _write_manifest(out, config, seed, {
        "command": "pipeline", "strategy": strategy, "fusion": fusion,
        "tau": tau, "labels_flipped": flipped,
        "test_f1": repr(f1),
    })
    print(f"pipeline [{strategy}/{fusion}]: precision={precision:.3f} recall={recall:.3f} "
          f"f1={f1:.3f} params={model.param_count} latency={latency * 1e3:.2f} ms/window")
    return EXIT_OK


def cmd_evaluate(args, config: RunConfig) -> int:
    split = _load_split(args.data)
    out = _prepare_out(args.out, args.force)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in experiments.METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {experiments.METHODS}")
    seeds = [config.run.seed + i for i in range(args.seeds)]
    if args.seeds < 2:
        raise ConfigError("evaluate needs --seeds >= 2 for the comparison table")
    tau = args.tau
    tuned = ""
    if tau is None and "ulnr" in methods:
        if args.skip_tuning:
            tau = config.ulnr.tau
        else:
            tau = experiments.tune_tau(split, config, seeds[0])
            tuned = f"tuned from {config.ulnr.tau_grid}"
            print(f"tau tuned on validation: {tau} ({tuned})")
    results = experiments.evaluate_methods(split, methods, seeds, config, tau=tau, workers=args.workers)
    per_method, params, latency = experiments.collect_metrics(results)
    rows = metrics.aggregate_runs(per_method, params, latency)
    metrics.write_comparison_csv(out / "comparison.csv", rows)
    with open(out / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "seed", "precision", "recall", "f1", "tau", "labels_flipped"])
        for r in results:
            writer.writerow([
                r.method, r.seed, repr(r.metrics.precision), repr(r.metrics.recall),
                repr(r.metrics.f1), "" if r.tau is None else r.tau,
                "" if r.labels_flipped is None else r.labels_flipped,
            ])
    _write_manifest(out, config, config.run.seed, {
        "command": "evaluate", "methods": ",".join(methods),
        "n_seeds": args.seeds, "tau": "" if tau is None else tau, "tau_tuning": tuned,
    })
    for row in rows:
        p = "---" if row.p_value is None else f"{row.p_value:.2e}"
        a = "---" if row.a12 is None else f"{row.a12:.3f}"
        print(f"{row.method:8s} F1={row.f1_mean:.3f}+-{row.f1_std:.3f} "
              f"P={row.precision_mean:.3f} R={row.recall_mean:.3f} p={p} A12={a} {row.effect}")
    print(f"comparison table written to {out / 'comparison.csv'}")
    return EXIT_OK


def cmd_sweep_tau(args, config: RunConfig) -> int:
    split = _load_split(args.data)
    out = _prepare_out(args.out, args.force)
    scorer, _ = uncertainty.train_uncertainty(
        split.train, split.validation, config.uncertainty.to_model_config(),
        derive_seed(config.run.seed, "uncertainty"),
    )
    scores = uncertainty.score_all(scorer, split.train)
    seeds = [config.run.seed + i for i in range(args.seeds)]
    rows = ulnr.sweep_tau(split.train, scores, config.ulnr.sweep_taus, seeds, config.ulnr.epsilon)
    ulnr.write_sweep_csv(out / "tau_sweep.csv", rows)
    _write_manifest(out, config, config.run.seed, {
        "command": "sweep-tau", "taus": ",".join(str(t) for t in config.ulnr.sweep_taus),
        "n_seeds": args.seeds,
    })
    for row in rows:
        if row["seed"] == "mean":
            print(f"tau={row['tau']}: mean flipped {row['labels_flipped']:.1f} "
                  f"(flip ratio {row['flip_ratio']:.4f}, final {row['final_ratio']:.4f})")
    print(f"sweep written to {out / 'tau_sweep.csv'}")
    return EXIT_OK


def cmd_gradcheck(args, config: RunConfig) -> int:
    from .nncore import Rng as _Rng

    rng = _Rng(derive_seed(config.run.seed, "gradcheck"))
    failures = []

    ucfg = uncertainty.UncertaintyConfig(dropout=0.0)
    umodel = uncertainty.init_uncertainty_model(ucfg, _Rng(derive_seed(config.run.seed, "gc-u")))
    feats = rng.standard_normal((4, 16))
    targets = (rng.uniform(size=4) > 0.5).astype(float)

    def u_loss(params):
        logits, cache = uncertainty.forward_batch(params, feats)
        loss, dlogits = bce_with_logits(logits, targets)
        return loss, uncertainty.backward_batch(dlogits, cache)

    rep = check_gradients(u_loss, umodel.params, max_entries_per_param=40, rng=rng.generator)
    print(f"gated-mlp scorer: {rep.summary()}")
    if not rep.passed:
        failures.append("gatedmlp")

    scfg = safety.SafetyConfig(n_layers=3, hidden_dim=4, head_dim=3, dropout=0.0)
    smodel = safety.init_safety_model(scfg, _Rng(derive_seed(config.run.seed, "gc-s")))
    X = rng.standard_normal((3, 2, 4))
    y = np.array([1.0, 0.0, 1.0])

    def s_loss(params):
        smodel.params = params
        _, logits, cache = safety.forward_batch(smodel, X)
        loss, dlogits = bce_with_logits(logits, y)
        return loss, safety.backward_batch(smodel, dlogits, cache)

    rep = check_gradients(s_loss, smodel.params)
    print(f"bilstm classifier: {rep.summary()}")
    if not rep.passed:
        failures.append("bilstm")

    if failures:
        raise TrainingError(f"gradient check failed: {', '.join(failures)}")
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safebal",
        description="Safety prediction on imbalanced flight telemetry via "
                    "uncertainty-guided label rebalancing.",
    )
    parser.add_argument("--config", help="INI config file (defaults reproduce the reference setup)")
    parser.add_argument("--seed", type=int, help="override the run seed")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(fn=fn)
        return p

    p = add("gen", cmd_gen, help="generate a synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = add("train-uncertainty", cmd_train_uncertainty, help="train the uncertainty scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = add("score", cmd_score, help="score all windows with a trained scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")

    p = add("relabel", cmd_relabel, help="rebalance training labels from scores")
    p.add_argument("--data", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--force", action="store_true")

    p = add("train-safety", cmd_train_safety, help="train the safety predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=baselines.STRATEGIES)
    p.add_argument("--fusion", choices=safety.FUSION_MODES)
    p.add_argument("--train-windows", help="rebalanced training windows (for strategy ulnr)")
    p.add_argument("--scores", help="scores CSV (for fusion early/late)")
    p.add_argument("--force", action="store_true")

    p = add("pipeline", cmd_pipeline, help="run the full pipeline for one seed")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=baselines.STRATEGIES)
    p.add_argument("--fusion", choices=safety.FUSION_MODES)
    p.add_argument("--tau", type=float)
    p.add_argument("--force", action="store_true")

    p = add("evaluate", cmd_evaluate, help="multi-seed comparison across methods")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--methods", default="ulnr,plain,cw,rus")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--tau", type=float, help="fixed flip threshold (skips tuning)")
    p.add_argument("--skip-tuning", action="store_true")
    p.add_argument("--force", action="store_true")

    p = add("sweep-tau", cmd_sweep_tau, help="flip-threshold sweep table")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--force", action="store_true")

    add("gradcheck", cmd_gradcheck, help="verify analytic gradients of both models")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.run.seed = args.seed
        return args.fn(args, config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"missing input: {err}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except TrainingError as err:
        print(f"training error: {err}", file=sys.stderr)
        return EXIT_TRAINING
    except ParseError as err:
        print(f"parse error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except ContractError as err:
        print(f"contract violation: {err}", file=sys.stderr)
        return EXIT_CONTRACT
    except SafebalError as err:  # pragma: no cover - safety net
        print(f"error: {err}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
