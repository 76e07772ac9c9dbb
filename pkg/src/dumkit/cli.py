"""Command-line entry point: ``dumkit <command> [flags]``.

Exit codes: 0 ok, 2 bad configuration, 3 bad or missing data, 4 training
diverged, 5 unsupported checkpoint format. Reports go to stdout, logs and
diagnostics to stderr. Every command writes ``<out>.manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from dumkit import __version__
from dumkit.baselines import BaselineConfig, baseline_scores
from dumkit.data import (
    CorruptionSpec,
    DataError,
    EmbeddingBatch,
    SynthSpec,
    apply_minmax,
    corrupt,
    load_csv,
    minmax_stats,
    save_csv,
    split,
    synthesize,
)
from dumkit.dum import LossConfig
from dumkit.evaluation import DegenerateVarianceError, auroc, evaluate, welch_ttest
from dumkit.recipes import build_dataset, load_recipe
from dumkit.scoring import NORMS, ScoredDataset, read_scores, score, write_scores
from dumkit.trainer import (
    AugmentConfig,
    CheckpointFormatError,
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    save_checkpoint,
    train,
)

logger = logging.getLogger("dumkit")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_FORMAT = 5


class ConfigError(ValueError):
    pass


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out, command: str, config: dict, seed, inputs, artifacts, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256(p) for p in inputs},
        "artifacts": {str(p): sha256(p) for p in artifacts},
        "wall_clock_seconds": round(time.time() - started, 3),
        "version": __version__,
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_table(path, label_column: str | None = "label", missing: str | None = None) -> EmbeddingBatch:
    """Load a CSV, pulling out ``label_column`` only if the header has it."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        first = next(csv.reader(fh), [])
    names = [c.strip() for c in first]
    use = label_column if label_column and label_column in names else None
    return load_csv(path, label_column=use, missing_token=missing)


# --- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    started = time.time()
    try:
        cfg = TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            m=args.m,
            learning_rate=args.lr,
            hidden=args.hidden,
            seed=args.seed,
            loss=LossConfig(args.loss, args.tau, args.normalize_poe_means),
            augment=AugmentConfig(args.augment, args.aug_sigma, args.aug_p),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    batch = read_table(args.data, args.label_column, args.missing)
    x = batch.x
    scaler = None
    if not args.no_scale:
        lo, hi = minmax_stats(x)
        x = apply_minmax(x, lo, hi)
        scaler = {"min": lo.tolist(), "max": hi.tolist()}
    if x.shape[0] < 2 * cfg.m:
        raise DataError(f"{args.data}: {x.shape[0]} rows cannot form a group of 2m = {2 * cfg.m}")
    result = train(x, cfg)
    ckpt = result.checkpoint
    ckpt.config.update({"scaler": scaler, "columns": batch.columns})
    out = Path(args.out)
    save_checkpoint(ckpt, out)
    history = Path(args.history) if args.history else out.with_name(out.name + ".loss.csv")
    with open(history, "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(result.history, 1):
            fh.write(f"{i},{v:.17g}\n")
    print(f"trained {cfg.epochs} epochs on {x.shape[0]} rows x {x.shape[1]} features")
    if result.history:
        print(f"first epoch loss: {result.history[0]:.6g}\nfinal epoch loss: {result.history[-1]:.6g}")
    print(f"checkpoint: {out}")
    write_manifest(out, "train", {"train": cfg.to_dict(), "scaled": scaler is not None}, cfg.seed,
                   [args.data], [out, history], started)
    return 0


def _model_scores(ckpt, batch: EmbeddingBatch, norm: str) -> ScoredDataset:
    x = batch.x
    if x.shape[1] != ckpt.d:
        raise DataError(f"model expects {ckpt.d} features, data has {x.shape[1]}")
    scaler = ckpt.config.get("scaler")
    if scaler:
        x = apply_minmax(x, np.asarray(scaler["min"]), np.asarray(scaler["max"]))
    return score(ckpt.net, x, batch.labels, norm)


def cmd_score(args) -> int:
    started = time.time()
    ckpt = load_checkpoint(args.model)
    batch = read_table(args.data, args.label_column, args.missing)
    scored = _model_scores(ckpt, batch, args.norm)
    write_scores(scored, args.out)
    print(f"scored {len(scored)} rows -> {args.out}")
    if scored.label is not None and 0 < scored.label.sum() < len(scored):
        print(f"auroc: {auroc(scored.score, scored.label):.6g}")
    write_manifest(args.out, "score", {"norm": args.norm}, None, [args.model, args.data], [args.out], started)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    if not Path(args.scores).exists():
        raise DataError(f"{args.scores}: no such file")
    try:
        scored = read_scores(args.scores)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if scored.label is None:
        raise DataError(f"{args.scores}: eval needs a label column")
    try:
        report = evaluate(scored.score, scored.label)
    except DegenerateVarianceError as exc:
        raise DataError(str(exc)) from exc
    except ValueError as exc:
        raise DataError(f"{args.scores}: {exc}") from exc
    text = report.to_text()
    sys.stdout.write(text)
    artifacts = []
    if args.out:
        Path(args.out).write_text(text)
        artifacts.append(args.out)
    write_manifest(args.out or args.scores, "eval", {}, None, [args.scores], artifacts, started)
    return 0


def cmd_baseline(args) -> int:
    started = time.time()
    try:
        cfg = BaselineConfig(args.method, args.k, args.subsample, args.ensemble, args.trees, args.psi, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    batch = read_table(args.data, args.label_column, args.missing)
    x = batch.x if args.no_scale else apply_minmax(batch.x, *minmax_stats(batch.x))
    try:
        s = baseline_scores(x, cfg)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    scored = ScoredDataset(np.arange(len(s)), s, batch.labels)
    write_scores(scored, args.out)
    print(f"{args.method} scores for {len(s)} rows -> {args.out}")
    if scored.label is not None and 0 < scored.label.sum() < len(scored):
        print(f"auroc: {auroc(scored.score, scored.label):.6g}")
    write_manifest(args.out, "baseline", asdict(cfg), args.seed,
                   [args.data], [args.out], started)
    return 0


def cmd_corrupt(args) -> int:
    started = time.time()
    spec = CorruptionSpec(args.kind, sigma=args.sigma, a=args.a, rate=args.rate, magnitude=args.magnitude,
                          p=args.p, c=args.c, window=args.window, seed=args.seed)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    batch = read_table(args.data, args.label_column, args.missing)
    save_csv(corrupt(batch, spec), args.out, label_name=args.label_column or "label")
    print(f"{args.kind} corruption of {batch.n} rows -> {args.out}")
    write_manifest(args.out, "corrupt", asdict(spec), args.seed,
                   [args.data], [args.out], started)
    return 0


def cmd_synth(args) -> int:
    started = time.time()
    spec = SynthSpec(args.preset, args.d, args.k, args.spread, args.n_in, args.n_out,
                     args.box_lo, args.box_hi, args.seed)
    try:
        batch = synthesize(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_csv(batch, args.out)
    print(f"{args.preset}: {batch.n} rows x {batch.d} features ({int(batch.labels.sum())} outliers) -> {args.out}")
    write_manifest(args.out, "synth", asdict(spec), args.seed, [],
                   [args.out], started)
    return 0


def cmd_split(args) -> int:
    started = time.time()
    if not 0 < args.frac < 1:
        raise ConfigError("--frac must be in (0, 1)")
    batch = read_table(args.data, args.label_column, args.missing)
    first, second = split(batch, args.frac, args.seed)
    save_csv(first, args.out)
    save_csv(second, args.out2)
    print(f"split {batch.n} rows -> {first.n} in {args.out}, {second.n} in {args.out2}")
    write_manifest(args.out, "split", {"frac": args.frac}, args.seed, [args.data], [args.out, args.out2], started)
    return 0


def cmd_prepare(args) -> int:
    started = time.time()
    recipe = load_recipe(args.recipe)
    if args.flip:
        recipe.flip = not recipe.flip
    batch = build_dataset(recipe, args.data_dir)
    save_csv(batch, args.out)
    print(f"{recipe.name}: {batch.n} rows x {batch.d} features, {int(batch.labels.sum())} outliers -> {args.out}")
    inputs = [Path(args.data_dir) / f for f in recipe.files]
    write_manifest(args.out, "prepare", {"recipe": recipe.name, "flip": recipe.flip}, None, inputs,
                   [args.out], started)
    return 0


def cmd_shift_test(args) -> int:
    started = time.time()
    if not 0 < args.p_threshold < 1:
        raise ConfigError("--p-threshold must be in (0, 1)")
    ckpt = load_checkpoint(args.model)
    clean = _model_scores(ckpt, read_table(args.clean, args.label_column, args.missing), args.norm).score
    suspect = _model_scores(ckpt, read_table(args.suspect, args.label_column, args.missing), args.norm).score
    try:
        tt = welch_ttest(suspect, clean)
    except DegenerateVarianceError as exc:
        raise DataError(str(exc)) from exc
    labels = np.r_[np.zeros(len(clean), dtype=np.int64), np.ones(len(suspect), dtype=np.int64)]
    auc = auroc(np.r_[clean, suspect], labels)
    shifted = tt.p < args.p_threshold
    record = {
        "auroc": auc,
        "t_statistic": tt.t,
        "p_value": tt.p,
        "p_underflow": tt.p_underflow,
        "df": tt.df,
        "n_clean": len(clean),
        "n_suspect": len(suspect),
        "mean_clean": float(clean.mean()),
        "mean_suspect": float(suspect.mean()),
        "p_threshold": args.p_threshold,
        "shift_detected": bool(shifted),
    }
    lines = [f"{k}: {str(v).lower() if isinstance(v, bool) else (format(v, '.6g') if isinstance(v, float) else v)}"
             for k, v in record.items()]
    lines.append("verdict: " + ("SHIFT DETECTED" if shifted else "no shift detected"))
    lines.append("record: " + json.dumps(record, sort_keys=True))
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    artifacts = []
    if args.out:
        Path(args.out).write_text(text)
        artifacts.append(args.out)
    write_manifest(args.out or args.suspect, "shift-test", {"norm": args.norm, "p_threshold": args.p_threshold},
                   None, [args.model, args.clean, args.suspect], artifacts, started)
    return 0


# --- argument parsing -------------------------------------------------------


def _data_flags(p, required=True):
    p.add_argument("--data", required=required, help="input CSV")
    p.add_argument("--label-column", default="label", help="label column name, used if present (default: label)")
    p.add_argument("--missing", default=None, help="cell token meaning 'missing'; read as 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dumkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dumkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the variance network")
    _data_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="loss history CSV (default: <out>.loss.csv)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--m", type=int, default=2, help="experts per half-group")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=4096)
    p.add_argument("--loss", choices=("plain", "infonce"), default="plain")
    p.add_argument("--tau", type=float, default=0.07, help="InfoNCE temperature")
    p.add_argument("--normalize-poe-means", action="store_true")
    p.add_argument("--augment", choices=("identity", "jitter", "dropout"), default="identity")
    p.add_argument("--aug-sigma", type=float, default=0.0)
    p.add_argument("--aug-p", type=float, default=0.0)
    p.add_argument("--no-scale", action="store_true", help="skip per-feature min-max scaling")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="covariance-norm scores from a checkpoint")
    _data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--norm", choices=NORMS, default="l2")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC and Welch t-test for a labelled scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="KNN / LeSiNN / isolation forest scores")
    _data_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("knn", "lesinn", "iforest"), default="knn")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--subsample", type=int, default=8)
    p.add_argument("--ensemble", type=int, default=50)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--psi", type=int, default=None)
    p.add_argument("--no-scale", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("corrupt", help="apply a vector corruption")
    _data_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("gaussian", "uniform", "impulse", "dropout", "scale", "smooth"), required=True)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--magnitude", type=float, default=1.0)
    p.add_argument("--p", type=float, default=0.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("synth", help="generate synthetic clustered data")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=("clusters", "outliers"), default="outliers")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--n-in", type=int, default=2000)
    p.add_argument("--n-out", type=int, default=100)
    p.add_argument("--box-lo", type=float, default=0.0)
    p.add_argument("--box-hi", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="random two-way split of a CSV")
    _data_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--out2", required=True)
    p.add_argument("--frac", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("prepare", help="build a CSV from raw UCI files with a recipe")
    p.add_argument("--recipe", required=True, help="recipe file or shipped dataset name")
    p.add_argument("--data-dir", default=".")
    p.add_argument("--out", required=True)
    p.add_argument("--flip", action="store_true", help="swap the recipe's inlier/outlier classes")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("shift-test", help="compare scores of a suspect set against a clean set")
    p.add_argument("--clean", required=True)
    p.add_argument("--suspect", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--p-threshold", type=float, default=0.01)
    p.add_argument("--norm", choices=NORMS, default="l2")
    p.add_argument("--label-column", default="label", help="column to ignore if present (default: label)")
    p.add_argument("--missing", default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shift_test)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointFormatError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
