"""Command line front end.

Every subcommand emits one run report (key-value text, or two-column CSV via
--format csv) echoing its full effective configuration. Commands that write
curve CSVs also render a PNG next to them unless --no-figures is given.

Exit codes: 0 success, 1 failed assertion or invalid input data, 2 usage
error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from .figures import history_figure, sweep_figure, warmstart_figure
from .formats import (
    FileFormatError,
    read_hard,
    read_params,
    read_proposal_set,
    read_rank_model,
    read_soft,
    write_history_csv,
    write_params,
    write_rank_model,
    write_sweep_csv,
)
from .grids import DegenerateInputError, InvalidInputError
from .hardmetrics import (
    class_iou,
    class_uoi,
    confusion_counts,
    degenerate_uoi_classes,
    excluded_iou_classes,
    gradient_sweep,
    mean_iou,
    mean_uoi,
    sweep_monotonicity,
)
from .rerank import (
    KL_BG_PENALTY,
    RANKER_EPOCHS,
    RANKER_L2,
    RANKER_LR,
    oracle_select,
    proposal_quality,
    random_select,
    rank_select,
    select_by_score,
    train_ranker,
)
from .report import REPORT_FORMATS, RunReport, emit
from .softloss import COMBINED_ALPHA, LOSS_NAMES, gradcheck_suite
from .synthetic import gen_synthetic
from .trainer import (
    TrainConfig,
    TrainingDivergedError,
    train,
    warm_start_protocol,
)

GRADCHECK_TOLERANCE = 1e-5

RERANK_STRATEGIES = ("kl", "ranker", "oracle", "random")


class UsageError(Exception):
    """Bad argument combination detected after parsing."""


# -- shared plumbing ----------------------------------------------------------


def _add_report_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out", default=None, metavar="PATH", help="report path (default stdout)")
    sub.add_argument("--format", choices=REPORT_FORMATS, default="text", help="report format")


def _nan_mean(fn, counts) -> float:
    try:
        return fn(counts)
    except DegenerateInputError:
        return float("nan")


def _ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc


def _read_all(paths, reader):
    """Read every file, collecting per-file diagnostics before failing."""
    loaded, problems = [], []
    for path in paths:
        try:
            loaded.append(reader(path))
        except FileFormatError as exc:
            problems.append(str(exc))
    if problems:
        raise FileFormatError("\n".join(problems))
    return loaded


# -- eval ---------------------------------------------------------------------


def _cmd_eval(args) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    if len(args.pred) != len(args.gt):
        raise UsageError(
            f"--pred and --gt must pair up ({len(args.pred)} vs {len(args.gt)} files)"
        )
    preds = _read_all(args.pred, read_hard)
    gts = _read_all(args.gt, read_hard)
    counts = confusion_counts(preds, gts)
    iou = class_iou(counts)
    uoi = class_uoi(counts)
    metrics = {
        "images": len(preds),
        "classes": counts.classes,
        "mean_iou": _nan_mean(mean_iou, counts),
        "mean_uoi": _nan_mean(mean_uoi, counts),
        "excluded_iou_classes": list(excluded_iou_classes(counts)),
        "degenerate_uoi_classes": list(degenerate_uoi_classes(counts)),
        "per_class": {
            "tp": [float(v) for v in counts.tp],
            "fp": [float(v) for v in counts.fp],
            "fn": [float(v) for v in counts.fn],
            "gt": [float(v) for v in counts.gt],
            "iou": [float(v) for v in iou],
            "uoi": [float(v) for v in uoi],
        },
    }
    config = {"pred": list(args.pred), "gt": list(args.gt)}
    return RunReport("eval", config, metrics, time.perf_counter() - t0), 0


# -- gradcheck ------------------------------------------------------------------


def _cmd_gradcheck(args) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.height < 1 or args.width < 1 or args.classes < 2:
        raise UsageError("--height/--width must be >= 1 and --classes >= 2")
    worst = gradcheck_suite(
        seed=args.seed,
        trials=args.trials,
        height=args.height,
        width=args.width,
        classes=args.classes,
        h=args.step,
        alpha=args.alpha,
    )
    passed = all(v < args.tolerance for v in worst.values())
    config = {
        "seed": args.seed,
        "trials": args.trials,
        "height": args.height,
        "width": args.width,
        "classes": args.classes,
        "step": args.step,
        "alpha": args.alpha,
        "tolerance": args.tolerance,
    }
    metrics = {
        "max_rel_err": {name: worst[name] for name in LOSS_NAMES},
        "passed": passed,
    }
    report = RunReport("gradcheck", config, metrics, time.perf_counter() - t0)
    return report, 0 if passed else 1


# -- sweep ----------------------------------------------------------------------


def _cmd_sweep(args) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    table = gradient_sweep(
        args.gt_count, (args.fp_min, args.fp_max), (args.fn_min, args.fn_max), args.steps
    )
    write_sweep_csv(args.csv, table)
    checks = sweep_monotonicity(table)
    figure_path = "none"
    if not args.no_figures:
        figure_path = sweep_figure(table, os.path.splitext(args.csv)[0] + ".png")
    config = {
        "gt_count": args.gt_count,
        "fp_min": args.fp_min,
        "fp_max": args.fp_max,
        "fn_min": args.fn_min,
        "fn_max": args.fn_max,
        "steps": args.steps,
        "csv": args.csv,
        "figures": not args.no_figures,
    }
    metrics = {
        "rows": int(table.fn_values.size * table.fp_values.size),
        "monotonic": checks,
        "all_monotonic": all(checks.values()),
        "figure": figure_path,
    }
    report = RunReport("sweep", config, metrics, time.perf_counter() - t0)
    return report, 0 if all(checks.values()) else 1


# -- train / warmstart ------------------------------------------------------------


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="ascii") as fh:
            loaded = json.load(fh)
    except OSError as exc:
        raise FileFormatError(f"{path}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FileFormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(loaded, dict):
        raise FileFormatError(f"{path}: top-level JSON value must be an object")
    return loaded


def _take(cfg: dict, key: str, default):
    return cfg[key] if key in cfg else default

_DATA_KEYS = {
    "seed": 0,
    "imageCount": 50,
    "height": 32,
    "width": 32,
    "classes": 5,
    "featureDim": 8,
    "bgFraction": 0.9,
}


def _dataset_from_config(section: dict, path: str):
    unknown = set(section) - set(_DATA_KEYS)
    if unknown:
        raise UsageError(f"{path}: unknown data keys {sorted(unknown)}")
    effective = {key: _take(section, key, default) for key, default in _DATA_KEYS.items()}
    data = gen_synthetic(
        seed=effective["seed"],
        image_count=effective["imageCount"],
        height=effective["height"],
        width=effective["width"],
        classes=effective["classes"],
        feature_dim=effective["featureDim"],
        bg_fraction=effective["bgFraction"],
    )
    return data, effective


_TRAIN_KEYS = (
    "data",
    "loss",
    "model",
    "learningRate",
    "iterations",
    "seed",
    "alpha",
    "logEvery",
    "warmStartFrom",
)


def _cmd_train(args) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    raw = _load_json(args.config)
    unknown = set(raw) - set(_TRAIN_KEYS)
    if unknown:
        raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
    data, data_cfg = _dataset_from_config(raw.get("data", {}), args.config)
    warm_path = _take(raw, "warmStartFrom", None)
    seed = args.seed if args.seed is not None else _take(raw, "seed", 0)
    cfg = TrainConfig(
        loss=_take(raw, "loss", "ce"),
        model=_take(raw, "model", "linear"),
        learning_rate=_take(raw, "learningRate", None),
        iterations=_take(raw, "iterations", 500),
        seed=seed,
        alpha=_take(raw, "alpha", COMBINED_ALPHA),
        log_every=_take(raw, "logEvery", 10),
        warm_start_from=None if warm_path is None else read_params(warm_path),
    )
    params, history = train(data, cfg)

    _ensure_dir(args.out_dir)
    csv_path = os.path.join(args.out_dir, "history.csv")
    ckpt_path = os.path.join(args.out_dir, "checkpoint.params")
    write_history_csv(csv_path, history)
    write_params(ckpt_path, params)
    figure_path = "none"
    if not args.no_figures:
        figure_path = history_figure(
            history, os.path.join(args.out_dir, "history.png"), title=cfg.loss
        )

    config = {
        "config_file": args.config,
        "out_dir": args.out_dir,
        "data": data_cfg,
        "loss": cfg.loss,
        "model": cfg.model,
        "learning_rate": cfg.effective_learning_rate,
        "iterations": cfg.iterations,
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "log_every": cfg.log_every,
        "warm_start_from": warm_path,
        "figures": not args.no_figures,
    }
    metrics = {
        "final_loss": float(history.loss_values[-1]),
        "final_mean_iou": history.final_mean_iou,
        "final_bg_fraction": history.final_bg_fraction,
        "history_csv": csv_path,
        "checkpoint": ckpt_path,
        "figure": figure_path,
    }
    return RunReport("train", config, metrics, time.perf_counter() - t0), 0


_WARMSTART_KEYS = (
    "data",
    "warmupIterations",
    "branchIterations",
    "model",
    "learningRate",
    "seed",
    "alpha",
    "logEvery",
)


def _cmd_warmstart(args) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    raw = _load_json(args.config)
    unknown = set(raw) - set(_WARMSTART_KEYS)
    if unknown:
        raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
    data, data_cfg = _dataset_from_config(raw.get("data", {}), args.config)
    seed = args.seed if args.seed is not None else _take(raw, "seed", 0)
    warmup_iterations = _take(raw, "warmupIterations", 300)
    branch_iterations = _take(raw, "branchIterations", 300)
    model = _take(raw, "model", "linear")
    learning_rate = _take(raw, "learningRate", None)
    alpha = _take(raw, "alpha", COMBINED_ALPHA)
    log_every = _take(raw, "logEvery", 10)
    result = warm_start_protocol(
        data,
        warmup_iterations=warmup_iterations,
        branch_iterations=branch_iterations,
        model=model,
        learning_rate=learning_rate,
        seed=seed,
        alpha=alpha,
        log_every=log_every,
    )

    _ensure_dir(args.out_dir)
    write_history_csv(os.path.join(args.out_dir, "warmup.csv"), result.warmup)
    for name, hist in (("ce", result.ce), ("uoi", result.uoi), ("combined", result.combined)):
        write_history_csv(os.path.join(args.out_dir, f"branch_{name}.csv"), hist)
    write_params(os.path.join(args.out_dir, "checkpoint.params"), result.checkpoint)
    figure_path = "none"
    if not args.no_figures:
        figure_path = warmstart_figure(result, os.path.join(args.out_dir, "warmstart.png"))

    finals = result.final_mean_iou()
    config = {
        "config_file": args.config,
        "out_dir": args.out_dir,
        "data": data_cfg,
        "warmup_iterations": warmup_iterations,
        "branch_iterations": branch_iterations,
        "model": model,
        "learning_rate": learning_rate,
        "seed": seed,
        "alpha": alpha,
        "log_every": log_every,
        "figures": not args.no_figures,
    }
    metrics = {
        "warmup_mean_iou": result.warmup.final_mean_iou,
        "final_mean_iou": finals,
        "uoi_ge_ce": finals["uoi"] >= finals["ce"],
        "combined_ge_min_branch": finals["combined"] >= min(finals["uoi"], finals["ce"]),
        "figure": figure_path,
    }
    return RunReport("warmstart", config, metrics, time.perf_counter() - t0), 0


# -- rerank / trainranker -----------------------------------------------------------


def _load_rerank_triples(pred_dir: str, proposal_dir: str, gt_dir: str, need_full: bool):
    try:
        names = sorted(n for n in os.listdir(pred_dir) if n.endswith(".soft"))
    except OSError as exc:
        raise FileFormatError(f"{pred_dir}: {exc.strerror or exc}") from exc
    if not names:
        raise UsageError(f"{pred_dir}: no .soft prediction files")
    triples, problems = [], []
    for name in names:
        stem = name[: -len(".soft")]
        try:
            pred = read_soft(os.path.join(pred_dir, name))
            proposals = read_proposal_set(os.path.join(proposal_dir, stem), image_id=stem)
            gt = read_hard(os.path.join(gt_dir, stem + ".hard"))
            if need_full and proposals.full_res is None:
                raise FileFormatError(
                    f"{os.path.join(proposal_dir, stem)}: full-res members required"
                )
            triples.append((stem, pred, proposals, gt))
        except FileFormatError as exc:
            problems.append(str(exc))
    if problems:
        raise FileFormatError("\n".join(problems))
    return triples


def _corpus_mean_iou(triples, indices) -> float:
    preds = [t[2].full_res[m] for t, m in zip(triples, indices)]
    gts = [t[3] for t in triples]
    return mean_iou(confusion_counts(preds, gts))


def _cmd_rerank(args) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    if args.strategy == "ranker" and args.model is None:
        raise UsageError("--strategy ranker requires --model")
    triples = _load_rerank_triples(args.pred_dir, args.proposal_dir, args.gt_dir, need_full=True)
    model = read_rank_model(args.model) if args.strategy == "ranker" else None
    rng = np.random.default_rng(args.seed)

    selections = []
    for _, pred, proposals, gt in triples:
        if args.strategy == "kl":
            chosen = select_by_score(pred, proposals, bg_penalty=args.bg_penalty)
        elif args.strategy == "ranker":
            chosen = rank_select(model, pred, proposals)
        elif args.strategy == "oracle":
            chosen = oracle_select(proposals, gt)[0]
        else:
            chosen = random_select(proposals, rng)
        selections.append(chosen)

    oracle_idx = [oracle_select(t[2], t[3])[0] for t in triples]
    config = {
        "pred_dir": args.pred_dir,
        "proposal_dir": args.proposal_dir,
        "gt_dir": args.gt_dir,
        "strategy": args.strategy,
        "model": args.model,
        "seed": args.seed,
        "bg_penalty": args.bg_penalty,
    }
    metrics = {
        "images": len(triples),
        "mean_iou": {
            "selected": _corpus_mean_iou(triples, selections),
            "oracle": _corpus_mean_iou(triples, oracle_idx),
            "first": _corpus_mean_iou(triples, [0] * len(triples)),
        },
        "selection": {t[0]: m for t, m in zip(triples, selections)},
    }
    return RunReport("rerank", config, metrics, time.perf_counter() - t0), 0


def _cmd_trainranker(args) -> tuple[RunReport, int]:
    t0 = time.perf_counter()
    if args.epochs < 1:
        raise UsageError("--epochs must be >= 1")
    triples = _load_rerank_triples(args.pred_dir, args.proposal_dir, args.gt_dir, need_full=True)
    train_sets = []
    for _, pred, proposals, gt in triples:
        qualities = [proposal_quality(f, gt) for f in proposals.full_res]
        train_sets.append((pred, proposals, qualities))
    model = train_ranker(
        train_sets,
        regularization=args.regularization,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )
    write_rank_model(args.model_out, model)

    ranked_idx = [rank_select(model, t[1], t[2]) for t in triples]
    oracle_idx = [oracle_select(t[2], t[3])[0] for t in triples]
    config = {
        "pred_dir": args.pred_dir,
        "proposal_dir": args.proposal_dir,
        "gt_dir": args.gt_dir,
        "model_out": args.model_out,
        "regularization": args.regularization,
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "seed": args.seed,
    }
    metrics = {
        "images": len(triples),
        "feature_dim": model.dim,
        "train_mean_iou": {
            "ranker": _corpus_mean_iou(triples, ranked_idx),
            "oracle": _corpus_mean_iou(triples, oracle_idx),
            "first": _corpus_mean_iou(triples, [0] * len(triples)),
        },
    }
    return RunReport("trainranker", config, metrics, time.perf_counter() - t0), 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corpusseg",
        description="Corpus-level segmentation objectives, metrics, and experiments.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("eval", help="corpus metrics for paired hard segmentation files")
    p.add_argument("--pred", nargs="+", required=True, metavar="FILE")
    p.add_argument("--gt", nargs="+", required=True, metavar="FILE")
    _add_report_flags(p)
    p.set_defaults(handler=_cmd_eval)

    p = subs.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--step", type=float, default=1e-5, help="central difference half-step")
    p.add_argument("--alpha", type=float, default=COMBINED_ALPHA)
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    _add_report_flags(p)
    p.set_defaults(handler=_cmd_gradcheck)

    p = subs.add_parser("sweep", help="metric/gradient table over a count grid")
    p.add_argument("--gt-count", type=float, default=1000.0)
    p.add_argument("--fp-min", type=float, default=0.0)
    p.add_argument("--fp-max", type=float, default=5000.0)
    p.add_argument("--fn-min", type=float, default=0.0)
    p.add_argument("--fn-max", type=float, default=900.0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--csv", required=True, metavar="PATH", help="output table path")
    p.add_argument("--no-figures", action="store_true")
    _add_report_flags(p)
    p.set_defaults(handler=_cmd_sweep)

    p = subs.add_parser("train", help="gradient descent on a synthetic corpus")
    p.add_argument("--config", required=True, metavar="JSON")
    p.add_argument("--out-dir", default=".", metavar="DIR")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--no-figures", action="store_true")
    _add_report_flags(p)
    p.set_defaults(handler=_cmd_train)

    p = subs.add_parser("warmstart", help="shared warmup, then one branch per loss")
    p.add_argument("--config", required=True, metavar="JSON")
    p.add_argument("--out-dir", default=".", metavar="DIR")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--no-figures", action="store_true")
    _add_report_flags(p)
    p.set_defaults(handler=_cmd_warmstart)

    p = subs.add_parser("rerank", help="pick one proposal per image")
    p.add_argument("--pred-dir", required=True, metavar="DIR")
    p.add_argument("--proposal-dir", required=True, metavar="DIR")
    p.add_argument("--gt-dir", required=True, metavar="DIR")
    p.add_argument("--strategy", choices=RERANK_STRATEGIES, default="kl")
    p.add_argument("--model", default=None, metavar="PATH", help="rank model (ranker strategy)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bg-penalty", type=float, default=KL_BG_PENALTY)
    _add_report_flags(p)
    p.set_defaults(handler=_cmd_rerank)

    p = subs.add_parser("trainranker", help="fit the pairwise linear ranker")
    p.add_argument("--pred-dir", required=True, metavar="DIR")
    p.add_argument("--proposal-dir", required=True, metavar="DIR")
    p.add_argument("--gt-dir", required=True, metavar="DIR")
    p.add_argument("--model-out", required=True, metavar="PATH")
    p.add_argument("--regularization", type=float, default=RANKER_L2)
    p.add_argument("--epochs", type=int, default=RANKER_EPOCHS)
    p.add_argument("--learning-rate", type=float, default=RANKER_LR)
    p.add_argument("--seed", type=int, default=0)
    _add_report_flags(p)
    p.set_defaults(handler=_cmd_trainranker)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        report, code = args.handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        emit(report, args.format, args.out)
    except OSError as exc:
        print(f"error: {args.out}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
