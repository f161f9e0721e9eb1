"""Desk-scale full-batch training over the differentiable corpus objectives.

Two model families share one loop: free per-pixel scores (every logit is a
parameter) and a linear map with intercept from pixel features to class
scores.  The corpus is treated as a single pixel set, so the corpus-level
losses are exact rather than mini-batch approximations.  Gain objectives
ascend by negating the gradient.

The two headline experiments live here:

* :func:`train` starting from a small random init, used to contrast the IOU
  gain (which settles into predicting background everywhere) with the UOI
  loss (which recovers the foreground),
* :func:`warm_start_protocol`, which trains under cross-entropy first, then
  branches the same checkpoint into CE / UOI / combined continuations.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grids import (
    HardSegmentation,
    InvalidInputError,
    ScoreMap,
    SoftSegmentation,
)
from .hardmetrics import confusion_counts, mean_iou
from .softloss import COMBINED_ALPHA, LOSS_NAMES, score_loss
from .synthetic import SyntheticDataset

MODEL_KINDS = ("free-scores", "linear")

# Default learning rates per model kind; overridable in TrainConfig.
DEFAULT_LR = {"free-scores": 1.0, "linear": 0.1}
DEFAULT_ITERATIONS = 500
INIT_SCALE = 0.01
LOG_EVERY = 10


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the history logged before the blowup."""

    def __init__(self, message: str, history: "TrainHistory"):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    model: str = "linear"
    learning_rate: float | None = None
    iterations: int = DEFAULT_ITERATIONS
    seed: int = 0
    alpha: float = COMBINED_ALPHA
    log_every: int = LOG_EVERY
    warm_start_from: np.ndarray | None = None

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise InvalidInputError(f"loss must be one of {LOSS_NAMES}")
        if self.model not in MODEL_KINDS:
            raise InvalidInputError(f"model must be one of {MODEL_KINDS}")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError("alpha must lie in [0, 1]")
        if self.learning_rate is not None and self.learning_rate <= 0.0:
            raise InvalidInputError("learning rate must be positive")
        if self.log_every < 1:
            raise InvalidInputError("log_every must be >= 1")
        if self.warm_start_from is not None:
            ws = np.array(self.warm_start_from, dtype=np.float64, copy=True)
            if ws.ndim != 1 or not np.all(np.isfinite(ws)):
                raise InvalidInputError("warm start parameters must be a finite flat vector")
            ws.flags.writeable = False
            object.__setattr__(self, "warm_start_from", ws)

    @property
    def effective_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LR[self.model]


@dataclass(frozen=True)
class TrainHistory:
    """Loss and hard-metric curves sampled every few iterations."""

    iterations: np.ndarray
    loss_values: np.ndarray
    mean_iou: np.ndarray
    bg_fraction: np.ndarray

    def __post_init__(self):
        it = np.array(self.iterations, dtype=np.int64, copy=True)
        cols = {"loss_values": None, "mean_iou": None, "bg_fraction": None}
        for name in cols:
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if a.shape != it.shape:
                raise InvalidInputError("history columns must share one length")
            if not np.all(np.isfinite(a)):
                raise InvalidInputError("history values must be finite")
            a.flags.writeable = False
            cols[name] = a
        it.flags.writeable = False
        object.__setattr__(self, "iterations", it)
        for name, a in cols.items():
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.iterations)

    @property
    def final_mean_iou(self) -> float:
        return float(self.mean_iou[-1])

    @property
    def final_bg_fraction(self) -> float:
        return float(self.bg_fraction[-1])


@dataclass(frozen=True)
class _Corpus:
    features: np.ndarray  # (N, D)
    labels: HardSegmentation  # N x 1 grid
    gt_soft: SoftSegmentation  # one-hot rows


def _flatten_corpus(data: SyntheticDataset) -> _Corpus:
    features = np.concatenate([im.features for im in data.images], axis=0)
    labels = np.concatenate([im.gt.labels for im in data.images])
    n = len(labels)
    one_hot = np.zeros((n, data.classes))
    one_hot[np.arange(n), labels] = 1.0
    return _Corpus(
        features,
        HardSegmentation(n, 1, data.classes, labels),
        SoftSegmentation(n, 1, data.classes, one_hot),
    )


def init_params(data: SyntheticDataset, cfg: TrainConfig) -> np.ndarray:
    """Flat parameter vector: N*K free scores, or (D+1)*K weights + intercept."""
    if cfg.model == "free-scores":
        n = sum(im.gt.pixels for im in data.images)
        size = n * data.classes
    else:
        size = (data.feature_dim + 1) * data.classes
    if cfg.warm_start_from is not None:
        if len(cfg.warm_start_from) != size:
            raise InvalidInputError(
                f"warm start has {len(cfg.warm_start_from)} parameters, expected {size}"
            )
        return cfg.warm_start_from.copy()
    rng = np.random.default_rng(cfg.seed)
    return rng.standard_normal(size) * INIT_SCALE


def _scores(params: np.ndarray, corpus: _Corpus, cfg: TrainConfig, classes: int) -> np.ndarray:
    if cfg.model == "free-scores":
        return params.reshape(-1, classes)
    d = corpus.features.shape[1]
    w = params[: d * classes].reshape(d, classes)
    b = params[d * classes :]
    return corpus.features @ w + b


def _param_gradient(
    g: np.ndarray, corpus: _Corpus, cfg: TrainConfig, classes: int
) -> np.ndarray:
    if cfg.model == "free-scores":
        return g.reshape(-1)
    gw = corpus.features.T @ g
    gb = g.sum(axis=0)
    return np.concatenate([gw.reshape(-1), gb])


def train(data: SyntheticDataset, cfg: TrainConfig) -> tuple[np.ndarray, TrainHistory]:
    """Full-batch gradient descent; returns final parameters and the curves.

    Deterministic given the config seed.  Logged rows land at iteration 1,
    every ``log_every``-th iteration, and the final one.
    """
    corpus = _flatten_corpus(data)
    k = data.classes
    n = corpus.gt_soft.pixels
    params = init_params(data, cfg)
    lr = cfg.effective_learning_rate
    sign = -1.0 if cfg.loss == "iou" else 1.0  # ascend gains

    logged: list[tuple[int, float, float, float]] = []
    for step in range(1, cfg.iterations + 1):
        z = _scores(params, corpus, cfg, k)
        value, field = score_loss(cfg.loss, ScoreMap(n, 1, k, z), corpus.gt_soft, cfg.alpha)
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"loss {cfg.loss} became non-finite at iteration {step}",
                _history(logged),
            )
        if step == 1 or step % cfg.log_every == 0 or step == cfg.iterations:
            pred = HardSegmentation(n, 1, k, np.argmax(z, axis=1))
            miou = mean_iou(confusion_counts([pred], [corpus.labels]))
            bg = float((pred.labels == 0).mean())
            logged.append((step, value, miou, bg))
        params = params - lr * _param_gradient(sign * field.grads, corpus, cfg, k)
        if not np.all(np.isfinite(params)):
            raise TrainingDivergedError(
                f"parameters became non-finite after iteration {step}",
                _history(logged),
            )
    return params, _history(logged)


def _history(logged: list[tuple[int, float, float, float]]) -> TrainHistory:
    if not logged:
        return TrainHistory(
            np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0), np.zeros(0)
        )
    cols = list(zip(*logged))
    return TrainHistory(
        np.asarray(cols[0], dtype=np.int64),
        np.asarray(cols[1]),
        np.asarray(cols[2]),
        np.asarray(cols[3]),
    )


# Step size for the IOU-gain collapse run.  The first step captures the
# majority (background) class corpus-wide; after softmax saturates, the raw
# IOU gradients underflow to exactly zero and the run is locked there.  At
# small steps the linear toy model can escape (the synthetic task is far
# easier than real data), so the pathological regime needs a large step.
COLLAPSE_IOU_LR = 20000.0
COLLAPSE_ITERATIONS = 300


@dataclass(frozen=True)
class CollapseReport:
    """Paired IOU-gain vs UOI runs from one shared random init."""

    iou_run: TrainHistory
    uoi_run: TrainHistory

    @property
    def iou_collapsed(self) -> bool:
        return self.iou_run.final_bg_fraction >= 0.95

    @property
    def uoi_beats_iou(self) -> bool:
        return self.uoi_run.final_mean_iou > self.iou_run.final_mean_iou


def collapse_experiment(
    data: SyntheticDataset,
    iterations: int = COLLAPSE_ITERATIONS,
    seed: int = 0,
    iou_learning_rate: float = COLLAPSE_IOU_LR,
    uoi_learning_rate: float | None = None,
    model: str = "linear",
    log_every: int = LOG_EVERY,
) -> CollapseReport:
    """Ascend the IOU gain and descend the UOI loss from the same init.

    Both runs share the seed, so their initial parameters are bitwise equal;
    each loss uses its own step size. The asymmetry is the point: IOU steps
    that capture the majority class leave vanishing gradients, while UOI
    gradients grow with the mistake counts and recover.
    """
    iou_cfg = TrainConfig(
        loss="iou",
        model=model,
        learning_rate=iou_learning_rate,
        iterations=iterations,
        seed=seed,
        log_every=log_every,
    )
    uoi_cfg = TrainConfig(
        loss="uoi",
        model=model,
        learning_rate=uoi_learning_rate,
        iterations=iterations,
        seed=seed,
        log_every=log_every,
    )
    _, iou_hist = train(data, iou_cfg)
    _, uoi_hist = train(data, uoi_cfg)
    return CollapseReport(iou_hist, uoi_hist)


@dataclass(frozen=True)
class WarmStartReport:
    """CE warm-up followed by three branches from one shared checkpoint."""

    warmup: TrainHistory
    checkpoint: np.ndarray
    ce: TrainHistory
    uoi: TrainHistory
    combined: TrainHistory
    alpha: float

    def final_mean_iou(self) -> dict[str, float]:
        return {
            "ce": self.ce.final_mean_iou,
            "uoi": self.uoi.final_mean_iou,
            "combined": self.combined.final_mean_iou,
        }


def warm_start_protocol(
    data: SyntheticDataset,
    warmup_iterations: int = 300,
    branch_iterations: int = 300,
    model: str = "linear",
    learning_rate: float | None = None,
    seed: int = 0,
    alpha: float = COMBINED_ALPHA,
    log_every: int = LOG_EVERY,
) -> WarmStartReport:
    """Train with CE, then continue under CE, UOI, and the combined loss.

    All three branches resume from bitwise-identical parameters; they differ
    only in the loss gradient applied afterwards.
    """
    base_cfg = TrainConfig(
        loss="ce",
        model=model,
        learning_rate=learning_rate,
        iterations=warmup_iterations,
        seed=seed,
        alpha=alpha,
        log_every=log_every,
    )
    checkpoint, warmup_history = train(data, base_cfg)

    branches = {}
    for loss in ("ce", "uoi", "combined"):
        cfg = replace(
            base_cfg,
            loss=loss,
            iterations=branch_iterations,
            warm_start_from=checkpoint,
        )
        _, history = train(data, cfg)
        branches[loss] = history
    frozen = checkpoint.copy()
    frozen.flags.writeable = False
    return WarmStartReport(
        warmup=warmup_history,
        checkpoint=frozen,
        ce=branches["ce"],
        uoi=branches["uoi"],
        combined=branches["combined"],
        alpha=alpha,
    )
