"""Corpus-level hard-count metrics: per-class IOU/UOI, count gradients, bound.

Counts are kept as reals so the gradient formulas can be evaluated on a
continuous relaxation (the sweep); counting actual label maps still yields
integers.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grids import DegenerateInputError, HardSegmentation, InvalidInputError

_COUNT_ATOL = 1e-6


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class true-positive / false-positive / false-negative totals.

    gt[k] must equal tp[k] + fn[k]; the total predicted pixel count is
    sum_k (tp[k] + fp[k]).
    """

    classes: int
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    gt: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("tp", "fp", "fn", "gt"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if a.shape != (self.classes,):
                raise InvalidInputError(f"{name} must have shape (classes,)")
            if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0.0:
                raise InvalidInputError(f"{name} must be finite and nonnegative")
            a.flags.writeable = False
            arrays[name] = a
        if not np.allclose(arrays["tp"] + arrays["fn"], arrays["gt"], atol=_COUNT_ATOL):
            raise InvalidInputError("need tp[k] + fn[k] == gt[k] for every class")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @classmethod
    def from_mistakes(cls, tp, fp, fn) -> "ConfusionCounts":
        tp = np.asarray(tp, dtype=np.float64)
        fn = np.asarray(fn, dtype=np.float64)
        return cls(len(tp), tp, np.asarray(fp, dtype=np.float64), fn, tp + fn)

    @property
    def predicted_total(self) -> float:
        return float((self.tp + self.fp).sum())


def confusion_counts(
    preds: Sequence[HardSegmentation], gts: Sequence[HardSegmentation]
) -> ConfusionCounts:
    """Pool per-class counts over a whole corpus of paired label maps."""
    if len(preds) != len(gts):
        raise InvalidInputError("prediction and ground-truth lists must pair up")
    if not preds:
        raise InvalidInputError("empty corpus")
    k = gts[0].classes
    matrix = np.zeros((k, k), dtype=np.int64)  # [gt class, predicted class]
    for pred, gt in zip(preds, gts):
        if (pred.height, pred.width, pred.classes) != (gt.height, gt.width, gt.classes):
            raise InvalidInputError("paired segmentations must share dims and classes")
        if gt.classes != k:
            raise InvalidInputError("all corpus members must share the class count")
        flat = np.bincount(gt.labels * k + pred.labels, minlength=k * k)
        matrix += flat.reshape(k, k)
    tp = np.diag(matrix).astype(np.float64)
    gt_totals = matrix.sum(axis=1).astype(np.float64)
    pred_totals = matrix.sum(axis=0).astype(np.float64)
    return ConfusionCounts(k, tp, pred_totals - tp, gt_totals - tp, gt_totals)


def class_iou(c: ConfusionCounts) -> np.ndarray:
    """Per-class tp / (tp + fp + fn); NaN where the denominator is zero."""
    denom = c.tp + c.fp + c.fn
    out = np.full(c.classes, np.nan)
    defined = denom > 0.0
    out[defined] = c.tp[defined] / denom[defined]
    return out


def class_uoi(c: ConfusionCounts) -> np.ndarray:
    """Per-class (gt + fp) / (gt - fn); NaN where gt == fn (degenerate)."""
    denom = c.gt - c.fn
    out = np.full(c.classes, np.nan)
    defined = denom > 0.0
    out[defined] = (c.gt[defined] + c.fp[defined]) / denom[defined]
    return out


def mean_iou(c: ConfusionCounts) -> float:
    per = class_iou(c)
    defined = ~np.isnan(per)
    if not defined.any():
        raise DegenerateInputError("no class has any ground-truth or predicted pixels")
    return float(per[defined].mean())


def mean_uoi(c: ConfusionCounts) -> float:
    per = class_uoi(c)
    defined = ~np.isnan(per)
    if not defined.any():
        raise DegenerateInputError("every class is fully missed or absent")
    return float(per[defined].mean())


def excluded_iou_classes(c: ConfusionCounts) -> tuple[int, ...]:
    return tuple(int(k) for k in np.flatnonzero(np.isnan(class_iou(c))))


def degenerate_uoi_classes(c: ConfusionCounts) -> tuple[int, ...]:
    return tuple(int(k) for k in np.flatnonzero(np.isnan(class_uoi(c))))


def _as_float(x, name: str) -> float:
    v = float(x)
    if not np.isfinite(v) or v < 0.0:
        raise InvalidInputError(f"{name} must be finite and nonnegative")
    return v


def iou_grad_fpfn(gt, fn, fp) -> tuple[float, float]:
    """d(IOU)/dFP and d(IOU)/dFN for one class at real-valued counts.

    IOU = (gt - fn) / (gt + fp), so
    d/dFP = -(gt - fn) / (gt + fp)^2 and d/dFN = -1 / (gt + fp).
    """
    gt, fn, fp = _as_float(gt, "gt"), _as_float(fn, "fn"), _as_float(fp, "fp")
    if gt + fp <= 0.0:
        raise DegenerateInputError("iou gradient undefined at gt + fp == 0")
    denom = gt + fp
    return -(gt - fn) / denom**2, -1.0 / denom


def uoi_grad_fpfn(gt, fn, fp) -> tuple[float, float]:
    """d(UOI)/dFP and d(UOI)/dFN for one class at real-valued counts.

    UOI = (gt + fp) / (gt - fn), so
    d/dFP = 1 / (gt - fn) and d/dFN = (gt + fp) / (gt - fn)^2, both positive.
    """
    gt, fn, fp = _as_float(gt, "gt"), _as_float(fn, "fn"), _as_float(fp, "fp")
    if gt - fn <= 0.0:
        raise DegenerateInputError("uoi gradient undefined at gt == fn")
    remain = gt - fn
    return 1.0 / remain, (gt + fp) / remain**2


def lower_bound_gap(per_class_iou) -> float:
    """Slack of sum_k IOU_k >= 1 / (sum_k 1/IOU_k); zero only at K = 1."""
    x = np.asarray(per_class_iou, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError("need a nonempty vector of per-class IOU values")
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0):
        raise InvalidInputError("per-class IOU values must be strictly positive")
    return float(x.sum() - 1.0 / (1.0 / x).sum())


@dataclass(frozen=True)
class SweepTable:
    """Dense grid of metric values and count gradients at fixed gt.

    2-D arrays are indexed [fn step, fp step]; the CSV form flattens them with
    fp varying fastest.
    """

    gt: float
    fp_values: np.ndarray
    fn_values: np.ndarray
    iou: np.ndarray
    uoi: np.ndarray
    d_iou_d_fp: np.ndarray
    d_iou_d_fn: np.ndarray
    d_uoi_d_fp: np.ndarray
    d_uoi_d_fn: np.ndarray

    def rows(self):
        """Yield (fp, fn, iou, uoi, four gradients) in CSV emission order."""
        for j, fn in enumerate(self.fn_values):
            for i, fp in enumerate(self.fp_values):
                yield (
                    float(fp),
                    float(fn),
                    float(self.iou[j, i]),
                    float(self.uoi[j, i]),
                    float(self.d_iou_d_fp[j, i]),
                    float(self.d_iou_d_fn[j, i]),
                    float(self.d_uoi_d_fp[j, i]),
                    float(self.d_uoi_d_fn[j, i]),
                )


SWEEP_CSV_HEADER = "FP,FN,IOU,UOI,dIOU_dFP,dIOU_dFN,dUOI_dFP,dUOI_dFN"


def gradient_sweep(gt: float, fp_range, fn_range, steps: int) -> SweepTable:
    """Evaluate IOU/UOI and their count gradients on a steps x steps grid.

    fn values violating gt - fn > 0 are dropped with a warning so UOI stays
    defined everywhere in the table.
    """
    gt = _as_float(gt, "gt")
    if gt <= 0.0:
        raise InvalidInputError("gt must be positive")
    if steps < 2:
        raise InvalidInputError("need at least 2 steps per axis")
    fp_lo, fp_hi = (float(fp_range[0]), float(fp_range[1]))
    fn_lo, fn_hi = (float(fn_range[0]), float(fn_range[1]))
    if fp_lo < 0.0 or fn_lo < 0.0 or fp_hi < fp_lo or fn_hi < fn_lo:
        raise InvalidInputError("ranges must be nonnegative and ordered")
    fp = np.linspace(fp_lo, fp_hi, steps)
    fn = np.linspace(fn_lo, fn_hi, steps)
    keep = fn < gt
    if not keep.all():
        warnings.warn(
            f"truncating fn grid to {int(keep.sum())} of {steps} values to keep gt - fn > 0",
            stacklevel=2,
        )
        fn = fn[keep]
    if fn.size == 0:
        raise InvalidInputError("fn range leaves no values below gt")

    fp2 = fp[np.newaxis, :]
    fn2 = fn[:, np.newaxis]
    pred_mass = gt + fp2
    remain = gt - fn2
    shape = (fn.size, fp.size)
    return SweepTable(
        gt=gt,
        fp_values=fp,
        fn_values=fn,
        iou=np.broadcast_to(remain / pred_mass, shape).copy(),
        uoi=np.broadcast_to(pred_mass / remain, shape).copy(),
        d_iou_d_fp=np.broadcast_to(-remain / pred_mass**2, shape).copy(),
        d_iou_d_fn=np.broadcast_to(-1.0 / pred_mass, shape).copy(),
        d_uoi_d_fp=np.broadcast_to(1.0 / remain, shape).copy(),
        d_uoi_d_fn=np.broadcast_to(pred_mass / remain**2, shape).copy(),
    )


def sweep_monotonicity(table: SweepTable) -> dict[str, bool]:
    """Check the qualitative gradient claims on every grid line.

    Keys: iou_fp_sensitivity_decreasing (|dIOU/dFP| strictly decreasing in FP),
    uoi_fp_sensitivity_constant (dUOI/dFP constant along FP), and
    uoi_fn_sensitivity_increasing (|dUOI/dFN| strictly increasing in FN).
    """
    return {
        "iou_fp_sensitivity_decreasing": bool(
            (np.diff(np.abs(table.d_iou_d_fp), axis=1) < 0.0).all()
        ),
        "uoi_fp_sensitivity_constant": bool((np.ptp(table.d_uoi_d_fp, axis=1) == 0.0).all()),
        "uoi_fn_sensitivity_increasing": bool(
            (np.diff(np.abs(table.d_uoi_d_fn), axis=0) > 0.0).all()
        ),
    }
