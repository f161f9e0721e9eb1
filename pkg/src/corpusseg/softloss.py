"""Differentiable corpus-level objectives over soft segmentations.

Everything here works on expected per-class intersection and union,

    EI[k] = sum_i pred[i,k] * gt[i,k]
    EU[k] = sum_i (pred[i,k] + gt[i,k] - pred[i,k] * gt[i,k])

which are additive over pixels, so batches accumulate exactly: summing
per-image ``ExpectedOverlap`` values gives the same objective as one pass
over the concatenated corpus.

The IOU objective ``sum_k EI[k]/EU[k]`` is a gain (higher is better); the
UOI loss ``sum_k EU[k]/EI[k]`` and cross-entropy are losses.  Gradients with
respect to pre-softmax scores are implemented in closed form and checked
against central finite differences by :func:`finite_diff_check`.

Classes with zero ground-truth mass are excluded from the sums and reported,
since UOI is undefined for them; corpus-level use assumes every class occurs
somewhere in the corpus.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import (
    PROB_EPS,
    DegenerateInputError,
    GradientField,
    InvalidInputError,
    ScoreMap,
    SoftSegmentation,
)

# Mixing weight of the UOI term in the combined loss (rest is cross-entropy).
COMBINED_ALPHA = 0.7

LOSS_NAMES = ("ce", "iou", "uoi", "combined")


@dataclass(frozen=True)
class ExpectedOverlap:
    """Per-class expected intersection/union accumulated over a pixel set.

    ``gt_mass[k]`` carries the total ground-truth probability mass of class k
    so that merged batches can still decide which classes are active.
    All fields are additive under :func:`merge`.
    """

    classes: int
    intersection: np.ndarray
    union: np.ndarray
    gt_mass: np.ndarray
    pixel_count: int

    def __post_init__(self):
        ei = np.asarray(self.intersection, dtype=np.float64)
        eu = np.asarray(self.union, dtype=np.float64)
        gm = np.asarray(self.gt_mass, dtype=np.float64)
        if ei.shape != (self.classes,) or eu.shape != (self.classes,) or gm.shape != (self.classes,):
            raise InvalidInputError("per-class accumulators must have shape (classes,)")
        tol = 1e-9 * max(1, self.pixel_count)
        if ei.min(initial=0.0) < -tol or np.any(ei > eu + tol) or np.any(eu > 2 * self.pixel_count + tol):
            raise InvalidInputError("need 0 <= EI[k] <= EU[k] <= 2 * pixel_count")
        object.__setattr__(self, "intersection", _freeze(ei))
        object.__setattr__(self, "union", _freeze(eu))
        object.__setattr__(self, "gt_mass", _freeze(gm))

    @classmethod
    def empty(cls, classes: int) -> "ExpectedOverlap":
        zeros = np.zeros(classes)
        return cls(classes, zeros, zeros.copy(), zeros.copy(), 0)

    def active_classes(self) -> np.ndarray:
        """Boolean mask of classes with nonzero ground-truth mass."""
        return self.gt_mass > 0.0


@dataclass(frozen=True)
class LossReport:
    """A named scalar objective plus its per-class breakdown.

    ``per_class`` holds NaN at excluded classes (those with zero ground-truth
    mass); ``value`` sums over the included classes only.
    """

    loss_name: str
    value: float
    per_class: np.ndarray | None
    excluded_classes: tuple[int, ...]

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InvalidInputError("loss value must be finite")
        if self.per_class is not None:
            pc = np.asarray(self.per_class, dtype=np.float64)
            if any(np.isfinite(pc[k]) for k in self.excluded_classes):
                raise InvalidInputError("excluded classes must not carry per-class values")
            object.__setattr__(self, "per_class", _freeze(pc))

    @property
    def included_count(self) -> int:
        if self.per_class is None:
            return 0
        return len(self.per_class) - len(self.excluded_classes)

    @property
    def mean_value(self) -> float:
        """Value averaged over included classes (the reporting form)."""
        n = self.included_count
        return self.value / n if n else float("nan")


def _freeze(a: np.ndarray) -> np.ndarray:
    # Copy unconditionally so freezing never mutates a caller-owned buffer.
    out = np.array(a, dtype=np.float64, order="C", copy=True)
    out.flags.writeable = False
    return out


def _check_same_shape(a, b) -> None:
    if (a.height, a.width, a.classes) != (b.height, b.width, b.classes):
        raise InvalidInputError(
            f"shape mismatch: ({a.height}, {a.width}, {a.classes}) vs "
            f"({b.height}, {b.width}, {b.classes})"
        )


def expected_overlap(pred: SoftSegmentation, gt: SoftSegmentation) -> ExpectedOverlap:
    """Accumulate per-class expected intersection and union over all pixels."""
    _check_same_shape(pred, gt)
    phat, p = pred.values, gt.values
    ei = np.einsum("ik,ik->k", phat, p)
    eu = phat.sum(axis=0) + p.sum(axis=0) - ei
    return ExpectedOverlap(pred.classes, ei, eu, p.sum(axis=0), pred.pixels)


def merge(a: ExpectedOverlap, b: ExpectedOverlap) -> ExpectedOverlap:
    """Component-wise sum of two accumulators; associative and commutative."""
    if a.classes != b.classes:
        raise InvalidInputError("cannot merge accumulators with different class counts")
    return ExpectedOverlap(
        a.classes,
        a.intersection + b.intersection,
        a.union + b.union,
        a.gt_mass + b.gt_mass,
        a.pixel_count + b.pixel_count,
    )


def _excluded(active: np.ndarray) -> tuple[int, ...]:
    return tuple(int(k) for k in np.flatnonzero(~active))


def iou_objective(overlap: ExpectedOverlap) -> LossReport:
    """Expected-IOU gain: sum of EI[k]/EU[k] over active classes."""
    active = overlap.active_classes()
    per_class = np.full(overlap.classes, np.nan)
    per_class[active] = overlap.intersection[active] / overlap.union[active]
    value = float(per_class[active].sum()) if active.any() else 0.0
    return LossReport("iou_gain", value, per_class, _excluded(active))


def uoi_loss(overlap: ExpectedOverlap) -> LossReport:
    """Expected-UOI loss: sum of EU[k]/EI[k] over active classes.

    Minimum ``#active`` is attained exactly when prediction matches ground
    truth on every active class.  Requires EI > 0 on active classes, which
    the probability clamp guarantees.
    """
    active = overlap.active_classes()
    if np.any(active & (overlap.intersection <= 0.0)):
        raise DegenerateInputError(
            "expected intersection is zero for an active class; clamp predictions first"
        )
    per_class = np.full(overlap.classes, np.nan)
    per_class[active] = overlap.union[active] / overlap.intersection[active]
    value = float(per_class[active].sum()) if active.any() else 0.0
    return LossReport("uoi_loss", value, per_class, _excluded(active))


def cross_entropy(pred: SoftSegmentation, gt: SoftSegmentation) -> LossReport:
    """Pixel-averaged cross-entropy between soft distributions.

    The prediction is clamped away from zero before the log.
    """
    _check_same_shape(pred, gt)
    phat = pred.clamped().values
    p = gt.values
    per_class = -np.einsum("ik,ik->k", p, np.log(phat)) / pred.pixels
    active = p.sum(axis=0) > 0.0
    value = float(per_class[active].sum())
    per_class = np.where(active, per_class, np.nan)
    return LossReport("cross_entropy", value, per_class, _excluded(active))


def combined_value(uoi: LossReport, ce: LossReport, alpha: float = COMBINED_ALPHA) -> LossReport:
    """Weighted mix ``alpha * UOI + (1 - alpha) * CE`` as a report."""
    value = alpha * uoi.value + (1.0 - alpha) * ce.value
    excluded = tuple(sorted(set(uoi.excluded_classes) | set(ce.excluded_classes)))
    return LossReport(f"combined({alpha:g})", value, None, excluded)


# ---------------------------------------------------------------------------
# Score-space losses and their analytic gradients.
#
# The raw kernels below operate on plain (pixels, classes) arrays so the
# finite-difference harness can re-evaluate them cheaply.


def _probs_from_scores(z: np.ndarray, floor: bool = True) -> np.ndarray:
    """Stabilized softmax, optionally with the positivity floor applied row-wise.

    The floor keeps UOI defined (expected intersection stays positive) and
    cross-entropy logs finite.  The IOU gain takes the raw probabilities: it
    needs no floor, and flooring would fabricate an escape gradient at states
    where confident predictions have genuinely zero gradient.
    """
    shifted = z - z.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    if floor:
        np.clip(p, PROB_EPS, 1.0, out=p)
        p /= p.sum(axis=1, keepdims=True)
    return p


def _uses_floor(name: str) -> bool:
    return name != "iou"


def _overlap_sums(phat: np.ndarray, p: np.ndarray):
    ei = np.einsum("ik,ik->k", phat, p)
    both = phat.sum(axis=0) + p.sum(axis=0)
    return ei, both, both - ei


def _iou_value_raw(phat: np.ndarray, p: np.ndarray, active: np.ndarray) -> float:
    ei, _, eu = _overlap_sums(phat, p)
    return float((ei[active] / eu[active]).sum())


def _uoi_value_raw(phat: np.ndarray, p: np.ndarray, active: np.ndarray) -> float:
    ei, _, eu = _overlap_sums(phat, p)
    return float((eu[active] / ei[active]).sum())


def _ce_value_raw(phat: np.ndarray, p: np.ndarray, active: np.ndarray) -> float:
    return float(-(p * np.log(phat)).sum() / phat.shape[0])


def _chain_through_softmax(coef: np.ndarray, phat: np.ndarray) -> np.ndarray:
    # g[i,k] = sum_k' coef[i,k'] * phat[i,k'] * (1[k==k'] - phat[i,k])
    c = coef * phat
    return c - phat * c.sum(axis=1, keepdims=True)


def _iou_grad_raw(phat: np.ndarray, p: np.ndarray, active: np.ndarray) -> np.ndarray:
    ei, both, eu = _overlap_sums(phat, p)
    coef = np.zeros_like(phat)
    coef[:, active] = (p[:, active] * both[active] - ei[active]) / eu[active] ** 2
    return _chain_through_softmax(coef, phat)


def _uoi_grad_raw(phat: np.ndarray, p: np.ndarray, active: np.ndarray) -> np.ndarray:
    ei, both, _ = _overlap_sums(phat, p)
    if np.any(ei[active] <= 0.0):
        raise DegenerateInputError("expected intersection is zero for an active class")
    coef = np.zeros_like(phat)
    coef[:, active] = (ei[active] - p[:, active] * both[active]) / ei[active] ** 2
    return _chain_through_softmax(coef, phat)


def _ce_grad_raw(phat: np.ndarray, p: np.ndarray, active: np.ndarray) -> np.ndarray:
    return (phat - p) / phat.shape[0]


_VALUE_KERNELS = {"iou": _iou_value_raw, "uoi": _uoi_value_raw, "ce": _ce_value_raw}
_GRAD_KERNELS = {"iou": _iou_grad_raw, "uoi": _uoi_grad_raw, "ce": _ce_grad_raw}


def _gradient_field(kernel, z: ScoreMap, gt: SoftSegmentation, floor: bool) -> GradientField:
    if (z.height, z.width, z.classes) != (gt.height, gt.width, gt.classes):
        raise InvalidInputError("score map and ground truth shapes must match")
    phat = _probs_from_scores(z.scores, floor=floor)
    grads = kernel(phat, gt.values, gt.class_mass() > 0.0)
    return GradientField(z.height, z.width, z.classes, grads)


def grad_iou(z: ScoreMap, gt: SoftSegmentation) -> GradientField:
    """Gradient of the IOU gain w.r.t. pre-softmax scores (ascent direction)."""
    return _gradient_field(_iou_grad_raw, z, gt, floor=False)


def grad_uoi(z: ScoreMap, gt: SoftSegmentation) -> GradientField:
    """Gradient of the UOI loss w.r.t. pre-softmax scores (descent direction)."""
    return _gradient_field(_uoi_grad_raw, z, gt, floor=True)


def grad_cross_entropy(z: ScoreMap, gt: SoftSegmentation) -> GradientField:
    """Gradient of pixel-averaged cross-entropy: (softmax(z) - gt) / N."""
    return _gradient_field(_ce_grad_raw, z, gt, floor=True)


def score_loss(
    objective: str, z: ScoreMap, gt: SoftSegmentation, alpha: float = COMBINED_ALPHA
) -> tuple[float, GradientField]:
    """Value and analytic gradient of a named objective at a score map.

    ``objective`` is one of ``ce``, ``iou`` (a gain), ``uoi``, or ``combined``
    (``alpha * UOI + (1 - alpha) * CE``).
    """
    name = objective.lower()
    if name not in LOSS_NAMES:
        raise InvalidInputError(f"unknown objective {objective!r}; expected one of {LOSS_NAMES}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError("alpha must lie in [0, 1]")
    if (z.height, z.width, z.classes) != (gt.height, gt.width, gt.classes):
        raise InvalidInputError("score map and ground truth shapes must match")
    phat = _probs_from_scores(z.scores, floor=_uses_floor(name))
    p = gt.values
    active = gt.class_mass() > 0.0
    if name == "combined":
        value = alpha * _uoi_value_raw(phat, p, active) + (1.0 - alpha) * _ce_value_raw(
            phat, p, active
        )
        grads = alpha * _uoi_grad_raw(phat, p, active) + (1.0 - alpha) * _ce_grad_raw(
            phat, p, active
        )
    else:
        value = _VALUE_KERNELS[name](phat, p, active)
        grads = _GRAD_KERNELS[name](phat, p, active)
    return value, GradientField(z.height, z.width, z.classes, grads)


def combined_loss(
    z: ScoreMap, gt: SoftSegmentation, alpha: float = COMBINED_ALPHA
) -> tuple[LossReport, GradientField]:
    """Combined UOI/cross-entropy loss with its gradient.

    The gradient is the exact linear combination of the component gradients.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError("alpha must lie in [0, 1]")
    value, grads = score_loss("combined", z, gt, alpha=alpha)
    active = gt.class_mass() > 0.0
    report = LossReport(f"combined({alpha:g})", value, None, _excluded(active))
    return report, grads


def finite_diff_check(
    objective: str,
    z: ScoreMap,
    gt: SoftSegmentation,
    h: float = 1e-5,
    alpha: float = COMBINED_ALPHA,
) -> float:
    """Max relative error of the analytic gradient vs central differences.

    The numeric side is exactly (L(z + h e) - L(z - h e)) / 2h per coordinate.
    Perturbing one coordinate only changes one pixel's softmax row, so the
    loss difference is evaluated through the closed form of that single-row
    change; this avoids the catastrophic cancellation of subtracting two
    corpus-sized sums while computing the identical central difference.
    Returns ``max_i |analytic_i - numeric_i| / max(1e-8, |numeric_i|)``.
    """
    if h <= 0.0:
        raise InvalidInputError("step size must be positive")
    name = objective.lower()
    value_and_field = score_loss(objective, z, gt, alpha=alpha)
    analytic = value_and_field[1].grads

    p = gt.values
    active = gt.class_mass() > 0.0
    floor = _uses_floor(name)
    phat = _probs_from_scores(z.scores, floor=floor)
    ei, _, eu = _overlap_sums(phat, p)

    def loss_difference(i: int, pr: np.ndarray, mr: np.ndarray) -> float:
        # Exact L(plus row) - L(minus row) for the supported objectives.
        base = phat[i]
        prow = p[i]
        e_plus = pr - base
        e_minus = mr - base
        di_p, di_m = e_plus * prow, e_minus * prow  # EI shifts
        du_p, du_m = e_plus * (1.0 - prow), e_minus * (1.0 - prow)  # EU shifts
        out = 0.0
        if name in ("iou",):
            num = (eu * prow - ei * (1.0 - prow)) * (e_plus - e_minus)
            den = (eu + du_p) * (eu + du_m)
            out += float((num[active] / den[active]).sum())
        if name in ("uoi", "combined"):
            num = (ei * (1.0 - prow) - eu * prow) * (e_plus - e_minus)
            den = (ei + di_p) * (ei + di_m)
            part = float((num[active] / den[active]).sum())
            out += part if name == "uoi" else alpha * part
        if name in ("ce", "combined"):
            part = float(-(prow * (np.log(pr) - np.log(mr))).sum()) / phat.shape[0]
            out += part if name == "ce" else (1.0 - alpha) * part
        return out

    scores = z.scores
    k = z.classes
    numeric = np.empty_like(scores)
    for i in range(scores.shape[0]):
        row = scores[i]
        for c in range(k):
            bumped = np.tile(row, (2, 1))
            bumped[0, c] += h
            bumped[1, c] -= h
            rows = _probs_from_scores(bumped, floor=floor)
            numeric[i, c] = loss_difference(i, rows[0], rows[1]) / (2.0 * h)

    denom = np.maximum(1e-8, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck_suite(
    seed: int = 0,
    trials: int = 100,
    height: int = 8,
    width: int = 8,
    classes: int = 5,
    h: float = 1e-5,
    alpha: float = COMBINED_ALPHA,
) -> dict[str, float]:
    """Worst finite-difference relative error per loss over random instances.

    Each instance draws standard-normal scores and a uniform hard labeling.
    Deterministic given the seed.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n = height * width
    worst = dict.fromkeys(LOSS_NAMES, 0.0)
    for _ in range(trials):
        z = ScoreMap(height, width, classes, rng.standard_normal((n, classes)))
        labels = rng.integers(0, classes, size=n)
        gt = SoftSegmentation(height, width, classes, np.eye(classes)[labels])
        for name in LOSS_NAMES:
            err = finite_diff_check(name, z, gt, h=h, alpha=alpha)
            worst[name] = max(worst[name], err)
    return worst
