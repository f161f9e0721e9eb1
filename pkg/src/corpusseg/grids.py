"""Segmentation grids at hard/soft and coarse/full resolutions.

Pixels are indexed row-major (``i = row * width + col``) and class 0 is
background by convention.  All containers freeze their arrays after
validation, so instances are immutable and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Floor applied to stored probabilities wherever a consumer needs them
# strictly positive (logs, UOI denominators).
PROB_EPS = 1e-7

# Row sums of a soft segmentation must match 1 this closely.
ROW_SUM_ATOL = 1e-6


class InvalidInputError(ValueError):
    """Raised when an input violates an operation's preconditions."""


class DegenerateInputError(ValueError):
    """Raised when an input is structurally valid but makes the result undefined."""


def _frozen(values: np.ndarray, dtype=np.float64) -> np.ndarray:
    # Copy unconditionally so freezing never mutates a caller-owned buffer.
    out = np.array(values, dtype=dtype, order="C", copy=True)
    out.flags.writeable = False
    return out


def _patch_edges(full: int, coarse: int) -> np.ndarray:
    """Boundary indices of the coarse partition: round(r * full / coarse)."""
    return np.round(np.arange(coarse + 1) * full / coarse).astype(np.int64)


def patch_index(full_h: int, full_w: int, coarse_h: int, coarse_w: int) -> np.ndarray:
    """Map each full-res pixel to the flat index of the coarse patch containing it.

    Returns an ``(full_h * full_w,)`` int array.  The partition is rectangular
    with boundaries at ``round(r * H / coarseH)``, deterministic and
    area-balanced for non-divisible dimensions.
    """
    if coarse_h < 1 or coarse_w < 1:
        raise InvalidInputError("coarse dimensions must be >= 1")
    if coarse_h > full_h or coarse_w > full_w:
        raise InvalidInputError("coarse dimensions must not exceed full dimensions")
    row_edges = _patch_edges(full_h, coarse_h)
    col_edges = _patch_edges(full_w, coarse_w)
    # searchsorted maps pixel row r to the patch row whose interval contains it
    patch_row = np.searchsorted(row_edges, np.arange(full_h), side="right") - 1
    patch_col = np.searchsorted(col_edges, np.arange(full_w), side="right") - 1
    return (patch_row[:, None] * coarse_w + patch_col[None, :]).reshape(-1)


@dataclass(frozen=True)
class SoftSegmentation:
    """Per-pixel probability distribution over ``classes`` classes.

    ``values`` has shape ``(height * width, classes)``; each row sums to 1
    within ``ROW_SUM_ATOL`` and entries lie in [0, 1].
    """

    height: int
    width: int
    classes: int
    values: np.ndarray

    def __post_init__(self):
        if self.classes < 2:
            raise InvalidInputError("need at least 2 classes")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.height * self.width, self.classes):
            raise InvalidInputError(
                f"values shape {vals.shape} != ({self.height * self.width}, {self.classes})"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("probabilities must be finite")
        if vals.min() < -ROW_SUM_ATOL or vals.max() > 1.0 + ROW_SUM_ATOL:
            raise InvalidInputError("probabilities must lie in [0, 1]")
        row_sums = vals.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_ATOL:
            raise InvalidInputError("each pixel's class distribution must sum to 1")
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def pixels(self) -> int:
        return self.height * self.width

    def clamped(self, eps: float = PROB_EPS) -> "SoftSegmentation":
        """Copy with probabilities floored at ``eps`` and rows renormalized.

        Keeps every entry strictly positive so logs and UOI denominators are
        well defined.
        """
        vals = np.clip(self.values, eps, 1.0)
        vals /= vals.sum(axis=1, keepdims=True)
        return SoftSegmentation(self.height, self.width, self.classes, vals)

    def argmax_labels(self) -> "HardSegmentation":
        """Hard segmentation taking each pixel's most probable class.

        Exact ties break toward the lowest class index (argmax convention),
        which favors background.
        """
        return HardSegmentation(
            self.height, self.width, self.classes, np.argmax(self.values, axis=1)
        )

    def class_mass(self) -> np.ndarray:
        """Total probability mass per class, summed over pixels."""
        return self.values.sum(axis=0)


@dataclass(frozen=True)
class HardSegmentation:
    """Integer label map; ``labels`` has shape ``(height * width,)``."""

    height: int
    width: int
    classes: int
    labels: np.ndarray

    def __post_init__(self):
        if self.classes < 2:
            raise InvalidInputError("need at least 2 classes")
        labels = np.asarray(self.labels)
        if labels.shape != (self.height * self.width,):
            raise InvalidInputError(
                f"labels shape {labels.shape} != ({self.height * self.width},)"
            )
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= self.classes:
            raise InvalidInputError("labels must lie in [0, classes)")
        object.__setattr__(self, "labels", _frozen(labels, dtype=np.int64))

    @property
    def pixels(self) -> int:
        return self.height * self.width

    def one_hot(self) -> SoftSegmentation:
        """Equivalent soft segmentation with a one-hot row per pixel."""
        vals = np.zeros((self.pixels, self.classes))
        vals[np.arange(self.pixels), self.labels] = 1.0
        return SoftSegmentation(self.height, self.width, self.classes, vals)


@dataclass(frozen=True)
class ScoreMap:
    """Unconstrained pre-softmax scores, shape ``(height * width, classes)``."""

    height: int
    width: int
    classes: int
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (self.height * self.width, self.classes):
            raise InvalidInputError(
                f"scores shape {scores.shape} != ({self.height * self.width}, {self.classes})"
            )
        if not np.all(np.isfinite(scores)):
            raise InvalidInputError("scores must be finite")
        object.__setattr__(self, "scores", _frozen(scores))

    @property
    def pixels(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class GradientField:
    """Gradient of a loss with respect to a ScoreMap, same shape."""

    height: int
    width: int
    classes: int
    grads: np.ndarray

    def __post_init__(self):
        grads = np.asarray(self.grads, dtype=np.float64)
        if grads.shape != (self.height * self.width, self.classes):
            raise InvalidInputError(
                f"grads shape {grads.shape} != ({self.height * self.width}, {self.classes})"
            )
        if not np.all(np.isfinite(grads)):
            raise InvalidInputError("gradients must be finite")
        object.__setattr__(self, "grads", _frozen(grads))


@dataclass(frozen=True)
class SuperpixelMap:
    """Full-resolution superpixel ids; ids form a contiguous range {0..S-1}."""

    height: int
    width: int
    ids: np.ndarray
    segments: int = field(init=False)

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.shape != (self.height * self.width,):
            raise InvalidInputError(
                f"ids shape {ids.shape} != ({self.height * self.width},)"
            )
        if ids.min(initial=0) < 0:
            raise InvalidInputError("superpixel ids must be nonnegative")
        n = int(ids.max()) + 1
        counts = np.bincount(ids.astype(np.int64), minlength=n)
        if np.any(counts == 0):
            raise InvalidInputError("superpixel ids must form a contiguous range with no empty segment")
        object.__setattr__(self, "ids", _frozen(ids, dtype=np.int64))
        object.__setattr__(self, "segments", n)


def softmax(scores: ScoreMap) -> SoftSegmentation:
    """Per-pixel softmax of a score map.

    Stabilized by subtracting each pixel's max score before exponentiation,
    so extreme magnitudes neither overflow nor lose the argmax.
    """
    z = scores.scores - scores.scores.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return SoftSegmentation(scores.height, scores.width, scores.classes, p)


def softmax_jacobian(prob_row: np.ndarray) -> np.ndarray:
    """Jacobian of softmax outputs w.r.t. its inputs at one pixel.

    ``J[k_out, k_in] = p[k_out] * (1[k_in == k_out] - p[k_in])``; every row
    and column sums to zero.
    """
    p = np.asarray(prob_row, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidInputError("expected a single pixel's probability row")
    if abs(p.sum() - 1.0) > ROW_SUM_ATOL:
        raise InvalidInputError("probability row must sum to 1")
    return np.diag(p) - np.outer(p, p)


def downsample_to_soft(gt: HardSegmentation, coarse_h: int, coarse_w: int) -> SoftSegmentation:
    """Soft coarse segmentation from empirical class frequencies per patch.

    The full grid is partitioned into ``coarse_h x coarse_w`` rectangular
    patches (boundaries at ``round(r * H / coarseH)``); each coarse pixel
    holds the class distribution observed inside its patch.
    """
    idx = patch_index(gt.height, gt.width, coarse_h, coarse_w)
    counts = np.zeros((coarse_h * coarse_w, gt.classes))
    np.add.at(counts, (idx, gt.labels), 1.0)
    counts /= counts.sum(axis=1, keepdims=True)
    return SoftSegmentation(coarse_h, coarse_w, gt.classes, counts)


def upsample_naive(coarse: SoftSegmentation, full_h: int, full_w: int) -> HardSegmentation:
    """Copy each coarse pixel's argmax into every full-res pixel of its patch."""
    idx = patch_index(full_h, full_w, coarse.height, coarse.width)
    coarse_labels = np.argmax(coarse.values, axis=1)
    return HardSegmentation(full_h, full_w, coarse.classes, coarse_labels[idx])


def upsample_superpixel(coarse: SoftSegmentation, sp: SuperpixelMap) -> HardSegmentation:
    """Label each superpixel by the area-weighted mix of overlapping patch distributions.

    Superpixel ``s`` gets ``dist_s = sum_patches (|s ∩ patch| / |s|) * p[patch]``
    and every pixel in ``s`` takes ``argmax(dist_s)`` (lowest index on ties).
    """
    idx = patch_index(sp.height, sp.width, coarse.height, coarse.width)
    # overlap[s, patch] = number of pixels shared by superpixel s and the patch
    flat = sp.ids * coarse.pixels + idx
    overlap = np.bincount(flat, minlength=sp.segments * coarse.pixels).reshape(
        sp.segments, coarse.pixels
    ).astype(np.float64)
    dist = overlap @ coarse.values
    dist /= overlap.sum(axis=1, keepdims=True)
    sp_labels = np.argmax(dist, axis=1)
    return HardSegmentation(sp.height, sp.width, coarse.classes, sp_labels[sp.ids])
