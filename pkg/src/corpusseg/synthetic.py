"""Seeded synthetic corpora: rectangle worlds with noisy per-pixel features.

Ground truths are foreground rectangles painted over a background canvas
(class 0).  Features are the one-hot of the true class embedded in the first
K of D dimensions plus Gaussian noise, so a linear model can fit the data but
not perfectly.  Everything is deterministic given the seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import HardSegmentation, InvalidInputError
from .rerank import ProposalSet

FEATURE_NOISE_SIGMA = 0.5

# How far the measured corpus background fraction may sit from the target.
BG_FRACTION_TOL = 0.05


@dataclass(frozen=True)
class SyntheticImage:
    """Per-pixel feature rows (row-major) paired with the true label map."""

    features: np.ndarray
    gt: HardSegmentation

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64, copy=True)
        if f.ndim != 2 or f.shape[0] != self.gt.pixels:
            raise InvalidInputError("features must have one row per pixel")
        if not np.all(np.isfinite(f)):
            raise InvalidInputError("features must be finite")
        f.flags.writeable = False
        object.__setattr__(self, "features", f)


@dataclass(frozen=True)
class SyntheticDataset:
    seed: int
    classes: int
    feature_dim: int
    bg_target: float
    images: tuple[SyntheticImage, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        if not self.images:
            raise InvalidInputError("dataset needs at least one image")
        for im in self.images:
            if im.gt.classes != self.classes or im.features.shape[1] != self.feature_dim:
                raise InvalidInputError("images must share the class and feature dimensions")
        measured = self.background_fraction()
        if abs(measured - self.bg_target) > BG_FRACTION_TOL:
            raise InvalidInputError(
                f"corpus background fraction {measured:.3f} misses target {self.bg_target:.3f}"
            )

    def background_fraction(self) -> float:
        bg = sum(int((im.gt.labels == 0).sum()) for im in self.images)
        total = sum(im.gt.pixels for im in self.images)
        return bg / total


def _rect_bounds(rng: np.random.Generator, height: int, width: int):
    lo_h, hi_h = max(1, height // 10), min(height, max(2, height // 5))
    lo_w, hi_w = max(1, width // 10), min(width, max(2, width // 5))
    h = int(rng.integers(lo_h, hi_h + 1))
    w = int(rng.integers(lo_w, hi_w + 1))
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    return top, left, h, w


def gen_synthetic(
    seed: int,
    image_count: int = 50,
    height: int = 32,
    width: int = 32,
    classes: int = 5,
    feature_dim: int = 8,
    bg_fraction: float = 0.9,
) -> SyntheticDataset:
    """Build a rectangle-world corpus hitting the requested background share.

    Foreground classes cycle round-robin over painted rectangles and every
    class is guaranteed to appear somewhere in the corpus.
    """
    if classes < 2:
        raise InvalidInputError("need at least 2 classes")
    if feature_dim < classes:
        raise InvalidInputError("feature dimension must be >= class count")
    if image_count < 1 or height < 1 or width < 1:
        raise InvalidInputError("image count and dimensions must be positive")
    if not 0.0 <= bg_fraction < 1.0:
        raise InvalidInputError("background fraction must lie in [0, 1)")

    rng = np.random.default_rng(seed)
    fg_needed = int(round((1.0 - bg_fraction) * height * width))
    label_maps = []
    next_class = 0
    for _ in range(image_count):
        labels = np.zeros((height, width), dtype=np.int64)
        while np.count_nonzero(labels) < fg_needed:
            top, left, h, w = _rect_bounds(rng, height, width)
            labels[top : top + h, left : left + w] = 1 + next_class % (classes - 1)
            next_class += 1
        label_maps.append(labels)

    # Presence guarantee: paint a small patch of any class the corpus missed.
    present = np.zeros(classes, dtype=bool)
    for labels in label_maps:
        present[np.unique(labels)] = True
    for k in np.flatnonzero(~present):
        labels = label_maps[int(k) % image_count]
        side = min(2, height, width)
        top = int(rng.integers(0, height - side + 1))
        left = int(rng.integers(0, width - side + 1))
        labels[top : top + side, left : left + side] = k

    images = []
    for labels in label_maps:
        flat = labels.reshape(-1)
        feats = rng.normal(0.0, FEATURE_NOISE_SIGMA, size=(flat.size, feature_dim))
        feats[np.arange(flat.size), flat] += 1.0
        images.append(
            SyntheticImage(feats, HardSegmentation(height, width, classes, flat))
        )
    return SyntheticDataset(seed, classes, feature_dim, bg_fraction, tuple(images))


def gen_proposals(
    gt: HardSegmentation,
    count: int,
    seed: int,
    flip_rate: float = 0.2,
    shift_max: int = 2,
    include_gt: bool = False,
    coarse_height: int | None = None,
    coarse_width: int | None = None,
    image_id: str = "synthetic",
) -> ProposalSet:
    """Perturb a ground truth into a proposal set (plus gt itself on request).

    Each member is the gt translated by up to shift_max pixels (wrapping) with
    random rectangles relabeled until about flip_rate of the pixels changed
    ownership.  Coarse members are the patch-frequency downsamples.
    """
    if count < 1:
        raise InvalidInputError("need at least one proposal")
    if not 0.0 <= flip_rate <= 1.0:
        raise InvalidInputError("flip rate must lie in [0, 1]")
    if shift_max < 0:
        raise InvalidInputError("shift_max must be nonnegative")

    rng = np.random.default_rng(seed)
    h, w, k = gt.height, gt.width, gt.classes
    base = gt.labels.reshape(h, w)
    members = []
    for _ in range(count):
        labels = base.copy()
        if shift_max > 0:
            dy, dx = rng.integers(-shift_max, shift_max + 1, size=2)
            labels = np.roll(labels, (int(dy), int(dx)), axis=(0, 1))
        target = int(round(flip_rate * h * w))
        painted = np.zeros((h, w), dtype=bool)
        while int(painted.sum()) < target:
            top, left, rh, rw = _rect_bounds(rng, h, w)
            labels[top : top + rh, left : left + rw] = int(rng.integers(0, k))
            painted[top : top + rh, left : left + rw] = True
        members.append(HardSegmentation(h, w, k, labels.reshape(-1)))
    if include_gt:
        members.append(gt)

    ch = coarse_height if coarse_height is not None else max(1, h // 4)
    cw = coarse_width if coarse_width is not None else max(1, w // 4)
    return ProposalSet.from_full_res(image_id, members, ch, cw)
