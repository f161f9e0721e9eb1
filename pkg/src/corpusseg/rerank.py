"""Scoring and selection among candidate segmentations for one image.

Three selection strategies over a set of coarse proposals:

* symmetric-KL score against the model's own soft output, with a small
  penalty on proposal background mass (over-predicted in practice),
* a linear ranker over KL + expected-overlap features, trained with a
  pairwise hinge loss,
* the oracle, which peeks at ground truth and upper-bounds everything else.

Lower KL score is better; higher rank score is better.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grids import (
    HardSegmentation,
    InvalidInputError,
    DegenerateInputError,
    PROB_EPS,
    SoftSegmentation,
    downsample_to_soft,
)
from .hardmetrics import confusion_counts, mean_iou
from .softloss import expected_overlap

# Weight on proposal background mass inside the KL score.
KL_BG_PENALTY = 0.02

# Pairwise ranker training defaults.
RANKER_L2 = 1e-3
RANKER_LR = 1e-2
RANKER_EPOCHS = 50

_EMPTY = np.zeros(0)


@dataclass(frozen=True)
class ProposalSet:
    """Candidate segmentations for one image, coarse and optionally full-res.

    When full-res members are present, each coarse member must be exactly the
    patch-frequency downsample of its full-res counterpart.
    """

    image_id: str
    coarse: tuple[SoftSegmentation, ...]
    full_res: tuple[HardSegmentation, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "coarse", tuple(self.coarse))
        if not self.coarse:
            raise InvalidInputError("a proposal set needs at least one member")
        c0 = self.coarse[0]
        for c in self.coarse:
            if (c.height, c.width, c.classes) != (c0.height, c0.width, c0.classes):
                raise InvalidInputError("coarse proposals must share dims and classes")
        if self.full_res is not None:
            object.__setattr__(self, "full_res", tuple(self.full_res))
            if len(self.full_res) != len(self.coarse):
                raise InvalidInputError("full-res and coarse member counts differ")
            f0 = self.full_res[0]
            for f, c in zip(self.full_res, self.coarse):
                if (f.height, f.width, f.classes) != (f0.height, f0.width, f0.classes):
                    raise InvalidInputError("full-res proposals must share dims and classes")
                if f.classes != c.classes:
                    raise InvalidInputError("full-res and coarse class counts differ")
                expect = downsample_to_soft(f, c.height, c.width)
                if not np.allclose(expect.values, c.values, atol=1e-9):
                    raise InvalidInputError(
                        f"coarse member of {self.image_id!r} is not the downsample of its full-res member"
                    )

    @classmethod
    def from_full_res(
        cls,
        image_id: str,
        full_res: Sequence[HardSegmentation],
        coarse_height: int,
        coarse_width: int,
    ) -> "ProposalSet":
        coarse = tuple(downsample_to_soft(f, coarse_height, coarse_width) for f in full_res)
        return cls(image_id, coarse, tuple(full_res))

    @property
    def size(self) -> int:
        return len(self.coarse)


@dataclass(frozen=True)
class FeatureVector:
    """Per-proposal features: 2 KL dims + 4 expected-overlap dims per class.

    ``extra`` is an opaque slot for externally computed feature blocks; it is
    appended verbatim by :meth:`as_array`.
    """

    classes: int
    kl_forward: float
    kl_backward: float
    intersection: np.ndarray
    union: np.ndarray
    ratio_iu: np.ndarray
    ratio_ui: np.ndarray
    extra: np.ndarray = field(default_factory=lambda: _EMPTY)

    def __post_init__(self):
        k = self.classes
        for name in ("intersection", "union", "ratio_iu", "ratio_ui"):
            if np.asarray(getattr(self, name)).shape != (k,):
                raise InvalidInputError(f"{name} must have shape (classes,)")

    def __len__(self) -> int:
        return 2 + 4 * self.classes + len(self.extra)

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.kl_forward, self.kl_backward],
                self.intersection,
                self.union,
                self.ratio_iu,
                self.ratio_ui,
                self.extra,
            ]
        )


@dataclass(frozen=True)
class RankModel:
    """Linear scorer over standardized features; higher score ranks first."""

    weights: np.ndarray
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    regularization: float
    trained_epochs: int

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        m = np.array(self.feature_mean, dtype=np.float64, copy=True)
        s = np.array(self.feature_scale, dtype=np.float64, copy=True)
        if w.ndim != 1 or m.shape != w.shape or s.shape != w.shape:
            raise InvalidInputError("weights and standardization vectors must share one length")
        if np.any(s <= 0.0):
            raise InvalidInputError("feature scales must be positive")
        for name, a in (("weights", w), ("feature_mean", m), ("feature_scale", s)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def score(self, features: FeatureVector) -> float:
        phi = features.as_array()
        if phi.shape != self.weights.shape:
            raise InvalidInputError(
                f"feature length {len(phi)} does not match model dim {self.dim}"
            )
        return float(self.weights @ ((phi - self.feature_mean) / self.feature_scale))


def _paired_clamped(pred: SoftSegmentation, proposal: SoftSegmentation):
    if (pred.height, pred.width, pred.classes) != (
        proposal.height,
        proposal.width,
        proposal.classes,
    ):
        raise InvalidInputError("prediction and proposal shapes must match")
    return pred.clamped().values, proposal.clamped().values


def kl_score(
    pred: SoftSegmentation, proposal: SoftSegmentation, bg_penalty: float = KL_BG_PENALTY
) -> float:
    """Symmetric KL between prediction and proposal plus background penalty.

    Sum over pixels of KL(pred||prop) + KL(prop||pred) + bg_penalty * prop[i, 0],
    natural log, both distributions clamped away from zero.  Lower is better.
    """
    if not np.isfinite(bg_penalty):
        raise InvalidInputError("background penalty must be finite")
    p, q = _paired_clamped(pred, proposal)
    log_ratio = np.log(p) - np.log(q)
    forward = float(np.sum(p * log_ratio))
    backward = float(-np.sum(q * log_ratio))
    return forward + backward + bg_penalty * float(q[:, 0].sum())


def select_by_score(
    pred: SoftSegmentation, proposals: ProposalSet, bg_penalty: float = KL_BG_PENALTY
) -> int:
    """Index of the KL-minimal proposal; ties go to the lowest index."""
    scores = [kl_score(pred, c, bg_penalty) for c in proposals.coarse]
    return int(np.argmin(scores))


def proposal_features(pred: SoftSegmentation, proposal: SoftSegmentation) -> FeatureVector:
    """KL and expected-overlap features of one (prediction, proposal) pair."""
    p, q = _paired_clamped(pred, proposal)
    log_ratio = np.log(p) - np.log(q)
    kl_f = float(np.sum(p * log_ratio))
    kl_b = float(-np.sum(q * log_ratio))
    ov = expected_overlap(
        SoftSegmentation(pred.height, pred.width, pred.classes, p),
        SoftSegmentation(pred.height, pred.width, pred.classes, q),
    )
    # EU > 0 always holds post-clamp; EI gets a floor so ratio_ui stays finite.
    floor = PROB_EPS * pred.pixels
    ei_safe = np.maximum(ov.intersection, floor)
    return FeatureVector(
        classes=pred.classes,
        kl_forward=kl_f,
        kl_backward=kl_b,
        intersection=ov.intersection.copy(),
        union=ov.union.copy(),
        ratio_iu=ov.intersection / ov.union,
        ratio_ui=ov.union / ei_safe,
    )


def _quality_pairs(qualities: np.ndarray) -> list[tuple[int, int]]:
    best = int(np.argmax(qualities))
    return [(best, m) for m in range(len(qualities)) if qualities[m] < qualities[best]]


def train_ranker(
    train_sets: Sequence[tuple[SoftSegmentation, ProposalSet, Sequence[float]]],
    regularization: float = RANKER_L2,
    epochs: int = RANKER_EPOCHS,
    learning_rate: float = RANKER_LR,
    seed: int = 0,
) -> RankModel:
    """Fit the linear ranker with a pairwise hinge loss.

    Each training example is (prediction, proposal set, per-proposal quality).
    Pairs pit the per-image best proposal against every strictly worse member;
    subgradient steps use max(0, 1 - w.(phi+ - phi-)) with an L2 penalty and a
    1/sqrt(epoch) learning-rate decay.  Features are standardized to zero mean
    and unit variance on the training data; the transform is stored in the
    model.  Deterministic given the seed.
    """
    if epochs < 1:
        raise InvalidInputError("epochs must be >= 1")
    if regularization < 0.0 or learning_rate <= 0.0:
        raise InvalidInputError("need regularization >= 0 and learning_rate > 0")

    features: list[np.ndarray] = []
    pairs: list[tuple[int, int]] = []  # indices into `features`
    for pred, pset, qualities in train_sets:
        q = np.asarray(qualities, dtype=np.float64)
        if q.shape != (pset.size,):
            raise InvalidInputError("quality vector length must match the proposal count")
        base = len(features)
        features.extend(proposal_features(pred, c).as_array() for c in pset.coarse)
        pairs.extend((base + b, base + w) for b, w in _quality_pairs(q))
    if not features:
        raise InvalidInputError("no training data")
    if not pairs:
        raise DegenerateInputError("no quality differences anywhere; nothing to rank")

    x = np.stack(features)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    scale = np.where(std > 1e-12, std, 1.0)
    x = (x - mean) / scale

    rng = np.random.default_rng(seed)
    w = np.zeros(x.shape[1])
    order = np.arange(len(pairs))
    for epoch in range(1, epochs + 1):
        lr = learning_rate / np.sqrt(epoch)
        rng.shuffle(order)
        for idx in order:
            better, worse = pairs[idx]
            delta = x[better] - x[worse]
            grad = regularization * w
            if w @ delta < 1.0:
                grad = grad - delta
            w = w - lr * grad
    return RankModel(w, mean, scale, regularization, epochs)


def rank_select(model: RankModel, pred: SoftSegmentation, proposals: ProposalSet) -> int:
    """Index of the proposal with the highest linear score; first on ties."""
    scores = [model.score(proposal_features(pred, c)) for c in proposals.coarse]
    return int(np.argmax(scores))


def proposal_quality(proposal: HardSegmentation, gt: HardSegmentation) -> float:
    """Single-image mean IOU over classes present in gt or the proposal."""
    return mean_iou(confusion_counts([proposal], [gt]))


def oracle_select(proposals: ProposalSet, gt: HardSegmentation) -> tuple[int, float]:
    """Best full-res proposal by per-image mean IOU, with its quality.

    Upper-bounds every selection strategy on this image by construction.
    """
    if proposals.full_res is None:
        raise InvalidInputError("oracle selection needs full-res proposals")
    qualities = [proposal_quality(f, gt) for f in proposals.full_res]
    best = int(np.argmax(qualities))
    return best, float(qualities[best])


def random_select(proposals: ProposalSet, rng: np.random.Generator) -> int:
    """Uniform random index, for the baseline row in reports."""
    return int(rng.integers(proposals.size))
