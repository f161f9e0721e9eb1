"""Synthetic rectangle-world corpora and perturbed proposal sets."""

import numpy as np
import pytest

from corpusseg import (
    HardSegmentation,
    InvalidInputError,
    SyntheticDataset,
    gen_proposals,
    gen_synthetic,
    oracle_select,
    proposal_quality,
)


class TestGenSynthetic:
    def test_same_seed_reproduces_the_corpus(self):
        a = gen_synthetic(seed=0, image_count=5, height=16, width=16, classes=4)
        b = gen_synthetic(seed=0, image_count=5, height=16, width=16, classes=4)
        for ia, ib in zip(a.images, b.images):
            np.testing.assert_array_equal(ia.features, ib.features)
            np.testing.assert_array_equal(ia.gt.labels, ib.gt.labels)

    def test_seeds_vary_the_corpus(self):
        a = gen_synthetic(seed=0, image_count=2, height=16, width=16)
        b = gen_synthetic(seed=1, image_count=2, height=16, width=16)
        assert not np.array_equal(a.images[0].features, b.images[0].features)

    def test_background_share_near_target(self):
        data = gen_synthetic(seed=0)
        assert 0.85 <= data.background_fraction() <= 0.95

    def test_every_class_appears_somewhere(self):
        data = gen_synthetic(seed=3, image_count=4, height=16, width=16, classes=5)
        seen = np.zeros(5, dtype=bool)
        for im in data.images:
            seen[np.unique(im.gt.labels)] = True
        assert seen.all()

    def test_shapes_and_metadata(self):
        data = gen_synthetic(seed=1, image_count=3, height=8, width=12, classes=3, feature_dim=6)
        assert len(data.images) == 3
        assert data.feature_dim == 6
        for im in data.images:
            assert im.features.shape == (96, 6)
            assert im.gt.height == 8 and im.gt.width == 12

    def test_rejects_unusable_configurations(self):
        with pytest.raises(InvalidInputError):
            gen_synthetic(seed=0, classes=1)
        with pytest.raises(InvalidInputError):
            gen_synthetic(seed=0, classes=5, feature_dim=3)
        with pytest.raises(InvalidInputError):
            gen_synthetic(seed=0, bg_fraction=1.0)
        with pytest.raises(InvalidInputError):
            gen_synthetic(seed=0, image_count=0)

    def test_dataset_checks_measured_background_share(self):
        data = gen_synthetic(seed=2, image_count=2, height=16, width=16)
        with pytest.raises(InvalidInputError):
            SyntheticDataset(0, data.classes, data.feature_dim, 0.2, data.images)


class TestGenProposals:
    def _gt(self, seed=0):
        rng = np.random.default_rng(seed)
        return HardSegmentation(8, 8, 3, rng.integers(0, 3, size=64))

    def test_unperturbed_members_equal_ground_truth(self):
        gt = self._gt()
        pset = gen_proposals(gt, 3, seed=1, flip_rate=0.0, shift_max=0)
        for member in pset.full_res:
            np.testing.assert_array_equal(member.labels, gt.labels)
        assert oracle_select(pset, gt)[1] == 1.0

    def test_include_gt_appends_the_truth_last(self):
        gt = self._gt()
        pset = gen_proposals(gt, 3, seed=1, include_gt=True)
        assert pset.size == 4
        np.testing.assert_array_equal(pset.full_res[-1].labels, gt.labels)

    def test_member_count_without_gt(self):
        pset = gen_proposals(self._gt(), 5, seed=2)
        assert pset.size == 5

    def test_same_seed_reproduces_members(self):
        gt = self._gt()
        a = gen_proposals(gt, 4, seed=7)
        b = gen_proposals(gt, 4, seed=7)
        for ma, mb in zip(a.full_res, b.full_res):
            np.testing.assert_array_equal(ma.labels, mb.labels)

    def test_default_coarse_dims_are_a_quarter(self):
        pset = gen_proposals(self._gt(), 1, seed=0)
        assert (pset.coarse[0].height, pset.coarse[0].width) == (2, 2)

    def test_explicit_coarse_dims(self):
        pset = gen_proposals(self._gt(), 1, seed=0, coarse_height=4, coarse_width=2)
        assert (pset.coarse[0].height, pset.coarse[0].width) == (4, 2)

    def test_quality_degrades_as_the_flip_rate_grows(self):
        """Mean member quality falls monotonically across perturbation levels."""
        gt = self._gt(seed=5)
        rates = (0.05, 0.2, 0.4, 0.6)
        means = []
        for rate in rates:
            vals = []
            for seed in range(15):
                pset = gen_proposals(gt, 3, seed=seed, flip_rate=rate, shift_max=0)
                vals.extend(proposal_quality(f, gt) for f in pset.full_res)
            means.append(np.mean(vals))
        assert all(a > b for a, b in zip(means, means[1:])), means

    def test_image_id_defaults_and_overrides(self):
        gt = self._gt()
        assert gen_proposals(gt, 1, seed=0).image_id == "synthetic"
        assert gen_proposals(gt, 1, seed=0, image_id="img7").image_id == "img7"

    def test_rejects_invalid_arguments(self):
        gt = self._gt()
        with pytest.raises(InvalidInputError):
            gen_proposals(gt, 0, seed=0)
        with pytest.raises(InvalidInputError):
            gen_proposals(gt, 1, seed=0, flip_rate=1.5)
        with pytest.raises(InvalidInputError):
            gen_proposals(gt, 1, seed=0, shift_max=-1)
