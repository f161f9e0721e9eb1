"""Grid containers, softmax, and the coarse/full resampling operations."""

import numpy as np
import pytest

from corpusseg import (
    HardSegmentation,
    InvalidInputError,
    ScoreMap,
    SoftSegmentation,
    SuperpixelMap,
    downsample_to_soft,
    patch_index,
    softmax,
    softmax_jacobian,
    upsample_naive,
    upsample_superpixel,
)


def _score_map(rows, height=None, width=None):
    rows = np.asarray(rows, dtype=np.float64)
    n, k = rows.shape
    if height is None:
        height, width = n, 1
    return ScoreMap(height, width, k, rows)


class TestSoftmax:
    def test_zero_scores_give_uniform(self):
        out = softmax(_score_map([[0.0, 0.0]]))
        np.testing.assert_allclose(out.values, [[0.5, 0.5]], atol=1e-15)

    def test_log_two_offset(self):
        """A lead of ln 2 over one alternative doubles its probability."""
        out = softmax(_score_map([[np.log(2.0), 0.0]]))
        np.testing.assert_allclose(out.values, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-12)

    def test_extreme_scores_saturate_without_overflow(self):
        out = softmax(_score_map([[1000.0, 0.0]]))
        np.testing.assert_allclose(out.values, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one_across_magnitudes(self):
        rng = np.random.default_rng(11)
        scores = rng.uniform(-1e4, 1e4, size=(64, 7))
        out = softmax(ScoreMap(8, 8, 7, scores))
        np.testing.assert_allclose(out.values.sum(axis=1), 1.0, atol=1e-12)
        assert out.values.min() >= 0.0

    def test_shape_carries_through(self):
        out = softmax(ScoreMap(2, 3, 4, np.zeros((6, 4))))
        assert (out.height, out.width, out.classes) == (2, 3, 4)


class TestSoftmaxJacobian:
    def test_uniform_two_class(self):
        j = softmax_jacobian(np.array([0.5, 0.5]))
        np.testing.assert_allclose(j, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)

    def test_saturated_row_has_zero_jacobian(self):
        j = softmax_jacobian(np.array([1.0, 0.0]))
        np.testing.assert_allclose(j, np.zeros((2, 2)), atol=1e-15)

    def test_asymmetric_row(self):
        j = softmax_jacobian(np.array([0.6, 0.4]))
        np.testing.assert_allclose(j, [[0.24, -0.24], [-0.24, 0.24]], atol=1e-15)

    def test_rows_and_columns_sum_to_zero(self):
        rng = np.random.default_rng(3)
        p = rng.dirichlet(np.ones(9))
        j = softmax_jacobian(p)
        np.testing.assert_allclose(j.sum(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(j.sum(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(j, j.T, atol=1e-15)

    @pytest.mark.parametrize("k", range(2, 22))
    def test_matches_finite_differences(self, k):
        """Central differences of the softmax map reproduce each column."""
        rng = np.random.default_rng(k)
        z = rng.standard_normal(k)
        p = np.exp(z - z.max())
        p /= p.sum()
        j = softmax_jacobian(p)
        h = 1e-6
        for c in range(k):
            zp, zm = z.copy(), z.copy()
            zp[c] += h
            zm[c] -= h
            pp = np.exp(zp - zp.max())
            pp /= pp.sum()
            pm = np.exp(zm - zm.max())
            pm /= pm.sum()
            numeric = (pp - pm) / (2.0 * h)
            denom = np.maximum(1e-8, np.abs(numeric))
            assert np.max(np.abs(j[:, c] - numeric) / denom) < 1e-6

    def test_rejects_non_distribution(self):
        with pytest.raises(InvalidInputError):
            softmax_jacobian(np.array([0.9, 0.9]))


class TestPatchIndex:
    def test_exact_quarters(self):
        idx = patch_index(4, 4, 2, 2)
        grid = idx.reshape(4, 4)
        np.testing.assert_array_equal(grid[:2, :2], 0)
        np.testing.assert_array_equal(grid[:2, 2:], 1)
        np.testing.assert_array_equal(grid[2:, :2], 2)
        np.testing.assert_array_equal(grid[2:, 2:], 3)

    def test_non_divisible_dimensions_are_balanced(self):
        """Patch populations differ by at most one row/column of pixels."""
        idx = patch_index(7, 5, 3, 2)
        counts = np.bincount(idx, minlength=6)
        assert counts.sum() == 35
        assert counts.min() >= 4 and counts.max() <= 9

    def test_identity_partition(self):
        idx = patch_index(3, 3, 3, 3)
        np.testing.assert_array_equal(idx, np.arange(9))

    def test_rejects_zero_and_oversized_coarse_dims(self):
        with pytest.raises(InvalidInputError):
            patch_index(4, 4, 0, 2)
        with pytest.raises(InvalidInputError):
            patch_index(4, 4, 5, 2)


class TestDownsample:
    def test_two_by_two_patch_frequencies(self):
        gt = HardSegmentation(2, 2, 3, np.array([1, 1, 2, 2]))
        out = downsample_to_soft(gt, 1, 1)
        np.testing.assert_allclose(out.values, [[0.0, 0.5, 0.5]], atol=1e-15)

    def test_constant_label_gives_one_hot(self):
        gt = HardSegmentation(6, 6, 4, np.full(36, 3))
        out = downsample_to_soft(gt, 2, 3)
        expect = np.zeros((6, 4))
        expect[:, 3] = 1.0
        np.testing.assert_array_equal(out.values, expect)

    def test_checkerboard_halves(self):
        rows = np.indices((4, 4)).sum(axis=0) % 2
        gt = HardSegmentation(4, 4, 2, rows.reshape(-1))
        out = downsample_to_soft(gt, 2, 2)
        np.testing.assert_allclose(out.values, np.full((4, 2), 0.5), atol=1e-15)

    def test_non_divisible_dims_yield_valid_distributions(self):
        rng = np.random.default_rng(5)
        gt = HardSegmentation(7, 5, 4, rng.integers(0, 4, size=35))
        out = downsample_to_soft(gt, 3, 2)
        np.testing.assert_allclose(out.values.sum(axis=1), 1.0, atol=1e-12)
        assert out.values.min() >= 0.0

    def test_rejects_zero_coarse_dimension(self):
        gt = HardSegmentation(2, 2, 2, np.zeros(4, dtype=int))
        with pytest.raises(InvalidInputError):
            downsample_to_soft(gt, 0, 1)


class TestUpsampleNaive:
    def test_single_patch_broadcast(self):
        coarse = SoftSegmentation(1, 1, 3, np.array([[0.2, 0.7, 0.1]]))
        out = upsample_naive(coarse, 3, 3)
        np.testing.assert_array_equal(out.labels, np.full(9, 1))

    def test_tie_breaks_to_lowest_class(self):
        coarse = SoftSegmentation(1, 1, 2, np.array([[0.5, 0.5]]))
        out = upsample_naive(coarse, 2, 2)
        np.testing.assert_array_equal(out.labels, np.zeros(4, dtype=int))

    def test_two_patch_split(self):
        coarse = SoftSegmentation(2, 1, 2, np.array([[0.9, 0.1], [0.1, 0.9]]))
        out = upsample_naive(coarse, 4, 2)
        np.testing.assert_array_equal(out.labels.reshape(4, 2)[:2], 0)
        np.testing.assert_array_equal(out.labels.reshape(4, 2)[2:], 1)

    def test_round_trip_on_patch_constant_labels(self):
        """Labels constant within each patch survive down/up exactly."""
        rng = np.random.default_rng(9)
        for trial in range(5):
            ch, cw = rng.integers(1, 5, size=2)
            fh, fw = ch * int(rng.integers(1, 4)), cw * int(rng.integers(1, 4))
            coarse_labels = rng.integers(0, 3, size=ch * cw)
            idx = patch_index(fh, fw, ch, cw)
            gt = HardSegmentation(fh, fw, 3, coarse_labels[idx])
            back = upsample_naive(downsample_to_soft(gt, ch, cw), fh, fw)
            np.testing.assert_array_equal(back.labels, gt.labels)


class TestUpsampleSuperpixel:
    def test_patch_aligned_superpixels_match_naive(self):
        rng = np.random.default_rng(21)
        for trial in range(10):
            fh, fw, ch, cw, k = 8, 6, 4, 2, 3
            probs = rng.dirichlet(np.ones(k), size=ch * cw)
            coarse = SoftSegmentation(ch, cw, k, probs)
            sp = SuperpixelMap(fh, fw, patch_index(fh, fw, ch, cw))
            got = upsample_superpixel(coarse, sp)
            want = upsample_naive(coarse, fh, fw)
            np.testing.assert_array_equal(got.labels, want.labels)

    def test_single_superpixel_averages_patches(self):
        """One segment spanning two equal-area patches takes the mean mix."""
        coarse = SoftSegmentation(2, 1, 2, np.array([[1.0, 0.0], [0.0, 1.0]]))
        sp = SuperpixelMap(4, 1, np.zeros(4, dtype=int))
        out = upsample_superpixel(coarse, sp)
        # tie at [0.5, 0.5] resolves to class 0
        np.testing.assert_array_equal(out.labels, np.zeros(4, dtype=int))

    def test_straddling_segments_use_area_weights(self):
        """Segments covering patches 75/25 vote with those proportions."""
        coarse = SoftSegmentation(2, 1, 2, np.array([[1.0, 0.0], [0.0, 1.0]]))
        ids = np.array([0, 0, 0, 1, 0, 1, 1, 1])
        out = upsample_superpixel(coarse, SuperpixelMap(8, 1, ids))
        # segment 0 mixes to [0.75, 0.25], segment 1 to [0.25, 0.75]
        np.testing.assert_array_equal(out.labels, np.where(ids == 0, 0, 1))


class TestContainers:
    def test_soft_rows_must_sum_to_one(self):
        with pytest.raises(InvalidInputError):
            SoftSegmentation(1, 1, 2, np.array([[0.7, 0.7]]))

    def test_soft_rejects_negative_mass(self):
        with pytest.raises(InvalidInputError):
            SoftSegmentation(1, 1, 2, np.array([[1.2, -0.2]]))

    def test_soft_rejects_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            SoftSegmentation(2, 2, 2, np.array([[1.0, 0.0]]))

    def test_clamped_keeps_rows_normalized_and_positive(self):
        s = SoftSegmentation(1, 1, 3, np.array([[1.0, 0.0, 0.0]]))
        c = s.clamped()
        assert c.values.min() > 0.0
        np.testing.assert_allclose(c.values.sum(axis=1), 1.0, atol=1e-12)
        # untouched rows shrink only by the renormalization
        np.testing.assert_allclose(c.values[0, 0], 1.0, atol=1e-6)

    def test_argmax_labels_round_trip_one_hot(self):
        gt = HardSegmentation(2, 2, 3, np.array([0, 2, 1, 0]))
        np.testing.assert_array_equal(gt.one_hot().argmax_labels().labels, gt.labels)

    def test_class_mass_sums_pixels(self):
        s = SoftSegmentation(1, 2, 2, np.array([[0.25, 0.75], [0.5, 0.5]]))
        np.testing.assert_allclose(s.class_mass(), [0.75, 1.25], atol=1e-15)

    def test_hard_rejects_out_of_range_labels(self):
        with pytest.raises(InvalidInputError):
            HardSegmentation(1, 2, 2, np.array([0, 2]))
        with pytest.raises(InvalidInputError):
            HardSegmentation(1, 2, 2, np.array([0, -1]))

    def test_score_map_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            ScoreMap(1, 1, 2, np.array([[np.nan, 0.0]]))

    def test_superpixel_ids_must_be_contiguous(self):
        with pytest.raises(InvalidInputError):
            SuperpixelMap(1, 3, np.array([0, 2, 2]))

    def test_superpixel_counts_segments(self):
        sp = SuperpixelMap(1, 4, np.array([1, 0, 1, 2]))
        assert sp.segments == 3

    def test_arrays_are_frozen(self):
        s = SoftSegmentation(1, 1, 2, np.array([[0.5, 0.5]]))
        with pytest.raises(ValueError):
            s.values[0, 0] = 0.9

    def test_source_buffer_stays_writable(self):
        buf = np.array([[0.5, 0.5]])
        SoftSegmentation(1, 1, 2, buf)
        buf[0, 0] = 0.25  # container froze a copy, not the caller's array
