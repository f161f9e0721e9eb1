"""KL scoring, proposal features, and the learned pairwise ranker."""

import numpy as np
import pytest

from corpusseg import (
    DegenerateInputError,
    HardSegmentation,
    InvalidInputError,
    ProposalSet,
    RankModel,
    SoftSegmentation,
    downsample_to_soft,
    gen_proposals,
    kl_score,
    oracle_select,
    proposal_features,
    proposal_quality,
    random_select,
    rank_select,
    select_by_score,
    train_ranker,
)


def _soft(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return SoftSegmentation(rows.shape[0], 1, rows.shape[1], rows)


def _random_gt(rng, height=8, width=8, classes=3):
    return HardSegmentation(height, width, classes, rng.integers(0, classes, size=height * width))


def _training_sets(rng, images=6):
    """Separable toy data: the embedded gt member is always the best proposal."""
    sets = []
    for i in range(images):
        gt = _random_gt(rng)
        pset = gen_proposals(gt, 3, seed=100 + i, flip_rate=0.3, include_gt=True)
        pred = downsample_to_soft(gt, 2, 2)
        qualities = [proposal_quality(f, gt) for f in pset.full_res]
        sets.append((pred, pset, qualities))
    return sets


class TestKlScore:
    def test_identical_distributions_score_only_the_penalty(self):
        s = _soft([[0.5, 0.5]])
        assert kl_score(s, s, bg_penalty=0.0) == 0.0
        assert abs(kl_score(s, s) - 0.01) < 1e-15

    def test_opposed_binary_distributions(self):
        a = _soft([[0.75, 0.25]])
        b = _soft([[0.25, 0.75]])
        want = np.log(3.0) + 0.02 * 0.25
        assert abs(kl_score(a, b) - want) < 1e-12

    def test_nonnegative_without_penalty(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            a = _soft(rng.dirichlet(np.ones(4), size=6))
            b = _soft(rng.dirichlet(np.ones(4), size=6))
            assert kl_score(a, b, bg_penalty=0.0) >= 0.0

    def test_symmetric_without_penalty(self):
        rng = np.random.default_rng(1)
        a = _soft(rng.dirichlet(np.ones(3), size=4))
        b = _soft(rng.dirichlet(np.ones(3), size=4))
        assert abs(kl_score(a, b, bg_penalty=0.0) - kl_score(b, a, bg_penalty=0.0)) < 1e-12

    def test_penalty_disfavors_background_heavy_proposals(self):
        pred = _soft([[0.5, 0.5]])
        bg_heavy = _soft([[0.9, 0.1]])
        fg_heavy = _soft([[0.1, 0.9]])
        # symmetric KL parts are equal by construction; only the penalty differs
        assert kl_score(pred, bg_heavy) > kl_score(pred, fg_heavy)

    def test_rejects_shape_mismatch_and_bad_penalty(self):
        with pytest.raises(InvalidInputError):
            kl_score(_soft([[0.5, 0.5]]), _soft([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(InvalidInputError):
            kl_score(_soft([[0.5, 0.5]]), _soft([[0.5, 0.5]]), bg_penalty=np.nan)


class TestSelectByScore:
    def test_singleton_set(self):
        member = _soft([[0.5, 0.5]])
        assert select_by_score(member, ProposalSet("im", (member,))) == 0

    def test_ties_resolve_to_lowest_index(self):
        pred = _soft([[0.5, 0.5]])
        twin = _soft([[0.5, 0.5]])
        assert select_by_score(pred, ProposalSet("im", (twin, twin, twin))) == 0

    def test_agrees_with_bruteforce_argmin(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            pred = _soft(rng.dirichlet(np.ones(3), size=4))
            members = tuple(_soft(rng.dirichlet(np.ones(3), size=4)) for _ in range(5))
            pset = ProposalSet("im", members)
            scores = [kl_score(pred, m) for m in members]
            assert select_by_score(pred, pset) == int(np.argmin(scores))

    def test_zero_penalty_recovers_embedded_prediction(self):
        rng = np.random.default_rng(3)
        pred = _soft(rng.dirichlet(np.ones(3), size=4))
        others = tuple(_soft(rng.dirichlet(np.ones(3), size=4)) for _ in range(3))
        pset = ProposalSet("im", others + (pred,))
        assert select_by_score(pred, pset, bg_penalty=0.0) == len(others)


class TestProposalFeatures:
    def test_identical_one_hot_pair(self):
        seg = _soft([[1.0, 0.0], [0.0, 1.0]])
        f = proposal_features(seg, seg)
        assert f.kl_forward == 0.0 and f.kl_backward == 0.0
        np.testing.assert_allclose(f.ratio_iu, 1.0, atol=1e-5)
        np.testing.assert_allclose(f.ratio_ui, 1.0, atol=1e-5)

    def test_hand_example_ratios(self):
        pred = _soft([[0.6, 0.4], [0.2, 0.8]])
        gt = _soft([[1.0, 0.0], [0.0, 1.0]])
        f = proposal_features(pred, gt)
        np.testing.assert_allclose(f.intersection, [0.6, 0.8], atol=1e-5)
        np.testing.assert_allclose(f.union, [1.2, 1.4], atol=1e-5)
        np.testing.assert_allclose(f.ratio_iu, [0.5, 4.0 / 7.0], atol=1e-5)

    def test_length_scales_with_classes(self):
        rng = np.random.default_rng(4)
        for k in (2, 5, 21):
            a = _soft(rng.dirichlet(np.ones(k), size=3))
            b = _soft(rng.dirichlet(np.ones(k), size=3))
            f = proposal_features(a, b)
            assert len(f) == 2 + 4 * k
            assert f.as_array().shape == (2 + 4 * k,)
        assert len(proposal_features(a, b)) == 86

    def test_array_layout_keeps_blocks_in_order(self):
        pred = _soft([[0.6, 0.4]])
        prop = _soft([[0.5, 0.5]])
        f = proposal_features(pred, prop)
        arr = f.as_array()
        assert arr[0] == f.kl_forward and arr[1] == f.kl_backward
        np.testing.assert_array_equal(arr[2:4], f.intersection)
        np.testing.assert_array_equal(arr[6:8], f.ratio_iu)


class TestRankerTraining:
    def test_learns_to_put_the_best_member_first(self):
        rng = np.random.default_rng(5)
        sets = _training_sets(rng)
        model = train_ranker(sets, seed=0)
        for pred, pset, qualities in sets:
            assert rank_select(model, pred, pset) == int(np.argmax(qualities))

    def test_training_is_deterministic(self):
        rng = np.random.default_rng(6)
        sets = _training_sets(rng, images=3)
        a = train_ranker(sets, seed=9)
        b = train_ranker(sets, seed=9)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_stronger_regularization_shrinks_weights(self):
        rng = np.random.default_rng(7)
        sets = _training_sets(rng, images=3)
        loose = train_ranker(sets, regularization=1e-3, seed=0)
        tight = train_ranker(sets, regularization=1.0, seed=0)
        assert np.linalg.norm(tight.weights) < np.linalg.norm(loose.weights)

    def test_rejects_flat_quality_vectors(self):
        rng = np.random.default_rng(8)
        gt = _random_gt(rng)
        pset = gen_proposals(gt, 3, seed=0, include_gt=False)
        pred = downsample_to_soft(gt, 2, 2)
        with pytest.raises(DegenerateInputError):
            train_ranker([(pred, pset, [0.5, 0.5, 0.5])])

    def test_rejects_bad_hyperparameters(self):
        rng = np.random.default_rng(9)
        sets = _training_sets(rng, images=1)
        with pytest.raises(InvalidInputError):
            train_ranker(sets, epochs=0)
        with pytest.raises(InvalidInputError):
            train_ranker(sets, learning_rate=0.0)
        with pytest.raises(InvalidInputError):
            train_ranker([])

    def test_quality_length_must_match_set_size(self):
        rng = np.random.default_rng(10)
        gt = _random_gt(rng)
        pset = gen_proposals(gt, 3, seed=0, include_gt=True)
        pred = downsample_to_soft(gt, 2, 2)
        with pytest.raises(InvalidInputError):
            train_ranker([(pred, pset, [1.0, 0.0])])


class TestRankSelect:
    def test_handcrafted_overlap_model_maximizes_overlap_ratio(self):
        """Unit weights on the EI/EU block reduce selection to that sum."""
        k = 3
        dim = 2 + 4 * k
        weights = np.zeros(dim)
        weights[2 + 2 * k : 2 + 3 * k] = 1.0
        model = RankModel(weights, np.zeros(dim), np.ones(dim), 0.0, 1)
        rng = np.random.default_rng(11)
        pred = _soft(rng.dirichlet(np.ones(k), size=6))
        members = tuple(_soft(rng.dirichlet(np.ones(k), size=6)) for _ in range(6))
        pset = ProposalSet("im", members)
        sums = [proposal_features(pred, m).ratio_iu.sum() for m in members]
        assert rank_select(model, pred, pset) == int(np.argmax(sums))

    def test_model_rejects_feature_dim_mismatch(self):
        model = RankModel(np.ones(3), np.zeros(3), np.ones(3), 0.0, 1)
        with pytest.raises(InvalidInputError):
            model.score(proposal_features(_soft([[0.5, 0.5]]), _soft([[0.5, 0.5]])))


class TestOracleAndRandom:
    def test_quality_of_exact_match_is_one(self):
        rng = np.random.default_rng(12)
        gt = _random_gt(rng)
        assert proposal_quality(gt, gt) == 1.0

    def test_oracle_finds_embedded_gt(self):
        rng = np.random.default_rng(13)
        gt = _random_gt(rng)
        pset = gen_proposals(gt, 4, seed=1, include_gt=True)
        idx, quality = oracle_select(pset, gt)
        assert idx == pset.size - 1
        assert quality == 1.0

    def test_oracle_dominates_every_member(self):
        rng = np.random.default_rng(14)
        gt = _random_gt(rng)
        pset = gen_proposals(gt, 6, seed=2, flip_rate=0.4)
        _, best = oracle_select(pset, gt)
        assert all(best >= proposal_quality(f, gt) for f in pset.full_res)

    def test_oracle_needs_full_resolution_members(self):
        coarse_only = ProposalSet("im", (_soft([[0.5, 0.5]]),))
        rng = np.random.default_rng(15)
        with pytest.raises(InvalidInputError):
            oracle_select(coarse_only, HardSegmentation(1, 1, 2, np.array([0])))

    def test_oracle_recall_grows_with_set_size(self):
        """More perturbed drawings can only improve the reachable best."""
        rng = np.random.default_rng(16)
        gt = _random_gt(rng)
        small = gen_proposals(gt, 2, seed=3, flip_rate=0.3)
        # same seed draws the same first two members plus four more
        large = gen_proposals(gt, 6, seed=3, flip_rate=0.3)
        assert oracle_select(large, gt)[1] >= oracle_select(small, gt)[1]

    def test_random_select_is_uniform_and_seeded(self):
        rng = np.random.default_rng(17)
        gt = _random_gt(rng)
        pset = gen_proposals(gt, 4, seed=4)
        draws = [random_select(pset, np.random.default_rng(100 + i)) for i in range(200)]
        assert set(draws) == set(range(pset.size))
        again = [random_select(pset, np.random.default_rng(100 + i)) for i in range(200)]
        assert draws == again


class TestProposalSet:
    def test_from_full_res_round_trips_coarse_members(self):
        rng = np.random.default_rng(18)
        gt = _random_gt(rng)
        pset = ProposalSet.from_full_res("im", [gt], 2, 2)
        np.testing.assert_allclose(
            pset.coarse[0].values, downsample_to_soft(gt, 2, 2).values, atol=1e-12
        )

    def test_rejects_coarse_full_count_mismatch(self):
        rng = np.random.default_rng(19)
        gt = _random_gt(rng)
        coarse = downsample_to_soft(gt, 2, 2)
        with pytest.raises(InvalidInputError):
            ProposalSet("im", (coarse, coarse), (gt,))

    def test_rejects_inconsistent_coarse_member(self):
        rng = np.random.default_rng(20)
        gt = _random_gt(rng)
        other = _random_gt(np.random.default_rng(21))
        with pytest.raises(InvalidInputError):
            ProposalSet("im", (downsample_to_soft(other, 2, 2),), (gt,))

    def test_rejects_empty_set(self):
        with pytest.raises(InvalidInputError):
            ProposalSet("im", ())
