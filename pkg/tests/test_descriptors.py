"""Descriptor extraction: K-means, silhouette, adaptive K, weighting, baselines."""

import numpy as np
import pytest

from splatvoc.descriptors import (
    Descriptor,
    DescriptorSet,
    extract_descriptors,
    fixed_k_descriptors,
    kmeans,
    kmeans_sse,
    mean_feature,
    pool_baselines,
    silhouette,
    weigh_descriptors,
)


def naive_silhouette(features, assignments):
    """Independent double-loop silhouette used as the oracle."""
    n = len(features)
    labels = sorted(set(assignments.tolist()))
    vals = []
    for i in range(n):
        own = [j for j in range(n) if assignments[j] == assignments[i] and j != i]
        if not own:
            vals.append(0.0)
            continue
        a = np.mean([np.linalg.norm(features[i] - features[j]) for j in own])
        b = min(np.mean([np.linalg.norm(features[i] - features[j])
                         for j in range(n) if assignments[j] == c])
                for c in labels if c != assignments[i])
        m = max(a, b)
        vals.append(0.0 if m == 0 else (b - a) / m)
    return float(np.mean(vals))


def planted_aspect_features(n_aspects, per_aspect, sigma, seed, dim=16):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    aspects = basis[:n_aspects]
    feats, labels = [], []
    for k in range(n_aspects):
        f = aspects[k] + rng.normal(0, sigma, (per_aspect, dim))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        feats.append(f)
        labels += [k] * per_aspect
    return np.vstack(feats), np.array(labels), aspects


class TestKmeans:
    def test_k1_is_mean(self):
        rng = np.random.default_rng(0)
        feats = rng.normal(size=(17, 5))
        centers, assign = kmeans(feats, 1, seed=0)
        assert np.allclose(centers[0], feats.mean(axis=0))
        assert np.all(assign == 0)

    def test_antipodal_duplicates(self):
        v = np.array([1.0, 0.0])
        feats = np.vstack([np.tile(v, (5, 1)), np.tile(-v, (5, 1))])
        centers, assign = kmeans(feats, 2, seed=1)
        got = {tuple(np.round(c, 9)) for c in centers}
        assert got == {(1.0, 0.0), (-1.0, 0.0)}
        assert len(set(assign[:5])) == 1 and len(set(assign[5:])) == 1

    def test_matches_planted_partition_sse(self):
        feats, labels, _ = planted_aspect_features(3, 20, 0.02, seed=2)
        centers, assign = kmeans(feats, 3, seed=3)
        planted_centers = np.stack([feats[labels == k].mean(axis=0) for k in range(3)])
        planted_sse = kmeans_sse(feats, planted_centers, labels)
        assert kmeans_sse(feats, centers, assign) <= planted_sse + 1e-9

    def test_zero_features_error(self):
        with pytest.raises(ValueError):
            kmeans(np.zeros((0, 3)), 1, seed=0)

    def test_deterministic(self):
        feats = np.random.default_rng(4).normal(size=(30, 4))
        c1, a1 = kmeans(feats, 4, seed=9)
        c2, a2 = kmeans(feats, 4, seed=9)
        assert np.array_equal(c1, c2) and np.array_equal(a1, a2)


class TestSilhouette:
    def test_two_singletons_score_zero(self):
        feats = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert silhouette(feats, np.array([0, 1])) == 0.0

    def test_two_tight_far_pairs(self):
        feats = np.array([[0, 0], [0.01, 0], [10, 0], [10.01, 0.0]])
        s = silhouette(feats, np.array([0, 0, 1, 1]))
        assert s == pytest.approx(1.0, abs=0.05)

    def test_identical_points_zero_by_convention(self):
        feats = np.zeros((6, 3))
        assert silhouette(feats, np.array([0, 0, 0, 1, 1, 1])) == 0.0

    def test_single_cluster_is_error(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((4, 2)), np.zeros(4, dtype=int))

    def test_agrees_with_naive_oracle(self):
        rng = np.random.default_rng(8)
        feats = rng.normal(size=(25, 3))
        assign = rng.integers(0, 3, 25)
        assert silhouette(feats, assign) == pytest.approx(naive_silhouette(feats, assign))


class TestExtractDescriptors:
    def test_single_feature(self):
        f = np.array([[0.0, 1.0, 0.0]])
        dset = extract_descriptors(f, k_max=5, seed=0)
        assert dset.chosen_k == 1
        assert np.allclose(dset.descriptors[0].vector, f[0])

    def test_identical_features_choose_k1(self):
        f = np.tile([[1.0, 0.0]], (10, 1))
        dset = extract_descriptors(f, k_max=5, seed=1)
        assert dset.chosen_k == 1

    def test_two_planted_aspects_recovered(self):
        feats, _, aspects = planted_aspect_features(2, 20, 0.01, seed=5)
        dset = extract_descriptors(feats, k_max=6, seed=6)
        assert dset.chosen_k == 2
        for a in aspects:
            cos = max(abs(d.vector @ a) / np.linalg.norm(d.vector)
                      for d in dset.descriptors)
            assert cos > 0.99
        # brute-force sweep with the naive silhouette confirms the argmax
        sweep = []
        for k in range(1, 7):
            _, assign = kmeans(feats, k, seed=123)
            sweep.append(0.0 if k == 1 else naive_silhouette(feats, assign))
        assert int(np.argmax(sweep)) + 1 == dset.chosen_k

    def test_chosen_k_is_trace_argmax(self):
        feats, _, _ = planted_aspect_features(3, 15, 0.03, seed=7)
        dset = extract_descriptors(feats, k_max=8, seed=8)
        trace = np.array(dset.silhouette_trace)
        assert dset.chosen_k == int(np.argmax(trace)) + 1
        assert dset.chosen_k == 3

    def test_permutation_invariance_of_centroid_multiset(self):
        feats, _, _ = planted_aspect_features(3, 15, 0.02, seed=9)
        perm = np.random.default_rng(10).permutation(len(feats))
        a = extract_descriptors(feats, k_max=6, seed=11)
        b = extract_descriptors(feats[perm], k_max=6, seed=11)
        assert a.chosen_k == b.chosen_k
        ca = np.array(sorted(map(tuple, np.round(a.vectors, 9))))
        cb = np.array(sorted(map(tuple, np.round(b.vectors, 9))))
        assert np.allclose(ca, cb, atol=1e-8)


class TestWeighting:
    def test_unanimous_features_weight_one(self):
        v = np.zeros(4)
        v[0] = 1.0
        feats = np.tile(v, (8, 1))
        dset = extract_descriptors(feats, k_max=3, seed=0)
        weighted = weigh_descriptors(dset, mean_feature(feats))
        assert weighted.descriptors[0].weight == pytest.approx(1.0)

    def test_cancelling_cluster_weight_zero(self):
        dset = DescriptorSet(object_id=0, descriptors=[Descriptor(np.zeros(3))],
                             chosen_k=1)
        weighted = weigh_descriptors(dset, mean_feature(np.array([[1.0, 0, 0]])))
        assert weighted.descriptors[0].weight == 0.0

    def test_product_of_factors(self):
        # |d| = 0.8, cos(d, v_mean) = 0.9 -> w = 0.72
        vbar = np.array([1.0, 0.0])
        d = 0.8 * (0.9 * vbar + np.sqrt(1 - 0.81) * np.array([0.0, 1.0]))
        dset = DescriptorSet(object_id=0, descriptors=[Descriptor(d)], chosen_k=1)
        weighted = weigh_descriptors(dset, mean_feature(vbar[None, :]))
        assert weighted.descriptors[0].weight == pytest.approx(0.72)

    def test_degenerate_global_feature_raises(self):
        dset = DescriptorSet(object_id=0, descriptors=[Descriptor(np.ones(2))], chosen_k=1)
        with pytest.raises(ValueError, match="degenerate global feature"):
            weigh_descriptors(dset, mean_feature(np.zeros((1, 2))))

    def test_factorization_identity(self):
        rng = np.random.default_rng(13)
        feats = rng.normal(size=(40, 6))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        dset = extract_descriptors(feats, k_max=8, seed=14)
        g = mean_feature(feats)
        weighted = weigh_descriptors(dset, g)
        vhat = g.vector / np.linalg.norm(g.vector)
        for d in weighted.descriptors:
            norm = np.linalg.norm(d.vector)
            if norm == 0:
                assert d.weight == 0.0
            else:
                factored = (d.vector @ vhat / norm) * norm
                assert abs(d.weight - factored) < 1e-9

    def test_centroid_norm_bounded_by_one_for_unit_features(self):
        rng = np.random.default_rng(15)
        feats = rng.normal(size=(30, 5))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        dset = extract_descriptors(feats, k_max=10, seed=16)
        assert all(np.linalg.norm(d.vector) <= 1 + 1e-12 for d in dset.descriptors)

    def test_partial_weighting_modes(self):
        vbar = np.array([1.0, 0.0])
        d = 0.8 * (0.9 * vbar + np.sqrt(1 - 0.81) * np.array([0.0, 1.0]))
        dset = DescriptorSet(object_id=0, descriptors=[Descriptor(d)], chosen_k=1)
        g = mean_feature(vbar[None, :])
        assert weigh_descriptors(dset, g, mode="direction").descriptors[0].weight == pytest.approx(0.9)
        assert weigh_descriptors(dset, g, mode="compactness").descriptors[0].weight == pytest.approx(0.8)


class TestBaselines:
    def test_avg_pooling(self):
        feats = np.array([[1.0, 0.0], [0.0, 1.0]])
        dset = pool_baselines(feats, "avg")
        assert len(dset.descriptors) == 1
        assert np.allclose(dset.descriptors[0].vector, [0.5, 0.5])
        assert dset.descriptors[0].weight == 1.0

    def test_max_pooling_keeps_all(self):
        feats = np.random.default_rng(17).normal(size=(7, 3))
        dset = pool_baselines(feats, "max")
        assert len(dset.descriptors) == 7
        assert all(d.weight == 1.0 for d in dset.descriptors)

    def test_fixed_k_clamps(self):
        feats = np.random.default_rng(18).normal(size=(3, 4))
        dset = fixed_k_descriptors(feats, 5, seed=0)
        assert dset.chosen_k == 3

    def test_planted_aspect_recovery_rate(self):
        # 2-4 aspects, pairwise orthogonal, sigma <= 0.05: K* planted and
        # centroid-aspect cosine >= 0.95
        hits = 0
        runs = 6
        for i in range(runs):
            n_aspects = 2 + i % 3
            feats, _, aspects = planted_aspect_features(n_aspects, 18, 0.04, seed=30 + i)
            dset = extract_descriptors(feats, k_max=8, seed=31 + i)
            if dset.chosen_k != n_aspects:
                continue
            cos = np.abs(dset.vectors @ aspects.T /
                         np.linalg.norm(dset.vectors, axis=1, keepdims=True))
            row, col = np.nonzero(cos >= 0.95)
            if len(set(row)) == n_aspects and len(set(col)) == n_aspects:
                hits += 1
        assert hits == runs
