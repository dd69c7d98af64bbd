"""In-house HDBSCAN vs the reference implementation and its own contracts."""

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import HDBSCAN as ReferenceHDBSCAN

from splatvoc.hdbscan import HdbscanConfig, hdbscan


def matched_agreement(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of points, non-noise under both labelings, that agree after
    optimal cluster matching."""
    both = (a >= 0) & (b >= 0)
    if not both.any():
        return 1.0
    m = np.zeros((a.max() + 1, b.max() + 1))
    for x, y in zip(a[both], b[both]):
        m[x, y] += 1
    r, c = linear_sum_assignment(-m)
    return float(m[r, c].sum() / both.sum())


def two_blobs(seed=0, n=30, sep=5.0):
    rng = np.random.default_rng(seed)
    return np.vstack([rng.normal(0, 0.1, (n, 2)), rng.normal(sep, 0.1, (n, 2))])


class TestAgainstReference:
    def test_two_separated_blobs(self):
        pts = two_blobs()
        mine = hdbscan(pts, HdbscanConfig(min_cluster_size=5))
        ref = ReferenceHDBSCAN(min_cluster_size=5).fit(pts).labels_
        assert mine.max() + 1 == 2
        assert not np.any(mine == -1)
        assert matched_agreement(mine, ref) == 1.0

    def test_duplicate_points_match_reference(self):
        pts = np.tile([[1.0, 2.0]], (30, 1))
        for single in (False, True):
            mine = hdbscan(pts, HdbscanConfig(min_cluster_size=5,
                                              allow_single_cluster=single))
            ref = ReferenceHDBSCAN(min_cluster_size=5,
                                   allow_single_cluster=single).fit(pts).labels_
            assert np.array_equal(mine, ref)
        # with the single-cluster mode the duplicates form one cluster
        assert np.all(hdbscan(pts, HdbscanConfig(min_cluster_size=5,
                                                 allow_single_cluster=True)) == 0)

    @pytest.mark.parametrize("seed", range(6))
    def test_blob_mixtures_agree(self, seed):
        rng = np.random.default_rng(seed)
        dim = 2 if seed % 2 == 0 else 32
        blobs = [rng.uniform(-8, 8, dim) + rng.normal(0, 0.25, (int(rng.integers(12, 40)), dim))
                 for _ in range(int(rng.integers(2, 6)))]
        pts = np.vstack(blobs + [rng.uniform(-10, 10, (10, dim))])
        mine = hdbscan(pts, HdbscanConfig(min_cluster_size=5))
        ref = ReferenceHDBSCAN(min_cluster_size=5).fit(pts).labels_
        assert matched_agreement(mine, ref) >= 0.99

    def test_epsilon_merging_matches_reference(self):
        rng = np.random.default_rng(3)
        pts = np.vstack([rng.normal(0.0, 0.05, (20, 2)),
                         rng.normal([0.6, 0.0], 0.05, (20, 2)),
                         rng.normal([8.0, 0.0], 0.05, (20, 2))])
        for eps in (0.0, 1.0):
            mine = hdbscan(pts, HdbscanConfig(min_cluster_size=5,
                                              cluster_selection_epsilon=eps))
            ref = ReferenceHDBSCAN(min_cluster_size=5,
                                   cluster_selection_epsilon=eps).fit(pts).labels_
            assert matched_agreement(mine, ref) == 1.0
        # the near pair merges once epsilon exceeds their split distance
        merged = hdbscan(pts, HdbscanConfig(min_cluster_size=5,
                                            cluster_selection_epsilon=1.0))
        assert merged.max() + 1 == 2


class TestContracts:
    def test_fewer_points_than_min_cluster_size_is_all_noise(self):
        pts = np.random.default_rng(0).normal(size=(4, 3))
        labels = hdbscan(pts, HdbscanConfig(min_cluster_size=5))
        assert np.all(labels == -1)

    def test_all_noise_is_valid_output(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-100, 100, (12, 2))  # too sparse to form clusters
        labels = hdbscan(pts, HdbscanConfig(min_cluster_size=8))
        assert set(labels) <= {-1, 0}

    def test_permutation_equivariance(self):
        pts = two_blobs(seed=5)
        rng = np.random.default_rng(7)
        perm = rng.permutation(len(pts))
        base = hdbscan(pts, HdbscanConfig(min_cluster_size=5))
        permuted = hdbscan(pts[perm], HdbscanConfig(min_cluster_size=5))
        assert matched_agreement(base[perm], permuted) == 1.0
        assert np.array_equal(base[perm] >= 0, permuted >= 0)

    def test_deterministic(self):
        pts = two_blobs(seed=9)
        cfg = HdbscanConfig(min_cluster_size=5)
        assert np.array_equal(hdbscan(pts, cfg), hdbscan(pts, cfg))

    def test_cosine_metric_groups_directions(self):
        rng = np.random.default_rng(11)
        a = rng.normal([1, 0, 0, 0], 0.02, (20, 4))
        b = rng.normal([0, 1, 0, 0], 0.02, (20, 4))
        scale = rng.uniform(0.5, 3.0, 40)[:, None]  # norms must not matter
        labels = hdbscan(np.vstack([a, b]) * scale,
                         HdbscanConfig(min_cluster_size=5, metric="cosine"))
        assert labels.max() + 1 == 2
        assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            HdbscanConfig(min_cluster_size=1).validate()
        with pytest.raises(ValueError):
            HdbscanConfig(cluster_selection_epsilon=-0.1).validate()
        with pytest.raises(ValueError):
            HdbscanConfig(metric="manhattan").validate()
