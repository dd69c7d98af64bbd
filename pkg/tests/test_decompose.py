"""Decomposition: prototype grouping, Gaussian assignment, end-to-end ARI."""

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from splatvoc.decompose import (
    Decomposition,
    ObjectCluster,
    assign_gaussians,
    decompose_level,
    group_masks,
)
from splatvoc.hdbscan import HdbscanConfig
from splatvoc.synth import make_synthetic_dataset
from splatvoc.train import TrainConfig, train


def planted_prototypes(n_objects=3, per_object=12, noise=0.02, seed=0, dim=8):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    protos, labels = [], []
    for o in range(n_objects):
        protos.append(basis[o] + rng.normal(0, noise, (per_object, dim)))
        labels += [o] * per_object
    return np.vstack(protos), np.array(labels)


class TestGroupMasks:
    def test_collapsed_prototypes_recover_objects(self):
        protos, labels = planted_prototypes()
        clusters = group_masks(protos, HdbscanConfig(min_cluster_size=5))
        pred = np.full(len(labels), -1)
        for c in clusters:
            pred[c.mask_indices] = c.id
        assert adjusted_rand_score(labels, pred) == 1.0

    def test_prototype_is_mean_of_members(self):
        protos, _ = planted_prototypes(seed=3)
        clusters = group_masks(protos, HdbscanConfig(min_cluster_size=5))
        for c in clusters:
            assert np.allclose(c.prototype, protos[c.mask_indices].mean(axis=0))

    def test_single_mask_fails(self):
        with pytest.raises(ValueError, match="decomposition failed"):
            group_masks(np.array([[1.0, 0.0]]), HdbscanConfig(min_cluster_size=5))

    def test_identical_prototypes_form_one_cluster(self):
        protos = np.tile([[0.0, 1.0, 0.0]], (20, 1))
        clusters = group_masks(protos, HdbscanConfig(min_cluster_size=5))
        assert len(clusters) == 1
        assert sorted(clusters[0].mask_indices) == list(range(20))

    def test_distant_noise_is_discarded(self):
        protos, labels = planted_prototypes(n_objects=2, per_object=15, dim=8, seed=1)
        outlier = -protos[:1] * 5  # antipodal direction: cosine far from both
        stacked = np.vstack([protos, outlier])
        clusters = group_masks(stacked, HdbscanConfig(min_cluster_size=5))
        covered = set().union(*(c.mask_indices for c in clusters))
        assert len(stacked) - 1 not in covered


class TestAssignGaussians:
    def make_clusters(self, protos):
        return [ObjectCluster(id=i, mask_indices=[i], prototype=p)
                for i, p in enumerate(protos)]

    def test_exact_prototype_match(self):
        protos = np.eye(4)
        clusters = self.make_clusters(protos)
        feats = np.vstack([protos[3], protos[1]])
        assignment, _ = assign_gaussians(feats, clusters)
        assert assignment.tolist() == [3, 1]

    def test_ties_break_to_lower_id(self):
        protos = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        clusters = self.make_clusters(protos)
        assignment, _ = assign_gaussians(np.array([[2.0, 0.0]]), clusters)
        assert assignment[0] == 0

    def test_zero_norm_goes_to_cluster_zero_with_count(self):
        clusters = self.make_clusters(np.eye(2))
        assignment, zero_norm = assign_gaussians(np.array([[0.0, 0.0]]), clusters)
        assert assignment[0] == 0
        assert zero_norm == 1

    def test_partition_property(self):
        rng = np.random.default_rng(5)
        clusters = self.make_clusters(rng.normal(size=(4, 6)))
        feats = rng.normal(size=(50, 6))
        assignment, _ = assign_gaussians(feats, clusters)
        total = sum(len(c.gaussians) for c in clusters)
        assert total == 50
        all_idx = np.concatenate([c.gaussians for c in clusters])
        assert np.array_equal(np.sort(all_idx), np.arange(50))

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        clusters = self.make_clusters(rng.normal(size=(3, 5)))
        feats = rng.normal(size=(20, 5))
        a1, _ = assign_gaussians(feats, clusters)
        scales = rng.uniform(0.1, 10.0, (20, 1))
        a2, _ = assign_gaussians(feats * scales, clusters)
        assert np.array_equal(a1, a2)


class TestEndToEnd:
    def test_trained_scene_matches_planted_labels(self):
        ds = make_synthetic_dataset(n_objects=4, gaussians_per_object=20, n_views=10,
                                    seed=12)
        cfg = TrainConfig(iterations=400, learning_rate=0.1, feature_dim=16,
                          samples_per_mask=128, seed=13)
        res = train(ds.scene, ds, cfg)
        dec = decompose_level(ds.scene, ds, res.features,
                              HdbscanConfig(min_cluster_size=5,
                                            cluster_selection_epsilon=0.1))
        ari = adjusted_rand_score(ds.scene.gt_label, dec.assignment)
        assert ari >= 0.9

    def test_idempotent_rerun(self):
        ds = make_synthetic_dataset(n_objects=3, gaussians_per_object=12, n_views=8,
                                    seed=14, image_size=(32, 32))
        cfg = TrainConfig(iterations=200, learning_rate=0.1, feature_dim=12,
                          samples_per_mask=64, seed=15)
        res = train(ds.scene, ds, cfg)
        hdb = HdbscanConfig(min_cluster_size=5, cluster_selection_epsilon=0.1)
        d1 = decompose_level(ds.scene, ds, res.features, hdb)
        d2 = decompose_level(ds.scene, ds, res.features, hdb)
        assert np.array_equal(d1.assignment, d2.assignment)
        assert [c.mask_indices for c in d1.clusters] == [c.mask_indices for c in d2.clusters]
