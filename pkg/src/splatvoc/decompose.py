"""Scene decomposition: cluster mask prototypes into objects, assign Gaussians.

Mask affinity prototypes are clustered with HDBSCAN under cosine distance;
noise masks attach to the nearest cluster when similar enough, otherwise they
are discarded. Every Gaussian then joins the object whose prototype its
affinity feature is most similar to, producing a partition of the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hdbscan import HdbscanConfig, hdbscan
from .render import unit_rows
from .scene import GaussianScene
from .synth import SyntheticDataset
from .train import mask_prototypes

NOISE_ATTACH_SIMILARITY = 0.5


@dataclass
class ObjectCluster:
    """One 3D object: its member masks, affinity prototype and Gaussians."""

    id: int
    mask_indices: list[int]
    prototype: np.ndarray
    gaussians: np.ndarray | None = None
    level: int = 0


@dataclass
class Decomposition:
    """Per-level clustering output plus the per-Gaussian assignment."""

    clusters: list[ObjectCluster]
    assignment: np.ndarray            # (N,) cluster ids
    discarded_masks: list[int] = field(default_factory=list)
    zero_norm_gaussians: int = 0
    level: int = 0

    @property
    def n_objects(self) -> int:
        return len(self.clusters)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return unit_rows(a) @ unit_rows(b).T


def group_masks(prototypes: np.ndarray, cfg: HdbscanConfig,
                noise_similarity: float = NOISE_ATTACH_SIMILARITY,
                level: int = 0) -> list[ObjectCluster]:
    """Cluster per-mask prototypes into objects.

    HDBSCAN runs under cosine distance (single-cluster outcomes allowed,
    since a scene can legitimately be one object). Noise masks attach to the
    nearest cluster prototype when the cosine similarity reaches
    ``noise_similarity``, else they are discarded. Cluster prototypes are the
    arithmetic mean of all member prototypes, attachments included.
    """
    prototypes = np.asarray(prototypes, dtype=np.float64)
    hdb_cfg = HdbscanConfig(min_cluster_size=cfg.min_cluster_size,
                            cluster_selection_epsilon=cfg.cluster_selection_epsilon,
                            metric="cosine", min_samples=cfg.min_samples,
                            allow_single_cluster=True)
    labels = hdbscan(prototypes, hdb_cfg)
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    if n_clusters == 0:
        raise ValueError("decomposition failed: no clusters found")

    members = [list(np.flatnonzero(labels == k)) for k in range(n_clusters)]
    centers = np.stack([prototypes[m].mean(axis=0) for m in members])

    discarded = []
    noise = np.flatnonzero(labels == -1)
    if noise.size:
        sims = cosine_matrix(prototypes[noise], centers)
        best = np.argmax(sims, axis=1)
        for i, mask_idx in enumerate(noise):
            if sims[i, best[i]] >= noise_similarity:
                members[best[i]].append(int(mask_idx))
            else:
                discarded.append(int(mask_idx))

    clusters = []
    for k in range(n_clusters):
        idx = sorted(members[k])
        clusters.append(ObjectCluster(id=k, mask_indices=idx,
                                      prototype=prototypes[idx].mean(axis=0),
                                      level=level))
    return clusters


def assign_gaussians(scene_or_features, clusters: list[ObjectCluster]
                     ) -> tuple[np.ndarray, int]:
    """Assign every Gaussian to the cluster with the most similar prototype.

    Ties break toward the lower cluster id; zero-norm affinity features fall
    back to cluster 0 and are counted. Fills each cluster's gaussian list and
    returns (assignment, zero_norm_count).
    """
    if isinstance(scene_or_features, GaussianScene):
        features = scene_or_features.affinity
        if features is None:
            raise ValueError("scene has no affinity features")
    else:
        features = np.asarray(scene_or_features, dtype=np.float64)
    prototypes = np.stack([c.prototype for c in clusters])
    sims = cosine_matrix(features, prototypes)
    assignment = np.argmax(sims, axis=1)  # first maximum = lowest cluster id
    zero_norm = int((np.linalg.norm(features, axis=1) == 0).sum())
    for k, c in enumerate(clusters):
        c.gaussians = np.flatnonzero(assignment == k)
    return assignment, zero_norm


def decompose_level(scene: GaussianScene, dataset: SyntheticDataset,
                    features: np.ndarray, cfg: HdbscanConfig,
                    noise_similarity: float = NOISE_ATTACH_SIMILARITY,
                    level: int = 0) -> Decomposition:
    """Full decomposition of one granularity level from trained features."""
    masks, protos = mask_prototypes(scene, dataset, features, level=level)
    clusters = group_masks(protos, cfg, noise_similarity, level=level)
    kept = set().union(*(c.mask_indices for c in clusters))
    discarded = sorted(set(range(len(masks))) - kept)
    assignment, zero_norm = assign_gaussians(features, clusters)
    return Decomposition(clusters=clusters, assignment=assignment,
                         discarded_masks=discarded, zero_norm_gaussians=zero_norm,
                         level=level)
