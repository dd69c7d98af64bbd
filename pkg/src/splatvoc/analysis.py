"""Diagnostics for view-dependent semantics.

Two experiments quantify how much one object's 2D semantics drift across
viewpoints: (1) the distribution of intra-object vs inter-object cosine
similarities among mask features, and (2) retrieval integrity, where each
mask feature retrieves Gaussians through fused per-Gaussian semantics and
the per-mask recall shows how completely a single view's semantics cover
the object. Fused semantics come from back-projecting mask indicators
through the rasterizer's blending weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decompose import ObjectCluster
from .render import project, unit_rows
from .scene import Camera, GaussianScene
from .synth import SyntheticDataset

MAX_INTER_PAIRS = 100_000
LOW_RECALL_BAND = (0.1, 0.9)
RETRIEVAL_TAU = 0.75
SWEEP_TAUS = (0.5, 0.6, 0.7, 0.75, 0.8, 0.9)


@dataclass
class SimilarityHistogram:
    intra: np.ndarray
    inter: np.ndarray
    bin_edges: np.ndarray
    intra_hist: np.ndarray
    inter_hist: np.ndarray
    overlap: float  # fraction of intra mass strictly below the inter median


@dataclass
class RetrievalReport:
    tau: float
    recalls: np.ndarray
    precisions: np.ndarray
    low_recall_fraction: float      # low / (low + high)
    n_low: int                      # recall within the low band
    n_high: int                     # recall above the band
    mask_indices: list[int] = field(default_factory=list)


def similarity_distribution(clusters: list[ObjectCluster], mask_features: np.ndarray,
                            seed: int = 0, bins: int = 40,
                            max_inter_pairs: int = MAX_INTER_PAIRS) -> SimilarityHistogram:
    """Cosine similarities of same-object vs different-object mask features.

    All intra-cluster pairs are enumerated; inter-cluster pairs are sampled
    (seeded) to the same count, capped for tractability. Clusters with one
    mask contribute no intra pairs.
    """
    feats = unit_rows(np.asarray(mask_features, dtype=np.float64))
    sims = feats @ feats.T
    owner = np.full(feats.shape[0], -1, dtype=np.int64)
    for c in clusters:
        owner[np.asarray(c.mask_indices, dtype=np.int64)] = c.id

    intra = []
    for c in clusters:
        idx = np.asarray(c.mask_indices, dtype=np.int64)
        if idx.size < 2:
            continue
        block = sims[np.ix_(idx, idx)]
        iu = np.triu_indices(idx.size, k=1)
        intra.append(block[iu])
    intra = np.concatenate(intra) if intra else np.zeros(0)

    valid = owner >= 0
    ii, jj = np.triu_indices(feats.shape[0], k=1)
    cross = valid[ii] & valid[jj] & (owner[ii] != owner[jj])
    cross_pairs = np.flatnonzero(cross)
    rng = np.random.default_rng(seed)
    n_take = min(len(cross_pairs), max(len(intra), 1), max_inter_pairs)
    take = rng.choice(cross_pairs, size=n_take, replace=False) if n_take else np.zeros(0, int)
    inter = sims[ii[take], jj[take]] if n_take else np.zeros(0)

    edges = np.linspace(-1.0, 1.0, bins + 1)
    intra_hist, _ = np.histogram(intra, bins=edges)
    inter_hist, _ = np.histogram(inter, bins=edges)
    overlap = float(np.mean(intra < np.median(inter))) if intra.size and inter.size else 0.0
    return SimilarityHistogram(intra=intra, inter=inter, bin_edges=edges,
                               intra_hist=intra_hist, inter_hist=inter_hist,
                               overlap=overlap)


def backproject_mask(scene: GaussianScene, cam: Camera, mask: np.ndarray) -> np.ndarray:
    """Per-Gaussian blending-weight mass of a binary mask.

    z_g = sum over mask pixels of the Gaussian's blending weight; this is the
    rasterizer backward pass applied to the mask indicator.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (cam.height, cam.width):
        raise ValueError("mask resolution does not match the camera")
    comp = project(scene, cam)
    inside = mask.reshape(-1)[comp.pixel]
    return np.bincount(comp.gauss[inside], weights=comp.weight[inside],
                       minlength=scene.n_gaussians)


def fuse_semantics(scene: GaussianScene, dataset: SyntheticDataset,
                   level: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate z_g-weighted mask features onto Gaussians, then normalize.

    Accumulation is positive (+= z_g * feature) so that retrieval by cosine
    against mask features is meaningful. Returns (fused (N, C), covered (N,))
    where uncovered Gaussians have zero rows and are excluded from retrieval.
    """
    masks = dataset.level_masks(level)
    if not masks or masks[0].feature is None:
        raise ValueError("dataset has no mask features at this level")
    dim = masks[0].feature.shape[0]
    acc = np.zeros((scene.n_gaussians, dim))
    comps = {}
    for m in masks:
        if m.view not in comps:
            comps[m.view] = project(scene, dataset.cameras[m.view])
        comp = comps[m.view]
        inside = m.mask.reshape(-1)[comp.pixel]
        z = np.bincount(comp.gauss[inside], weights=comp.weight[inside],
                        minlength=scene.n_gaussians)
        acc += z[:, None] * m.feature[None, :]
    covered = np.linalg.norm(acc, axis=1) > 0
    return unit_rows(acc), covered


def retrieval_integrity(scene: GaussianScene, dataset: SyntheticDataset,
                        clusters: list[ObjectCluster], tau: float = RETRIEVAL_TAU,
                        fused: tuple[np.ndarray, np.ndarray] | None = None,
                        level: int = 0) -> RetrievalReport:
    """Per-mask recall/precision of cosine retrieval through fused semantics.

    Each mask retrieves {g : cos(feature, fused_g) > tau}; its cluster's
    Gaussian list is the 'complete' object. Masks whose object is empty are
    skipped. The low-recall fraction counts recall inside LOW_RECALL_BAND
    against everything at or above the band's lower edge.
    """
    if fused is None:
        fused = fuse_semantics(scene, dataset, level=level)
    fused_rows, covered = fused
    masks = dataset.level_masks(level)
    cluster_of_mask: dict[int, ObjectCluster] = {}
    for c in clusters:
        for mi in c.mask_indices:
            cluster_of_mask[mi] = c

    recalls, precisions, kept = [], [], []
    for mi, m in enumerate(masks):
        c = cluster_of_mask.get(mi)
        if c is None or c.gaussians is None or len(c.gaussians) == 0:
            continue
        cos = fused_rows @ m.feature
        retrieved = np.flatnonzero((cos > tau) & covered)
        obj = np.asarray(c.gaussians)
        hit = np.intersect1d(retrieved, obj, assume_unique=False).size
        recalls.append(hit / obj.size)
        precisions.append(hit / retrieved.size if retrieved.size else 0.0)
        kept.append(mi)

    recalls = np.asarray(recalls)
    precisions = np.asarray(precisions)
    lo, hi = LOW_RECALL_BAND
    n_low = int(((recalls >= lo) & (recalls <= hi)).sum())
    n_high = int((recalls > hi).sum())
    frac = n_low / (n_low + n_high) if (n_low + n_high) else 0.0
    return RetrievalReport(tau=tau, recalls=recalls, precisions=precisions,
                           low_recall_fraction=frac, n_low=n_low, n_high=n_high,
                           mask_indices=kept)


def retrieval_sweep(scene: GaussianScene, dataset: SyntheticDataset,
                    clusters: list[ObjectCluster], taus=SWEEP_TAUS,
                    level: int = 0) -> list[RetrievalReport]:
    """Retrieval integrity across a threshold grid, reusing fused features."""
    fused = fuse_semantics(scene, dataset, level=level)
    return [retrieval_integrity(scene, dataset, clusters, tau, fused=fused, level=level)
            for tau in taus]


def planted_clusters(dataset: SyntheticDataset, level: int = 0) -> list[ObjectCluster]:
    """Oracle decomposition from the synthetic sidecar: ground-truth grouping."""
    masks = dataset.level_masks(level)
    lab = dataset.scene.labels[level]
    objects = sorted({m.object_id for m in masks if m.object_id is not None})
    clusters = []
    for k, obj in enumerate(objects):
        members = [i for i, m in enumerate(masks) if m.object_id == obj]
        feats = np.stack([masks[i].feature for i in members]) \
            if masks[members[0]].feature is not None else np.zeros((len(members), 1))
        clusters.append(ObjectCluster(id=k, mask_indices=members,
                                      prototype=feats.mean(axis=0),
                                      gaussians=np.flatnonzero(lab == obj),
                                      level=level))
    return clusters
