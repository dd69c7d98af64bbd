"""Open-vocabulary querying directly in 3D.

A query vector is scored against each object's weighted descriptors: the
pairwise relevance is a softmax-style ratio against canonical comparison
embeddings, the object-level score is the best weighted response, and the
full segmentation pipeline adds an auxiliary cosine prefilter, per-level
response averaging, min-max normalization, 3D bilateral filtering over
Gaussian positions, and a fixed foreground threshold.
"""

from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .decompose import Decomposition
from .descriptors import DescriptorSet
from .scene import GaussianScene

DESCRIPTOR_COS_THRESHOLD = 0.23
FOREGROUND_THRESHOLD = 0.6


@dataclass
class Query:
    """A unit query embedding plus the canonical comparison embeddings."""

    vector: np.ndarray
    canonicals: np.ndarray  # (K, C) unit rows
    name: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        self.canonicals = np.atleast_2d(np.asarray(self.canonicals, dtype=np.float64))

    def validate(self) -> None:
        if self.canonicals.shape[0] < 1:
            raise ValueError("canonical set must be non-empty")
        if abs(np.linalg.norm(self.vector) - 1.0) > 1e-6:
            raise ValueError("query vector must be unit-norm")
        if not np.allclose(np.linalg.norm(self.canonicals, axis=1), 1.0, atol=1e-6):
            raise ValueError("canonical vectors must be unit-norm")


@dataclass
class SegmentConfig:
    descriptor_cos_threshold: float = DESCRIPTOR_COS_THRESHOLD
    foreground_threshold: float = FOREGROUND_THRESHOLD
    bilateral_neighbors: int = 16
    bilateral_sigma_r: float = 0.25
    bilateral_sigma_s: float | None = None  # None: mean k-NN distance of the scene


@dataclass
class QueryResult:
    """Raw per-object scores, the per-Gaussian relevance map, foreground set."""

    object_rel: list[dict[int, float]]      # per level: cluster id -> REL (survivors)
    relevance: np.ndarray                   # (N,) normalized + filtered
    foreground: np.ndarray                  # sorted Gaussian indices
    per_level: np.ndarray                   # (L, N) raw broadcast REL per level


def rel(d: np.ndarray, query: Query) -> float:
    """min over canonicals of exp(cos(d,q)) / (exp(cos(d,q)) + exp(cos(d,phi))).

    Cosine similarity is used for both pairings, so the score is invariant to
    the descriptor's scale; the norm enters only through the descriptor
    weight. Always lies in (0, 1).
    """
    d = np.asarray(d, dtype=np.float64)
    dn = np.linalg.norm(d)
    if dn == 0:
        raise ValueError("relevance of a zero-norm descriptor is undefined")
    dhat = d / dn
    cq = float(dhat @ query.vector / np.linalg.norm(query.vector))
    ccanon = query.canonicals @ dhat / np.linalg.norm(query.canonicals, axis=1)
    ratios = np.exp(cq) / (np.exp(cq) + np.exp(ccanon))
    return float(ratios.min())


def object_rel(dset: DescriptorSet, query: Query) -> float:
    """max over descriptors of weight * rel; non-positive weights contribute 0."""
    if not dset.descriptors:
        raise ValueError("descriptor set is empty")
    best = 0.0
    for d in dset.descriptors:
        if d.weight <= 0 or np.linalg.norm(d.vector) == 0:
            continue
        best = max(best, d.weight * rel(d.vector, query))
    return best


def best_descriptor_cosine(dset: DescriptorSet, query: Query) -> float:
    """max cosine between any descriptor direction and the query."""
    best = -1.0
    q = query.vector / np.linalg.norm(query.vector)
    for d in dset.descriptors:
        n = np.linalg.norm(d.vector)
        if n == 0:
            continue
        best = max(best, float(d.vector @ q / n))
    return best


def bilateral_filter_3d(positions: np.ndarray, relevance: np.ndarray, k: int = 16,
                        sigma_s: float | None = None, sigma_r: float = 0.25
                        ) -> np.ndarray:
    """Edge-preserving smoothing of a per-Gaussian scalar over 3D positions.

    Each value becomes the normalized sum over its k nearest neighbors
    (itself included) weighted by a spatial and a range Gaussian. k=1 is the
    identity; constant maps are preserved; output stays within [min, max] of
    the input. sigma_s defaults to the scene's mean k-NN distance.
    """
    positions = np.asarray(positions, dtype=np.float64)
    relevance = np.asarray(relevance, dtype=np.float64)
    n = positions.shape[0]
    if k < 1 or sigma_r <= 0:
        raise ValueError("k must be >= 1 and sigma_r positive")
    k = min(k, n)
    if k == 1:
        return relevance.copy()
    tree = cKDTree(positions)
    dist, idx = tree.query(positions, k=k)
    if sigma_s is None:
        sigma_s = float(dist[:, 1:].mean())
    if sigma_s <= 0:
        sigma_s = 1.0  # all points coincident: spatial term is neutral
    w = np.exp(-dist ** 2 / (2 * sigma_s ** 2))
    w *= np.exp(-(relevance[idx] - relevance[:, None]) ** 2 / (2 * sigma_r ** 2))
    return (w * relevance[idx]).sum(axis=1) / w.sum(axis=1)


def segment(scene: GaussianScene, decompositions: list[Decomposition],
            descriptor_sets: list[list[DescriptorSet]], query: Query,
            cfg: SegmentConfig | None = None) -> QueryResult:
    """Full foreground extraction for one query.

    Per level: objects whose best descriptor cosine falls below the auxiliary
    threshold are discarded (their Gaussians respond 0); surviving objects
    broadcast their REL score to their Gaussians. Responses average across
    levels, are min-max normalized over the scene (all-equal maps normalize
    to zero), bilaterally filtered over positions, and thresholded.
    """
    cfg = cfg or SegmentConfig()
    query.validate()
    if len(decompositions) != len(descriptor_sets):
        raise ValueError("one descriptor set list per decomposition level required")
    n = scene.n_gaussians
    levels = len(decompositions)
    per_level = np.zeros((levels, n))
    object_scores: list[dict[int, float]] = []
    for l, (dec, dsets) in enumerate(zip(decompositions, descriptor_sets)):
        by_id = {ds.object_id: ds for ds in dsets}
        scores: dict[int, float] = {}
        for cluster in dec.clusters:
            dset = by_id.get(cluster.id)
            if dset is None or cluster.gaussians is None:
                continue
            if best_descriptor_cosine(dset, query) < cfg.descriptor_cos_threshold:
                continue
            score = object_rel(dset, query)
            scores[cluster.id] = score
            per_level[l, cluster.gaussians] = score
        object_scores.append(scores)

    raw = per_level.mean(axis=0)
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        relevance = np.zeros(n)
    else:
        relevance = (raw - lo) / (hi - lo)
        relevance = bilateral_filter_3d(scene.positions, relevance,
                                        k=cfg.bilateral_neighbors,
                                        sigma_s=cfg.bilateral_sigma_s,
                                        sigma_r=cfg.bilateral_sigma_r)
    foreground = np.flatnonzero(relevance > cfg.foreground_threshold)
    return QueryResult(object_rel=object_scores, relevance=relevance,
                       foreground=foreground, per_level=per_level)


class EmbeddingClient:
    """Minimal HTTP client for an external text-embedding service.

    POSTs {"text": ...} as JSON and expects {"vector": [...]} back, so a real
    text encoder can be plugged in without linking any ML runtime.
    """

    def __init__(self, url: str, timeout: float = 10.0):
        if not url:
            raise ValueError("no encoder configured")
        self.url = url
        self.timeout = timeout

    def encode(self, text: str) -> np.ndarray:
        payload = json.dumps({"text": text}).encode()
        req = urllib.request.Request(self.url, data=payload,
                                     headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            body = json.loads(resp.read().decode())
        if "vector" not in body:
            raise ValueError("embedding service response missing 'vector'")
        return np.asarray(body["vector"], dtype=np.float64)
