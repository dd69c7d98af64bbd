"""View-aggregated semantic descriptors: adaptive K-means plus weighting.

An object's multi-view semantic features are summarized by K-means centroids,
with K chosen by the silhouette score (K=1 scores 0, larger K must strictly
beat the incumbent). Each centroid then gets a reliability weight
w = <d/|d|, v_mean/|v_mean|> * |d|: directional consistency with the object's
global (mean) feature times internal compactness (the centroid norm, which
shrinks when a cluster's unit features disagree). Average/max pooling and
fixed-K variants exist as ablation baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

K_MAX_DEFAULT = 20
KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 100


@dataclass
class Descriptor:
    vector: np.ndarray  # unnormalized centroid
    weight: float = 1.0


@dataclass
class DescriptorSet:
    object_id: int
    descriptors: list[Descriptor]
    chosen_k: int
    silhouette_trace: list[float] = field(default_factory=list)

    @property
    def vectors(self) -> np.ndarray:
        return np.stack([d.vector for d in self.descriptors])

    @property
    def weights(self) -> np.ndarray:
        return np.array([d.weight for d in self.descriptors])


@dataclass
class GlobalFeature:
    """Mean of an object's member features (unnormalized)."""

    object_id: int
    vector: np.ndarray


def _kmeans_pp_init(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = features.shape[0]
    centers = np.empty((k, features.shape[1]))
    first = int(rng.integers(n))
    centers[0] = features[first]
    d2 = ((features - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[i] = features[idx]
        d2 = np.minimum(d2, ((features - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(features: np.ndarray, k: int, seed: int,
           max_iter: int = KMEANS_MAX_ITER) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding, deterministic per seed.

    Empty clusters are repaired by reseeding to the point farthest from its
    current centroid. Returns (centroids (k, C), assignments (n,)).
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("cannot cluster zero features")
    if k < 1 or k > n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(features, k, rng)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_assign == c):
                dist_own = d2[np.arange(n), new_assign]
                far = int(np.argmax(dist_own))
                centers[c] = features[far]
                new_assign[far] = c
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            member = assign == c
            if member.any():
                centers[c] = features[member].mean(axis=0)
    return centers, assign


def kmeans_sse(features: np.ndarray, centers: np.ndarray, assign: np.ndarray) -> float:
    return float(((features - centers[assign]) ** 2).sum())


def silhouette(features: np.ndarray, assignments: np.ndarray) -> float:
    """Mean silhouette (b - a) / max(a, b) under Euclidean distance.

    Singleton points score 0; an all-coincident clustering (a = b = 0)
    scores 0 by the 0/0 -> 0 convention. Requires >= 2 non-empty clusters.
    """
    features = np.asarray(features, dtype=np.float64)
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.unique(assignments)
    if labels.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    diff = features[:, None, :] - features[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    n = features.shape[0]
    scores = np.zeros(n)
    for i in range(n):
        own = assignments == assignments[i]
        if own.sum() == 1:
            scores[i] = 0.0
            continue
        a = dist[i, own].sum() / (own.sum() - 1)
        b = min(dist[i, assignments == c].mean() for c in labels if c != assignments[i])
        m = max(a, b)
        scores[i] = 0.0 if m == 0 else (b - a) / m
    return float(scores.mean())


def extract_descriptors(features: np.ndarray, k_max: int = K_MAX_DEFAULT, seed: int = 0,
                        object_id: int = 0, restarts: int = KMEANS_RESTARTS
                        ) -> DescriptorSet:
    """Adaptive descriptor extraction: silhouette-selected K-means sweep.

    Probes K = 1..min(k_max, n); K = 1 receives score 0, and only a strictly
    greater silhouette replaces the incumbent, so ties favor smaller K. Each
    K runs ``restarts`` seeded K-means and keeps the lowest-SSE clustering.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("cannot extract descriptors from zero features")
    if k_max < 1:
        raise ValueError("k_max must be positive")
    rng = np.random.default_rng(seed)
    best_score = -1.0
    best_centers = None
    trace: list[float] = []
    chosen = 1
    for k in range(1, min(k_max, n) + 1):
        best_sse = np.inf
        centers = assign = None
        for _ in range(restarts):
            sub = int(rng.integers(2 ** 63))
            c, a = kmeans(features, k, sub)
            sse = kmeans_sse(features, c, a)
            if sse < best_sse:
                best_sse, centers, assign = sse, c, a
        score = 0.0 if k == 1 else silhouette(features, assign)
        trace.append(score)
        if score > best_score:
            best_score = score
            best_centers = centers
            chosen = k
    return DescriptorSet(object_id=object_id,
                         descriptors=[Descriptor(vector=c) for c in best_centers],
                         chosen_k=chosen, silhouette_trace=trace)


def mean_feature(features: np.ndarray, object_id: int = 0) -> GlobalFeature:
    return GlobalFeature(object_id=object_id,
                         vector=np.asarray(features, dtype=np.float64).mean(axis=0))


def weigh_descriptors(dset: DescriptorSet, global_feature: GlobalFeature,
                      mode: str = "full") -> DescriptorSet:
    """Attach reliability weights w = d . v_mean/|v_mean| to each descriptor.

    The factorization w = cos(d, v_mean) * |d| splits into directional
    consistency and internal compactness; ``mode`` can keep only one factor
    ("direction" or "compactness") for the ablation variants. Zero-norm
    descriptors get weight 0; a zero-norm global feature is an error.
    """
    v = np.asarray(global_feature.vector, dtype=np.float64)
    vnorm = np.linalg.norm(v)
    if vnorm == 0:
        raise ValueError("degenerate global feature")
    vhat = v / vnorm
    out = []
    for d in dset.descriptors:
        dnorm = np.linalg.norm(d.vector)
        if dnorm == 0:
            w = 0.0
        elif mode == "full":
            w = float(d.vector @ vhat)
        elif mode == "direction":
            w = float(d.vector @ vhat / dnorm)
        elif mode == "compactness":
            w = float(dnorm)
        else:
            raise ValueError(f"unknown weighting mode: {mode}")
        out.append(Descriptor(vector=d.vector.copy(), weight=w))
    return DescriptorSet(object_id=dset.object_id, descriptors=out,
                         chosen_k=dset.chosen_k,
                         silhouette_trace=list(dset.silhouette_trace))


def pool_baselines(features: np.ndarray, mode: str, object_id: int = 0) -> DescriptorSet:
    """Ablation baselines: one mean descriptor (avg) or all features (max)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == 0:
        raise ValueError("cannot pool zero features")
    if mode == "avg":
        descs = [Descriptor(vector=features.mean(axis=0), weight=1.0)]
    elif mode == "max":
        descs = [Descriptor(vector=f.copy(), weight=1.0) for f in features]
    else:
        raise ValueError(f"unknown pooling mode: {mode}")
    return DescriptorSet(object_id=object_id, descriptors=descs, chosen_k=len(descs))


def fixed_k_descriptors(features: np.ndarray, k: int, seed: int = 0,
                        object_id: int = 0, restarts: int = KMEANS_RESTARTS
                        ) -> DescriptorSet:
    """Fixed-cluster-count variant; K clamps to the number of features."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ValueError("cannot extract descriptors from zero features")
    k = min(k, n)
    rng = np.random.default_rng(seed)
    best_sse = np.inf
    centers = None
    for _ in range(restarts):
        c, a = kmeans(features, k, int(rng.integers(2 ** 63)))
        sse = kmeans_sse(features, c, a)
        if sse < best_sse:
            best_sse, centers = sse, c
    return DescriptorSet(object_id=object_id,
                         descriptors=[Descriptor(vector=c) for c in centers],
                         chosen_k=k)
