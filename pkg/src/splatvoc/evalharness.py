"""End-to-end evaluation: projected-2D mIoU, direct-3D mIoU, ablation matrix.

The projected protocol renders a predicted Gaussian foreground into every
view and scores IoU against ground-truth masks; the direct protocol classifies
each Gaussian by its object's best query and scores per-class IoU/accuracy.
The ablation benchmark builds synthetic scenes that stress the descriptor
variants differently: a dilution scene (many imbalanced aspects, where a
single mean descriptor loses minority semantics) and a confusion scene
(adversarial mask features copied from other objects, which punish unweighted
descriptor retention).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .decompose import Decomposition, decompose_level
from .descriptors import (
    DescriptorSet,
    extract_descriptors,
    fixed_k_descriptors,
    mean_feature,
    pool_baselines,
    weigh_descriptors,
)
from .hdbscan import HdbscanConfig
from .query import Query, SegmentConfig, segment
from .render import render_label_map
from .scene import Camera, GaussianScene
from .synth import SyntheticDataset, make_synthetic_dataset, plant_aspects, synthesize_semantics
from .train import TrainConfig, train

ABLATION_VARIANTS = (
    "avg", "max",
    "fixed5", "fixed5+dw", "fixed10", "fixed10+dw", "fixed20", "fixed20+dw",
    "adaptive", "adaptive+dwc", "adaptive+dwd", "adaptive+dw",
)


@dataclass
class EvalSpec:
    """What to evaluate: queries with their ground truth, and the protocol."""

    protocol: str                      # "projected-2d" | "direct-3d"
    queries: list[Query]
    targets: list[int]                 # ground-truth object id per query
    variant: str = "adaptive+dw"

    def validate(self) -> None:
        if self.protocol not in ("projected-2d", "direct-3d"):
            raise ValueError(f"unknown protocol: {self.protocol}")
        if len(self.queries) != len(self.targets):
            raise ValueError("one target per query required")


def iou_masks(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    union = (pred | gt).sum()
    return float((pred & gt).sum() / union) if union else 1.0


def miou_2d(scene: GaussianScene, cameras: list[Camera], foreground: np.ndarray,
            gt_masks: list[np.ndarray | None]) -> tuple[float, list[float]]:
    """Render the foreground into each view and score IoU against gt masks.

    Views with an empty or missing ground-truth mask are skipped with a
    warning. Returns (mean IoU over scored views, per-view IoUs).
    """
    ious = []
    for cam, gt in zip(cameras, gt_masks):
        if gt is None or not np.any(gt):
            warnings.warn("skipping view with empty ground-truth mask")
            continue
        pred = render_label_map(scene, cam, foreground) > 0.5
        ious.append(iou_masks(pred, gt))
    return (float(np.mean(ious)) if ious else 0.0), ious


def miou_3d(pred_labels: np.ndarray, gt_labels: np.ndarray
            ) -> tuple[float, float, dict[int, tuple[float, float]]]:
    """Macro per-class IoU and accuracy over classes present in the ground truth."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    if pred_labels.shape != gt_labels.shape:
        raise ValueError("prediction and ground truth must align")
    per_class: dict[int, tuple[float, float]] = {}
    for c in np.unique(gt_labels[gt_labels >= 0]):
        tp = int(((pred_labels == c) & (gt_labels == c)).sum())
        fp = int(((pred_labels == c) & (gt_labels != c)).sum())
        fn = int(((pred_labels != c) & (gt_labels == c)).sum())
        iou = tp / (tp + fp + fn) if (tp + fp + fn) else 1.0
        acc = tp / (tp + fn) if (tp + fn) else 1.0
        per_class[int(c)] = (iou, acc)
    if not per_class:
        raise ValueError("ground truth contains no labeled classes")
    ious, accs = zip(*per_class.values())
    return float(np.mean(ious)), float(np.mean(accs)), per_class


def classify_gaussians(decomposition: Decomposition,
                       descriptor_sets: list[DescriptorSet],
                       queries: list[Query], query_classes: list[int]
                       ) -> np.ndarray:
    """Direct-3D multi-class protocol: each Gaussian takes the class of its
    object's highest-scoring query."""
    from .query import object_rel
    by_id = {ds.object_id: ds for ds in descriptor_sets}
    n = decomposition.assignment.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for cluster in decomposition.clusters:
        dset = by_id.get(cluster.id)
        if dset is None or cluster.gaussians is None:
            continue
        scores = [object_rel(dset, q) for q in queries]
        out[cluster.gaussians] = query_classes[int(np.argmax(scores))]
    return out


def variant_descriptors(variant: str, features_per_object: dict[int, np.ndarray],
                        k_max: int = 20, seed: int = 0) -> list[DescriptorSet]:
    """Build each object's descriptor set under one ablation variant."""
    base, _, dw = variant.partition("+")
    sets = []
    for obj_id in sorted(features_per_object):
        feats = features_per_object[obj_id]
        if base == "avg":
            dset = pool_baselines(feats, "avg", object_id=obj_id)
        elif base == "max":
            dset = pool_baselines(feats, "max", object_id=obj_id)
        elif base.startswith("fixed"):
            dset = fixed_k_descriptors(feats, int(base[5:]), seed=seed + 977 * obj_id,
                                       object_id=obj_id)
        elif base == "adaptive":
            dset = extract_descriptors(feats, k_max=k_max, seed=seed + 977 * obj_id,
                                       object_id=obj_id)
        else:
            raise ValueError(f"unknown ablation variant: {variant}")
        if dw:
            mode = {"dw": "full", "dwc": "compactness", "dwd": "direction"}[dw]
            dset = weigh_descriptors(dset, mean_feature(feats, obj_id), mode=mode)
        sets.append(dset)
    return sets


@dataclass
class AblationBenchmark:
    """One synthetic evaluation scene: dataset, decomposition, queries."""

    name: str
    dataset: SyntheticDataset
    decomposition: Decomposition
    queries: list[Query]
    targets: list[int]                 # gt object id per query
    features_per_object: dict[int, np.ndarray] = field(default_factory=dict)

    def collect_features(self) -> None:
        masks = self.dataset.level_masks(0)
        self.features_per_object = {
            c.id: np.stack([masks[i].feature for i in c.mask_indices])
            for c in self.decomposition.clusters
        }


def _random_canonicals(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    canon = rng.normal(size=(count, dim))
    return canon / np.linalg.norm(canon, axis=1, keepdims=True)


def _train_decomposition(ds: SyntheticDataset, seed: int) -> Decomposition:
    cfg = TrainConfig(iterations=350, learning_rate=0.1, feature_dim=16,
                      samples_per_mask=128, seed=seed)
    result = train(ds.scene, ds, cfg)
    return decompose_level(ds.scene, ds, result.features,
                           HdbscanConfig(min_cluster_size=5,
                                         cluster_selection_epsilon=0.1))


def _cluster_to_object(ds: SyntheticDataset, dec: Decomposition) -> dict[int, int]:
    """Map decomposition cluster ids to planted object ids by mask majority."""
    masks = ds.level_masks(0)
    out = {}
    for c in dec.clusters:
        ids = [masks[i].object_id for i in c.mask_indices]
        out[c.id] = int(np.bincount(ids).argmax())
    return out


def make_dilution_benchmark(seed: int, n_objects: int = 5, train_affinity: bool = True
                            ) -> AblationBenchmark:
    """Imbalanced multi-aspect objects, orthogonal semantics, no corruption.

    Minority aspects carry little mass in each object's mean feature, so a
    single averaged descriptor falls below the auxiliary cosine threshold for
    minority-aspect queries while clustered descriptors keep them.
    """
    shares = np.array([0.5, 0.25, 0.15, 0.10])
    ds = make_synthetic_dataset(n_objects=n_objects, gaussians_per_object=20,
                                n_views=16, seed=seed, aspects_per_object=4,
                                feature_dim=32, noise_sigma=0.02, shares=shares)
    dec = _train_decomposition(ds, seed + 1) if train_affinity \
        else _planted_decomposition(ds)
    rng = np.random.default_rng(seed + 2)
    canon = _random_canonicals(32, 4, rng)
    queries, targets = [], []
    am = ds.aspect_models[0]
    for obj in range(n_objects):
        for k in range(4):
            queries.append(Query(vector=am.aspects[obj][k].copy(), canonicals=canon,
                                 name=f"obj{obj}-aspect{k}"))
            targets.append(obj)
    bench = AblationBenchmark(name="dilution", dataset=ds, decomposition=dec,
                              queries=queries, targets=targets)
    bench.collect_features()
    return bench


def make_confusion_benchmark(seed: int, n_objects: int = 6, corrupt_heavy: float = 0.25,
                             train_affinity: bool = True) -> AblationBenchmark:
    """Balanced two-aspect objects plus adversarial mask features.

    A slice of each object's masks gets its feature replaced by the exact
    query aspect of another object: retained raw features and unweighted
    descriptors then answer that query, while the weighting suppresses the
    off-mean adversarial descriptor.
    """
    ds = make_synthetic_dataset(n_objects=n_objects, gaussians_per_object=20,
                                n_views=16, seed=seed, aspects_per_object=2,
                                feature_dim=32, noise_sigma=0.03, shared_cos=0.4)
    am = ds.aspect_models[0]
    rng = np.random.default_rng(seed + 3)
    # corrupt object j with exact copies of object (j+1)'s query aspect
    masks = ds.level_masks(0)
    for obj in range(n_objects):
        victim_masks = [i for i, m in enumerate(masks) if m.object_id == obj]
        source = (obj + 1) % n_objects
        frac = corrupt_heavy if obj % 2 == 0 else 0.0
        n_corrupt = max(1, int(round(frac * len(victim_masks)))) if frac else 1
        chosen = rng.choice(victim_masks, size=min(n_corrupt, len(victim_masks)),
                            replace=False)
        for i in chosen:
            masks[i].feature = am.aspects[source][1].copy()
    dec = _train_decomposition(ds, seed + 4) if train_affinity \
        else _planted_decomposition(ds)
    # canonicals aligned with the shared semantic component
    shared_dir = am.aspects[0].sum(axis=0) + am.aspects[1].sum(axis=0)
    for obj in range(2, n_objects):
        shared_dir = shared_dir + am.aspects[obj].sum(axis=0)
    shared_dir /= np.linalg.norm(shared_dir)
    canon = np.vstack([shared_dir, _random_canonicals(32, 2, rng)])
    queries, targets = [], []
    for obj in range(n_objects):
        queries.append(Query(vector=am.aspects[obj][1].copy(), canonicals=canon,
                             name=f"obj{obj}-query"))
        targets.append(obj)
    bench = AblationBenchmark(name="confusion", dataset=ds, decomposition=dec,
                              queries=queries, targets=targets)
    bench.collect_features()
    return bench


def _planted_decomposition(ds: SyntheticDataset) -> Decomposition:
    """Ground-truth decomposition (used when affinity training is skipped)."""
    from .analysis import planted_clusters
    clusters = planted_clusters(ds)
    assignment = np.full(ds.scene.n_gaussians, -1, dtype=np.int64)
    for c in clusters:
        assignment[c.gaussians] = c.id
    return Decomposition(clusters=clusters, assignment=assignment)


def score_variant(bench: AblationBenchmark, variant: str, seed: int = 0,
                  segment_cfg: SegmentConfig | None = None) -> float:
    """Mean per-query 3D IoU of one descriptor variant on one benchmark."""
    dsets = variant_descriptors(variant, bench.features_per_object, seed=seed)
    scene = bench.dataset.scene
    cluster_obj = _cluster_to_object(bench.dataset, bench.decomposition)
    ious = []
    for query, target in zip(bench.queries, bench.targets):
        out = segment(scene, [bench.decomposition], [dsets], query, segment_cfg)
        gt = set(np.flatnonzero(scene.gt_label == target).tolist())
        pred = set(out.foreground.tolist())
        union = pred | gt
        ious.append(len(pred & gt) / len(union) if union else 1.0)
    _ = cluster_obj
    return float(np.mean(ious))


@dataclass
class AblationTable:
    rows: list[str]
    columns: list[str]
    scores: np.ndarray  # (len(rows), len(columns)) per-scene mIoU

    @property
    def means(self) -> np.ndarray:
        return self.scores.mean(axis=1)

    def score(self, variant: str) -> float:
        return float(self.means[self.rows.index(variant)])


def run_ablation(seed: int, variants=ABLATION_VARIANTS, train_affinity: bool = True
                 ) -> AblationTable:
    """Execute the variant matrix on both benchmark scenes for one seed."""
    benches = [make_dilution_benchmark(seed, train_affinity=train_affinity),
               make_confusion_benchmark(seed, train_affinity=train_affinity)]
    scores = np.zeros((len(variants), len(benches)))
    for j, bench in enumerate(benches):
        for i, variant in enumerate(variants):
            scores[i, j] = score_variant(bench, variant, seed=seed)
    return AblationTable(rows=list(variants), columns=[b.name for b in benches],
                         scores=scores)
