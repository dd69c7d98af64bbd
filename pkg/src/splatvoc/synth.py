"""Synthetic scenes with planted objects, masks, and view-dependent semantics.

Every downstream claim is tested against data generated here: blob scenes
with known per-Gaussian labels, per-view binary masks rendered from those
labels, and per-mask semantic features drawn from a planted aspect model.
An aspect model gives each object a small set of unit semantic vectors,
each visible from a cone of view directions, so the generator can reproduce
the regime where one object exposes different semantics from different
viewpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .render import render_values, project
from .scene import Camera, GaussianScene, look_at_camera

MIN_MASK_AREA = 16


@dataclass
class AspectModel:
    """Planted semantics for the objects of one granularity level.

    aspects      : per object, (K_i, C) unit rows
    cone_centers : per object, (K_i, 3) unit view directions
    cone_widths  : per object, (K_i,) half-angles in (0, pi]
    noise_sigma  : std of Gaussian noise added before re-normalization
    """

    aspects: list[np.ndarray]
    cone_centers: list[np.ndarray]
    cone_widths: list[np.ndarray]
    noise_sigma: float = 0.0

    @property
    def n_objects(self) -> int:
        return len(self.aspects)

    def validate(self) -> None:
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        for i, (a, c, w) in enumerate(zip(self.aspects, self.cone_centers, self.cone_widths)):
            if a.shape[0] == 0:
                raise ValueError(f"object {i} has zero aspects")
            if not np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-8):
                raise ValueError(f"object {i} aspect vectors must be unit-norm")
            if np.any(w <= 0) or np.any(w > np.pi):
                raise ValueError(f"object {i} cone widths must lie in (0, pi]")

    def select_aspect(self, obj: int, view_dir: np.ndarray) -> int:
        """Aspect whose cone contains the view direction.

        Ties go to the nearest cone center; if no cone matches, the nearest
        center wins as well.
        """
        centers = self.cone_centers[obj]
        d = view_dir / np.linalg.norm(view_dir)
        ang = np.arccos(np.clip(centers @ d, -1.0, 1.0))
        inside = ang <= self.cone_widths[obj]
        if np.any(inside):
            cand = np.flatnonzero(inside)
            return int(cand[np.argmin(ang[cand])])
        return int(np.argmin(ang))


@dataclass
class MaskObservation:
    """One binary 2D mask in one view, with its semantic feature."""

    view: int
    mask: np.ndarray                  # (H, W) bool
    feature: np.ndarray | None = None  # (C,) unit vector
    level: int = 0
    object_id: int | None = None      # oracle sidecar; None for external data

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class SyntheticDataset:
    """Scene + cameras + masks (+ the aspect models, kept for oracles)."""

    scene: GaussianScene
    cameras: list[Camera]
    masks: list[MaskObservation]
    aspect_models: list[AspectModel] | None = None
    n_levels: int = 1

    def masks_for_view(self, view: int, level: int | None = None) -> list[MaskObservation]:
        return [m for m in self.masks
                if m.view == view and (level is None or m.level == level)]

    def level_masks(self, level: int) -> list[MaskObservation]:
        return [m for m in self.masks if m.level == level]

    def feature_matrix(self, level: int | None = None) -> np.ndarray:
        ms = self.masks if level is None else self.level_masks(level)
        return np.stack([m.feature for m in ms])


def _split_recursive(positions: np.ndarray, idx: np.ndarray, parts: int) -> list[np.ndarray]:
    """Median split along the widest axis until ``parts`` groups exist."""
    groups = [idx]
    while len(groups) < parts:
        sizes = [len(g) for g in groups]
        g = groups.pop(int(np.argmax(sizes)))
        pts = positions[g]
        axis = int(np.argmax(pts.var(axis=0)))
        order = g[np.argsort(pts[:, axis], kind="stable")]
        half = len(order) // 2
        groups.extend([order[:half], order[half:]])
    return groups


def generate_scene(n_objects: int, gaussians_per_object: int, seed: int,
                   levels: int = 1, spread: float = 4.0, blob_radius: float = 0.55,
                   opacity_range: tuple[float, float] = (0.75, 0.95)) -> GaussianScene:
    """Spatially separated Gaussian blobs with per-level ground-truth labels.

    Objects sit on a ring of diameter ``spread``; each blob is an isotropic
    Gaussian cloud. Level ``levels-1`` labels whole objects; finer levels
    split each object spatially into 2 ** (levels-1-l) parts.
    """
    if n_objects < 1:
        raise ValueError("need at least one object")
    rng = np.random.default_rng(seed)
    n = n_objects * gaussians_per_object

    azimuth = 2 * np.pi * np.arange(n_objects) / n_objects
    ring = spread / 2.0 if n_objects > 1 else 0.0
    centers = np.stack([ring * np.cos(azimuth), ring * np.sin(azimuth),
                        rng.uniform(-0.3, 0.3, n_objects)], axis=1)

    positions = np.concatenate([
        centers[i] + rng.normal(0.0, blob_radius / 2.0, (gaussians_per_object, 3))
        for i in range(n_objects)
    ])
    radii = rng.uniform(0.10, 0.18, n)
    opacities = rng.uniform(*opacity_range, n)
    colors = rng.uniform(0.0, 1.0, (n, 3))

    whole = np.repeat(np.arange(n_objects), gaussians_per_object)
    labels = np.zeros((levels, n), dtype=np.int64)
    labels[levels - 1] = whole
    for level in range(levels - 1):
        parts = 2 ** (levels - 1 - level)
        next_id = 0
        for i in range(n_objects):
            idx = np.flatnonzero(whole == i)
            for grp in _split_recursive(positions, idx, parts):
                labels[level, grp] = next_id
                next_id += 1
    return GaussianScene(positions=positions, radii=radii, opacities=opacities,
                         colors=colors, labels=labels)


def ring_cameras(n_views: int, radius: float = 9.0, height: float = 1.6,
                 image_size: tuple[int, int] = (48, 48), focal: float = 52.0,
                 target=(0.0, 0.0, 0.0), seed: int | None = None) -> list[Camera]:
    """Cameras on a ring around the scene, all looking at the target."""
    h, w = image_size
    jitter = np.zeros(n_views)
    if seed is not None:
        jitter = np.random.default_rng(seed).uniform(-0.5, 0.5, n_views) * (2 * np.pi / n_views)
    cams = []
    for v in range(n_views):
        a = 2 * np.pi * v / n_views + jitter[v]
        eye = np.array([radius * np.cos(a), radius * np.sin(a), height])
        cams.append(look_at_camera(eye, target, height=h, width=w, focal=focal))
    return cams


def generate_masks(scene: GaussianScene, cameras: list[Camera],
                   min_area: int = MIN_MASK_AREA) -> list[MaskObservation]:
    """Render per-object binary masks for every view and granularity level.

    A mask is emitted wherever an object's rendered label indicator exceeds
    0.5; masks smaller than ``min_area`` pixels are dropped. Within one view
    and level, masks are pairwise disjoint because the blended indicators of
    disjoint Gaussian sets sum to at most one per pixel.
    """
    if scene.labels is None:
        raise ValueError("scene has no ground-truth labels")
    masks: list[MaskObservation] = []
    for view, cam in enumerate(cameras):
        comp = project(scene, cam)
        for level in range(scene.n_levels):
            lab = scene.labels[level]
            for obj in np.unique(lab[lab >= 0]):
                indicator = (lab == obj).astype(np.float64)
                m = render_values(comp, indicator).values[:, :, 0] > 0.5
                if m.sum() >= min_area:
                    masks.append(MaskObservation(view=view, mask=m, level=level,
                                                 object_id=int(obj)))
    return masks


def object_centroids(scene: GaussianScene, level: int) -> dict[int, np.ndarray]:
    lab = scene.labels[level]
    return {int(o): scene.positions[lab == o].mean(axis=0) for o in np.unique(lab[lab >= 0])}


def synthesize_semantics(dataset: SyntheticDataset, aspect_models: list[AspectModel],
                         seed: int) -> SyntheticDataset:
    """Attach a planted semantic feature to every mask.

    Each mask's feature is the aspect whose visibility cone contains the
    camera-to-object-centroid direction, plus Gaussian noise, re-normalized
    to unit length. Mutates the masks in place and records the aspect models
    on the dataset for later oracle checks.
    """
    if len(aspect_models) != dataset.n_levels:
        raise ValueError("one aspect model per level required")
    for am in aspect_models:
        am.validate()
    rng = np.random.default_rng(seed)
    centroids = [object_centroids(dataset.scene, level) for level in range(dataset.n_levels)]
    for m in dataset.masks:
        if m.object_id is None:
            raise ValueError("mask without object identity cannot receive planted semantics")
        am = aspect_models[m.level]
        cam = dataset.cameras[m.view]
        view_dir = centroids[m.level][m.object_id] - cam.center
        k = am.select_aspect(m.object_id, view_dir)
        feat = am.aspects[m.object_id][k].copy()
        if am.noise_sigma > 0:
            feat = feat + rng.normal(0.0, am.noise_sigma, feat.shape)
        m.feature = feat / np.linalg.norm(feat)
    dataset.aspect_models = aspect_models
    return dataset


def plant_aspects(n_objects: int, aspects_per_object: int, feature_dim: int, seed: int,
                  shared_cos: float = 0.0, family_cos: float = 0.0,
                  noise_sigma: float = 0.0, shares: np.ndarray | None = None,
                  cone_axis_jitter: float = 0.0) -> AspectModel:
    """Construct an aspect model with controlled cosine geometry.

    Aspect k of object i is built on an orthonormal basis as
        sqrt(shared_cos) * g + sqrt(family_cos) * c_k + sqrt(rest) * u_ik,
    giving exact pairwise cosines: ``shared_cos`` between any two distinct
    aspects, plus ``family_cos`` extra between same-index aspects of
    different objects. Visibility cones partition the azimuth circle with
    arc sizes proportional to ``shares``.
    """
    K = aspects_per_object
    need = 1 + K + n_objects * K
    if feature_dim < need:
        raise ValueError(f"feature_dim {feature_dim} too small for exact geometry ({need} needed)")
    if shared_cos < 0 or family_cos < 0 or shared_cos + family_cos >= 1:
        raise ValueError("shared_cos + family_cos must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.normal(size=(feature_dim, feature_dim)))
    basis = basis.T  # rows orthonormal
    g = basis[0]
    fam = basis[1:1 + K]
    uniq = basis[1 + K:1 + K + n_objects * K]

    a = np.sqrt(shared_cos)
    b = np.sqrt(family_cos)
    c = np.sqrt(1.0 - shared_cos - family_cos)

    if shares is None:
        shares = np.full(K, 1.0 / K)
    shares = np.asarray(shares, dtype=np.float64)
    shares = shares / shares.sum()
    bounds = 2 * np.pi * np.concatenate(([0.0], np.cumsum(shares)))
    mids = (bounds[:-1] + bounds[1:]) / 2.0
    halfwidths = np.diff(bounds) / 2.0

    aspects, centers, widths = [], [], []
    for i in range(n_objects):
        vecs = np.stack([a * g + b * fam[k] + c * uniq[i * K + k] for k in range(K)])
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        offset = cone_axis_jitter * rng.uniform(-1.0, 1.0)
        az = mids + offset
        ctr = np.stack([np.cos(az), np.sin(az), np.zeros(K)], axis=1)
        aspects.append(vecs)
        centers.append(ctr)
        widths.append(halfwidths.copy())
    return AspectModel(aspects=aspects, cone_centers=centers, cone_widths=widths,
                       noise_sigma=noise_sigma)


def make_synthetic_dataset(n_objects: int = 4, gaussians_per_object: int = 24,
                           n_views: int = 12, seed: int = 0, levels: int = 1,
                           aspects_per_object: int = 1, feature_dim: int = 32,
                           noise_sigma: float = 0.0, shared_cos: float = 0.0,
                           family_cos: float = 0.0, shares: np.ndarray | None = None,
                           image_size: tuple[int, int] = (48, 48),
                           min_area: int = MIN_MASK_AREA) -> SyntheticDataset:
    """One-call synthetic dataset: scene, ring cameras, masks, semantics."""
    scene = generate_scene(n_objects, gaussians_per_object, seed, levels=levels)
    cams = ring_cameras(n_views, image_size=image_size)
    masks = generate_masks(scene, cams, min_area=min_area)
    ds = SyntheticDataset(scene=scene, cameras=cams, masks=masks, n_levels=levels)
    models = []
    for level in range(levels):
        n_level_objects = int(scene.labels[level].max()) + 1
        models.append(plant_aspects(n_level_objects, aspects_per_object, feature_dim,
                                    seed + 101 * level, shared_cos=shared_cos,
                                    family_cos=family_cos, noise_sigma=noise_sigma,
                                    shares=shares))
    return synthesize_semantics(ds, models, seed + 7)
