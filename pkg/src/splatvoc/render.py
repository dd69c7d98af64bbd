"""Deterministic alpha-compositing rasterizer with analytic feature gradients.

Rendering is tile-free: project() produces, for every pixel, the depth-sorted
list of (gaussian, alpha) contributions, stored in a flat CSR layout. All
value rendering (colors, affinity features, label indicators) reuses the same
blending weights w_i = alpha_i * prod_{j<i} (1 - alpha_j), which also form the
exact Jacobian of the rendered maps with respect to per-Gaussian values.

Cutoffs: contributions with alpha < ALPHA_CUTOFF are excluded from the pixel
list, and a pixel's list is truncated once accumulated transmittance falls
below TRANSMITTANCE_FLOOR. Depth ties break by Gaussian index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Camera, GaussianScene

ALPHA_CUTOFF = 1.0 / 255.0
TRANSMITTANCE_FLOOR = 1e-4
Z_NEAR = 1e-8


@dataclass
class ViewComposite:
    """Per-pixel composite lists for one (scene, camera) pair, CSR layout.

    Entries are sorted by pixel, then front-to-back depth. ``weight`` holds
    the blending weight of each entry; ``transmittance`` the per-pixel
    residual T after the full list.
    """

    height: int
    width: int
    n_gaussians: int
    pixel: np.ndarray          # (E,) flat pixel index
    gauss: np.ndarray          # (E,) Gaussian index
    alpha: np.ndarray          # (E,)
    weight: np.ndarray         # (E,)
    start: np.ndarray          # (H*W + 1,) CSR offsets
    transmittance: np.ndarray  # (H*W,)

    def pixel_list(self, y: int, x: int) -> list[tuple[int, float]]:
        """Depth-sorted [(gaussian_index, alpha)] for one pixel."""
        p = y * self.width + x
        lo, hi = self.start[p], self.start[p + 1]
        return [(int(g), float(a)) for g, a in zip(self.gauss[lo:hi], self.alpha[lo:hi])]


@dataclass
class RenderedFeatureMap:
    """An (H, W, D) rendered value grid plus per-pixel residual transmittance."""

    values: np.ndarray
    transmittance: np.ndarray

    @property
    def flat(self) -> np.ndarray:
        h, w, d = self.values.shape
        return self.values.reshape(h * w, d)


def project(scene: GaussianScene, cam: Camera,
            alpha_cutoff: float = ALPHA_CUTOFF,
            transmittance_floor: float = TRANSMITTANCE_FLOOR) -> ViewComposite:
    """Project a scene into per-pixel depth-sorted composite lists.

    A Gaussian enters a pixel's list iff alpha = opacity * exp(-0.5 d^2) is
    at least ``alpha_cutoff`` and the pixel's accumulated transmittance is
    still above ``transmittance_floor`` when the Gaussian's depth is reached.
    Gaussians behind the camera are culled. Raises on degenerate footprints.
    """
    scene.validate()
    cam.validate()
    if np.any(scene.radii <= 0) or np.any(~np.isfinite(scene.radii)):
        raise ValueError("degenerate footprint")

    h, w = cam.height, cam.width
    n = scene.n_gaussians
    pts = cam.world_to_camera(scene.positions)
    z = pts[:, 2]
    visible = z > Z_NEAR

    u = np.zeros(n)
    v = np.zeros(n)
    su = np.ones(n)
    sv = np.ones(n)
    zs = np.where(visible, z, 1.0)
    u[visible] = cam.fx * pts[visible, 0] / zs[visible] + cam.cx
    v[visible] = cam.fy * pts[visible, 1] / zs[visible] + cam.cy
    su[visible] = scene.radii[visible] * cam.fx / zs[visible]
    sv[visible] = scene.radii[visible] * cam.fy / zs[visible]

    # front-to-back order; ties by index (stable sort on depth)
    order = np.argsort(z, kind="stable")
    order = order[visible[order]]

    T = np.ones(h * w)
    ent_pixel, ent_gauss, ent_alpha, ent_weight, ent_rank = [], [], [], [], []

    for rank, g in enumerate(order):
        o = scene.opacities[g]
        if o < alpha_cutoff:
            continue
        # footprint extent where alpha can reach the cutoff
        rho = np.sqrt(2.0 * np.log(o / alpha_cutoff)) if o > alpha_cutoff else 0.0
        x0 = max(int(np.ceil(u[g] - rho * su[g])), 0)
        x1 = min(int(np.floor(u[g] + rho * su[g])), w - 1)
        y0 = max(int(np.ceil(v[g] - rho * sv[g])), 0)
        y1 = min(int(np.floor(v[g] + rho * sv[g])), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        dx = (xs - u[g]) / su[g]
        dy = (ys - v[g]) / sv[g]
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        alpha = o * np.exp(-0.5 * d2)
        px = (ys[:, None] * w + xs[None, :]).ravel()
        alpha = alpha.ravel()

        keep = (alpha >= alpha_cutoff) & (T[px] >= transmittance_floor)
        if not np.any(keep):
            continue
        px = px[keep]
        alpha = alpha[keep]
        weight = alpha * T[px]
        T[px] *= 1.0 - alpha

        ent_pixel.append(px)
        ent_gauss.append(np.full(px.shape, g, dtype=np.int64))
        ent_alpha.append(alpha)
        ent_weight.append(weight)
        ent_rank.append(np.full(px.shape, rank, dtype=np.int64))

    if ent_pixel:
        pixel = np.concatenate(ent_pixel)
        gauss = np.concatenate(ent_gauss)
        alpha = np.concatenate(ent_alpha)
        weight = np.concatenate(ent_weight)
        rank = np.concatenate(ent_rank)
        idx = np.lexsort((rank, pixel))
        pixel, gauss, alpha, weight = pixel[idx], gauss[idx], alpha[idx], weight[idx]
    else:
        pixel = np.zeros(0, dtype=np.int64)
        gauss = np.zeros(0, dtype=np.int64)
        alpha = np.zeros(0)
        weight = np.zeros(0)

    start = np.zeros(h * w + 1, dtype=np.int64)
    np.add.at(start, pixel + 1, 1)
    start = np.cumsum(start)
    return ViewComposite(height=h, width=w, n_gaussians=n, pixel=pixel,
                         gauss=gauss, alpha=alpha, weight=weight,
                         start=start, transmittance=T)


def blending_weights(alphas: np.ndarray) -> np.ndarray:
    """w_i = alpha_i * prod_{j<i} (1 - alpha_j) for one front-to-back list."""
    alphas = np.asarray(alphas, dtype=np.float64)
    trans = np.cumprod(np.concatenate(([1.0], 1.0 - alphas[:-1]))) if alphas.size else alphas
    return alphas * trans


def composite(values, alphas) -> np.ndarray:
    """Front-to-back alpha blending of an ordered value list.

    Returns sum_i v_i alpha_i prod_{j<i} (1 - alpha_j). Works identically for
    colors (D=3), affinity features (D=C') and scalar indicators (D=1).
    An empty list composites to the zero vector.
    """
    values = np.asarray(values, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if values.shape[0] != alphas.shape[0]:
        raise ValueError("values and alphas must have equal length")
    if values.size == 0:
        return np.zeros(values.shape[1] if values.ndim == 2 else 0)
    if np.any(alphas < 0) or np.any(alphas > 1):
        raise ValueError("alphas must lie in [0, 1]")
    w = blending_weights(alphas)
    return (np.atleast_2d(values) * w[:, None]).sum(axis=0)


def unit_rows(x: np.ndarray) -> np.ndarray:
    """Row-normalize, mapping zero-norm rows to zero vectors."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(norms > 0, x / norms, 0.0)
    return out


def composite_normalized(features, alphas) -> np.ndarray:
    """Alpha blending of direction vectors f / ||f||.

    Zero-norm features contribute a zero vector (transient at init time),
    mirroring the normalized-blending variant used during affinity training.
    """
    return composite(unit_rows(np.atleast_2d(np.asarray(features, dtype=np.float64))), alphas)


def render_values(comp: ViewComposite, values: np.ndarray,
                  normalized: bool = False) -> RenderedFeatureMap:
    """Render per-Gaussian value rows through precomputed composite weights."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != comp.n_gaussians:
        raise ValueError("one value row per Gaussian required")
    rows = unit_rows(values) if normalized else values
    d = rows.shape[1]
    p = comp.height * comp.width
    flat = np.zeros((p, d))
    contrib = rows[comp.gauss] * comp.weight[:, None]
    for k in range(d):
        flat[:, k] = np.bincount(comp.pixel, weights=contrib[:, k], minlength=p)
    return RenderedFeatureMap(values=flat.reshape(comp.height, comp.width, d),
                              transmittance=comp.transmittance.reshape(comp.height, comp.width))


def render_feature_map(scene: GaussianScene, cam: Camera, features: np.ndarray | None = None,
                       normalized: bool = False) -> RenderedFeatureMap:
    """Project and render a feature map in one call."""
    if features is None:
        features = scene.affinity
    if features is None:
        raise ValueError("no features to render")
    return render_values(project(scene, cam), features, normalized=normalized)


def render_label_map(scene: GaussianScene, cam: Camera, selected) -> np.ndarray:
    """Composite a 0/1 indicator over ``selected`` Gaussians into [0, 1].

    The result is binarized at 0.5 by downstream 2D evaluation.
    """
    indicator = np.zeros(scene.n_gaussians)
    selected = np.asarray(sorted(selected), dtype=np.int64) if not isinstance(selected, np.ndarray) else selected
    if selected.size:
        indicator[selected] = 1.0
    return render_values(project(scene, cam), indicator).values[:, :, 0]


def backprop_to_features(pixel_grads: np.ndarray, comp: ViewComposite,
                         features: np.ndarray | None = None,
                         normalized: bool = False) -> np.ndarray:
    """Pull per-pixel upstream gradients back onto per-Gaussian features.

    Rendering is linear in the (optionally normalized) feature rows, so the
    unnormalized gradient is sum_p w_g(p) * upstream(p). With normalized
    blending the per-Gaussian normalization Jacobian
    (I - f_hat f_hat^T) / ||f|| is chained on afterwards; zero-norm rows get
    a zero gradient, matching their zero forward contribution.
    """
    grads = np.asarray(pixel_grads, dtype=np.float64)
    if grads.ndim == 3:
        grads = grads.reshape(-1, grads.shape[2])
    elif grads.ndim == 1:
        grads = grads[:, None]
    if grads.shape[0] != comp.height * comp.width:
        raise ValueError("pixel gradient grid does not match the composite resolution")
    if normalized and features is None:
        raise ValueError("normalized backprop requires the current features")
    if features is not None and features.shape[0] != comp.n_gaussians:
        raise ValueError("one feature row per Gaussian required")

    d = grads.shape[1]
    upstream = grads[comp.pixel] * comp.weight[:, None]
    acc = np.zeros((comp.n_gaussians, d))
    for k in range(d):
        acc[:, k] = np.bincount(comp.gauss, weights=upstream[:, k], minlength=comp.n_gaussians)
    if not normalized:
        return acc
    feats = np.asarray(features, dtype=np.float64)
    if feats.shape[1] != d:
        raise ValueError("feature dimension does not match gradient dimension")
    norms = np.linalg.norm(feats, axis=1)
    fhat = unit_rows(feats)
    proj = (fhat * acc).sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = np.where(norms[:, None] > 0, (acc - proj * fhat) / norms[:, None], 0.0)
    return grad
