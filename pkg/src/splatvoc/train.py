"""Contrastive training of per-Gaussian affinity features.

Per iteration: pick a view, render the normalized affinity feature map,
pool a prototype per mask, then pull sampled in-mask pixel features toward
the prototype and push sampled out-of-mask features away (rebalanced loss,
equal-size positive/negative pools), plus a feature-norm regularizer that
drives rendered norms toward one. Gradients are analytic and flow through
the normalized blending; prototypes are treated as constants within an
iteration unless ``prototype_gradients`` is enabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .render import (
    RenderedFeatureMap,
    ViewComposite,
    backprop_to_features,
    project,
    render_values,
    unit_rows,
)
from .scene import GaussianScene
from .synth import MaskObservation, SyntheticDataset


@dataclass
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 0.5
    feature_dim: int = 32              # affinity dimension C'
    samples_per_mask: int = 256        # |P| = |N| per mask per iteration
    norm_weight: float = 1.0
    momentum: float = 0.0
    seed: int = 0
    prototype_gradients: bool = False  # stop-gradient through pooling if False
    init_scale: float = 0.01

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.samples_per_mask < 1:
            raise ValueError("need at least one sample per mask")
        if self.feature_dim < 1:
            raise ValueError("feature dimension must be positive")


@dataclass
class TrainResult:
    features: np.ndarray               # (N, C') trained affinity features
    loss_trace: list[tuple[int, float, float]]  # (iteration, L_r, L_norm)


def _flat(featmap) -> np.ndarray:
    if isinstance(featmap, RenderedFeatureMap):
        return featmap.flat
    arr = np.asarray(featmap, dtype=np.float64)
    if arr.ndim == 3:
        return arr.reshape(-1, arr.shape[2])
    return arr


def masked_average_pool(mask: np.ndarray, featmap) -> np.ndarray:
    """Mean of the rendered feature map over mask-on pixels."""
    flatmask = np.asarray(mask).reshape(-1).astype(bool)
    rows = _flat(featmap)
    if flatmask.shape[0] != rows.shape[0]:
        raise ValueError("mask and feature map resolutions differ")
    if not flatmask.any():
        raise ValueError("empty mask")
    return rows[flatmask].mean(axis=0)


def _cosine_rows(prototype: np.ndarray, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Cosine of each row with the prototype; zero-norm on either side -> 0."""
    pnorm = np.linalg.norm(prototype)
    norms = np.linalg.norm(rows, axis=1)
    denom = pnorm * norms
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, rows @ prototype / denom, 0.0)
    return cos, norms, pnorm


def contrastive_loss(prototype: np.ndarray, featmap, mask: np.ndarray) -> float:
    """Full-population objective: sum_p (1 - 2 M(p)) * max(cos(proto, F(p)), 0)."""
    rows = _flat(featmap)
    flatmask = np.asarray(mask).reshape(-1).astype(bool)
    if flatmask.shape[0] != rows.shape[0]:
        raise ValueError("mask and feature map resolutions differ")
    cos, _, _ = _cosine_rows(np.asarray(prototype, dtype=np.float64), rows)
    return float(((1.0 - 2.0 * flatmask) * np.maximum(cos, 0.0)).sum())


def rebalanced_loss(prototype: np.ndarray, featmap, mask: np.ndarray,
                    sampled_pos: np.ndarray, sampled_neg: np.ndarray) -> float:
    """Balanced-sample objective; the positive branch is unclamped.

    - sum_{p in P} M(p) cos(proto, F(p)) + sum_{p in N} (1 - M(p)) max(cos, 0)
    """
    pos = np.asarray(sampled_pos, dtype=np.int64)
    neg = np.asarray(sampled_neg, dtype=np.int64)
    if pos.shape[0] != neg.shape[0]:
        raise ValueError("positive and negative sample pools must have equal size")
    rows = _flat(featmap)
    flatmask = np.asarray(mask).reshape(-1).astype(bool)
    if np.any(~flatmask[pos]) or np.any(flatmask[neg]):
        raise ValueError("samples must come from inside (P) and outside (N) the mask")
    cos, _, _ = _cosine_rows(np.asarray(prototype, dtype=np.float64), rows)
    return float(-cos[pos].sum() + np.maximum(cos[neg], 0.0).sum())


def norm_regularizer(featmap, pixels: np.ndarray | None = None) -> float:
    """sum_p (1 - ||F(p)||) over the given pixels (default: all)."""
    rows = _flat(featmap)
    if pixels is not None:
        rows = rows[np.asarray(pixels, dtype=np.int64)]
    return float((1.0 - np.linalg.norm(rows, axis=1)).sum())


def _accumulate_cos_grad(upstream: np.ndarray, rows: np.ndarray, idx: np.ndarray,
                         coeff: np.ndarray, prototype: np.ndarray) -> None:
    """upstream[idx] += coeff * d cos(proto, F_p) / d F_p (rows fixed)."""
    sel = rows[idx]
    norms = np.linalg.norm(sel, axis=1)
    pnorm = np.linalg.norm(prototype)
    ok = (norms > 0) & (pnorm > 0)
    if not np.any(ok):
        return
    sel = sel[ok]
    n = norms[ok][:, None]
    phat = prototype / pnorm
    fhat = sel / n
    cos = fhat @ phat
    grad = (phat[None, :] - cos[:, None] * fhat) / n
    np.add.at(upstream, idx[ok], coeff[ok][:, None] * grad)


def _prototype_grad(rows: np.ndarray, idx: np.ndarray, coeff: np.ndarray,
                    prototype: np.ndarray) -> np.ndarray:
    """sum over terms of coeff * d cos(proto, F_p) / d proto."""
    out = np.zeros_like(prototype)
    sel = rows[idx]
    norms = np.linalg.norm(sel, axis=1)
    pnorm = np.linalg.norm(prototype)
    ok = (norms > 0) & (pnorm > 0)
    if not np.any(ok):
        return out
    sel = sel[ok]
    n = norms[ok][:, None]
    phat = prototype / pnorm
    fhat = sel / n
    cos = fhat @ phat
    grad = (fhat - cos[:, None] * phat[None, :]) / pnorm
    return (coeff[ok][:, None] * grad).sum(axis=0)


@dataclass
class IterationBatch:
    """The sampled pixels of one training iteration (one view)."""

    masks: list[MaskObservation]
    pos: list[np.ndarray]
    neg: list[np.ndarray]


def sample_batch(masks: list[MaskObservation], samples_per_mask: int,
                 rng: np.random.Generator) -> IterationBatch:
    """Equal-size positive/negative pixel pools per mask; skips masks whose
    inside or outside pool is empty."""
    kept, pos, neg = [], [], []
    for m in masks:
        on = np.flatnonzero(m.mask.reshape(-1))
        off = np.flatnonzero(~m.mask.reshape(-1))
        if on.size == 0 or off.size == 0:
            continue
        k = min(samples_per_mask, on.size, off.size)
        kept.append(m)
        pos.append(rng.choice(on, size=k, replace=False))
        neg.append(rng.choice(off, size=k, replace=False))
    return IterationBatch(masks=kept, pos=pos, neg=neg)


def iteration_loss(features: np.ndarray, comp: ViewComposite, batch: IterationBatch,
                   norm_weight: float = 1.0, prototypes: list[np.ndarray] | None = None
                   ) -> tuple[float, float, np.ndarray, list[np.ndarray]]:
    """Loss and per-pixel upstream gradients for one sampled iteration.

    Returns (L_r, L_norm, pixel_grads, prototypes). When ``prototypes`` is
    given they are held fixed (stop-gradient); otherwise they are pooled from
    the current map and the pooling path contributes gradient terms too.
    """
    fmap = render_values(comp, features, normalized=True)
    rows = fmap.flat
    stop_grad = prototypes is not None
    if prototypes is None:
        prototypes = [masked_average_pool(m.mask, rows) for m in batch.masks]

    upstream = np.zeros_like(rows)
    loss_r = 0.0
    for m, pos, neg, proto in zip(batch.masks, batch.pos, batch.neg, prototypes):
        cos, _, _ = _cosine_rows(proto, rows)
        loss_r += -cos[pos].sum() + np.maximum(cos[neg], 0.0).sum()
        _accumulate_cos_grad(upstream, rows, pos, np.full(pos.shape, -1.0), proto)
        active = cos[neg] > 0
        if np.any(active):
            _accumulate_cos_grad(upstream, rows, neg[active],
                                 np.ones(int(active.sum())), proto)
        if not stop_grad:
            pgrad = _prototype_grad(rows, pos, np.full(pos.shape, -1.0), proto)
            if np.any(active):
                pgrad += _prototype_grad(rows, neg[active], np.ones(int(active.sum())), proto)
            flatmask = m.mask.reshape(-1)
            upstream[flatmask] += pgrad / flatmask.sum()

    norms = np.linalg.norm(rows, axis=1)
    loss_norm = float((1.0 - norms).sum())
    covered = norms > 0
    upstream[covered] += norm_weight * (-rows[covered] / norms[covered][:, None])

    return float(loss_r), loss_norm, upstream, prototypes


def train(scene: GaussianScene, dataset: SyntheticDataset, cfg: TrainConfig,
          level: int = 0) -> TrainResult:
    """Stochastic gradient descent on the rebalanced + norm objective.

    Deterministic for a fixed config seed. Aborts with a diagnostic if the
    loss stops being finite.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = scene.n_gaussians
    features = rng.uniform(-cfg.init_scale, cfg.init_scale, (n, cfg.feature_dim))
    comps = [project(scene, cam) for cam in dataset.cameras]
    view_masks = [dataset.masks_for_view(v, level) for v in range(len(dataset.cameras))]

    velocity = np.zeros_like(features)
    trace: list[tuple[int, float, float]] = []
    for it in range(cfg.iterations):
        view = int(rng.integers(len(dataset.cameras)))
        batch = sample_batch(view_masks[view], cfg.samples_per_mask, rng)
        if not batch.masks:
            continue
        if cfg.prototype_gradients:
            loss_r, loss_norm, upstream, _ = iteration_loss(
                features, comps[view], batch, cfg.norm_weight)
        else:
            fmap = render_values(comps[view], features, normalized=True)
            protos = [masked_average_pool(m.mask, fmap.flat) for m in batch.masks]
            loss_r, loss_norm, upstream, _ = iteration_loss(
                features, comps[view], batch, cfg.norm_weight, prototypes=protos)
        if not np.isfinite(loss_r) or not np.isfinite(loss_norm):
            raise RuntimeError(
                f"training diverged: non-finite loss at iteration {it} "
                f"(L_r={loss_r}, L_norm={loss_norm})")
        grad = backprop_to_features(upstream, comps[view], features, normalized=True)
        if cfg.momentum > 0:
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            features = features + velocity
        else:
            features = features - cfg.learning_rate * grad
        trace.append((it, loss_r, loss_norm))
    return TrainResult(features=features, loss_trace=trace)


def mask_prototypes(scene: GaussianScene, dataset: SyntheticDataset,
                    features: np.ndarray, level: int = 0
                    ) -> tuple[list[MaskObservation], np.ndarray]:
    """Pool one affinity prototype per mask from the trained feature renders."""
    protos = []
    masks = dataset.level_masks(level)
    rendered: dict[int, np.ndarray] = {}
    for m in masks:
        if m.view not in rendered:
            rendered[m.view] = render_values(project(scene, dataset.cameras[m.view]),
                                             features, normalized=True).flat
        protos.append(masked_average_pool(m.mask, rendered[m.view]))
    return masks, np.stack(protos)
