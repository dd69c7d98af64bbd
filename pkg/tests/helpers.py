"""Shared fixtures-in-spirit: small random scenes and the FD gradient oracle."""

from __future__ import annotations

import numpy as np

from splatvoc.scene import Camera, GaussianScene, look_at_camera


def random_scene(seed: int, n_gaussians: int = 30, feature_dim: int = 8,
                 spread: float = 1.2) -> tuple[GaussianScene, Camera]:
    """A loose Gaussian cloud fully inside the view of one camera."""
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-spread, spread, (n_gaussians, 3))
    scene = GaussianScene(
        positions=positions,
        radii=rng.uniform(0.15, 0.35, n_gaussians),
        opacities=rng.uniform(0.3, 0.95, n_gaussians),
        colors=rng.uniform(0, 1, (n_gaussians, 3)),
        affinity=rng.uniform(-1, 1, (n_gaussians, feature_dim)),
    )
    cam = look_at_camera(eye=[0.0, -7.0, 1.0], target=[0.0, 0.0, 0.0],
                         height=28, width=28, focal=26.0)
    return scene, cam


def fd_gradient(loss_fn, x0: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[j] += step
        xm[j] -= step
        gflat[j] = (loss_fn(xp.reshape(x0.shape)) - loss_fn(xm.reshape(x0.shape))) / (2 * step)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
