"""Scene representation: isotropic 3D Gaussians plus pinhole cameras.

A scene is a flat array-of-struct bundle (positions, radii, opacities,
colors, optional per-Gaussian affinity features and ground-truth labels).
Footprints are isotropic world-space radii that project to isotropic
screen-space Gaussians; this keeps the rasterizer exact and testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GaussianScene:
    """A set of isotropic Gaussians with optional semantics attachments.

    positions  : (N, 3) world-space centers
    radii      : (N,)   isotropic world-space footprint radius (> 0)
    opacities  : (N,)   in [0, 1]
    colors     : (N, 3) in [0, 1]
    affinity   : (N, C') trained affinity features, or None
    labels     : (L, N) integer object labels per granularity level,
                 -1 = unlabeled; level L-1 is the coarsest ("whole") level
    """

    positions: np.ndarray
    radii: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    affinity: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.opacities = np.asarray(self.opacities, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.affinity is not None:
            self.affinity = np.asarray(self.affinity, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.atleast_2d(np.asarray(self.labels, dtype=np.int64))

    @property
    def n_gaussians(self) -> int:
        return self.positions.shape[0]

    @property
    def n_levels(self) -> int:
        return 0 if self.labels is None else self.labels.shape[0]

    @property
    def gt_label(self) -> np.ndarray:
        """Whole-object ground-truth labels (coarsest level)."""
        if self.labels is None:
            raise ValueError("scene has no ground-truth labels")
        return self.labels[-1]

    def validate(self) -> None:
        n = self.n_gaussians
        if n == 0:
            raise ValueError("empty scene")
        if self.positions.shape != (n, 3) or not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be a finite (N, 3) array")
        if self.radii.shape != (n,) or np.any(~np.isfinite(self.radii)) or np.any(self.radii <= 0):
            raise ValueError("degenerate footprint")
        if self.opacities.shape != (n,) or np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise ValueError("opacities must lie in [0, 1]")
        if self.colors.shape != (n, 3):
            raise ValueError("colors must be (N, 3)")
        if self.affinity is not None:
            if self.affinity.shape[0] != n or not np.all(np.isfinite(self.affinity)):
                raise ValueError("affinity features must be finite with one row per Gaussian")
        if self.labels is not None and self.labels.shape[1] != n:
            raise ValueError("labels must have one column per Gaussian")


@dataclass
class Camera:
    """Pinhole camera: 4x4 world-to-camera extrinsic + intrinsics in pixels.

    Camera looks down +z; pixel (row v, col u) samples the ray through
    integer coordinates (u, v), i.e. integer pixel centers.
    """

    extrinsic: np.ndarray  # (4, 4) world-to-camera
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        self.extrinsic = np.asarray(self.extrinsic, dtype=np.float64)

    def validate(self) -> None:
        if self.extrinsic.shape != (4, 4) or not np.all(np.isfinite(self.extrinsic)):
            raise ValueError("extrinsic must be a finite 4x4 matrix")
        if self.height < 1 or self.width < 1:
            raise ValueError("resolution must be at least 1x1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 3) world points into camera coordinates."""
        R = self.extrinsic[:3, :3]
        t = self.extrinsic[:3, 3]
        return points @ R.T + t

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        R = self.extrinsic[:3, :3]
        t = self.extrinsic[:3, 3]
        return -R.T @ t


def look_at_camera(eye, target, height: int, width: int, focal: float,
                   up=(0.0, 0.0, 1.0)) -> Camera:
    """Build a camera at ``eye`` looking toward ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)

    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        # view direction parallel to up; pick any perpendicular axis
        up = np.array([0.0, 1.0, 0.0]) if abs(forward[2]) > 0.9 else np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)

    R = np.stack([right, down, forward])  # world-to-camera rotation rows
    t = -R @ eye
    extrinsic = np.eye(4)
    extrinsic[:3, :3] = R
    extrinsic[:3, 3] = t
    return Camera(extrinsic=extrinsic, fx=focal, fy=focal,
                  cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                  height=height, width=width)
