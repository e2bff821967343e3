"""Point clouds, depth back-projection, seeded sampling and normal estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from hpppf import rng
from hpppf.errors import InputError

# Sampling sizes used by the feature pipeline: a coarse draw for colour and
# radial streams, then a subset for the geometric stream.
N_COARSE = 2048
N_FINE = 300
K_NORMALS = 10


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"points must have shape (n, 3), got {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise InputError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(cols) != len(pts):
                raise InputError(f"{len(cols)} colors for {len(pts)} points")
            cols.setflags(write=False)
            object.__setattr__(self, "colors", cols)

    def __len__(self) -> int:
        return len(self.points)

    def take(self, idx) -> PointCloud:
        idx = np.asarray(idx, dtype=np.int64)
        cols = None if self.colors is None else self.colors[idx]
        return PointCloud(self.points[idx], cols)


@dataclass(frozen=True)
class OrientedPointCloud:
    """Points with unit normals facing ``viewpoint``.

    ``degenerate`` counts normals that fell back to the viewpoint direction
    because their neighbourhood covariance had rank < 2.
    """

    cloud: PointCloud
    normals: np.ndarray
    viewpoint: np.ndarray = field(default_factory=lambda: np.zeros(3))
    degenerate: int = 0

    def __post_init__(self):
        nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(nrm) != len(self.cloud):
            raise InputError(f"{len(nrm)} normals for {len(self.cloud)} points")
        if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-9:
            raise InputError("normals must be unit length")
        vp = np.asarray(self.viewpoint, dtype=np.float64).reshape(3)
        nrm.setflags(write=False)
        vp.setflags(write=False)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "viewpoint", vp)

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    def __len__(self) -> int:
        return len(self.cloud)

    def take(self, idx) -> OrientedPointCloud:
        idx = np.asarray(idx, dtype=np.int64)
        return OrientedPointCloud(self.cloud.take(idx), self.normals[idx], self.viewpoint)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError("principal point must lie inside the image")


def backproject(depth, intrinsics: CameraIntrinsics, mask=None) -> PointCloud:
    """Lift every valid (non-zero, masked) depth pixel to a camera-frame point.

    Points come out in row-major pixel order.
    """
    z = np.asarray(depth, dtype=np.float64)
    if z.shape != (intrinsics.height, intrinsics.width):
        raise InputError(
            f"depth shape {z.shape} does not match intrinsics "
            f"({intrinsics.height}, {intrinsics.width})"
        )
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise InputError("depth values must be finite and non-negative")
    valid = z > 0
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise InputError(f"mask shape {mask.shape} does not match depth {z.shape}")
        valid &= mask
    v, u = np.nonzero(valid)
    zz = z[v, u]
    x = (u - intrinsics.cx) * zz / intrinsics.fx
    y = (v - intrinsics.cy) * zz / intrinsics.fy
    return PointCloud(np.stack([x, y, zz], axis=1))


def sample_indices(size: int, n: int, seed: int) -> np.ndarray:
    if size == 0:
        raise InputError("cannot sample from an empty cloud")
    if n <= 0:
        raise InputError("sample size must be positive")
    return rng.sample_indices(size, n, seed)


def sample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Seeded subsample of ``n`` points (with replacement only if the cloud is smaller)."""
    return cloud.take(sample_indices(len(cloud), n, seed))


def estimate_normals(cloud: PointCloud, k: int = K_NORMALS, viewpoint=(0.0, 0.0, 0.0)) -> OrientedPointCloud:
    """PCA normals over each point and its ``k`` nearest neighbours.

    Each normal is the smallest-eigenvalue eigenvector of the neighbourhood
    covariance, flipped to face ``viewpoint``.
    """
    pts = cloud.points
    n = len(pts)
    if not (n > k >= 3):
        raise InputError(f"need |cloud| > k >= 3, got |cloud|={n}, k={k}")
    vp = np.asarray(viewpoint, dtype=np.float64).reshape(3)

    _, nbr = cKDTree(pts).query(pts, k=k + 1)
    # The query point must be part of its own neighbourhood even with duplicates.
    has_self = np.any(nbr == np.arange(n)[:, None], axis=1)
    nbr[~has_self, -1] = np.flatnonzero(~has_self)
    nbr = np.sort(nbr, axis=1)

    local = pts[nbr]
    centered = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()

    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = evals[:, 1] <= 1e-12 * scale
    to_view = vp - pts
    if np.any(degenerate):
        d = to_view[degenerate]
        dn = np.linalg.norm(d, axis=1, keepdims=True)
        fallback = np.where(dn > 0, d / np.where(dn > 0, dn, 1.0), np.array([0.0, 0.0, 1.0]))
        normals[degenerate] = fallback

    flip = np.einsum("ij,ij->i", normals, to_view) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return OrientedPointCloud(cloud, normals, vp, int(degenerate.sum()))
