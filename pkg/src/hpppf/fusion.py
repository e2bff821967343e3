"""Spherical binning of per-point features and per-bin stream fusion.

Bins are uniform in azimuth ``phi in [-pi, pi)`` (index ``u``, W bins) and in
elevation angle ``theta in [0, pi]`` measured from +z (index ``v``, H bins).
Each bin keeps the feature of its farthest point from the map center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hpppf import io
from hpppf.errors import InputError

DEFAULT_W = 32
DEFAULT_H = 32


@dataclass(frozen=True)
class SphericalFeatureMap:
    grid: np.ndarray  # (W, H, C)
    occupancy: np.ndarray  # (W, H) bool
    center: np.ndarray
    winners: np.ndarray | None = None  # (W, H) source index, -1 when empty
    skipped: int = 0

    @property
    def W(self) -> int:
        return self.grid.shape[0]

    @property
    def H(self) -> int:
        return self.grid.shape[1]

    @property
    def channels(self) -> int:
        return self.grid.shape[2]


@dataclass(frozen=True)
class FusedFeatureMap:
    grid: np.ndarray
    occupancy: np.ndarray
    center: np.ndarray
    dims: tuple[int, int, int]  # geometric, semantic, color (after their maps)

    def block(self, name: str) -> np.ndarray:
        g, s, c = self.dims
        start, stop = {"geometric": (0, g), "semantic": (g, g + s), "color": (g + s, g + s + c)}[name]
        return self.grid[..., start:stop]


def bin_indices(points, W: int, H: int, center):
    """Return ``(u, v, r)`` per point; ``r == 0`` marks points at the center."""
    rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(center, dtype=np.float64)
    r = np.sqrt(np.sum(rel * rel, axis=1))
    safe = np.where(r > 0, r, 1.0)
    theta = np.arccos(np.clip(rel[:, 2] / safe, -1.0, 1.0))
    phi = np.arctan2(rel[:, 1], rel[:, 0])
    phi = np.where(phi >= np.pi, -np.pi, phi)
    u = np.minimum(np.floor((phi + np.pi) / (2 * np.pi) * W).astype(np.int64), W - 1)
    v = np.minimum(np.floor(theta / np.pi * H).astype(np.int64), H - 1)
    return u, v, r


def spherical_project(points, features, W: int = DEFAULT_W, H: int = DEFAULT_H, center=(0.0, 0.0, 0.0)) -> SphericalFeatureMap:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if W < 1 or H < 1:
        raise InputError("W and H must be at least 1")
    if feats.shape[0] != len(pts):
        raise InputError(f"{feats.shape[0]} feature rows for {len(pts)} points")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    u, v, r = bin_indices(pts, W, H, center)
    valid = np.flatnonzero(r > 0)
    flat = u[valid] * H + v[valid]
    # Within each bin: largest radius first, lowest index on ties.
    order = np.lexsort((valid, -r[valid], flat))
    first = np.ones(len(order), dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    win_bins = flat[order][first]
    win_idx = valid[order][first]

    winners = np.full(W * H, -1, dtype=np.int64)
    winners[win_bins] = win_idx
    grid = np.zeros((W * H, feats.shape[1]))
    grid[win_bins] = feats[win_idx]
    return SphericalFeatureMap(
        grid.reshape(W, H, -1), (winners >= 0).reshape(W, H), center,
        winners.reshape(W, H), int(len(pts) - len(valid)),
    )


def _apply(grid, mat):
    if mat is None:
        return grid
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != grid.shape[-1]:
        raise InputError(f"linear map of shape {mat.shape} does not accept {grid.shape[-1]} channels")
    return np.einsum("oc,whc->who", mat, grid)


def fuse(geo: SphericalFeatureMap, sem: SphericalFeatureMap, color: SphericalFeatureMap, maps=None) -> FusedFeatureMap:
    """Concatenate per-bin stream features after optional linear maps.

    ``maps`` may hold ``"geometric"``, ``"semantic"``, ``"color"`` and
    ``"fused"`` matrices (``out x in``); missing entries act as identity.
    """
    maps = maps or {}
    for other in (sem, color):
        if other.grid.shape[:2] != geo.grid.shape[:2]:
            raise InputError("streams use different bin grids")
        if not np.array_equal(other.center, geo.center):
            raise InputError("streams use different map centers")
        if not np.array_equal(other.occupancy, geo.occupancy):
            raise InputError("stream occupancy differs; streams were not binned from the same points")
    blocks = [_apply(geo.grid, maps.get("geometric")),
              _apply(sem.grid, maps.get("semantic")),
              _apply(color.grid, maps.get("color"))]
    dims = tuple(b.shape[-1] for b in blocks)
    grid = _apply(np.concatenate(blocks, axis=-1), maps.get("fused"))
    if maps.get("fused") is not None:
        dims = (grid.shape[-1], 0, 0)
    return FusedFeatureMap(grid, geo.occupancy.copy(), geo.center.copy(), dims)


def save_map(path, fmap, dtype="float64") -> None:
    W, H, C = fmap.grid.shape
    io.write_matrix(path, fmap.grid.reshape(W * H, C), dtype=dtype,
                    grid=(W, H, fmap.center, fmap.occupancy))


def load_map(path) -> SphericalFeatureMap:
    mat, grid = io.read_matrix(path)
    if grid is None:
        raise InputError(f"{path}: container has no spherical grid header")
    W, H, center, occ = grid
    return SphericalFeatureMap(mat.reshape(W, H, -1), occ, center)


def channel_slice_pgm(path, fmap, channel: int) -> None:
    """Write one channel as an 8-bit PGM (rows = elevation, columns = azimuth)."""
    img = fmap.grid[:, :, channel].T
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo) * 255.0
    io.write_pgm(path, scaled, maxval=255)
