"""Hierarchical panel point-pair features (HP-PPF).

For every point the remaining points are ranked by distance and split into
shells ("panels") by a sequence of rank cuts; each panel contributes the mean
point-pair feature ``(d, alpha, beta, theta)`` between the point and the
panel members. Concatenating panels from local to global gives a
``4 * l``-dimensional descriptor that is invariant to rigid motion.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from hpppf.errors import InputError
from hpppf.pointcloud import OrientedPointCloud

# Panel cuts for 300 points; other sizes scale these proportionally.
DEFAULT_CUTS_300 = (0, 10, 60, 299)

_CHUNK = 128
# Clouds up to this size are processed as whole pair matrices.
_FULL_LIMIT = 1024


class Ppf(NamedTuple):
    d: float
    alpha: float
    beta: float
    theta: float


@dataclass(frozen=True)
class PanelSpec:
    cuts: tuple[int, ...]

    def __post_init__(self):
        cuts = tuple(int(c) for c in self.cuts)
        if len(cuts) < 2:
            raise InputError("panel spec needs at least one panel")
        if cuts[0] != 0:
            raise InputError("first cut must be 0")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise InputError(f"cuts must be strictly increasing: {cuts}")
        object.__setattr__(self, "cuts", cuts)

    @property
    def levels(self) -> int:
        return len(self.cuts) - 1

    @property
    def size(self) -> int:
        """Point count this spec is valid for."""
        return self.cuts[-1] + 1

    @classmethod
    def parse(cls, text: str) -> PanelSpec:
        try:
            return cls(tuple(int(t) for t in text.split(",")))
        except ValueError:
            raise InputError(f"cannot parse cuts {text!r}") from None

    def rescaled(self, n: int) -> PanelSpec:
        """Proportional copy of this spec for an ``n``-point cloud."""
        return scaled_cuts(self.cuts, n)


def scaled_cuts(cuts, n: int) -> PanelSpec:
    """Scale interior cuts by ``(n - 1) / (cuts[-1])``, keeping them strictly increasing."""
    top = n - 1
    base = cuts[-1]
    inner = [int(round(c * top / base)) for c in cuts[1:-1]]
    out = [0]
    for c in inner:
        c = max(c, out[-1] + 1)
        if c >= top:
            break
        out.append(c)
    out.append(top)
    return PanelSpec(tuple(out))


def default_panel_spec(n: int = 300) -> PanelSpec:
    return scaled_cuts(DEFAULT_CUTS_300, n)


@dataclass(frozen=True)
class HpPpfMatrix:
    features: np.ndarray
    panel_spec: PanelSpec

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != 4 * self.panel_spec.levels:
            raise InputError(f"feature shape {f.shape} inconsistent with {self.panel_spec.levels} panels")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    @property
    def shape(self):
        return self.features.shape


def _angle(ux, uy, uz, vx, vy, vz):
    cx = uy * vz - uz * vy
    cy = uz * vx - ux * vz
    cz = ux * vy - uy * vx
    return np.arctan2(np.sqrt(cx * cx + cy * cy + cz * cz), ux * vx + uy * vy + uz * vz)


def _ppf_parts(pi, ni, pj, nj):
    """PPF from per-axis components; each argument is a sequence ``(x, y, z)`` of arrays."""
    dx, dy, dz = pj[0] - pi[0], pj[1] - pi[1], pj[2] - pi[2]
    d = np.sqrt(dx * dx + dy * dy + dz * dz)
    alpha = _angle(ni[0], ni[1], ni[2], dx, dy, dz)
    beta = _angle(nj[0], nj[1], nj[2], dx, dy, dz)
    theta = _angle(nj[0], nj[1], nj[2], ni[0], ni[1], ni[2])
    return np.broadcast_arrays(d, alpha, beta, theta)


def ppf_kernel(p_i, n_i, p_j, n_j) -> np.ndarray:
    """Broadcasting PPF; the last axis of the result is ``(d, alpha, beta, theta)``."""
    parts = (np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0) for a in (p_i, n_i, p_j, n_j))
    return np.stack(_ppf_parts(*parts), axis=-1)


def compute_ppf(p_i, n_i, p_j, n_j) -> Ppf:
    p_i, n_i, p_j, n_j = (np.asarray(a, dtype=np.float64).reshape(1, 3) for a in (p_i, n_i, p_j, n_j))
    if np.array_equal(p_i, p_j):
        raise InputError("point pair feature undefined for coincident points")
    return Ppf(*(float(x) for x in ppf_kernel(p_i, n_i, p_j, n_j)[0]))


def _order_by_distance(dist: np.ndarray, cuts=None) -> np.ndarray:
    """Row-wise argsort with ties broken by column index.

    With ``cuts`` given, only the split of each row into panels has to be
    right, so rows are re-sorted stably only when a tie straddles a cut.
    """
    order = np.argsort(dist, axis=1)
    if cuts is None:
        pos = np.arange(dist.shape[1] - 1)
    else:
        pos = np.asarray(cuts[1:-1], dtype=np.int64)
    ds = np.take_along_axis(dist, order[:, np.concatenate([pos, pos + 1])], axis=1)
    tied = np.any(ds[:, :len(pos)] == ds[:, len(pos):], axis=1)
    if tied.any():
        order[tied] = np.argsort(dist[tied], axis=1, kind="stable")
    return order


def _sorted_neighbours(pts: np.ndarray, rows: np.ndarray, cuts=None) -> np.ndarray:
    """Row a lists all points by distance from point rows[a], ties by index; self comes first."""
    diff = pts[None, :, :] - pts[rows, None, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    dist[np.arange(len(rows)), rows] = -1.0
    return _order_by_distance(dist, cuts)


def _panel_index(order: np.ndarray, cuts) -> np.ndarray:
    # Within each panel, members are put back in ascending index order so that
    # the accumulation adds them in the same sequence as a plain loop.
    return np.concatenate([np.sort(order[:, a + 1:b + 1], axis=1) for a, b in zip(cuts, cuts[1:])], axis=1)


def _accumulate(feats: np.ndarray, cuts) -> np.ndarray:
    """Panel means from ``feats`` of shape (4, n - 1, rows), members laid out panel by panel.

    Members are added one at a time in layout order, like a plain loop would.
    """
    out = np.empty((feats.shape[2], 4 * (len(cuts) - 1)))
    for m in range(1, len(cuts)):
        a, b = cuts[m - 1], cuts[m]
        acc = feats[:, a].copy()
        for k in range(a + 1, b):
            np.add(acc, feats[:, k], out=acc)
        out[:, 4 * (m - 1): 4 * m] = acc.T / (b - a)
    return out


def _rank_rows(pts: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Ranks r[a, j] of point j as seen from point rows[a]; self gets rank 0."""
    order = _sorted_neighbours(pts, rows)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(len(pts)), order.shape), axis=1)
    return ranks


def distance_ranks(points, i: int) -> np.ndarray:
    """1-based distance ranks of every point seen from point ``i`` (entry ``i`` is 0).

    Ties are broken by ascending index.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise InputError("need at least two points to rank distances")
    return _rank_rows(pts, np.array([i]))[0]


def panel_feature(cloud: OrientedPointCloud, i: int, panel) -> np.ndarray:
    """Mean PPF between point ``i`` and the points indexed by ``panel``."""
    members = np.asarray(sorted(int(j) for j in panel), dtype=np.int64)
    if len(members) == 0:
        raise InputError("empty panel: panel spec inconsistent with cloud size")
    if i in members:
        raise InputError("panel must not contain the query point")
    pts, nrm = cloud.points, cloud.normals
    if np.any(np.all(pts[members] == pts[i], axis=1)):
        raise InputError("point pair feature undefined for coincident points")
    f = ppf_kernel(pts[i], nrm[i], pts[members], nrm[members])
    return np.cumsum(f, axis=0)[-1] / len(members)


def _panel_means(pts, nrm, cuts, rows) -> np.ndarray:
    """Panel means for the given query rows; panels are (cuts[m-1], cuts[m]] in rank."""
    idx = _panel_index(_sorted_neighbours(pts, rows, cuts), cuts)
    pc, nc = pts.T.copy(), nrm.T.copy()
    comps = _ppf_parts([c[rows, None] for c in pc], [c[rows, None] for c in nc],
                       [c[idx] for c in pc], [c[idx] for c in nc])
    return _accumulate(np.stack(comps).transpose(0, 2, 1).copy(), cuts)


def _all_panel_means(pts, nrm, cuts) -> np.ndarray:
    """Same result as ``_panel_means`` over all rows, from full pair matrices.

    Swapping i and j negates the difference vector and every cross product
    exactly, so d and theta are symmetric and beta[i, j] reuses the alpha
    terms of (j, i) with the dot product negated.
    """
    n = len(pts)
    f = np.empty((4, n, n))
    pc = np.ascontiguousarray(pts.T)
    diff = pc[:, None, :] - pc[:, :, None]
    px, py, pz = diff
    nc = np.ascontiguousarray(nrm.T)
    nx, ny, nz = (c[:, None] for c in nc)
    sq = diff * diff
    np.add(sq[0], sq[1], out=f[0])
    f[0] += sq[2]
    np.sqrt(f[0], out=f[0])
    t1, t2 = sq[0], sq[1]
    cross = sq[2]

    def term(a, b, c, e):
        # (a * b - c * e) ** 2, reusing scratch buffers
        np.multiply(a, b, out=t1)
        np.multiply(c, e, out=t2)
        np.subtract(t1, t2, out=t1)
        return np.multiply(t1, t1, out=t1)

    np.copyto(cross, term(ny, pz, nz, py))
    cross += term(nz, px, nx, pz)
    cross += term(nx, py, ny, px)
    np.sqrt(cross, out=cross)
    dot = np.multiply(nx, px)
    dot += np.multiply(ny, py, out=t1)
    dot += np.multiply(nz, pz, out=t1)
    np.arctan2(cross, dot, out=f[1])
    np.negative(dot.T, out=t1)
    np.arctan2(cross.T, t1, out=f[2])
    mx, my, mz = (c[None, :] for c in nc)
    np.copyto(cross, term(my, nz, mz, ny))
    cross += term(mz, nx, mx, nz)
    cross += term(mx, ny, my, nx)
    np.sqrt(cross, out=cross)
    np.multiply(mx, nx, out=dot)
    dot += np.multiply(my, ny, out=t1)
    dot += np.multiply(mz, nz, out=t1)
    np.arctan2(cross, dot, out=f[3])

    # The diagonal is never gathered, so it can carry the self marker.
    dist = f[0]
    dist.flat[::n + 1] = -1.0
    idx = _panel_index(_order_by_distance(dist, cuts), cuts)
    flat = idx.T + np.arange(n) * n
    return _accumulate(np.take(f.reshape(4, -1), flat, axis=1), cuts)


def _check_distinct(pts):
    uniq = np.unique(pts, axis=0)
    if len(uniq) != len(pts):
        raise InputError("point pair feature undefined for coincident points (duplicate points in cloud)")


def _run_rows(pts, nrm, cuts, threads: int) -> np.ndarray:
    n = len(pts)
    if n <= _FULL_LIMIT:
        return _all_panel_means(pts, nrm, cuts)
    chunks = [np.arange(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda r: _panel_means(pts, nrm, cuts, r), chunks))
    else:
        parts = [_panel_means(pts, nrm, cuts, r) for r in chunks]
    return np.concatenate(parts, axis=0)


def hp_ppf(cloud: OrientedPointCloud, spec: PanelSpec | None = None, threads: int = 1) -> HpPpfMatrix:
    """Per-point HP-PPF descriptor, shape ``(n, 4 * spec.levels)``."""
    n = len(cloud)
    if n < 2:
        raise InputError("hp_ppf needs at least two points")
    spec = spec if spec is not None else default_panel_spec(n)
    if spec.size != n:
        raise InputError(f"panel spec ends at {spec.cuts[-1]} but cloud has {n} points (expected {n - 1})")
    _check_distinct(cloud.points)
    return HpPpfMatrix(_run_rows(cloud.points, cloud.normals, spec.cuts, threads), spec)


def knn_panel_feature(cloud: OrientedPointCloud, k: int = 10, threads: int = 1) -> np.ndarray:
    """Single-panel baseline: mean PPF over the ``k`` nearest neighbours of each point."""
    n = len(cloud)
    if not (0 < k < n):
        raise InputError(f"need 0 < k < |cloud|, got k={k}, |cloud|={n}")
    _check_distinct(cloud.points)
    return _run_rows(cloud.points, cloud.normals, (0, k), threads)
