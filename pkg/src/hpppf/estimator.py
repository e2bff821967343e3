"""Classical 9DoF pose recovery from invariant features.

Translation and size come from the centroid and extent of the observed
points. Rotation comes from matching per-point features against a canonical
template, RANSAC over 3-point correspondence samples, and an Umeyama
refinement on the inlier set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from hpppf import rng
from hpppf.errors import EstimationError, InputError
from hpppf.geomfeat import DEFAULT_CUTS_300, HpPpfMatrix, PanelSpec, hp_ppf, scaled_cuts
from hpppf.pointcloud import K_NORMALS, OrientedPointCloud, PointCloud, estimate_normals
from hpppf.pose import Pose9

log = logging.getLogger(__name__)

SIZE_FLOOR_M = 1e-6


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 1000
    epsilon: float = 0.02  # inlier distance, normalized units
    min_inliers: int = 10
    ratio: float = 0.9  # best / second-best feature distance
    refine_passes: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.epsilon <= 0 or self.min_inliers < 3:
            raise InputError("invalid RANSAC configuration")
        if not (0 < self.ratio <= 1):
            raise InputError("ratio must be in (0, 1]")


# ---------------------------------------------------------------- translation / size


def estimate_translation_size(cloud) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and axis-aligned extent; zero extents are floored at 1e-6 m."""
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
    if len(pts) < 2:
        raise InputError("need at least two points")
    t = pts.mean(axis=0)
    s = pts.max(axis=0) - pts.min(axis=0)
    low = s < SIZE_FLOOR_M
    if np.any(low):
        log.warning("estimate_translation_size: degenerate extent on axes %s floored", np.flatnonzero(low).tolist())
        s = np.where(low, SIZE_FLOOR_M, s)
    return t, s


def normalize(cloud, t, s):
    """Center on ``t`` and divide by ``||s||``; keeps normals and colours."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0):
        raise InputError("size must be positive")
    factor = np.linalg.norm(s)
    t = np.asarray(t, dtype=np.float64)
    if isinstance(cloud, OrientedPointCloud):
        inner = PointCloud((cloud.points - t) / factor, cloud.cloud.colors)
        return OrientedPointCloud(inner, cloud.normals, (cloud.viewpoint - t) / factor)
    if isinstance(cloud, PointCloud):
        return PointCloud((cloud.points - t) / factor, cloud.colors)
    return (np.asarray(cloud, dtype=np.float64) - t) / factor


# ---------------------------------------------------------------- Umeyama


def umeyama(src, dst, with_scale: bool = True):
    """Least-squares similarity ``dst ~ scale * R @ src + t``.

    Returns ``(scale, R, t)``. ``R`` is always a proper rotation: when the
    best orthogonal fit is a reflection the smallest singular direction is
    flipped.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InputError(f"src and dst must be matching (n, 3) arrays, got {src.shape}, {dst.shape}")
    if len(src) < 3:
        raise InputError("umeyama needs at least 3 correspondences")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-12 * sv[0]:
        raise InputError("umeyama: source points are collinear or coincident (rank-deficient)")
    cov = xd.T @ xs / len(src)
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    scale = 1.0
    if with_scale:
        var = np.sum(xs * xs) / len(src)
        scale = float(np.dot(D, S) / var)
    t = mu_d - scale * R @ mu_s
    return scale, R, t


def _kabsch_batch(src, dst):
    """Rigid fits for a batch of (b, k, 3) correspondence sets."""
    cs, cd = src.mean(axis=1, keepdims=True), dst.mean(axis=1, keepdims=True)
    cov = np.einsum("bki,bkj->bij", dst - cd, src - cs)
    U, _, Vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    sign[sign == 0] = 1.0
    U[:, :, 2] *= sign[:, None]
    R = U @ Vt
    t = cd[:, 0, :] - np.einsum("bij,bj->bi", R, cs[:, 0, :])
    return R, t


# ---------------------------------------------------------------- template / matching


def standardize(query, template):
    """Scale both matrices by the template's per-channel mean and std."""
    template = np.asarray(template, dtype=np.float64)
    mu = template.mean(axis=0)
    sd = template.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (np.asarray(query, dtype=np.float64) - mu) / sd, (template - mu) / sd


def match_features(query, template, ratio: float = 0.9, scale: bool = True) -> np.ndarray:
    """Mutual nearest neighbours passing the ratio test, as ``(query_idx, template_idx)`` rows."""
    q = np.asarray(query, dtype=np.float64)
    t = np.asarray(template, dtype=np.float64)
    if q.ndim != 2 or t.ndim != 2 or q.shape[1] != t.shape[1]:
        raise InputError("query and template features must share their dimension")
    if len(q) == 0 or len(t) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    if scale:
        q, t = standardize(q, t)
    d, nn = cKDTree(t).query(q, k=2)
    _, back = cKDTree(q).query(t, k=1)
    qi = np.arange(len(q))
    best = nn[:, 0]
    ok = (back[best] == qi) & (d[:, 0] < ratio * d[:, 1])
    return np.stack([qi[ok], best[ok]], axis=1).astype(np.int64)


def _extents(points):
    return points.max(axis=0) - points.min(axis=0)


@dataclass(frozen=True)
class CanonicalTemplate:
    """A category template in canonical pose.

    ``cloud`` is centered on its centroid with maximum extent 1; ``normalized``
    is the same shape divided by the norm of its extents, the frame in which
    ``features`` were computed and in which queries are compared.
    """

    cloud: OrientedPointCloud
    normalized: OrientedPointCloud
    features: HpPpfMatrix
    semantic: np.ndarray | None = None

    @property
    def extents(self) -> np.ndarray:
        return _extents(self.cloud.points)

    @property
    def norm_factor(self) -> float:
        return float(np.linalg.norm(self.extents))

    @property
    def rms_radius(self) -> float:
        p = self.normalized.points
        return float(np.sqrt(np.mean(np.sum(p * p, axis=1))))

    @classmethod
    def build(cls, cloud, cuts=DEFAULT_CUTS_300, k: int = K_NORMALS, semantic=None, threads: int = 1):
        pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)
        colors = cloud.cloud.colors if isinstance(cloud, OrientedPointCloud) else getattr(cloud, "colors", None)
        centered = pts - pts.mean(axis=0)
        canon = PointCloud(centered / np.max(_extents(centered)), colors)
        normed = normalize(canon, np.zeros(3), _extents(canon.points))
        oriented = estimate_normals(normed, k, viewpoint=np.zeros(3))
        feats = hp_ppf(oriented, scaled_cuts(cuts, len(oriented)), threads=threads)
        if semantic is not None:
            semantic = np.asarray(semantic, dtype=np.float64)
            if len(semantic) != len(pts):
                raise InputError("semantic table length differs from template size")
        return cls(OrientedPointCloud(canon, oriented.normals), oriented, feats, semantic)


def describe(cloud: PointCloud, cuts, k: int = K_NORMALS, threads: int = 1):
    """Normals (facing the origin) and HP-PPF of an already normalized cloud."""
    oriented = estimate_normals(cloud, k, viewpoint=np.zeros(3))
    return oriented, hp_ppf(oriented, scaled_cuts(cuts, len(oriented)), threads=threads)


class RotationEstimate(NamedTuple):
    R: np.ndarray
    inliers: int
    t: np.ndarray
    matches: np.ndarray


def _feature_matrix(features, semantic):
    f = features.features if isinstance(features, HpPpfMatrix) else np.asarray(features, dtype=np.float64)
    if semantic is not None:
        f = np.concatenate([f, np.asarray(semantic, dtype=np.float64)], axis=1)
    return f


def estimate_rotation(query: OrientedPointCloud, query_features, template: CanonicalTemplate,
                      config: RansacConfig | None = None, query_semantic=None) -> RotationEstimate:
    """Rotation taking the normalized template onto the normalized query.

    Raises :class:`EstimationError` (carrying the best attempt) when fewer
    than ``config.min_inliers`` correspondences agree.
    """
    config = config or RansacConfig()
    use_sem = template.semantic is not None and query_semantic is not None
    qf = _feature_matrix(query_features, query_semantic if use_sem else None)
    tf = _feature_matrix(template.features, template.semantic if use_sem else None)
    if len(qf) != len(query):
        raise InputError("query features do not match query size")
    q_std, t_std = standardize(qf, tf)
    matches = match_features(q_std, t_std, config.ratio, scale=False)
    m = len(matches)
    if m < 3:
        raise EstimationError(f"only {m} feature correspondences", best=None)

    dst = query.points[matches[:, 0]]
    src = template.normalized.points[matches[:, 1]]
    gen = rng.generator(config.seed)
    picks = np.argsort(gen.random((config.iterations, m)), axis=1)[:, :3]
    Rs, ts = _kabsch_batch(src[picks], dst[picks])
    resid = np.matmul(Rs, src.T) + (ts[:, :, None] - dst.T[None, :, :])
    inlier = np.sum(resid * resid, axis=1) <= config.epsilon ** 2
    counts = inlier.sum(axis=1)
    best = int(np.argmax(counts))
    R, t, mask = Rs[best], ts[best], inlier[best]

    for _ in range(config.refine_passes):
        if mask.sum() < 3:
            break
        try:
            _, R_new, t_new = umeyama(src[mask], dst[mask], with_scale=False)
        except InputError:
            break
        r = src @ R_new.T + t_new - dst
        new_mask = np.sum(r * r, axis=1) <= config.epsilon ** 2
        R, t = R_new, t_new
        if np.array_equal(new_mask, mask) or new_mask.sum() < mask.sum():
            break
        mask = new_mask

    n_in = int(mask.sum())
    result = RotationEstimate(R, n_in, t, matches)
    if n_in < config.min_inliers:
        raise EstimationError(f"{n_in} inliers < minimum {config.min_inliers}", best=result)
    return result


# ---------------------------------------------------------------- full pose


class PoseEstimate(NamedTuple):
    pose: Pose9
    scale: float
    inliers: int


def estimate_pose(cloud, template: CanonicalTemplate, config: RansacConfig | None = None,
                  t=None, s=None, k: int = K_NORMALS, threads: int = 1, semantic=None) -> PoseEstimate:
    """Full 9DoF estimate of ``cloud`` (camera frame, metres) against ``template``.

    With ``t`` and ``s`` (ground truth) the cloud is normalized by them.
    Otherwise ``t`` is the centroid and the scale is set so the cloud's RMS
    radius matches the template's, which unlike the axis-aligned extent does
    not depend on the unknown rotation.
    """
    cloud = cloud.cloud if isinstance(cloud, OrientedPointCloud) else cloud
    t_est, s_est = estimate_translation_size(cloud)
    if t is not None and s is not None:
        center = np.asarray(t, dtype=np.float64)
        factor = float(np.linalg.norm(s))
    else:
        center = t_est
        rel = cloud.points - center
        factor = float(np.sqrt(np.mean(np.sum(rel * rel, axis=1))) / template.rms_radius)
    normed = PointCloud((cloud.points - center) / factor, cloud.colors)
    oriented, feats = describe(normed, template.features.panel_spec.cuts, k, threads)
    est = estimate_rotation(oriented, feats, template, config, query_semantic=semantic)
    local = (cloud.points - t_est) @ est.R
    size = np.maximum(_extents(local), SIZE_FLOOR_M)
    scale = factor / template.norm_factor
    return PoseEstimate(Pose9(est.R, t_est, size), scale, est.inliers)
