"""Stress protocols (random rotation, rectangular occlusion, uniform jitter) and synthetic shapes."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from hpppf import rng
from hpppf.errors import EstimationError, InputError
from hpppf.estimator import CanonicalTemplate, RansacConfig, estimate_pose
from hpppf.geomfeat import DEFAULT_CUTS_300
from hpppf.metrics import iou3d, rotation_error, translation_error
from hpppf.pointcloud import K_NORMALS, OrientedPointCloud, PointCloud
from hpppf.pose import Pose9, axis_angle, random_rotation

log = logging.getLogger(__name__)

ROTATION_PRESETS_DEG = (5.0, 10.0, 15.0, 20.0)
OCCLUSION_PRESETS = (16, 8, 4)
JITTER_PRESETS = (0.002, 0.005, 0.01)

MAX_REMOVED_FRACTION = 0.9
OCCLUSION_RETRIES = 10


@dataclass(frozen=True)
class PerturbConfig:
    rotation_max_deg: float = 0.0
    occlusion_n: int | None = None
    jitter_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rotation_max_deg < 0 or self.jitter_s < 0:
            raise InputError("rotation and jitter magnitudes must be non-negative")
        if self.occlusion_n is not None and self.occlusion_n < 1:
            raise InputError("occlusion divisor must be >= 1")


def _points(cloud):
    return cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64)


def _with_points(cloud, pts, R=None, pivot=None):
    if isinstance(cloud, OrientedPointCloud):
        nrm = cloud.normals if R is None else cloud.normals @ R.T
        vp = cloud.viewpoint if R is None else (cloud.viewpoint - pivot) @ R.T + pivot
        return OrientedPointCloud(PointCloud(pts, cloud.cloud.colors), nrm, vp)
    if isinstance(cloud, PointCloud):
        return PointCloud(pts, cloud.colors)
    return pts


def random_rotate(cloud, max_deg: float, seed: int, about: str = "centroid"):
    """Rotate about the centroid (or the origin) by a random axis and an angle uniform in [0, max_deg]."""
    if not (0.0 <= max_deg <= 180.0):
        raise InputError("max_deg must lie in [0, 180]")
    gen = rng.generator(seed)
    axis = gen.normal(size=3)
    angle = np.radians(gen.uniform(0.0, max_deg))
    R = axis_angle(axis, angle)
    pts = _points(cloud)
    pivot = pts.mean(axis=0) if about == "centroid" else np.zeros(3)
    if max_deg == 0:
        return cloud, np.eye(3)
    return _with_points(cloud, (pts - pivot) @ R.T + pivot, R, pivot), R


def image_plane(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if np.any(pts[:, 2] <= 0):
        raise InputError("occlusion needs points in front of the camera (z > 0)")
    return pts[:, :2] / pts[:, 2:3]


def occlusion_keep(points, n: float, center) -> np.ndarray:
    """Keep-mask for a rectangle of sides 1/n of the projected bounding box, centered at ``center``."""
    uv = image_plane(points)
    side = (uv.max(axis=0) - uv.min(axis=0)) / n
    inside = np.all(np.abs(uv - np.asarray(center, dtype=np.float64)) <= side / 2, axis=1)
    return ~inside


def occlude(cloud, n: float, seed: int):
    """Drop points behind a seeded rectangular mask in the image plane."""
    if n < 1:
        raise InputError("occlusion divisor must be >= 1")
    pts = _points(cloud)
    if len(pts) == 0:
        raise InputError("cannot occlude an empty cloud")
    uv = image_plane(pts)
    gen = rng.generator(seed)
    for _ in range(OCCLUSION_RETRIES):
        center = uv[gen.integers(len(uv))]
        keep = occlusion_keep(pts, n, center)
        if (~keep).sum() <= MAX_REMOVED_FRACTION * len(pts):
            idx = np.flatnonzero(keep)
            return pts[idx] if isinstance(cloud, np.ndarray) or not hasattr(cloud, "take") else cloud.take(idx)
    raise InputError(f"occlusion with n={n} removed more than 90% of points in {OCCLUSION_RETRIES} placements")


def jitter(cloud, s: float, seed: int):
    """Add uniform noise in [-0.5 s r, 0.5 s r] per coordinate, r the mean distance to the centroid."""
    if s < 0:
        raise InputError("jitter scale must be non-negative")
    pts = _points(cloud)
    if s == 0:
        return cloud
    r = np.mean(np.linalg.norm(pts - pts.mean(axis=0), axis=1))
    half = 0.5 * s * r
    noise = rng.generator(seed).uniform(-half, half, size=pts.shape)
    return _with_points(cloud, pts + noise)


# ---------------------------------------------------------------- synthetic shapes


def _allocate(n, areas):
    areas = np.asarray(areas, dtype=np.float64)
    raw = n * areas / areas.sum()
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum()
    counts[np.argsort(-(raw - counts), kind="stable")[:rest]] += 1
    return counts


def _sample_rects(rects, n, gen):
    """``rects``: (origin, edge_a, edge_b, outward normal) tuples."""
    areas = [np.linalg.norm(np.cross(a, b)) for _, a, b, _ in rects]
    pts, nrm = [], []
    for (o, a, b, normal), c in zip(rects, _allocate(n, areas)):
        uv = gen.random((c, 2))
        pts.append(np.asarray(o) + uv[:, :1] * np.asarray(a) + uv[:, 1:] * np.asarray(b))
        nrm.append(np.tile(np.asarray(normal, dtype=float), (c, 1)))
    return np.concatenate(pts), np.concatenate(nrm)


def _box_rects(lo, hi, skip=()):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    d = hi - lo
    ex, ey, ez = np.diag(d)
    rects = {
        "-x": (lo, ey, ez, (-1, 0, 0)), "+x": (lo + ex, ey, ez, (1, 0, 0)),
        "-y": (lo, ex, ez, (0, -1, 0)), "+y": (lo + ey, ex, ez, (0, 1, 0)),
        "-z": (lo, ex, ey, (0, 0, -1)), "+z": (lo + ez, ex, ey, (0, 0, 1)),
    }
    return [v for k, v in rects.items() if k not in skip]


def _lshape_rects():
    # Long arm A, short arm B standing on A's +y face, lower than A so the
    # shape has no mirror plane.
    rects = _box_rects((0, 0, 0), (1.0, 0.35, 0.5), skip=("+y",))
    rects += [((0.35, 0.35, 0), (0.65, 0, 0), (0, 0, 0.5), (0, 1, 0)),
              ((0, 0.35, 0.3), (0.35, 0, 0), (0, 0, 0.2), (0, 1, 0))]
    rects += _box_rects((0, 0.35, 0), (0.35, 0.8, 0.3), skip=("-y",))
    return rects


def _blob(n, gen):
    u = gen.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    bumps = gen.normal(size=(5, 3))
    bumps /= np.linalg.norm(bumps, axis=1, keepdims=True)
    amp = gen.uniform(0.15, 0.45, size=5)
    kappa = 3.0
    g = np.exp(kappa * (u @ bumps.T - 1.0))  # (n, 5)
    r = 1.0 + g @ amp
    grad_r = kappa * (g * amp) @ bumps  # ambient gradient of r wrt the direction
    tangential = grad_r - np.sum(grad_r * u, axis=1, keepdims=True) * u
    normals = u - tangential / r[:, None]
    return u * r[:, None], normals / np.linalg.norm(normals, axis=1, keepdims=True)


def make_shape(kind: str, n: int, seed: int) -> OrientedPointCloud:
    """Surface sample of a canonical shape, centered on its centroid, max extent 1.

    Normals are analytic and oriented toward the centroid (the viewpoint).
    """
    if n < 30:
        raise InputError("make_shape needs n >= 30")
    gen = rng.generator(seed)
    if kind == "box":
        pts, nrm = _sample_rects(_box_rects((-0.5,) * 3, (0.5,) * 3), n, gen)
    elif kind == "lshape":
        pts, nrm = _sample_rects(_lshape_rects(), n, gen)
    elif kind == "cylinder":
        radius, height = 0.25, 1.0
        areas = [2 * np.pi * radius * height, np.pi * radius ** 2, np.pi * radius ** 2]
        c_barrel, c_top, c_bot = _allocate(n, areas)
        phi = gen.uniform(0, 2 * np.pi, c_barrel)
        y = gen.uniform(-height / 2, height / 2, c_barrel)
        radial = np.stack([np.cos(phi), np.zeros_like(phi), np.sin(phi)], axis=1)
        parts = [(radial * radius + np.outer(y, (0, 1, 0)), radial)]
        for count, sign in ((c_top, 1.0), (c_bot, -1.0)):
            rr = radius * np.sqrt(gen.random(count))
            aa = gen.uniform(0, 2 * np.pi, count)
            cap = np.stack([rr * np.cos(aa), np.full(count, sign * height / 2), rr * np.sin(aa)], axis=1)
            parts.append((cap, np.tile((0.0, sign, 0.0), (count, 1))))
        pts = np.concatenate([p for p, _ in parts])
        nrm = np.concatenate([q for _, q in parts])
    elif kind == "blob":
        pts, nrm = _blob(n, gen)
    else:
        raise InputError(f"unknown shape kind {kind!r}")
    pts = pts - pts.mean(axis=0)
    pts = pts / np.max(pts.max(axis=0) - pts.min(axis=0))
    flip = np.sum(nrm * -pts, axis=1) < 0
    nrm = np.where(flip[:, None], -nrm, nrm)
    return OrientedPointCloud(PointCloud(pts), nrm, np.zeros(3))


# ---------------------------------------------------------------- sweeps

SWEEP_COLUMNS = ("protocol", "parameter", "trial", "rot_err_deg", "trans_err_m", "iou")
FAILED_ROT_DEG = 180.0


@dataclass(frozen=True)
class TrialResult:
    protocol: str
    parameter: float
    trial: int
    rot_err_deg: float
    trans_err_m: float
    iou: float
    inliers: int = 0
    failed: bool = False

    def row(self):
        return [self.protocol, f"{self.parameter:g}", self.trial,
                repr(self.rot_err_deg), repr(self.trans_err_m), repr(self.iou)]


def make_query(template: CanonicalTemplate, seed: int, metric_size: float = 0.2, distance: float = 0.8):
    """Place the template in the camera frame: returns ``(points, Pose9 gt)``."""
    gen = rng.generator(seed)
    R = random_rotation(gen)
    t = np.array([*gen.uniform(-0.05, 0.05, 2), distance])
    canon = template.cloud.points
    pts = metric_size * canon @ R.T + t
    return pts, Pose9(R, t, metric_size * template.extents)


def run_trial(template: CanonicalTemplate, protocol: str, parameter: float, trial: int, seed: int,
              ransac: RansacConfig | None = None, k: int = K_NORMALS, threads: int = 1) -> TrialResult:
    """One perturbed estimation; ``protocol`` is ``E`` (rotation), ``F`` (occlusion), ``G`` (jitter) or ``none``."""
    base = rng.derive_seed(seed, f"trial:{trial}")
    pts, gt = make_query(template, rng.derive_seed(base, "placement"))
    cloud = PointCloud(pts)
    pseed = rng.derive_seed(base, f"perturb:{protocol}")
    if protocol == "E":
        cloud, R_applied = random_rotate(cloud, parameter, pseed)
        gt = Pose9(R_applied @ gt.R, gt.t, gt.s)
    elif protocol == "F":
        cloud = occlude(cloud, parameter, pseed)
    elif protocol == "G":
        cloud = jitter(cloud, parameter, pseed)
    elif protocol != "none":
        raise InputError(f"unknown protocol {protocol!r}")
    ransac = replace(ransac or RansacConfig(), seed=rng.derive_seed(base, "ransac"))
    try:
        est = estimate_pose(cloud, template, ransac, t=gt.t, s=gt.s, k=k, threads=threads)
    except EstimationError as exc:
        log.info("trial %s/%s/%d failed: %s", protocol, parameter, trial, exc)
        t_est = cloud.points.mean(axis=0)
        return TrialResult(protocol, parameter, trial, FAILED_ROT_DEG,
                           translation_error(t_est, gt.t), 0.0, 0, True)
    pred = est.pose
    return TrialResult(protocol, parameter, trial, rotation_error(pred.R, gt.R),
                       translation_error(pred.t, gt.t), iou3d(pred, gt), est.inliers)


def sweep(template: CanonicalTemplate, protocol: str, parameters, trials: int, seed: int, **kw):
    return [run_trial(template, protocol, p, i, seed, **kw) for p in parameters for i in range(trials)]


def write_sweep_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in results:
            w.writerow(r.row())


def shape_template(kind: str, n: int = 300, seed: int = 0, cuts=DEFAULT_CUTS_300, k: int = K_NORMALS,
                   threads: int = 1) -> CanonicalTemplate:
    return CanonicalTemplate.build(make_shape(kind, n, seed), cuts, k, threads=threads)
