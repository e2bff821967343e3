"""Category-level pose metrics: rotation/translation error, n-degree m-cm precision, 3D IoU, losses."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from hpppf.boxes import intersection_volume
from hpppf.errors import InputError
from hpppf.pose import Pose9, geodesic, is_rotation, project_to_so3

log = logging.getLogger(__name__)

# Column thresholds of the standard REAL275 table.
ROT_THRESHOLDS_DEG = (5.0, 10.0)
TRANS_THRESHOLDS_M = (0.02, 0.05)
IOU_THRESHOLDS = (0.25, 0.5, 0.75)

_ROT_TOL = 1e-6


class Symmetry(str, Enum):
    NONE = "none"
    AXIS_Y = "axis_y"


# Categories treated as symmetric about their y axis in the NOCS protocol.
NOCS_SYMMETRY = {"bottle": Symmetry.AXIS_Y, "bowl": Symmetry.AXIS_Y, "can": Symmetry.AXIS_Y}


def rotation_error(R_pred, R_gt, symmetry=Symmetry.NONE) -> float:
    """Geodesic rotation error in degrees.

    For ``axis_y`` symmetry the error is minimised over rotations about the
    object's y axis, which reduces to the angle between the two y columns.
    """
    if not (is_rotation(R_pred, _ROT_TOL) and is_rotation(R_gt, _ROT_TOL)):
        raise InputError("rotation_error needs two rotation matrices")
    R_pred = np.asarray(R_pred, dtype=np.float64)
    R_gt = np.asarray(R_gt, dtype=np.float64)
    if Symmetry(symmetry) is Symmetry.AXIS_Y:
        a, b = R_pred[:, 1], R_gt[:, 1]
        ang = np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b)
    else:
        ang = geodesic(R_pred, R_gt)
    return float(np.degrees(ang))


def translation_error(t_pred, t_gt) -> float:
    return float(np.linalg.norm(np.asarray(t_pred, dtype=float) - np.asarray(t_gt, dtype=float)))


def iou3d(pose_a: Pose9, pose_b: Pose9) -> float:
    va, vb = float(np.prod(pose_a.s)), float(np.prod(pose_b.s))
    if va <= 0 or vb <= 0:
        log.warning("iou3d: zero-volume box, IoU defined as 0")
        return 0.0
    inter = intersection_volume((pose_a.R, pose_a.t, pose_a.s), (pose_b.R, pose_b.t, pose_b.s))
    inter = min(inter, va, vb)
    return float(inter / (va + vb - inter))


def loss_ts(t_pred, t_gt, s_pred, s_gt, lambda_t=1.0, lambda_s=1.0) -> float:
    """Weighted L1 translation and size loss."""
    if lambda_t < 0 or lambda_s < 0:
        raise InputError("loss weights must be non-negative")
    dt = np.abs(np.asarray(t_pred, dtype=float) - np.asarray(t_gt, dtype=float)).sum()
    ds = np.abs(np.asarray(s_pred, dtype=float) - np.asarray(s_gt, dtype=float)).sum()
    return float(lambda_t * dt + lambda_s * ds)


def loss_r(R_pred, R_gt) -> float:
    """Element-wise L1 distance between two 3x3 matrices (no orthogonality required)."""
    a = np.asarray(R_pred, dtype=float).reshape(3, 3)
    b = np.asarray(R_gt, dtype=float).reshape(3, 3)
    return float(np.abs(a - b).sum())


@dataclass(frozen=True)
class PoseErrorRecord:
    rot_deg: float
    trans_m: float
    iou: float = 0.0
    category: str = "object"
    symmetry: Symmetry = Symmetry.NONE

    def __post_init__(self):
        if not (0.0 <= self.rot_deg <= 180.0 + 1e-9):
            raise InputError(f"rot_deg {self.rot_deg} outside [0, 180]")
        if not (0.0 <= self.iou <= 1.0 + 1e-12):
            raise InputError(f"iou {self.iou} outside [0, 1]")
        if self.trans_m < 0:
            raise InputError("trans_m must be non-negative")

    @classmethod
    def from_poses(cls, pred: Pose9, gt: Pose9, category="object", symmetry=Symmetry.NONE):
        return cls(rotation_error(pred.R, gt.R, symmetry), translation_error(pred.t, gt.t),
                   iou3d(pred, gt), category, Symmetry(symmetry))


def rt_key(deg: float, m: float) -> str:
    return f"{deg:g}°{m * 100:g}cm"


def iou_key(thr: float) -> str:
    return f"IoU{thr * 100:g}"


@dataclass
class MetricsReport:
    map_at: dict
    map_micro: dict
    iou_at: dict
    iou_micro: dict
    counts: dict
    excluded_categories: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        if key in self.map_at:
            return self.map_at[key]
        return self.iou_at[key]

    def to_dict(self) -> dict:
        return {
            "mAP": self.map_at, "micro": self.map_micro,
            "IoU": self.iou_at, "IoU_micro": self.iou_micro,
            "counts": self.counts, "excluded_categories": self.excluded_categories,
            "config": self.config,
        }


def pose_map(records, rot_thresholds_deg=ROT_THRESHOLDS_DEG, trans_thresholds_m=TRANS_THRESHOLDS_M,
             iou_thresholds=IOU_THRESHOLDS, categories=None) -> MetricsReport:
    """Fraction of records within each (degrees, metres) pair and above each IoU.

    Comparisons are inclusive. ``map_at`` averages per-category fractions;
    ``map_micro`` pools all records. Categories listed in ``categories`` with
    no records are excluded and reported.
    """
    records = list(records)
    if not records:
        raise InputError("pose_map needs at least one record")
    by_cat: dict[str, list[PoseErrorRecord]] = {}
    for r in records:
        by_cat.setdefault(r.category, []).append(r)
    excluded = sorted(set(categories or ()) - set(by_cat))
    for c in excluded:
        log.warning("pose_map: category %s has no records, excluded", c)
    cats = sorted(by_cat)

    rot = {c: np.array([r.rot_deg for r in by_cat[c]]) for c in cats}
    tra = {c: np.array([r.trans_m for r in by_cat[c]]) for c in cats}
    iou = {c: np.array([r.iou for r in by_cat[c]]) for c in cats}
    all_rot = np.concatenate([rot[c] for c in cats])
    all_tra = np.concatenate([tra[c] for c in cats])
    all_iou = np.concatenate([iou[c] for c in cats])

    map_at, micro = {}, {}
    for n in rot_thresholds_deg:
        for m in trans_thresholds_m:
            key = rt_key(n, m)
            per_cat = [np.mean((rot[c] <= n) & (tra[c] <= m)) for c in cats]
            map_at[key] = float(np.mean(per_cat))
            micro[key] = float(np.mean((all_rot <= n) & (all_tra <= m)))
    iou_at, iou_micro = {}, {}
    for thr in iou_thresholds:
        key = iou_key(thr)
        iou_at[key] = float(np.mean([np.mean(iou[c] >= thr) for c in cats]))
        iou_micro[key] = float(np.mean(all_iou >= thr))
    config = {"rot_thresholds_deg": list(rot_thresholds_deg),
              "trans_thresholds_m": list(trans_thresholds_m),
              "iou_thresholds": list(iou_thresholds)}
    return MetricsReport(map_at, micro, iou_at, iou_micro,
                         {c: len(by_cat[c]) for c in cats}, excluded, config)


# ---------------------------------------------------------------- pose CSV

POSE_CSV_HEADER = (
    ["category"]
    + [f"R_pred_{i}{j}" for i in range(3) for j in range(3)]
    + [f"t_pred_{a}" for a in "xyz"] + [f"s_pred_{a}" for a in "xyz"]
    + [f"R_gt_{i}{j}" for i in range(3) for j in range(3)]
    + [f"t_gt_{a}" for a in "xyz"] + [f"s_gt_{a}" for a in "xyz"]
)


def _rotation_from_csv(values, where):
    R = np.array(values, dtype=float).reshape(3, 3)
    if is_rotation(R):
        return R
    if is_rotation(R, 1e-3):
        return project_to_so3(R)
    raise InputError(f"{where}: not a rotation matrix")


def write_pose_csv(path, rows) -> None:
    """``rows`` holds ``(category, pred: Pose9, gt: Pose9)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POSE_CSV_HEADER)
        for cat, pred, gt in rows:
            vals = [*pred.R.ravel(), *pred.t, *pred.s, *gt.R.ravel(), *gt.t, *gt.s]
            w.writerow([cat] + [repr(float(v)) for v in vals])


def read_pose_csv(path):
    """Rows of ``(category, pred, gt)``; near-orthogonal rotations are projected onto SO(3)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0] == "category":
                continue
            if len(row) != 31:
                raise InputError(f"{path}:{lineno}: expected 31 columns, got {len(row)}")
            try:
                v = [float(x) for x in row[1:]]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value") from None
            where = f"{path}:{lineno}"
            pred = Pose9(_rotation_from_csv(v[0:9], where), v[9:12], v[12:15])
            gt = Pose9(_rotation_from_csv(v[15:24], where), v[24:27], v[27:30])
            out.append((row[0], pred, gt))
    if not out:
        raise InputError(f"{path}: no pose rows")
    return out
