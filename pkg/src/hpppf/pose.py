"""Rotation helpers and the 9DoF pose record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hpppf.errors import InputError


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def rot_x(deg):
    return axis_angle((1, 0, 0), np.radians(deg))


def rot_y(deg):
    return axis_angle((0, 1, 0), np.radians(deg))


def rot_z(deg):
    return axis_angle((0, 0, 1), np.radians(deg))


def geodesic(Ra, Rb) -> float:
    """Angle in radians of ``Ra^T Rb``; accurate near 0 as well as near pi."""
    diff = np.linalg.norm(np.asarray(Ra) - np.asarray(Rb))
    half_sin = min(diff / np.sqrt(8.0), 1.0)
    return float(2.0 * np.arctan2(half_sin, np.sqrt(max(0.0, 1.0 - half_sin * half_sin))))


def random_rotation(gen: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a unit quaternion."""
    q = gen.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def project_to_so3(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class Pose9:
    """Rotation, translation (m) and per-axis size (m) of an object box."""

    R: np.ndarray
    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        s = np.asarray(self.s, dtype=np.float64).reshape(3)
        if not is_rotation(R):
            raise InputError("Pose9.R is not a rotation matrix (tolerance 1e-9)")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(s)):
            raise InputError("Pose9 translation and size must be finite")
        if np.any(s <= 0):
            raise InputError("Pose9 size must be positive")
        for a in (R, t, s):
            a.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "s", s)

    def corners(self) -> np.ndarray:
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
        return (signs * self.s / 2) @ self.R.T + self.t

    def transformed(self, R, t) -> Pose9:
        """The same box after the rigid motion ``x -> R x + t``."""
        R = np.asarray(R, dtype=np.float64)
        return Pose9(R @ self.R, R @ self.t + np.asarray(t, dtype=np.float64), self.s)
