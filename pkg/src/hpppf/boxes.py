"""Exact intersection volume of oriented boxes by convex polyhedron clipping."""

from __future__ import annotations

import numpy as np

# Faces of the unit cube [-1, 1]^3, counter-clockwise seen from outside.
_CUBE_FACES = (
    ((-1, -1, -1), (-1, -1, 1), (-1, 1, 1), (-1, 1, -1)),  # -x
    ((1, -1, -1), (1, 1, -1), (1, 1, 1), (1, -1, 1)),  # +x
    ((-1, -1, -1), (1, -1, -1), (1, -1, 1), (-1, -1, 1)),  # -y
    ((-1, 1, -1), (-1, 1, 1), (1, 1, 1), (1, 1, -1)),  # +y
    ((-1, -1, -1), (-1, 1, -1), (1, 1, -1), (1, -1, -1)),  # -z
    ((-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)),  # +z
)


def box_faces(R, t, s) -> list[np.ndarray]:
    half = np.asarray(s, dtype=np.float64) / 2
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return [(np.array(f, dtype=np.float64) * half) @ R.T + t for f in _CUBE_FACES]


def box_halfspaces(R, t, s):
    """Outward normals ``n`` and offsets ``c`` with the box = {x : n.x <= c}."""
    R = np.asarray(R, dtype=np.float64)
    half = np.asarray(s, dtype=np.float64) / 2
    normals, offsets = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            n = sign * R[:, axis]
            normals.append(n)
            offsets.append(float(n @ np.asarray(t, dtype=np.float64) + half[axis]))
    return np.array(normals), np.array(offsets)


def _clip_polygon(poly, n, c, eps):
    out = []
    on_plane = []
    dist = poly @ n - c
    k = len(poly)
    for i in range(k):
        a, b = poly[i], poly[(i + 1) % k]
        da, db = dist[i], dist[(i + 1) % k]
        a_in, b_in = da <= eps, db <= eps
        if a_in:
            out.append(a)
            if abs(da) <= eps:
                on_plane.append(a)
        if a_in != b_in:
            p = a + (da / (da - db)) * (b - a)
            out.append(p)
            on_plane.append(p)
    return (np.array(out) if len(out) >= 3 else None), on_plane


def _cap(points, n):
    pts = np.array(points)
    centroid = pts.mean(axis=0)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    rel = pts - centroid
    ang = np.arctan2(rel @ e2, rel @ e1)
    return pts[np.argsort(ang, kind="stable")]


def clip(faces, n, c, eps=1e-12):
    """Intersect a convex polyhedron (list of outward-CCW faces) with ``n.x <= c``."""
    if all(np.max(poly @ n - c) <= eps for poly in faces):
        return faces
    kept = []
    cap_pts = []
    for poly in faces:
        clipped, on_plane = _clip_polygon(poly, n, c, eps)
        cap_pts.extend(on_plane)
        if clipped is not None:
            kept.append(clipped)
    if len(cap_pts) >= 3 and kept:
        kept.append(_cap(cap_pts, n))
    return kept


def volume(faces) -> float:
    if not faces:
        return 0.0
    origin = faces[0][0]
    total = 0.0
    for poly in faces:
        a = poly[0] - origin
        for i in range(1, len(poly) - 1):
            b = poly[i] - origin
            c = poly[i + 1] - origin
            total += a @ np.cross(b, c)
    return max(total / 6.0, 0.0)


def intersection_volume(box_a, box_b) -> float:
    """``box_a``, ``box_b`` are ``(R, t, s)`` triples."""
    scale = max(np.max(box_a[2]), np.max(box_b[2]), np.linalg.norm(np.asarray(box_a[1]) - box_b[1]))
    eps = 1e-12 * max(scale, 1.0)
    faces = box_faces(*box_a)
    normals, offsets = box_halfspaces(*box_b)
    for n, c in zip(normals, offsets):
        faces = clip(faces, n, c, eps)
        if not faces:
            return 0.0
    return volume(faces)
