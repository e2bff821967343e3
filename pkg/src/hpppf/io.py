"""File formats: ASCII PLY, point CSV, 16-bit PGM depth, and the binary matrix container.

Binary container layout (all integers little-endian)::

    offset  size  field
    0       4     magic  b"HPF1"
    4       4     uint32 rows
    8       4     uint32 cols
    12      2     uint16 dtype code (1 = float32, 2 = float64)
    14      2     uint16 flags (bit 0: spherical grid extension follows)
    -- grid extension, only when flag bit 0 is set --
    16      4     uint32 W
    20      4     uint32 H
    24      24    3 x float64 map center
    48      W*H   uint8 occupancy, row-major over (u, v)
    -- payload --
            rows*cols little-endian values, row-major

For grid files ``rows == W * H`` and row ``u * H + v`` holds bin ``(u, v)``.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from hpppf.errors import InputError
from hpppf.pointcloud import OrientedPointCloud, PointCloud

MAGIC = b"HPF1"
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
FLAG_GRID = 1


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


# ---------------------------------------------------------------- binary container


def write_matrix(path, matrix, dtype="float64", grid=None) -> None:
    """Write a 2D matrix; ``grid=(W, H, center, occupancy)`` adds the spherical header."""
    dt = np.dtype(dtype).newbyteorder("<")
    if dt not in _CODE_OF:
        raise InputError(f"unsupported dtype {dtype}")
    mat = np.ascontiguousarray(np.asarray(matrix), dtype=dt)
    if mat.ndim != 2:
        raise InputError("matrix must be 2D")
    flags = FLAG_GRID if grid is not None else 0
    parts = [MAGIC, struct.pack("<IIHH", mat.shape[0], mat.shape[1], _CODE_OF[dt], flags)]
    if grid is not None:
        W, H, center, occupancy = grid
        if W * H != mat.shape[0]:
            raise InputError("grid size does not match row count")
        parts.append(struct.pack("<II3d", W, H, *np.asarray(center, dtype=float)))
        parts.append(np.asarray(occupancy, dtype=np.uint8).reshape(W * H).tobytes())
    parts.append(mat.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_matrix(path):
    """Return ``(matrix, grid)``; ``grid`` is ``None`` for plain matrices."""
    data = _require(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise InputError(f"{path}: not a matrix container (bad magic)")
    rows, cols, code, flags = struct.unpack_from("<IIHH", data, 4)
    if code not in DTYPE_CODES:
        raise InputError(f"{path}: unknown dtype code {code}")
    offset = 16
    grid = None
    if flags & FLAG_GRID:
        W, H, cx, cy, cz = struct.unpack_from("<II3d", data, offset)
        offset += 32
        occ = np.frombuffer(data, dtype=np.uint8, count=W * H, offset=offset).astype(bool)
        offset += W * H
        grid = (W, H, np.array([cx, cy, cz]), occ.reshape(W, H))
    dt = DTYPE_CODES[code]
    expected = offset + rows * cols * dt.itemsize
    if len(data) != expected:
        raise InputError(f"{path}: truncated or oversized payload ({len(data)} != {expected} bytes)")
    mat = np.frombuffer(data, dtype=dt, count=rows * cols, offset=offset).reshape(rows, cols)
    return mat.astype(np.float64) if dt.itemsize == 8 else mat.copy(), grid


def is_container(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


# ---------------------------------------------------------------- feature CSV


def write_feature_csv(path, matrix, prefix="f") -> None:
    mat = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}{i}" for i in range(mat.shape[1])])
        for row in mat:
            w.writerow([repr(float(x)) for x in row])


def read_feature_csv(path) -> np.ndarray:
    with open(_require(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty CSV")
    header, body = rows[0], [r for r in rows[1:] if r]
    try:
        mat = np.array([[float(x) for x in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from None
    if len(body) == 0:
        return np.zeros((0, len(header)))
    if mat.ndim != 2 or mat.shape[1] != len(header):
        raise InputError(f"{path}: ragged rows")
    return mat


# ---------------------------------------------------------------- point clouds


def read_ply(path):
    """Read an ASCII PLY vertex list.

    Returns a :class:`PointCloud`, or an :class:`OrientedPointCloud` when the
    file carries ``nx, ny, nz``. Integer colours are scaled from [0, 255].
    """
    lines = _require(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InputError(f"{path}: not a PLY file")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise InputError(f"{path}: only ASCII PLY is supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append((tok[-1], tok[1]))
        elif tok[0] == "end_header":
            body_start = i + 1
            break
    if count is None or body_start is None:
        raise InputError(f"{path}: missing vertex element or end_header")
    names = [p[0] for p in props]
    for req in ("x", "y", "z"):
        if req not in names:
            raise InputError(f"{path}: missing property {req}")
    body = [ln.split() for ln in lines[body_start:body_start + count]]
    if len(body) != count:
        raise InputError(f"{path}: expected {count} vertices, found {len(body)}")
    table = np.array([[float(v) for v in row[: len(names)]] for row in body], dtype=np.float64)
    table = table.reshape(count, len(names))
    col = {name: table[:, i] for i, name in enumerate(names)}
    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    colors = None
    if all(c in col for c in ("red", "green", "blue")):
        colors = np.stack([col["red"], col["green"], col["blue"]], axis=1)
        if dict(props)["red"] in ("uchar", "uint8", "char", "int8", "ushort", "int", "uint"):
            colors = colors / 255.0
    cloud = PointCloud(pts, colors)
    if all(c in col for c in ("nx", "ny", "nz")):
        nrm = np.stack([col["nx"], col["ny"], col["nz"]], axis=1)
        lens = np.linalg.norm(nrm, axis=1, keepdims=True)
        nrm = nrm / np.where(lens > 0, lens, 1.0)
        return OrientedPointCloud(cloud, nrm)
    return cloud


def write_ply(path, cloud) -> None:
    """Write a :class:`PointCloud` or :class:`OrientedPointCloud` as ASCII PLY."""
    normals = None
    if isinstance(cloud, OrientedPointCloud):
        normals = cloud.normals
        cloud = cloud.cloud
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property double x", "property double y", "property double z"]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if normals is not None:
        header += ["property double nx", "property double ny", "property double nz"]
    header.append("end_header")
    out = header
    rgb = None
    if cloud.colors is not None:
        rgb = np.clip(np.rint(cloud.colors * 255), 0, 255).astype(int)
    for i, p in enumerate(cloud.points):
        fields = [repr(float(v)) for v in p]
        if rgb is not None:
            fields += [str(v) for v in rgb[i]]
        if normals is not None:
            fields += [repr(float(v)) for v in normals[i]]
        out.append(" ".join(fields))
    Path(path).write_text("\n".join(out) + "\n")


def read_points_csv(path) -> PointCloud:
    """CSV with header ``x,y,z`` and optional ``r,g,b`` columns in [0, 1]."""
    with open(_require(path), newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if not all(c in fields for c in ("x", "y", "z")):
            raise InputError(f"{path}: header must start with x,y,z")
        rows = list(reader)
    pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows]).reshape(-1, 3)
    colors = None
    if all(c in fields for c in ("r", "g", "b")):
        colors = np.array([[float(r["r"]), float(r["g"]), float(r["b"])] for r in rows]).reshape(-1, 3)
    return PointCloud(pts, colors)


def read_cloud(path):
    """Dispatch on extension: ``.ply`` or ``.csv``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".csv":
        return read_points_csv(path)
    raise InputError(f"{path}: unsupported point cloud format {suffix!r}")


# ---------------------------------------------------------------- PGM depth maps


def read_pgm(path, scale=0.001) -> np.ndarray:
    """Read a P5 (binary, big-endian when maxval > 255) or P2 PGM, times ``scale``.

    The default scale turns millimetres into metres.
    """
    data = _require(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        pos += 1
        dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        img = np.frombuffer(data, dtype=dt, count=width * height, offset=pos)
    elif magic == b"P2":
        img = np.array(data[pos:].split()[: width * height], dtype=np.int64)
    else:
        raise InputError(f"{path}: unsupported PGM magic {magic!r}")
    if img.size != width * height:
        raise InputError(f"{path}: truncated PGM")
    return img.reshape(height, width).astype(np.float64) * scale


def write_pgm(path, image, maxval=65535) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise InputError("PGM image must be 2D")
    h, w = img.shape
    dt = ">u2" if maxval > 255 else "u1"
    pix = np.clip(np.rint(img), 0, maxval).astype(dt)
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + pix.tobytes())
