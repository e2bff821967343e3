"""Point-aligned semantic feature tables and their rotational consistency."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from hpppf import io
from hpppf.errors import InputError


@dataclass(frozen=True)
class SemanticFeatureTable:
    features: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] < 1:
            raise InputError(f"feature table must be n x C with C >= 1, got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise InputError("feature table contains non-finite entries")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]


def save_features(table: SemanticFeatureTable, path, dtype="float64") -> None:
    """CSV (header ``f0..f{C-1}``) for ``.csv`` paths, binary container otherwise."""
    if Path(path).suffix.lower() == ".csv":
        io.write_feature_csv(path, table.features)
    else:
        io.write_matrix(path, table.features, dtype=dtype)


def load_features(path, expected_n: int) -> SemanticFeatureTable:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if io.is_container(path):
        mat, _ = io.read_matrix(path)
    else:
        mat = io.read_feature_csv(path)
    if mat.shape[0] != expected_n:
        raise InputError(f"{path}: feature table has {mat.shape[0]} rows, expected {expected_n}")
    return SemanticFeatureTable(mat, source_tag=str(path))


@dataclass(frozen=True)
class ConsistencyReport:
    mean: float
    median: float
    p05: float
    pairs: int
    excluded: int

    def to_dict(self) -> dict:
        return {"mean_cosine": self.mean, "median_cosine": self.median,
                "p05_cosine": self.p05, "pairs": self.pairs, "excluded_zero_norm": self.excluded}


def rotational_consistency(tables, correspondence=None) -> ConsistencyReport:
    """Cosine similarity of corresponding rows across captures of one object.

    ``correspondence[k][p]`` is the row of ``tables[k]`` that shows canonical
    point ``p``; identity maps are used when omitted. Every pair of tables is
    compared; rows with zero norm are excluded and counted.
    """
    tables = list(tables)
    if len(tables) < 2:
        raise InputError("need at least two tables")
    dim = tables[0].dim
    if any(t.dim != dim for t in tables):
        raise InputError("tables differ in feature dimension")
    if correspondence is None:
        n = len(tables[0])
        if any(len(t) != n for t in tables):
            raise InputError("tables differ in length and no correspondence given")
        correspondence = [np.arange(n)] * len(tables)
    maps = [np.asarray(c, dtype=np.int64) for c in correspondence]
    if len(maps) != len(tables) or len({len(m) for m in maps}) != 1:
        raise InputError("need one equal-length index map per table")
    for t, m in zip(tables, maps):
        if len(m) and (m.min() < 0 or m.max() >= len(t)):
            raise InputError("correspondence index out of range")

    cosines = []
    excluded = 0
    for a, b in combinations(range(len(tables)), 2):
        fa = tables[a].features[maps[a]]
        fb = tables[b].features[maps[b]]
        na = np.linalg.norm(fa, axis=1)
        nb = np.linalg.norm(fb, axis=1)
        ok = (na > 0) & (nb > 0)
        excluded += int((~ok).sum())
        cos = np.sum(fa[ok] * fb[ok], axis=1) / (na[ok] * nb[ok])
        cosines.append(np.clip(cos, -1.0, 1.0))
    allc = np.concatenate(cosines) if cosines else np.zeros(0)
    if len(allc) == 0:
        return ConsistencyReport(float("nan"), float("nan"), float("nan"), 0, excluded)
    return ConsistencyReport(float(allc.mean()), float(np.median(allc)),
                             float(np.percentile(allc, 5)), len(allc), excluded)
